#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "mriuq/grid.hpp"

namespace mriuq {

// Centered, unitary 2D DFT: ifftshift -> DFT -> fftshift, scaled by 1/sqrt(N)
// in both directions so Parseval holds exactly.
KSpace fft2_centered(const ComplexImage& img);
ComplexImage ifft2_centered(const KSpace& k);

// Index of the DC coefficient after centering.
inline std::size_t center_index(std::size_t n) noexcept { return n / 2; }

struct VdMaskParams {
    std::size_t width = 32;
    std::size_t height = 32;
    double acceleration = 4.0;
    double calib_fraction = 0.0625;
    double density_power = 3.0;
};

struct SamplingMask {
    Grid<std::uint8_t> pattern;
    double acceleration = 1.0;
    std::uint64_t seed = 0;

    std::size_t width() const noexcept { return pattern.width(); }
    std::size_t height() const noexcept { return pattern.height(); }
    bool sampled(std::size_t i) const { return pattern[i] != 0; }
    std::size_t sampled_count() const;
    double realized_acceleration() const;
};

struct SamplingDensity {
    RealMap probabilities;
    std::size_t n_masks_averaged = 0;

    std::size_t width() const noexcept { return probabilities.width(); }
    std::size_t height() const noexcept { return probabilities.height(); }
};

// Fully sampled centre block, as a 0/1 pattern.
Grid<std::uint8_t> calibration_region(const VdMaskParams& params);

// Per-location inclusion probability p(k) proportional to (1 - r/r_max)^power,
// capped at 1, scaled so the expected sample count is N/acceleration, with the
// calibration block set to 1. r is the radius in coordinates normalised to
// [-1, 1] along each axis; r_max = sqrt(2).
RealMap vd_probability(const VdMaskParams& params);

// Draws independent Bernoulli masks from a fixed vd_probability map. Draws
// whose realized acceleration strays more than 15% from nominal are redrawn
// from the next seed substream.
class VdMaskSampler {
public:
    explicit VdMaskSampler(const VdMaskParams& params);

    SamplingMask draw(std::uint64_t seed) const;
    const RealMap& probability() const noexcept { return probability_; }
    const VdMaskParams& params() const noexcept { return params_; }

private:
    VdMaskParams params_;
    RealMap probability_;
};

SamplingMask make_vd_mask(const VdMaskParams& params, std::uint64_t seed);

// Mean of n_masks independent masks, floored at 1/n_masks.
SamplingDensity estimate_density(const VdMaskParams& params, std::size_t n_masks, std::uint64_t seed);

// D == 1 everywhere; the density matching a full mask.
SamplingDensity unit_density(Extent extent);

SamplingMask full_mask(Extent extent);

// y = mask .* (F x0 + v), v complex Gaussian with per-component std noise_std.
KSpace undersample(const ComplexImage& x0, const SamplingMask& mask, double noise_std, std::uint64_t seed);

// F^-1 (mask .* y)
ComplexImage zero_fill(const KSpace& y, const SamplingMask& mask);

// F^-1 (D^-1 .* mask .* y)
ComplexImage density_compensate(const KSpace& y, const SamplingMask& mask, const SamplingDensity& density);

struct ResidualStats {
    double mean = 0.0;
    double std = 0.0;
    double skewness = 0.0;
    double excess_kurtosis = 0.0;
    // (standard-normal quantile, empirical standardized quantile), sorted by
    // the first member.
    std::vector<std::pair<double, double>> qq_pairs;
    std::size_t count = 0;
    // Residuals are identically zero; higher moments and qq pairs are 0.
    bool degenerate = false;
};

// Moments of the pooled real and imaginary residual components.
ResidualStats residual_stats(std::span<const double> residuals, std::size_t n_quantiles);
ResidualStats residual_stats(const ComplexImage& x_approx, const ComplexImage& x0, std::size_t n_quantiles);

// Appends the real then imaginary parts of (x_approx - x0) to out.
void append_residual_components(const ComplexImage& x_approx, const ComplexImage& x0, std::vector<double>& out);

// Inverse standard-normal CDF.
double normal_quantile(double p);

} // namespace mriuq
