#include "mriuq/kspace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>
#include <tuple>

#include <boost/math/distributions/normal.hpp>
#include <fftw3.h>

#include "mriuq/random.hpp"

namespace mriuq {

namespace {

struct FftwBuffer {
    explicit FftwBuffer(std::size_t n)
      : data(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n)))
    {
        if (!data)
            throw std::bad_alloc();
    }
    ~FftwBuffer() { fftw_free(data); }
    FftwBuffer(const FftwBuffer&) = delete;
    FftwBuffer& operator=(const FftwBuffer&) = delete;

    fftw_complex* data;
};

// Planning is not thread-safe in FFTW; execution of an existing plan on
// fresh buffers is. Plans are in-place and created on fftw_malloc'd
// storage so any other fftw_malloc'd buffer satisfies the alignment rule.
class PlanCache {
public:
    ~PlanCache()
    {
        for (auto& [key, plan] : plans_)
            fftw_destroy_plan(plan);
    }

    fftw_plan get(std::size_t width, std::size_t height, int sign)
    {
        std::lock_guard lock(mutex_);
        auto key = std::make_tuple(width, height, sign);
        if (auto it = plans_.find(key); it != plans_.end())
            return it->second;
        FftwBuffer scratch(width * height);
        fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(height), static_cast<int>(width), scratch.data,
                                          scratch.data, sign, FFTW_ESTIMATE);
        if (!plan)
            throw NumericalError("fftw failed to create a plan");
        plans_.emplace(key, plan);
        return plan;
    }

private:
    std::mutex mutex_;
    std::map<std::tuple<std::size_t, std::size_t, int>, fftw_plan> plans_;
};

PlanCache& plan_cache()
{
    static PlanCache cache;
    return cache;
}

// out = fftshift(DFT(ifftshift(in))) / sqrt(N)
void centered_transform(const Complex* in, Complex* out, std::size_t width, std::size_t height, int sign)
{
    const std::size_t n = width * height;
    FftwBuffer buf(n);
    auto* b = reinterpret_cast<Complex*>(buf.data);
    const std::size_t hx = width / 2;
    const std::size_t hy = height / 2;
    for (std::size_t y = 0; y < height; ++y) {
        const std::size_t sy = (y + hy) % height;
        for (std::size_t x = 0; x < width; ++x)
            b[y * width + x] = in[sy * width + (x + hx) % width];
    }
    fftw_execute_dft(plan_cache().get(width, height, sign), buf.data, buf.data);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    for (std::size_t y = 0; y < height; ++y) {
        const std::size_t dy = (y + hy) % height;
        for (std::size_t x = 0; x < width; ++x)
            out[dy * width + (x + hx) % width] = b[y * width + x] * scale;
    }
}

void validate(const VdMaskParams& p)
{
    if (p.width == 0 || p.height == 0)
        throw InvalidShape("mask dimensions must be at least 1x1");
    if (!(p.acceleration >= 1.0) || !std::isfinite(p.acceleration))
        throw InvalidParameter("acceleration must be >= 1");
    if (!(p.calib_fraction >= 0.0 && p.calib_fraction < 0.5))
        throw InvalidParameter("calib_fraction must lie in [0, 0.5)");
    if (!(p.density_power >= 0.0) || !std::isfinite(p.density_power))
        throw InvalidParameter("density_power must be >= 0");
}

std::size_t calib_extent(std::size_t n, double fraction)
{
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n))));
}

constexpr double kAccelerationTolerance = 0.15;
constexpr int kMaxMaskAttempts = 1000;

} // namespace

KSpace fft2_centered(const ComplexImage& img)
{
    if (img.empty())
        throw InvalidShape("fft2_centered: empty image");
    KSpace out(img.width(), img.height());
    centered_transform(img.data(), out.data(), img.width(), img.height(), FFTW_FORWARD);
    return out;
}

ComplexImage ifft2_centered(const KSpace& k)
{
    if (k.empty())
        throw InvalidShape("ifft2_centered: empty spectrum");
    ComplexImage out(k.width(), k.height());
    centered_transform(k.data(), out.data(), k.width(), k.height(), FFTW_BACKWARD);
    return out;
}

std::size_t SamplingMask::sampled_count() const
{
    return static_cast<std::size_t>(std::count_if(pattern.begin(), pattern.end(), [](auto v) { return v != 0; }));
}

double SamplingMask::realized_acceleration() const
{
    const auto s = sampled_count();
    return s == 0 ? std::numeric_limits<double>::infinity()
                  : static_cast<double>(pattern.size()) / static_cast<double>(s);
}

Grid<std::uint8_t> calibration_region(const VdMaskParams& params)
{
    validate(params);
    Grid<std::uint8_t> calib(params.width, params.height, std::uint8_t{0});
    const std::size_t cw = calib_extent(params.width, params.calib_fraction);
    const std::size_t ch = calib_extent(params.height, params.calib_fraction);
    const std::size_t x0 = center_index(params.width) - cw / 2;
    const std::size_t y0 = center_index(params.height) - ch / 2;
    for (std::size_t y = y0; y < y0 + ch; ++y)
        for (std::size_t x = x0; x < x0 + cw; ++x)
            calib(x, y) = 1;
    return calib;
}

RealMap vd_probability(const VdMaskParams& params)
{
    validate(params);
    const auto calib = calibration_region(params);
    RealMap p(params.width, params.height, 1.0);
    if (params.acceleration == 1.0)
        return p;

    const double total = static_cast<double>(p.size());
    const double n_calib = static_cast<double>(std::count(calib.begin(), calib.end(), std::uint8_t{1}));
    const double target = total / params.acceleration - n_calib;
    if (target < 0.0)
        throw InfeasibleAcceleration("acceleration " + std::to_string(params.acceleration)
                                     + " leaves fewer expected samples than the calibration region");

    RealMap base(params.width, params.height, 0.0);
    const double cx = static_cast<double>(center_index(params.width));
    const double cy = static_cast<double>(center_index(params.height));
    const double r_max = std::sqrt(2.0);
    for (std::size_t y = 0; y < params.height; ++y) {
        for (std::size_t x = 0; x < params.width; ++x) {
            const double rx = (static_cast<double>(x) - cx) / (0.5 * static_cast<double>(params.width));
            const double ry = (static_cast<double>(y) - cy) / (0.5 * static_cast<double>(params.height));
            const double r = std::min(r_max, std::hypot(rx, ry));
            base(x, y) = std::pow(1.0 - r / r_max, params.density_power);
        }
    }

    auto expected = [&](double s) {
        double e = 0.0;
        for (std::size_t i = 0; i < base.size(); ++i)
            if (!calib[i])
                e += std::min(1.0, s * base[i]);
        return e;
    };

    double lo = 0.0;
    double hi = 1.0;
    while (expected(hi) < target && hi < 1e300)
        hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (expected(mid) < target ? lo : hi) = mid;
    }
    for (std::size_t i = 0; i < p.size(); ++i)
        p[i] = calib[i] ? 1.0 : std::min(1.0, hi * base[i]);
    return p;
}

VdMaskSampler::VdMaskSampler(const VdMaskParams& params)
  : params_(params), probability_(vd_probability(params))
{
}

SamplingMask VdMaskSampler::draw(std::uint64_t seed) const
{
    const RealMap& p = probability_;
    SamplingMask mask{Grid<std::uint8_t>(params_.width, params_.height, std::uint8_t{0}), params_.acceleration, seed};
    if (params_.acceleration == 1.0) {
        std::fill(mask.pattern.begin(), mask.pattern.end(), std::uint8_t{1});
        return mask;
    }

    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (int attempt = 0; attempt < kMaxMaskAttempts; ++attempt) {
        Rng rng = make_rng(seed, {static_cast<std::uint64_t>(attempt)});
        for (std::size_t i = 0; i < p.size(); ++i)
            mask.pattern[i] = (p[i] >= 1.0 || uniform(rng) < p[i]) ? 1 : 0;
        const double realized = mask.realized_acceleration();
        if (std::abs(realized - params_.acceleration) <= kAccelerationTolerance * params_.acceleration)
            return mask;
    }
    throw InfeasibleAcceleration("could not draw a mask within 15% of acceleration "
                                 + std::to_string(params_.acceleration));
}

SamplingMask make_vd_mask(const VdMaskParams& params, std::uint64_t seed)
{
    return VdMaskSampler(params).draw(seed);
}

SamplingDensity estimate_density(const VdMaskParams& params, std::size_t n_masks, std::uint64_t seed)
{
    if (n_masks < 1)
        throw InvalidParameter("estimate_density: n_masks must be >= 1");
    const VdMaskSampler sampler(params);
    RealMap sum(params.width, params.height, 0.0);
    for (std::size_t m = 0; m < n_masks; ++m) {
        const auto mask = sampler.draw(derive_seed(seed, {m}));
        for (std::size_t i = 0; i < sum.size(); ++i)
            sum[i] += mask.pattern[i];
    }
    const double inv = 1.0 / static_cast<double>(n_masks);
    for (auto& v : sum)
        v = std::max(v * inv, inv);
    return SamplingDensity{std::move(sum), n_masks};
}

SamplingDensity unit_density(Extent extent)
{
    return SamplingDensity{RealMap(extent, 1.0), 1};
}

SamplingMask full_mask(Extent extent)
{
    return SamplingMask{Grid<std::uint8_t>(extent, std::uint8_t{1}), 1.0, 0};
}

KSpace undersample(const ComplexImage& x0, const SamplingMask& mask, double noise_std, std::uint64_t seed)
{
    require_same_shape(x0, mask, "undersample");
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std))
        throw InvalidParameter("undersample: noise_std must be >= 0");
    KSpace y = fft2_centered(x0);
    Rng rng = make_rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!mask.sampled(i)) {
            y[i] = Complex{};
            continue;
        }
        if (noise_std > 0.0) {
            const double re = normal(rng);
            const double im = normal(rng);
            y[i] += noise_std * Complex(re, im);
        }
    }
    return y;
}

ComplexImage zero_fill(const KSpace& y, const SamplingMask& mask)
{
    require_same_shape(y, mask, "zero_fill");
    KSpace masked = y;
    for (std::size_t i = 0; i < masked.size(); ++i)
        if (!mask.sampled(i))
            masked[i] = Complex{};
    return ifft2_centered(masked);
}

ComplexImage density_compensate(const KSpace& y, const SamplingMask& mask, const SamplingDensity& density)
{
    require_same_shape(y, mask, "density_compensate");
    require_same_shape(y, density, "density_compensate");
    KSpace weighted = y;
    for (std::size_t i = 0; i < weighted.size(); ++i) {
        const double d = density.probabilities[i];
        if (!(d > 0.0) || !std::isfinite(d))
            throw InvalidDensity("density_compensate: density entries must be positive and finite");
        weighted[i] = mask.sampled(i) ? y[i] / d : Complex{};
    }
    return ifft2_centered(weighted);
}

double normal_quantile(double p)
{
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

void append_residual_components(const ComplexImage& x_approx, const ComplexImage& x0, std::vector<double>& out)
{
    require_same_shape(x_approx, x0, "residual");
    out.reserve(out.size() + 2 * x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i)
        out.push_back((x_approx[i] - x0[i]).real());
    for (std::size_t i = 0; i < x0.size(); ++i)
        out.push_back((x_approx[i] - x0[i]).imag());
}

namespace {

ResidualStats residual_stats_scaled(std::span<const double> r, std::size_t n_quantiles, double scale)
{
    if (n_quantiles < 2)
        throw InvalidParameter("residual_stats: n_quantiles must be >= 2");
    if (r.size() < 2)
        throw InsufficientSamples("residual_stats: need at least two residual components");

    ResidualStats s;
    s.count = r.size();
    const double n = static_cast<double>(r.size());
    s.mean = std::accumulate(r.begin(), r.end(), 0.0) / n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double v : r) {
        const double d = v - s.mean;
        const double d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    s.std = std::sqrt(m2);

    s.qq_pairs.reserve(n_quantiles);
    if (s.std <= 1e-12 * scale) {
        s.degenerate = true;
        for (std::size_t i = 0; i < n_quantiles; ++i) {
            const double q = (static_cast<double>(i) + 0.5) / static_cast<double>(n_quantiles);
            s.qq_pairs.emplace_back(normal_quantile(q), 0.0);
        }
        return s;
    }
    s.skewness = m3 / (m2 * s.std);
    s.excess_kurtosis = m4 / (m2 * m2) - 3.0;

    std::vector<double> sorted(r.begin(), r.end());
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < n_quantiles; ++i) {
        const double q = (static_cast<double>(i) + 0.5) / static_cast<double>(n_quantiles);
        // Hazen plotting position: sorted[j] sits at probability (j + 0.5) / n.
        const double pos = std::clamp(q * n - 0.5, 0.0, n - 1.0);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, sorted.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        const double empirical = sorted[lo] + frac * (sorted[hi] - sorted[lo]);
        s.qq_pairs.emplace_back(normal_quantile(q), (empirical - s.mean) / s.std);
    }
    return s;
}

} // namespace

ResidualStats residual_stats(std::span<const double> residuals, std::size_t n_quantiles)
{
    return residual_stats_scaled(residuals, n_quantiles, 1.0);
}

ResidualStats residual_stats(const ComplexImage& x_approx, const ComplexImage& x0, std::size_t n_quantiles)
{
    std::vector<double> r;
    append_residual_components(x_approx, x0, r);
    const double rms = std::sqrt(squared_norm(x0) / static_cast<double>(x0.size()));
    return residual_stats_scaled(r, n_quantiles, rms > 0.0 ? rms : 1.0);
}

} // namespace mriuq
