#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mriuq/grid.hpp"
#include "mriuq/kspace.hpp"
#include "mriuq/model.hpp"
#include "mriuq/recon.hpp"

namespace mriuq {

// Pixel-wise statistics of a set of reconstructions. Spread is measured on
// magnitudes; mean is the complex sample mean.
struct UncertaintyMap {
    ComplexImage mean;
    RealMap mean_magnitude;
    RealMap variance; // (1/k) sum (|x_i| - mean |x|)^2
    // Present when ground truth was supplied.
    std::optional<RealMap> bias_sq; // (mean |x| - |x0|)^2
    std::optional<RealMap> error;   // (1/k) sum (|x_i| - |x0|)^2
    std::size_t k = 0;
};

// Mean and variance of a sample set (k >= 2, equal shapes).
UncertaintyMap sample_statistics(std::span<const ComplexImage> samples);

// sample_statistics plus bias_sq and error against x0. error equals
// bias_sq + variance up to rounding.
UncertaintyMap bias_error_maps(std::span<const ComplexImage> samples, const ComplexImage& x0);

struct DataConsistencyTarget {
    KSpace y;
    SamplingMask mask;
    std::size_t n_recurrent_blocks = 1;
};

// k reconstructions g(z_i), z_i ~ N(mu, (s sigma)^2) from encode(x_input)
// with s = sigma_scale, each projected by data consistency when a target is
// given. Sample i draws its latent from derive_seed(seed, {i}); with more
// than one block, block b > 0 re-encodes the previous output and draws from
// derive_seed(seed, {i, b}).
std::vector<ComplexImage> monte_carlo_samples(const VaeParams& params, const ComplexImage& x_input, std::size_t k,
                                              std::uint64_t seed, const DataConsistencyTarget* dc = nullptr,
                                              double sigma_scale = 1.0);

UncertaintyMap monte_carlo_map(const VaeParams& params, const ComplexImage& x_input, std::size_t k,
                               std::uint64_t seed, const DataConsistencyTarget* dc = nullptr,
                               double sigma_scale = 1.0);

// ||x_hat - x_zf||^2 / n
double estimate_sigma2(const ComplexImage& x_hat, const ComplexImage& x_zf);

// ||x_hat - x0||^2 / n
double mse(const ComplexImage& x_hat, const ComplexImage& x0);

// max |x| / 1000, or 1e-3 for an all-zero image.
double default_epsilon(const ComplexImage& x);

struct TraceEstimate {
    double value = 0.0;          // complex-pixel convention: real trace / 2
    double standard_error = 0.0; // of value; NaN for a single probe
    double epsilon = 0.0;
    std::size_t n_probes = 0;
};

// Mean over n_probes standard-normal probes b on the 2n real coordinates of
// b^T (h(x + eps b) - h(x)) / eps, halved. Probe p is drawn from
// derive_seed(seed, {p}).
TraceEstimate jacobian_trace_mc(const Reconstructor& h, const ComplexImage& x, std::optional<double> epsilon,
                                std::size_t n_probes, std::uint64_t seed);
// Same, reusing a known h(x).
TraceEstimate jacobian_trace_mc(const Reconstructor& h, const ComplexImage& x, const ComplexImage& hx,
                                std::optional<double> epsilon, std::size_t n_probes, std::uint64_t seed);

inline constexpr std::size_t kMaxExactTraceCoordinates = 4096;

// Central differences along every real coordinate, halved. Refuses images
// with more than kMaxExactTraceCoordinates real coordinates.
double jacobian_trace_exact(const Reconstructor& h, const ComplexImage& x, double fd_step = 1e-5);

struct SureOptions {
    std::size_t n_probes = 10;
    std::uint64_t seed = 0;
    std::optional<double> epsilon;
    // Per-pixel complex noise variance E|w|^2 to use in place of the
    // rss / n estimate.
    std::optional<double> known_sigma2;
};

struct SureReport {
    double sigma2 = 0.0;       // rss / n
    double noise_sigma2 = 0.0; // variance used in the risk terms
    double rss = 0.0;          // ||x_hat - x_zf||^2
    double dof = 0.0;
    double dof_standard_error = 0.0;
    double sure = 0.0;      // noise_sigma2 * dof / n
    double sure_full = 0.0; // (-n noise_sigma2 + rss + 2 noise_sigma2 dof) / n
    double sure_db = 0.0;   // 10 log10(||x_hat||^2 / (n sure)), kSnrCapDb when sure <= 0
    std::size_t n = 0;
    double epsilon = 0.0;
    std::size_t n_probes = 0;
};

// SURE for h at the given network input.
SureReport sure_at(const Reconstructor& h, const ComplexImage& x_input, const SureOptions& options,
                   ComplexImage* x_hat = nullptr);

// Forms the density-compensated input from (y, mask, density), then sure_at.
SureReport sure(const Reconstructor& h, const KSpace& y, const SamplingMask& mask, const SamplingDensity& density,
                const SureOptions& options, ComplexImage* x_hat = nullptr);

struct CorrelationReport {
    std::vector<std::pair<double, double>> pairs; // (sure_full, mse)
    double r_squared = 0.0;
    double slope = 0.0;
    double intercept = 0.0;
};

// Least-squares fit of mse on sure_full. R^2 is 0 when mse is constant.
CorrelationReport sure_mse_correlation(std::span<const std::pair<double, double>> pairs);
CorrelationReport sure_mse_correlation(std::span<const std::pair<SureReport, double>> reports);

// One row of the per-case table.
struct SureCase {
    std::string case_id;
    double accel = 0.0;
    double lambda = 0.0;
    std::size_t n_rb = 1;
    SureReport report;
    double mse = 0.0;
    double snr_db = 0.0;
};

inline constexpr const char* kSureCsvHeader =
    "case_id,accel,lambda,n_rb,sigma2,rss,dof,sure,sure_full,sure_db,mse,snr_db";

std::string sure_csv(std::span<const SureCase> cases);

nlohmann::json to_json(const SureReport& r);
nlohmann::json to_json(const SureCase& c);
nlohmann::json to_json(const CorrelationReport& r);

struct MapSummary {
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
};

MapSummary summarize(const RealMap& map);

// mean.pgm (magnitude), variance.pgm and, when present, bias_sq.pgm and
// error.pgm, plus summary.json with min/max/mean per map.
void export_maps(const UncertaintyMap& map, const std::filesystem::path& dir);
nlohmann::json map_summary_json(const UncertaintyMap& map);

} // namespace mriuq
