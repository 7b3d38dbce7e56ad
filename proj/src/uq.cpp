#include "mriuq/uq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "mriuq/io.hpp"
#include "mriuq/parallel.hpp"
#include "mriuq/random.hpp"

namespace mriuq {

namespace {

void check_samples(std::span<const ComplexImage> samples)
{
    if (samples.size() < 2)
        throw InsufficientSamples("at least 2 samples are required, got " + std::to_string(samples.size()));
    for (const auto& s : samples)
        require_same_shape(samples.front(), s, "sample set");
}

ComplexImage checked_apply(const Reconstructor& h, const ComplexImage& x)
{
    ComplexImage out = h(x);
    if (!out.same_shape(x))
        throw ContractViolation(h.name() + ": output shape differs from input shape");
    return out;
}

} // namespace

UncertaintyMap sample_statistics(std::span<const ComplexImage> samples)
{
    check_samples(samples);
    const auto& first = samples.front();
    const double k = static_cast<double>(samples.size());
    UncertaintyMap m{ComplexImage(first.width(), first.height()), RealMap(first.width(), first.height()),
                     RealMap(first.width(), first.height()), std::nullopt, std::nullopt, samples.size()};
    for (const auto& s : samples)
        for (std::size_t p = 0; p < s.size(); ++p) {
            m.mean[p] += s[p];
            m.mean_magnitude[p] += std::abs(s[p]);
        }
    for (std::size_t p = 0; p < first.size(); ++p) {
        m.mean[p] /= k;
        m.mean_magnitude[p] /= k;
    }
    for (const auto& s : samples)
        for (std::size_t p = 0; p < s.size(); ++p) {
            const double d = std::abs(s[p]) - m.mean_magnitude[p];
            m.variance[p] += d * d;
        }
    for (auto& v : m.variance)
        v /= k;
    return m;
}

UncertaintyMap bias_error_maps(std::span<const ComplexImage> samples, const ComplexImage& x0)
{
    UncertaintyMap m = sample_statistics(samples);
    require_same_shape(samples.front(), x0, "bias_error_maps");
    const double k = static_cast<double>(samples.size());
    RealMap bias(x0.width(), x0.height());
    RealMap error(x0.width(), x0.height());
    for (std::size_t p = 0; p < x0.size(); ++p) {
        const double b = m.mean_magnitude[p] - std::abs(x0[p]);
        bias[p] = b * b;
    }
    for (const auto& s : samples)
        for (std::size_t p = 0; p < s.size(); ++p) {
            const double e = std::abs(s[p]) - std::abs(x0[p]);
            error[p] += e * e;
        }
    for (auto& e : error)
        e /= k;
    m.bias_sq = std::move(bias);
    m.error = std::move(error);
    return m;
}

std::vector<ComplexImage> monte_carlo_samples(const VaeParams& params, const ComplexImage& x_input, std::size_t k,
                                              std::uint64_t seed, const DataConsistencyTarget* dc, double sigma_scale)
{
    if (k < 2)
        throw InsufficientSamples("monte_carlo_map requires k >= 2");
    if (!(sigma_scale >= 0.0) || !std::isfinite(sigma_scale))
        throw InvalidParameter("monte_carlo_map: sigma_scale must be finite and >= 0");
    const std::size_t blocks = dc ? dc->n_recurrent_blocks : 1;
    if (dc) {
        require_same_shape(x_input, dc->y, "monte_carlo_map");
        require_same_shape(x_input, dc->mask, "monte_carlo_map");
        if (blocks < 1)
            throw InvalidParameter("monte_carlo_map: n_recurrent_blocks must be >= 1");
    }
    const LatentStats stats = encode(params, x_input);
    const Eigen::VectorXd sigma = sigma_scale * stats.sigma();
    std::vector<ComplexImage> samples(k, ComplexImage(x_input.width(), x_input.height()));
    parallel_for(k, [&](std::size_t i) {
        ComplexImage x = decode(params, sample_latent_with_sigma(stats.mu, sigma, derive_seed(seed, {i})));
        if (dc)
            x = data_consistency(x, dc->y, dc->mask);
        for (std::size_t b = 1; b < blocks; ++b) {
            const LatentStats s = encode(params, x);
            x = decode(params, sample_latent_with_sigma(s.mu, sigma_scale * s.sigma(), derive_seed(seed, {i, b})));
            x = data_consistency(x, dc->y, dc->mask);
        }
        samples[i] = std::move(x);
    });
    return samples;
}

UncertaintyMap monte_carlo_map(const VaeParams& params, const ComplexImage& x_input, std::size_t k,
                               std::uint64_t seed, const DataConsistencyTarget* dc, double sigma_scale)
{
    const auto samples = monte_carlo_samples(params, x_input, k, seed, dc, sigma_scale);
    return sample_statistics(samples);
}

double estimate_sigma2(const ComplexImage& x_hat, const ComplexImage& x_zf)
{
    require_same_shape(x_hat, x_zf, "estimate_sigma2");
    return squared_norm(x_hat - x_zf) / static_cast<double>(x_hat.size());
}

double mse(const ComplexImage& x_hat, const ComplexImage& x0)
{
    require_same_shape(x_hat, x0, "mse");
    return squared_norm(x_hat - x0) / static_cast<double>(x0.size());
}

double default_epsilon(const ComplexImage& x)
{
    double peak = 0.0;
    for (const auto& v : x)
        peak = std::max(peak, std::abs(v));
    return peak > 0.0 ? peak / 1000.0 : 1e-3;
}

TraceEstimate jacobian_trace_mc(const Reconstructor& h, const ComplexImage& x, std::optional<double> epsilon,
                                std::size_t n_probes, std::uint64_t seed)
{
    return jacobian_trace_mc(h, x, checked_apply(h, x), epsilon, n_probes, seed);
}

TraceEstimate jacobian_trace_mc(const Reconstructor& h, const ComplexImage& x, const ComplexImage& hx,
                                std::optional<double> epsilon, std::size_t n_probes, std::uint64_t seed)
{
    if (n_probes < 1)
        throw InvalidParameter("n_probes must be >= 1");
    const double eps = epsilon ? *epsilon : default_epsilon(x);
    if (!(eps > 0.0) || !std::isfinite(eps))
        throw InvalidParameter("epsilon must be > 0");
    require_same_shape(x, hx, "jacobian_trace_mc");

    std::vector<double> values(n_probes);
    parallel_for(n_probes, [&](std::size_t p) {
        Rng rng = make_rng(seed, {p});
        std::normal_distribution<double> normal(0.0, 1.0);
        ComplexImage probe(x.width(), x.height());
        for (auto& v : probe) {
            const double re = normal(rng);
            const double im = normal(rng);
            v = Complex(re, im);
        }
        const ComplexImage out = checked_apply(h, x + probe * eps);
        double acc = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const Complex d = out[i] - hx[i];
            acc += probe[i].real() * d.real() + probe[i].imag() * d.imag();
        }
        values[p] = acc / eps / 2.0;
    });

    TraceEstimate t;
    t.epsilon = eps;
    t.n_probes = n_probes;
    for (double v : values)
        t.value += v;
    t.value /= static_cast<double>(n_probes);
    if (n_probes > 1) {
        double ss = 0.0;
        for (double v : values)
            ss += (v - t.value) * (v - t.value);
        t.standard_error = std::sqrt(ss / static_cast<double>(n_probes - 1) / static_cast<double>(n_probes));
    } else {
        t.standard_error = std::numeric_limits<double>::quiet_NaN();
    }
    return t;
}

double jacobian_trace_exact(const Reconstructor& h, const ComplexImage& x, double fd_step)
{
    if (2 * x.size() > kMaxExactTraceCoordinates)
        throw InvalidParameter("jacobian_trace_exact: image has more than " + std::to_string(kMaxExactTraceCoordinates)
                               + " real coordinates");
    if (!(fd_step > 0.0))
        throw InvalidParameter("fd_step must be > 0");
    const std::size_t n = x.size();
    std::vector<double> diag(2 * n);
    parallel_for(2 * n, [&](std::size_t c) {
        const std::size_t i = c % n;
        const Complex step = c < n ? Complex(fd_step, 0.0) : Complex(0.0, fd_step);
        ComplexImage plus = x;
        ComplexImage minus = x;
        plus[i] += step;
        minus[i] -= step;
        const Complex d = checked_apply(h, plus)[i] - checked_apply(h, minus)[i];
        diag[c] = (c < n ? d.real() : d.imag()) / (2.0 * fd_step);
    });
    double sum = 0.0;
    for (double d : diag)
        sum += d;
    return sum / 2.0;
}

SureReport sure_at(const Reconstructor& h, const ComplexImage& x_input, const SureOptions& options,
                   ComplexImage* x_hat_out)
{
    if (options.known_sigma2 && !(*options.known_sigma2 >= 0.0))
        throw InvalidParameter("known_sigma2 must be >= 0");
    const ComplexImage x_hat = checked_apply(h, x_input);
    const TraceEstimate trace = jacobian_trace_mc(h, x_input, x_hat, options.epsilon, options.n_probes, options.seed);

    SureReport r;
    r.n = x_input.size();
    const double n = static_cast<double>(r.n);
    r.rss = squared_norm(x_hat - x_input);
    r.sigma2 = r.rss / n;
    r.noise_sigma2 = options.known_sigma2 ? *options.known_sigma2 : r.sigma2;
    r.dof = trace.value;
    r.dof_standard_error = trace.standard_error;
    r.epsilon = trace.epsilon;
    r.n_probes = trace.n_probes;
    r.sure = r.noise_sigma2 * r.dof / n;
    r.sure_full = (-n * r.noise_sigma2 + r.rss + 2.0 * r.noise_sigma2 * r.dof) / n;
    r.sure_db = r.sure > 0.0 ? std::min(kSnrCapDb, 10.0 * std::log10(squared_norm(x_hat) / (n * r.sure))) : kSnrCapDb;
    if (x_hat_out)
        *x_hat_out = x_hat;
    return r;
}

SureReport sure(const Reconstructor& h, const KSpace& y, const SamplingMask& mask, const SamplingDensity& density,
                const SureOptions& options, ComplexImage* x_hat)
{
    return sure_at(h, density_compensate(y, mask, density), options, x_hat);
}

CorrelationReport sure_mse_correlation(std::span<const std::pair<double, double>> pairs)
{
    if (pairs.size() < 2)
        throw InsufficientSamples("sure_mse_correlation requires at least 2 cases");
    CorrelationReport r;
    r.pairs.assign(pairs.begin(), pairs.end());
    const double n = static_cast<double>(pairs.size());
    double mx = 0.0, my = 0.0;
    for (const auto& [x, y] : pairs) {
        mx += x;
        my += y;
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (const auto& [x, y] : pairs) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    r.slope = sxx > 0.0 ? sxy / sxx : 0.0;
    r.intercept = my - r.slope * mx;
    if (syy > 0.0) {
        double ss_res = 0.0;
        for (const auto& [x, y] : pairs) {
            const double e = y - (r.intercept + r.slope * x);
            ss_res += e * e;
        }
        r.r_squared = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
    }
    return r;
}

CorrelationReport sure_mse_correlation(std::span<const std::pair<SureReport, double>> reports)
{
    std::vector<std::pair<double, double>> pairs;
    pairs.reserve(reports.size());
    for (const auto& [rep, m] : reports)
        pairs.emplace_back(rep.sure_full, m);
    return sure_mse_correlation(pairs);
}

namespace {

std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos)
        return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"')
            out += '"';
        out += c;
    }
    return out + "\"";
}

nlohmann::json number(double v)
{
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

} // namespace

std::string sure_csv(std::span<const SureCase> cases)
{
    std::ostringstream out;
    out.precision(10);
    out << kSureCsvHeader << '\n';
    for (const auto& c : cases) {
        const auto& r = c.report;
        out << csv_field(c.case_id) << ',' << c.accel << ',' << c.lambda << ',' << c.n_rb << ',' << r.sigma2 << ','
            << r.rss / static_cast<double>(r.n) << ',' << r.dof << ',' << r.sure << ',' << r.sure_full << ','
            << r.sure_db << ',' << c.mse << ',' << c.snr_db << '\n';
    }
    return out.str();
}

nlohmann::json to_json(const SureReport& r)
{
    return {{"sigma2", r.sigma2},
            {"noise_sigma2", r.noise_sigma2},
            {"rss", r.rss},
            {"dof", r.dof},
            {"dof_standard_error", number(r.dof_standard_error)},
            {"sure", r.sure},
            {"sure_full", r.sure_full},
            {"sure_db", r.sure_db},
            {"n", r.n},
            {"epsilon", r.epsilon},
            {"n_probes", r.n_probes}};
}

nlohmann::json to_json(const SureCase& c)
{
    return {{"case_id", c.case_id}, {"accel", c.accel}, {"lambda", c.lambda},       {"n_rb", c.n_rb},
            {"report", to_json(c.report)}, {"mse", c.mse}, {"snr_db", c.snr_db}};
}

nlohmann::json to_json(const CorrelationReport& r)
{
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& [s, m] : r.pairs)
        pairs.push_back({{"sure_full", s}, {"mse", m}});
    return {{"r_squared", r.r_squared}, {"slope", r.slope}, {"intercept", r.intercept}, {"pairs", pairs}};
}

MapSummary summarize(const RealMap& map)
{
    MapSummary s{map[0], map[0], 0.0};
    for (double v : map) {
        s.min = std::min(s.min, v);
        s.max = std::max(s.max, v);
        s.mean += v;
    }
    s.mean /= static_cast<double>(map.size());
    return s;
}

nlohmann::json map_summary_json(const UncertaintyMap& map)
{
    auto entry = [](const RealMap& m) {
        const MapSummary s = summarize(m);
        return nlohmann::json{{"min", s.min}, {"max", s.max}, {"mean", s.mean}};
    };
    nlohmann::json j{{"k", map.k},
                     {"width", map.mean.width()},
                     {"height", map.mean.height()},
                     {"mean", entry(map.mean_magnitude)},
                     {"variance", entry(map.variance)}};
    if (map.bias_sq)
        j["bias_sq"] = entry(*map.bias_sq);
    if (map.error)
        j["error"] = entry(*map.error);
    return j;
}

void export_maps(const UncertaintyMap& map, const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir))
        throw IoError("cannot create output directory", dir.string());
    io::write_pgm(dir / "mean.pgm", map.mean_magnitude);
    io::write_pgm(dir / "variance.pgm", map.variance);
    if (map.bias_sq)
        io::write_pgm(dir / "bias_sq.pgm", *map.bias_sq);
    if (map.error)
        io::write_pgm(dir / "error.pgm", *map.error);
    io::write_file_atomic(dir / "summary.json", map_summary_json(map).dump(2) + "\n");
}

} // namespace mriuq
