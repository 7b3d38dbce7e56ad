#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "helpers.hpp"
#include "mriuq/io.hpp"
#include "mriuq/parallel.hpp"
#include "mriuq/uq.hpp"

using namespace mriuq;
using testutil::max_abs_diff;
using testutil::random_image;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index n, std::uint64_t seed, double scale)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    Eigen::MatrixXd a(n, n);
    for (Eigen::Index i = 0; i < a.size(); ++i)
        a.data()[i] = normal(rng);
    return a;
}

} // namespace

TEST_CASE("bias, variance and error maps")
{
    const auto x0 = random_image(6, 5, 1);
    SUBCASE("samples equal to the truth")
    {
        const std::vector<ComplexImage> s{x0, x0, x0};
        const auto m = bias_error_maps(s, x0);
        CHECK(summarize(m.variance).max < 1e-28);
        CHECK(summarize(*m.bias_sq).max < 1e-28);
        CHECK(summarize(*m.error).max == 0.0);
    }
    SUBCASE("symmetric pair around the truth")
    {
        const double delta = 0.25;
        ComplexImage base(4, 4, Complex(2.0, 0.0));
        ComplexImage plus = base, minus = base;
        for (auto& v : plus)
            v += delta;
        for (auto& v : minus)
            v -= delta;
        const std::vector<ComplexImage> s{plus, minus};
        const auto m = bias_error_maps(s, base);
        for (std::size_t p = 0; p < 16; ++p) {
            CHECK((*m.bias_sq)[p] == doctest::Approx(0.0));
            CHECK(m.variance[p] == doctest::Approx(delta * delta));
            CHECK((*m.error)[p] == doctest::Approx(delta * delta));
        }
    }
    SUBCASE("identity on a random set")
    {
        std::vector<ComplexImage> s;
        for (int i = 0; i < 5; ++i)
            s.push_back(random_image(6, 5, 10 + i));
        const auto m = bias_error_maps(s, x0);
        for (std::size_t p = 0; p < x0.size(); ++p)
            CHECK(std::abs((*m.error)[p] - ((*m.bias_sq)[p] + m.variance[p])) < 1e-12);
        ComplexImage mean(6, 5);
        for (const auto& x : s)
            mean += x;
        mean *= 0.2;
        CHECK(max_abs_diff(mean, m.mean) < 1e-15);
    }
    const std::vector<ComplexImage> one{x0};
    CHECK_THROWS_AS(bias_error_maps(one, x0), InsufficientSamples);
}

TEST_CASE("Monte Carlo maps")
{
    const VaeArchitecture arch{4, 4, {6}, 3, {5}};
    const auto x = random_image(4, 4, 3);
    SUBCASE("decoder ignoring z gives zero variance")
    {
        VaeParams p = VaeParams::random(arch, 1, 0.0);
        p.decoder[0].weight.setZero();
        const auto m = monte_carlo_map(p, x, 20, 4);
        CHECK(summarize(m.variance).max < 1e-28);
    }
    SUBCASE("zero posterior spread reproduces the decoded mean")
    {
        VaeParams p = VaeParams::random(arch, 1, -1e4);
        const auto m = monte_carlo_map(p, x, 2, 4);
        CHECK(summarize(m.variance).max == 0.0);
        CHECK(max_abs_diff(m.mean, decode(p, encode(p, x).mu)) < 1e-14);
    }
    SUBCASE("mean is the mean of the returned samples and seeds determine samples")
    {
        const VaeParams p = VaeParams::random(arch, 2, 0.0);
        const auto mask = make_vd_mask({4, 4, 2.0, 0.25, 1.0}, 1);
        const DataConsistencyTarget dc{undersample(x, mask, 0.0, 0), mask};
        const auto samples = monte_carlo_samples(p, x, 7, 9, &dc);
        const auto m = sample_statistics(samples);
        CHECK(max_abs_diff(m.mean, monte_carlo_map(p, x, 7, 9, &dc).mean) == 0.0);
        set_max_threads(3);
        const auto threaded = monte_carlo_samples(p, x, 7, 9, &dc);
        set_max_threads(1);
        for (std::size_t i = 0; i < samples.size(); ++i)
            CHECK(threaded[i] == samples[i]);
        for (const auto& s : samples)
            CHECK(max_abs_diff(data_consistency(s, dc.y, dc.mask), s) < 1e-12);
    }
    SUBCASE("sigma scale 0 over two blocks follows the posterior-mean cascade")
    {
        const auto p = std::make_shared<const VaeParams>(VaeParams::random(arch, 3, 0.0));
        const auto mask = make_vd_mask({4, 4, 2.0, 0.25, 1.0}, 2);
        const DataConsistencyTarget dc{undersample(x, mask, 0.0, 0), mask, 2};
        const auto m = monte_carlo_map(*p, x, 3, 5, &dc, 0.0);
        CHECK(summarize(m.variance).max < 1e-28);
        const auto expected = reconstruct(VaeReconstructor(p), x, CascadeConfig{2, dc.y, dc.mask});
        CHECK(max_abs_diff(m.mean, expected) < 1e-12);
        const auto spread = monte_carlo_samples(*p, x, 3, 5, &dc);
        CHECK(max_abs_diff(spread[0], spread[1]) > 0.0);
        CHECK_THROWS_AS(monte_carlo_map(*p, x, 3, 5, &dc, -1.0), InvalidParameter);
    }
    SUBCASE("linear decoder: variance approaches diag(W S W^T)")
    {
        VaeParams p = VaeParams::random({4, 4, {6}, 3, {}}, 4, -0.5);
        auto& out = p.decoder.back();
        out.weight.bottomRows(16).setZero();
        out.bias.head(16).setConstant(15.0);
        out.bias.tail(16).setZero();
        const Eigen::VectorXd var_z = encode(p, x).logvar.array().exp();
        const Eigen::VectorXd closed = out.weight.topRows(16).array().square().matrix() * var_z;
        const auto m = monte_carlo_map(p, x, 10000, 6);
        for (std::size_t i = 0; i < 16; ++i)
            CHECK(m.variance[i] == doctest::Approx(closed[Eigen::Index(i)]).epsilon(0.05));
    }
    CHECK_THROWS_AS(monte_carlo_map(VaeParams::random(arch, 1), x, 1, 0), InsufficientSamples);
}

TEST_CASE("sigma2 and mse")
{
    ComplexImage a(3, 3), b(3, 3);
    CHECK(estimate_sigma2(a, a) == 0.0);
    b[4] = 3.0;
    CHECK(estimate_sigma2(b, a) == doctest::Approx(1.0));
    const auto x = random_image(5, 4, 1), y = random_image(5, 4, 2);
    double direct = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        direct += std::norm(x[i] - y[i]);
    CHECK(estimate_sigma2(x, y) == doctest::Approx(direct / 20.0));
    CHECK(mse(x, x) == 0.0);
    ComplexImage off = x;
    for (auto& v : off)
        v += Complex(0.3, 0.4);
    CHECK(mse(off, x) == doctest::Approx(0.25));
    CHECK(mse(x, y) == doctest::Approx(direct / 20.0));
}

TEST_CASE("Monte Carlo Jacobian trace")
{
    const auto x = random_image(8, 8, 5);
    SUBCASE("identity: per-probe value is |b|^2 / 2, expectation n")
    {
        const auto t = jacobian_trace_mc(IdentityReconstructor{}, x, std::nullopt, 400, 1);
        CHECK(std::abs(t.value - 64.0) < 4.0 * t.standard_error);
        CHECK(t.epsilon == doctest::Approx(default_epsilon(x)));
    }
    SUBCASE("scaled identity")
    {
        const auto t = jacobian_trace_mc(ScaledIdentityReconstructor(0.3), x, 1e-2, 400, 2);
        CHECK(std::abs(t.value - 0.3 * 64.0) < 4.0 * t.standard_error);
    }
    SUBCASE("random linear map, 200 probes within 5% of tr(A)/2")
    {
        Eigen::MatrixXd a = random_matrix(128, 3, 0.05);
        a.diagonal().array() += 1.0;
        const LinearReconstructor h(a, 8, 8);
        const auto t = jacobian_trace_mc(h, x, std::nullopt, 200, 4);
        CHECK(std::abs(t.value - a.trace() / 2.0) < 0.05 * a.trace() / 2.0);
        CHECK(jacobian_trace_exact(h, x) == doctest::Approx(a.trace() / 2.0).epsilon(1e-6));
    }
    SUBCASE("single probe has no standard error")
    {
        const auto t = jacobian_trace_mc(IdentityReconstructor{}, x, 1.0, 1, 0);
        CHECK(std::isnan(t.standard_error));
    }
    CHECK_THROWS_AS(jacobian_trace_mc(IdentityReconstructor{}, x, 0.0, 4, 0), InvalidParameter);
    CHECK_THROWS_AS(jacobian_trace_mc(IdentityReconstructor{}, x, 1.0, 0, 0), InvalidParameter);
    CHECK(default_epsilon(ComplexImage(2, 2)) == 1e-3);
}

TEST_CASE("exact Jacobian trace")
{
    const auto x = random_image(8, 8, 1);
    CHECK(jacobian_trace_exact(IdentityReconstructor{}, x) == doctest::Approx(64.0).epsilon(1e-9));
    CHECK_THROWS_AS(jacobian_trace_exact(IdentityReconstructor{}, random_image(64, 64, 1)), InvalidParameter);

    const SoftThresholdReconstructor h(0.8);
    CHECK(std::abs(jacobian_trace_exact(h, x, 1e-6) - h.analytic_dof(x)) < 1e-3 * 64);

    struct Shrink final : Reconstructor {
        ComplexImage apply(const ComplexImage&) const override { return ComplexImage(2, 2); }
        std::string name() const override { return "shrink"; }
    };
    CHECK_THROWS_AS(jacobian_trace_exact(Shrink{}, x), ContractViolation);
    CHECK_THROWS_AS(jacobian_trace_mc(Shrink{}, x, 1.0, 2, 0), ContractViolation);
}

TEST_CASE("SURE report")
{
    const auto x0 = random_image(8, 8, 2);
    const auto full = full_mask(x0.extent());
    const auto y = undersample(x0, full, 0.1, 3);
    SUBCASE("identity: zero residual, zero risk")
    {
        const auto r = sure(IdentityReconstructor{}, y, full, unit_density(x0.extent()), {});
        CHECK(r.rss == doctest::Approx(0.0).scale(1e-20));
        CHECK(r.sigma2 == r.rss / 64.0);
        CHECK(r.sure == doctest::Approx(0.0).scale(1e-20));
        CHECK(r.n == 64);
        CHECK(r.n_probes == 10);
    }
    SUBCASE("three-term form and decibel transform")
    {
        const ScaledIdentityReconstructor h(0.8);
        ComplexImage x_hat(8, 8);
        const auto r = sure(h, y, full, unit_density(x0.extent()), {32, 5, std::nullopt, std::nullopt}, &x_hat);
        const auto x_in = zero_fill(y, full);
        CHECK(r.rss == doctest::Approx(squared_norm(x_hat - x_in)));
        CHECK(r.sigma2 == r.rss / 64.0);
        CHECK(r.noise_sigma2 == r.sigma2);
        CHECK(r.dof == doctest::Approx(0.8 * 64.0).epsilon(0.2));
        CHECK(r.sure == doctest::Approx(r.sigma2 * r.dof / 64.0));
        CHECK(r.sure_full == doctest::Approx((-64.0 * r.sigma2 + r.rss + 2.0 * r.sigma2 * r.dof) / 64.0));
        CHECK(r.sure_db == doctest::Approx(10.0 * std::log10(squared_norm(x_hat) / (64.0 * r.sure))));
        const auto known = sure(h, y, full, unit_density(x0.extent()), {32, 5, std::nullopt, 0.02});
        CHECK(known.noise_sigma2 == 0.02);
        CHECK(known.sigma2 == r.sigma2);
        CHECK(known.sure_full == doctest::Approx((-64.0 * 0.02 + r.rss + 2.0 * 0.02 * r.dof) / 64.0));
    }
    SUBCASE("uses the density-compensated input")
    {
        const auto mask = make_vd_mask({8, 8, 2.0, 0.25, 1.0}, 4);
        const auto ym = undersample(x0, mask, 0.0, 0);
        const auto d = estimate_density({8, 8, 2.0, 0.25, 1.0}, 50, 1);
        ComplexImage x_hat(8, 8);
        sure(IdentityReconstructor{}, ym, mask, d, {2, 0, 1.0, std::nullopt}, &x_hat);
        CHECK(max_abs_diff(x_hat, density_compensate(ym, mask, d)) == 0.0);
    }
}

TEST_CASE("input-coupled cascade")
{
    const auto x0 = random_image(8, 8, 31);
    const VdMaskParams mp{8, 8, 2.0, 0.25, 1.0};
    const auto mask = make_vd_mask(mp, 32);
    const auto d = estimate_density(mp, 50, 33);
    const auto y = undersample(x0, mask, 0.05, 34);
    auto arch = VaeArchitecture{8, 8, {12}, 3, {12}};
    const auto vae = std::make_shared<const VaeParams>(VaeParams::random(arch, 35));
    const auto inner = std::make_shared<const VaeReconstructor>(vae);

    SUBCASE("same output as the fixed-measurement cascade")
    {
        for (std::size_t blocks : {1u, 2u}) {
            const CascadeReconstructor fixed(inner, CascadeConfig{blocks, y, mask});
            const InputCascadeReconstructor zf(inner, blocks, mask);
            const InputCascadeReconstructor dc(inner, blocks, mask, d);
            CHECK(max_abs_diff(zf(zero_fill(y, mask)), fixed(zero_fill(y, mask))) < 1e-12);
            const auto x_dc = density_compensate(y, mask, d);
            CHECK(max_abs_diff(dc.measurements(x_dc), y) < 1e-12);
            CHECK(max_abs_diff(dc(x_dc), fixed(x_dc)) < 1e-12);
        }
    }
    SUBCASE("identity inner map: trace counts the pass-through coordinates")
    {
        const auto id = std::make_shared<const IdentityReconstructor>();
        const auto x = zero_fill(y, mask);
        CHECK(jacobian_trace_exact(InputCascadeReconstructor(id, 1, mask), x) == doctest::Approx(64.0));
        // Sampled coefficients pass with gain D, the rest with gain 1.
        double expected = 0.0;
        for (std::size_t i = 0; i < 64; ++i)
            expected += mask.sampled(i) ? d.probabilities[i] : 1.0;
        CHECK(jacobian_trace_exact(InputCascadeReconstructor(id, 2, mask, d), x) == doctest::Approx(expected));
        // Holding the measurements fixed leaves only the unsampled part.
        const CascadeReconstructor fixed(id, CascadeConfig{1, y, mask});
        CHECK(jacobian_trace_exact(fixed, x) == doctest::Approx(64.0 - double(mask.sampled_count())));
    }
}

TEST_CASE("SURE tracks the MSE of a linear shrinkage on average")
{
    // h(x) = A x with known white noise; E[sure_full] = E||Ax - x0||^2 / n.
    const auto x0 = random_image(8, 8, 7);
    Eigen::MatrixXd a = random_matrix(128, 8, 0.03);
    a.diagonal().array() += 0.6;
    const LinearReconstructor h(a, 8, 8);
    const double s = 0.2;
    const auto x0v = to_real_vector(x0);
    const double exact = ((a - Eigen::MatrixXd::Identity(128, 128)) * x0v).squaredNorm() / 64.0
                         + s * s * a.squaredNorm() / 64.0;
    const auto full = full_mask(x0.extent());
    const auto unit = unit_density(x0.extent());
    double acc = 0.0;
    const int draws = 400;
    for (int i = 0; i < draws; ++i) {
        const auto y = undersample(x0, full, s, 1000 + i);
        acc += sure(h, y, full, unit, {4, std::uint64_t(i), 1e-2, 2.0 * s * s}).sure_full;
    }
    CHECK(std::abs(acc / draws - exact) < 0.1 * exact);
}

TEST_CASE("SURE-MSE correlation")
{
    SUBCASE("perfect line")
    {
        const std::vector<std::pair<double, double>> p{{1, 3}, {2, 5}, {4, 9}};
        const auto r = sure_mse_correlation(p);
        CHECK(r.r_squared == doctest::Approx(1.0));
        CHECK(r.slope == doctest::Approx(2.0));
        CHECK(r.intercept == doctest::Approx(1.0));
    }
    SUBCASE("constant mse")
    {
        const std::vector<std::pair<double, double>> p{{1, 2}, {2, 2}, {3, 2}};
        const auto r = sure_mse_correlation(p);
        CHECK(r.r_squared == 0.0);
        CHECK(r.slope == 0.0);
    }
    SUBCASE("hand-computed three points")
    {
        // x = 0, 1, 2; y = 1, 2, 4: slope 1.5, intercept 5/6, SS_res = 1/6, SS_tot = 14/3.
        const std::vector<std::pair<double, double>> p{{0, 1}, {1, 2}, {2, 4}};
        const auto r = sure_mse_correlation(p);
        CHECK(r.slope == doctest::Approx(1.5));
        CHECK(r.intercept == doctest::Approx(5.0 / 6.0));
        CHECK(r.r_squared == doctest::Approx(1.0 - (1.0 / 6.0) / (14.0 / 3.0)));
    }
    const std::vector<std::pair<double, double>> one{{1, 1}};
    CHECK_THROWS_AS(sure_mse_correlation(one), InsufficientSamples);
}

TEST_CASE("exports")
{
    SureCase c{"img_7", 4.0, 0.1, 2, {}, 0.5, 12.0};
    c.report.n = 4;
    c.report.rss = 2.0;
    c.report.sigma2 = 0.5;
    const std::vector<SureCase> rows{c};
    const auto csv = sure_csv(rows);
    CHECK(csv.rfind(std::string(kSureCsvHeader) + "\n", 0) == 0);
    CHECK(csv.find("img_7,4,0.1,2,0.5,0.5,") != std::string::npos);
    CHECK(to_json(c)["report"]["rss"] == 2.0);

    const auto dir = std::filesystem::temp_directory_path() / "mriuq_test_maps";
    std::vector<ComplexImage> s{random_image(4, 4, 1), random_image(4, 4, 2)};
    const auto m = bias_error_maps(s, random_image(4, 4, 3));
    export_maps(m, dir);
    for (const char* f : {"mean.pgm", "variance.pgm", "bias_sq.pgm", "error.pgm", "summary.json"})
        CHECK(std::filesystem::exists(dir / f));
    const auto j = nlohmann::json::parse(io::read_file(dir / "summary.json"));
    CHECK(j["variance"]["max"].get<double>() == doctest::Approx(summarize(m.variance).max));
    std::filesystem::remove_all(dir);
}
