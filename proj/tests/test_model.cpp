#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "helpers.hpp"
#include "mriuq/io.hpp"
#include "mriuq/model.hpp"
#include "mriuq/recon.hpp"

using namespace mriuq;
using testutil::max_abs_diff;
using testutil::random_image;

namespace {

VaeArchitecture toy_arch()
{
    return VaeArchitecture{8, 8, {16, 12}, 4, {12, 16}};
}

TrainingConfig toy_config()
{
    TrainingConfig c;
    c.encoder_hidden = {16, 12};
    c.decoder_hidden = {12, 16};
    c.latent_dim = 4;
    c.discriminator_hidden = {6, 5};
    c.acceleration = 2.0;
    c.calib_fraction = 0.25;
    c.input_mode = InputMode::zero_filled;
    return c;
}

std::vector<TrainingExample> toy_batch(const TrainingConfig& c, std::size_t n, std::uint64_t seed)
{
    std::vector<TrainingExample> b;
    for (std::size_t i = 0; i < n; ++i)
        b.push_back(make_example(random_image(8, 8, seed + i), c, nullptr, seed + 100 + i));
    return b;
}

// Zero decoder weights: g(z) = output bias regardless of z.
VaeParams constant_decoder(const VaeArchitecture& arch, const ComplexImage& out)
{
    VaeParams p = VaeParams::random(arch, 5, 0.0);
    for (auto& l : p.decoder) {
        l.weight.setZero();
        l.bias.setZero();
    }
    p.decoder.back().bias = to_real_vector(out);
    p.mu_head.weight.setZero();
    p.mu_head.bias.setZero();
    p.logvar_head.weight.setZero();
    p.logvar_head.bias.setZero();
    return p;
}

double relu(double v) { return v > 0.0 ? v : 0.0; }

} // namespace

TEST_CASE("parameter shapes and count")
{
    const auto p = VaeParams::random(VaeArchitecture{}, 0);
    // 2048-256-128 encoder, two 128-64 heads, 64-128-256-2048 decoder.
    const std::size_t expected = (2048 * 256 + 256) + (256 * 128 + 128) + 2 * (128 * 64 + 64) + (64 * 128 + 128)
                                 + (128 * 256 + 256) + (256 * 2048 + 2048);
    CHECK(p.parameter_count() == expected);
    CHECK(p.logvar_head.bias.isConstant(-6.0));
    CHECK(p.all_finite());
    const auto q = VaeParams::random(VaeArchitecture{}, 0);
    CHECK(p.encoder[0].weight == q.encoder[0].weight);
    const double bound = 1.0 / std::sqrt(2048.0);
    CHECK(p.encoder[0].weight.cwiseAbs().maxCoeff() <= bound);
}

TEST_CASE("real vector layout is [re..., im...]")
{
    ComplexImage img(2, 1);
    img[0] = {1.0, 2.0};
    img[1] = {3.0, 4.0};
    const auto v = to_real_vector(img);
    CHECK(v(0) == 1.0);
    CHECK(v(1) == 3.0);
    CHECK(v(2) == 2.0);
    CHECK(v(3) == 4.0);
    CHECK(from_real_vector(v, 2, 1) == img);
    CHECK_THROWS_AS(from_real_vector(v, 3, 1), InvalidShape);
}

TEST_CASE("decode")
{
    const auto arch = toy_arch();
    SUBCASE("zero z and zero weights give the output bias")
    {
        VaeParams p = VaeParams::zeros(arch);
        const auto target = random_image(8, 8, 4);
        p.decoder.back().bias = to_real_vector(target);
        CHECK(decode(p, Eigen::VectorXd::Zero(4)) == target);
    }
    SUBCASE("hand-computed two-layer decoder")
    {
        VaeArchitecture a{1, 1, {}, 2, {2}};
        VaeParams p = VaeParams::zeros(a);
        p.decoder[0].weight << 1.0, -1.0, 0.5, 2.0;
        p.decoder[0].bias << 0.1, -0.2;
        p.decoder[1].weight << 1.0, 1.0, -1.0, 3.0;
        p.decoder[1].bias << 0.0, 0.5;
        Eigen::VectorXd z(2);
        z << 0.3, 0.7;
        const double h0 = relu(0.3 - 0.7 + 0.1);
        const double h1 = relu(0.15 + 1.4 - 0.2);
        const auto out = decode(p, z);
        CHECK(out[0].real() == doctest::Approx(h0 + h1));
        CHECK(out[0].imag() == doctest::Approx(-h0 + 3.0 * h1 + 0.5));
    }
    SUBCASE("decode is continuous")
    {
        const auto p = VaeParams::random(arch, 2);
        Eigen::VectorXd z = Eigen::VectorXd::Constant(4, 0.3);
        const auto base = decode(p, z);
        double prev = 1e300;
        for (double d : {1e-2, 1e-4, 1e-6}) {
            const double diff = std::sqrt(squared_norm(decode(p, z.array() + d) - base));
            CHECK(diff <= prev);
            prev = diff;
        }
        CHECK(prev < 1e-4);
    }
    CHECK_THROWS_AS(decode(VaeParams::zeros(arch), Eigen::VectorXd::Zero(3)), InvalidShape);
}

TEST_CASE("encode matches a hand-computed forward pass")
{
    VaeArchitecture a{1, 1, {2}, 1, {}};
    VaeParams p = VaeParams::zeros(a);
    p.encoder[0].weight << 1.0, 2.0, -1.0, 1.0;
    p.encoder[0].bias << 0.0, 0.5;
    p.mu_head.weight << 2.0, -1.0;
    p.mu_head.bias << 0.25;
    p.logvar_head.weight << 0.5, 0.5;
    p.logvar_head.bias << -1.0;
    ComplexImage x(1, 1);
    x[0] = {1.0, -0.5};
    const double h0 = relu(1.0 - 1.0), h1 = relu(-1.0 - 0.5 + 0.5);
    const auto s = encode(p, x);
    CHECK(s.mu(0) == doctest::Approx(2.0 * h0 - h1 + 0.25));
    CHECK(s.logvar(0) == doctest::Approx(0.5 * (h0 + h1) - 1.0));
    CHECK(s.sigma()(0) == doctest::Approx(std::exp(-0.5)));
}

TEST_CASE("latent sampling statistics")
{
    LatentStats s{Eigen::VectorXd::Constant(1, 1.5), Eigen::VectorXd::Constant(1, std::log(0.25))};
    CHECK(sample_latent(s, 3) == sample_latent(s, 3));
    const int n = 100000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = sample_latent(s, static_cast<std::uint64_t>(i))(0);
        sum += z;
        sum2 += z * z;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean - 1.5) < 3.0 * 0.5 / std::sqrt(double(n)));
    // SE of a sample variance of normals: sqrt(2/n) sigma^2.
    CHECK(std::abs(var - 0.25) < 3.0 * std::sqrt(2.0 / n) * 0.25);
}

TEST_CASE("KL divergence closed forms")
{
    auto kl = [](double mu, double sigma) {
        return kl_gaussian({Eigen::VectorXd::Constant(1, mu), Eigen::VectorXd::Constant(1, std::log(sigma * sigma))});
    };
    CHECK(kl(0.0, 1.0) == doctest::Approx(0.0));
    CHECK(kl(1.0, 1.0) == doctest::Approx(0.5));
    CHECK(kl(0.0, 2.0) == doctest::Approx(0.5 * (4.0 - std::log(4.0) - 1.0)));
    CHECK(kl(0.0, 2.0) == doctest::Approx(0.8069).epsilon(1e-4));
    for (double mu : {-2.0, 0.1, 3.0})
        for (double sg : {0.1, 0.9, 5.0})
            CHECK(kl(mu, sg) >= 0.0);
}

TEST_CASE("GAN losses")
{
    SUBCASE("D == 1 on reconstructions")
    {
        DiscriminatorParams d = DiscriminatorParams::zeros({2, 2, {3}});
        d.layers.back().bias(0) = 1.0;
        const std::vector<ComplexImage> real{random_image(2, 2, 1)}, fake{random_image(2, 2, 2)};
        const auto g = gan_losses(d, real, fake);
        CHECK(g.generator == 0.0);
        CHECK(g.discriminator == doctest::Approx(1.0));
    }
    // Linear critic D(x) = Re x[0].
    DiscriminatorParams d = DiscriminatorParams::zeros({2, 2, {}});
    d.layers[0].weight(0, 0) = 1.0;
    auto image = [](double v) {
        ComplexImage x(2, 2);
        x[0] = v;
        return x;
    };
    SUBCASE("perfect critic")
    {
        const std::vector<ComplexImage> real{image(1.0), image(1.0)}, fake{image(0.0)};
        CHECK(gan_losses(d, real, fake).discriminator == 0.0);
    }
    SUBCASE("outputs 0.3 on real and 0.7 on fake")
    {
        const std::vector<ComplexImage> real{image(0.3)}, fake{image(0.7)};
        const auto g = gan_losses(d, real, fake);
        CHECK(g.generator == doctest::Approx(0.09));
        CHECK(g.discriminator == doctest::Approx(0.49 + 0.49));
    }
}

TEST_CASE("composite loss")
{
    auto c = toy_config();
    const auto arch = toy_arch();

    SUBCASE("perfect reconstruction with the prior posterior has zero loss and zero gradient")
    {
        c.eta = 0.5;
        std::vector<TrainingExample> batch;
        const auto x0 = random_image(8, 8, 9);
        for (int i = 0; i < 3; ++i)
            batch.push_back(make_example(x0, c, nullptr, 40 + i));
        const auto p = constant_decoder(arch, x0);
        const auto noise = LatentNoise::draw(4, 3, 1, 1);
        const auto l = vae_loss(p, batch, c, noise);
        CHECK(l.total < 1e-25);
        const auto g = gradients(p, batch, c, noise);
        for (const auto* b : std::as_const(g.grad).blocks()) {
            CHECK(b->weight.cwiseAbs().maxCoeff() < 1e-12);
            CHECK(b->bias.cwiseAbs().maxCoeff() < 1e-12);
        }
    }

    SUBCASE("breakdown sums to the total and eta = 0 is the pixel loss")
    {
        c.eta = 0.3;
        c.lambda = 0.2;
        c.n_recurrent_blocks = 2;
        const auto batch = toy_batch(c, 3, 1);
        const auto p = VaeParams::random(arch, 3, -1.0);
        const auto d = DiscriminatorParams::random({8, 8, {6, 5}}, 4);
        const auto noise = LatentNoise::draw(4, 3, 2, 2);
        const auto l = vae_loss(p, batch, c, noise, &d);
        CHECK(std::abs(l.total - (l.pixel + 0.3 * l.kl + 0.2 * l.adversarial)) < 1e-12);
        CHECK(l.kl > 0.0);
        c.eta = 0.0;
        c.lambda = 0.0;
        const auto l0 = vae_loss(p, batch, c, noise);
        CHECK(l0.total == l0.pixel);
        CHECK(l0.pixel == l.pixel);
    }

    SUBCASE("single example against a manual composition")
    {
        c.eta = 0.25;
        const auto batch = toy_batch(c, 1, 7);
        const auto p = VaeParams::random(arch, 6, -2.0);
        const auto noise = LatentNoise::draw(4, 1, 1, 5);
        const auto stats = encode(p, batch[0].x_input);
        const Eigen::VectorXd z = stats.mu + (stats.sigma().array() * noise.per_block[0].col(0).array()).matrix();
        const auto x_hat = data_consistency(decode(p, z), batch[0].y, batch[0].mask);
        const double pixel = squared_norm(x_hat - batch[0].x0) / 64.0;
        const auto l = vae_loss(p, batch, c, noise);
        CHECK(l.pixel == doctest::Approx(pixel).epsilon(1e-12));
        CHECK(l.kl == doctest::Approx(kl_gaussian(stats)).epsilon(1e-12));
        CHECK(l.total == doctest::Approx(pixel + 0.25 * kl_gaussian(stats)).epsilon(1e-12));
    }

    SUBCASE("KL gradient with respect to mu is mu")
    {
        c.eta = 1.0;
        const auto x0 = random_image(8, 8, 2);
        const auto batch = std::vector<TrainingExample>{make_example(x0, c, nullptr, 1)};
        VaeParams p = constant_decoder(arch, x0);
        p.mu_head.bias << 0.5, -1.0, 2.0, 0.0;
        const auto g = gradients(p, batch, c, LatentNoise::draw(4, 1, 1, 0));
        for (int j = 0; j < 4; ++j)
            CHECK(g.grad.mu_head.bias(j) == doctest::Approx(p.mu_head.bias(j)));
    }

    SUBCASE("non-finite loss is reported")
    {
        auto batch = toy_batch(c, 1, 3);
        batch[0].x0[0] = Complex(std::nan(""), 0.0);
        const auto p = VaeParams::random(arch, 1);
        CHECK_THROWS_AS(gradients(p, batch, c, LatentNoise::zero(4, 1, 1)), NumericalError);
    }
}

TEST_CASE("analytic gradients match central finite differences")
{
    auto c = toy_config();
    c.eta = 0.3;
    c.lambda = 0.2;
    c.n_recurrent_blocks = 2;
    const auto batch = toy_batch(c, 3, 21);
    VaeParams p = VaeParams::random(toy_arch(), 8, -1.0);
    const auto d = DiscriminatorParams::random({8, 8, {6, 5}}, 9);
    const auto noise = LatentNoise::draw(4, 3, 2, 10);
    const auto g = gradients(p, batch, c, noise, &d);
    const auto grads = std::as_const(g.grad).blocks();
    const auto blocks = p.blocks();
    double worst = 0.0;
    for (std::size_t k = 0; k < blocks.size(); ++k) {
        auto check = [&](double* values, const double* analytic, Eigen::Index count) {
            // Every bias entry, and a strided subset of weights to bound runtime.
            const Eigen::Index stride = count > 64 ? 7 : 1;
            for (Eigen::Index i = 0; i < count; i += stride) {
                const double orig = values[i];
                const double h = 1e-4 * std::max(1.0, std::abs(orig));
                values[i] = orig + h;
                const double lp = vae_loss(p, batch, c, noise, &d).total;
                values[i] = orig - h;
                const double lm = vae_loss(p, batch, c, noise, &d).total;
                values[i] = orig;
                const double fd = (lp - lm) / (2.0 * h);
                const double denom = std::max(std::abs(fd) + std::abs(analytic[i]), 1e-7);
                worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
            }
        };
        check(blocks[k]->weight.data(), grads[k]->weight.data(), blocks[k]->weight.size());
        check(blocks[k]->bias.data(), grads[k]->bias.data(), blocks[k]->bias.size());
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("discriminator gradients match finite differences")
{
    auto d = DiscriminatorParams::random({4, 4, {5, 3}}, 2);
    const std::vector<ComplexImage> real{random_image(4, 4, 1), random_image(4, 4, 2)};
    const std::vector<ComplexImage> fake{random_image(4, 4, 3)};
    const auto g = discriminator_gradients(d, real, fake);
    CHECK(g.loss == doctest::Approx(gan_losses(d, real, fake).discriminator));
    const auto blocks = d.blocks();
    const auto grads = std::as_const(g.grad).blocks();
    double worst = 0.0;
    for (std::size_t k = 0; k < blocks.size(); ++k)
        for (Eigen::Index i = 0; i < blocks[k]->weight.size(); ++i) {
            double& w = blocks[k]->weight.data()[i];
            const double o = w;
            w = o + 1e-5;
            const double lp = gan_losses(d, real, fake).discriminator;
            w = o - 1e-5;
            const double lm = gan_losses(d, real, fake).discriminator;
            w = o;
            const double fd = (lp - lm) / 2e-5;
            const double an = grads[k]->weight.data()[i];
            worst = std::max(worst, std::abs(fd - an) / std::max(std::abs(fd) + std::abs(an), 1e-7));
        }
    CHECK(worst < 1e-4);
}

TEST_CASE("Adam")
{
    DenseLayer theta{Eigen::MatrixXd::Constant(1, 1, 1.0), Eigen::VectorXd::Constant(1, -2.0)};
    std::vector<DenseLayer*> params{&theta};
    auto state = AdamState::for_blocks({&theta});
    const AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};

    SUBCASE("zero gradient leaves parameters unchanged")
    {
        const DenseLayer zero{Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Zero(1)};
        adam_step(params, {&zero}, state, cfg);
        CHECK(theta.weight(0, 0) == 1.0);
        CHECK(theta.bias(0) == -2.0);
    }
    SUBCASE("first step moves by the learning rate against the gradient sign")
    {
        const DenseLayer g{Eigen::MatrixXd::Constant(1, 1, 3.7), Eigen::VectorXd::Constant(1, -0.01)};
        adam_step(params, {&g}, state, cfg);
        CHECK(theta.weight(0, 0) == doctest::Approx(0.9).epsilon(1e-6));
        CHECK(theta.bias(0) == doctest::Approx(-1.9).epsilon(1e-5));
    }
    SUBCASE("three steps on f(x) = x^2 follow the Adam recurrence")
    {
        double x = 1.0, m = 0.0, v = 0.0;
        for (int t = 1; t <= 3; ++t) {
            const DenseLayer g{Eigen::MatrixXd::Constant(1, 1, 2.0 * theta.weight(0, 0)),
                               Eigen::VectorXd::Zero(1)};
            adam_step(params, {&g}, state, cfg);
            const double grad = 2.0 * x;
            m = 0.9 * m + 0.1 * grad;
            v = 0.999 * v + 0.001 * grad * grad;
            x -= 0.1 * (m / (1.0 - std::pow(0.9, t))) / (std::sqrt(v / (1.0 - std::pow(0.999, t))) + 1e-8);
            CHECK(theta.weight(0, 0) == doctest::Approx(x).epsilon(1e-12));
        }
    }
    SUBCASE("shape mismatch")
    {
        const DenseLayer g{Eigen::MatrixXd::Zero(2, 1), Eigen::VectorXd::Zero(1)};
        CHECK_THROWS_AS(adam_step(params, {&g}, state, cfg), InvalidShape);
    }
}

TEST_CASE("simulated training examples")
{
    auto c = toy_config();
    const auto x0 = random_image(8, 8, 61);
    const auto zf = make_example(x0, c, nullptr, 62);
    CHECK(max_abs_diff(zf.x_input, zero_fill(zf.y, zf.mask)) == 0.0);
    CHECK(max_abs_diff(zf.x0, x0) == 0.0);

    c.input_mode = InputMode::density_compensated;
    CHECK_THROWS_AS(make_example(x0, c, nullptr, 62), InvalidParameter);
    const auto d = estimate_density({8, 8, c.acceleration, c.calib_fraction, c.density_power}, 20, 63);
    const auto dc = make_example(x0, c, &d, 62);
    CHECK(max_abs_diff(dc.y, zf.y) == 0.0);
    CHECK(max_abs_diff(dc.x_input, density_compensate(dc.y, dc.mask, d)) == 0.0);
}

TEST_CASE("dihedral symmetries")
{
    const auto img = random_image(4, 4, 3);
    CHECK(dihedral(img, 0) == img);
    CHECK(dihedral(img, 1)(0, 2) == img(3, 2));
    CHECK(dihedral(img, 2)(1, 0) == img(1, 3));
    CHECK(dihedral(img, 4)(1, 2) == img(2, 1));
    for (unsigned s = 0; s < 8; ++s)
        CHECK(squared_norm(dihedral(img, s)) == doctest::Approx(squared_norm(img)));
}

TEST_CASE("training")
{
    auto c = toy_config();
    c.eta = 0.0;
    c.n_iterations = 500;
    c.learning_rate = 1e-3;
    c.logvar_init_bias = -6.0;
    c.augment_flips = false;
    const std::vector<ComplexImage> images{random_image(8, 8, 12, 0.5)};

    SUBCASE("loss halves on a one-image toy")
    {
        const auto r = train(images, c);
        REQUIRE(r.curve.size() == 500);
        auto window = [&](std::size_t from) {
            double s = 0.0;
            for (std::size_t i = from; i < from + 20; ++i)
                s += r.curve[i].generator.total;
            return s / 20.0;
        };
        CHECK(window(480) <= 0.5 * window(0));
    }
    SUBCASE("deterministic in the seed")
    {
        c.n_iterations = 30;
        c.lambda = 0.1;
        const auto a = train(images, c);
        const auto b = train(images, c);
        for (std::size_t i = 0; i < a.curve.size(); ++i) {
            CHECK(a.curve[i].generator.total == b.curve[i].generator.total);
            CHECK(a.curve[i].discriminator == b.curve[i].discriminator);
        }
        CHECK(a.vae.decoder.back().weight == b.vae.decoder.back().weight);
        c.seed = 1;
        const auto other = train(images, c);
        CHECK(other.curve.back().generator.total != a.curve.back().generator.total);
    }
    SUBCASE("a large KL weight trades reconstruction for prior matching")
    {
        c.n_iterations = 400;
        c.logvar_init_bias = 0.0;
        const auto free = train(images, c);
        c.eta = 1e3;
        const auto tight = train(images, c);
        CHECK(tight.curve.back().generator.kl < 1e-3);
        CHECK(tight.curve.back().generator.kl < 0.01 * free.curve.back().generator.kl);
        CHECK(tight.curve.back().generator.pixel > 2.0 * free.curve.back().generator.pixel);
    }
    SUBCASE("non-finite data aborts with the last finite state")
    {
        auto bad = images;
        bad[0][5] = Complex(std::nan(""), 0.0);
        try {
            train(bad, c);
            FAIL("expected TrainingDiverged");
        } catch (const TrainingDiverged& e) {
            CHECK(e.last_finite().curve.empty());
            CHECK(e.last_finite().vae.all_finite());
        }
    }
    SUBCASE("invalid configuration")
    {
        c.lambda = 1.5;
        CHECK_THROWS_AS(train(images, c), InvalidParameter);
        c.lambda = 0.0;
        c.batch_size = 0;
        CHECK_THROWS_AS(train(images, c), InvalidParameter);
    }
}

TEST_CASE("checkpoint round trip")
{
    const auto dir = std::filesystem::temp_directory_path() / "mriuq_test_ckpt";
    std::filesystem::create_directories(dir);
    const auto vae = VaeParams::random(toy_arch(), 4);
    const auto disc = DiscriminatorParams::random({8, 8, {6, 5}}, 5);
    save_checkpoint(dir / "a.vaep", vae, disc);
    const auto [v2, d2] = load_checkpoint(dir / "a.vaep");
    CHECK(v2.arch == vae.arch);
    CHECK(d2.arch == disc.arch);
    const auto a = vae.blocks();
    const auto b = v2.blocks();
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK((a[k]->weight - b[k]->weight).cwiseAbs().maxCoeff() < 1e-6);
        CHECK((a[k]->weight.cast<float>().cast<double>() - b[k]->weight).cwiseAbs().maxCoeff() == 0.0);
    }

    std::string bytes = io::read_file(dir / "a.vaep");
    io::write_file_atomic(dir / "short.vaep", bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(load_checkpoint(dir / "short.vaep"), IoError);
    bytes[0] = 'X';
    io::write_file_atomic(dir / "magic.vaep", bytes);
    CHECK_THROWS_AS(load_checkpoint(dir / "magic.vaep"), IoError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.vaep"), IoError);
    std::filesystem::remove_all(dir);
}
