#include "mriuq/model.hpp"

#include <cmath>
#include <optional>
#include <utility>
#include <sstream>

#include "mriuq/io.hpp"
#include "mriuq/random.hpp"
#include "mriuq/recon.hpp"

namespace mriuq {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

DenseLayer zero_layer(std::size_t in, std::size_t out)
{
    return DenseLayer{MatrixXd::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)),
                      VectorXd::Zero(static_cast<Eigen::Index>(out))};
}

void randomize(DenseLayer& layer, Rng& rng)
{
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.inputs()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
            layer.weight(r, c) = u(rng);
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r)
        layer.bias(r) = u(rng);
}

std::vector<DenseLayer> chain(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out)
{
    std::vector<DenseLayer> layers;
    std::size_t prev = in;
    for (auto h : hidden) {
        layers.push_back(zero_layer(prev, h));
        prev = h;
    }
    if (out > 0)
        layers.push_back(zero_layer(prev, out));
    return layers;
}

MatrixXd affine(const DenseLayer& layer, const MatrixXd& x)
{
    MatrixXd y = layer.weight * x;
    y.colwise() += layer.bias;
    return y;
}

void relu_inplace(MatrixXd& x)
{
    x = x.cwiseMax(0.0);
}

// dX for y = W x + b, accumulating dW and db.
MatrixXd affine_backward(const DenseLayer& layer, DenseLayer& grad, const MatrixXd& x, const MatrixXd& dy)
{
    grad.weight.noalias() += dy * x.transpose();
    grad.bias += dy.rowwise().sum();
    return layer.weight.transpose() * dy;
}

void relu_backward_inplace(MatrixXd& dy, const MatrixXd& activated)
{
    dy = (activated.array() > 0.0).select(dy, 0.0);
}

MatrixXd stack_images(std::span<const ComplexImage> images)
{
    const auto dim = static_cast<Eigen::Index>(2 * images.front().size());
    MatrixXd m(dim, static_cast<Eigen::Index>(images.size()));
    for (std::size_t j = 0; j < images.size(); ++j)
        m.col(static_cast<Eigen::Index>(j)) = to_real_vector(images[j]);
    return m;
}

template <typename Layers>
std::size_t count_parameters(const Layers& blocks)
{
    std::size_t n = 0;
    for (const auto* b : blocks)
        n += static_cast<std::size_t>(b->weight.size() + b->bias.size());
    return n;
}

struct EncoderCache {
    std::vector<MatrixXd> activations; // post-ReLU, one per hidden layer
    MatrixXd mu;
    MatrixXd logvar;
};

EncoderCache encoder_forward(const VaeParams& p, const MatrixXd& x)
{
    EncoderCache c;
    const MatrixXd* prev = &x;
    for (const auto& layer : p.encoder) {
        c.activations.push_back(affine(layer, *prev));
        relu_inplace(c.activations.back());
        prev = &c.activations.back();
    }
    c.mu = affine(p.mu_head, *prev);
    c.logvar = affine(p.logvar_head, *prev);
    return c;
}

struct DecoderCache {
    std::vector<MatrixXd> activations; // post-ReLU for hidden layers
    MatrixXd output;
};

DecoderCache decoder_forward(const VaeParams& p, const MatrixXd& z)
{
    DecoderCache c;
    const MatrixXd* prev = &z;
    for (std::size_t l = 0; l + 1 < p.decoder.size(); ++l) {
        c.activations.push_back(affine(p.decoder[l], *prev));
        relu_inplace(c.activations.back());
        prev = &c.activations.back();
    }
    c.output = affine(p.decoder.back(), *prev);
    return c;
}

struct DiscCache {
    std::vector<MatrixXd> activations;
    MatrixXd output; // 1 x B
};

DiscCache disc_forward(const DiscriminatorParams& d, const MatrixXd& x)
{
    DiscCache c;
    const MatrixXd* prev = &x;
    for (std::size_t l = 0; l + 1 < d.layers.size(); ++l) {
        c.activations.push_back(affine(d.layers[l], *prev));
        relu_inplace(c.activations.back());
        prev = &c.activations.back();
    }
    c.output = affine(d.layers.back(), *prev);
    return c;
}

// Backpropagates dOut (1 x B) through the discriminator. Returns d input.
MatrixXd disc_backward(const DiscriminatorParams& d, DiscriminatorParams* grad, const MatrixXd& x,
                       const DiscCache& c, MatrixXd dy)
{
    DiscriminatorParams scratch;
    if (!grad) {
        scratch = DiscriminatorParams::zeros(d.arch);
        grad = &scratch;
    }
    for (std::size_t l = d.layers.size(); l-- > 0;) {
        const MatrixXd& in = l == 0 ? x : c.activations[l - 1];
        dy = affine_backward(d.layers[l], grad->layers[l], in, dy);
        if (l > 0)
            relu_backward_inplace(dy, c.activations[l - 1]);
    }
    return dy;
}

struct BlockCache {
    MatrixXd input;
    EncoderCache enc;
    MatrixXd z;
    DecoderCache dec;
};

struct CascadeForward {
    std::vector<BlockCache> blocks;
    MatrixXd output; // 2n x B, after the final data consistency
};

MatrixXd apply_dc_columns(const MatrixXd& raw, std::span<const TrainingExample> batch, std::size_t w, std::size_t h)
{
    MatrixXd out(raw.rows(), raw.cols());
    for (Eigen::Index j = 0; j < raw.cols(); ++j) {
        const auto& ex = batch[static_cast<std::size_t>(j)];
        const VectorXd col = raw.col(j);
        out.col(j) = to_real_vector(data_consistency(from_real_vector(col, w, h), ex.y, ex.mask));
    }
    return out;
}

MatrixXd project_unsampled_columns(const MatrixXd& g, std::span<const TrainingExample> batch, std::size_t w,
                                   std::size_t h)
{
    MatrixXd out(g.rows(), g.cols());
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
        const VectorXd col = g.col(j);
        out.col(j) = to_real_vector(project_unsampled(from_real_vector(col, w, h), batch[static_cast<std::size_t>(j)].mask));
    }
    return out;
}

void check_batch(const VaeParams& params, std::span<const TrainingExample> batch)
{
    if (batch.empty())
        throw InvalidParameter("empty batch");
    for (const auto& ex : batch) {
        if (ex.x_input.width() != params.arch.width || ex.x_input.height() != params.arch.height)
            throw InvalidShape("batch image shape does not match the architecture");
        require_same_shape(ex.x_input, ex.x0, "batch");
        require_same_shape(ex.x_input, ex.y, "batch");
        require_same_shape(ex.x_input, ex.mask, "batch");
    }
}

CascadeForward cascade_forward(const VaeParams& p, std::span<const TrainingExample> batch, std::size_t n_blocks,
                               const LatentNoise& noise)
{
    check_batch(p, batch);
    if (n_blocks < 1)
        throw InvalidParameter("n_recurrent_blocks must be >= 1");
    if (noise.per_block.size() < n_blocks)
        throw InvalidParameter("latent noise has fewer blocks than the cascade");
    std::vector<ComplexImage> inputs;
    inputs.reserve(batch.size());
    for (const auto& ex : batch)
        inputs.push_back(ex.x_input);

    CascadeForward f;
    MatrixXd x = stack_images(inputs);
    for (std::size_t b = 0; b < n_blocks; ++b) {
        const MatrixXd& eps = noise.per_block[b];
        if (eps.rows() != static_cast<Eigen::Index>(p.arch.latent_dim)
            || eps.cols() != static_cast<Eigen::Index>(batch.size()))
            throw InvalidParameter("latent noise shape does not match latent_dim x batch");
        BlockCache c;
        c.input = x;
        c.enc = encoder_forward(p, c.input);
        c.z = c.enc.mu + ((0.5 * c.enc.logvar.array()).exp() * eps.array()).matrix();
        c.dec = decoder_forward(p, c.z);
        x = apply_dc_columns(c.dec.output, batch, p.arch.width, p.arch.height);
        f.blocks.push_back(std::move(c));
    }
    f.output = std::move(x);
    return f;
}

double kl_columns(const MatrixXd& mu, const MatrixXd& logvar)
{
    return 0.5 * (mu.array().square() + logvar.array().exp() - logvar.array() - 1.0).sum();
}

bool finite(double v) { return std::isfinite(v); }

} // namespace

// ---------------------------------------------------------------------------
// Parameter containers

VaeParams VaeParams::zeros(const VaeArchitecture& arch)
{
    if (arch.width == 0 || arch.height == 0 || arch.latent_dim == 0)
        throw InvalidParameter("VAE architecture dimensions must be >= 1");
    VaeParams p;
    p.arch = arch;
    p.encoder = chain(arch.image_dim(), arch.encoder_hidden, 0);
    const std::size_t enc_out = arch.encoder_hidden.empty() ? arch.image_dim() : arch.encoder_hidden.back();
    p.mu_head = zero_layer(enc_out, arch.latent_dim);
    p.logvar_head = zero_layer(enc_out, arch.latent_dim);
    p.decoder = chain(arch.latent_dim, arch.decoder_hidden, arch.image_dim());
    return p;
}

VaeParams VaeParams::random(const VaeArchitecture& arch, std::uint64_t seed, double logvar_bias)
{
    VaeParams p = zeros(arch);
    Rng rng = make_rng(seed);
    for (auto* b : p.blocks())
        randomize(*b, rng);
    p.logvar_head.bias.setConstant(logvar_bias);
    return p;
}

std::vector<DenseLayer*> VaeParams::blocks()
{
    std::vector<DenseLayer*> out;
    for (auto& l : encoder)
        out.push_back(&l);
    out.push_back(&mu_head);
    out.push_back(&logvar_head);
    for (auto& l : decoder)
        out.push_back(&l);
    return out;
}

std::vector<const DenseLayer*> VaeParams::blocks() const
{
    auto mut = const_cast<VaeParams*>(this)->blocks();
    return {mut.begin(), mut.end()};
}

std::size_t VaeParams::parameter_count() const { return count_parameters(blocks()); }

bool VaeParams::all_finite() const
{
    for (const auto* b : blocks())
        if (!b->weight.allFinite() || !b->bias.allFinite())
            return false;
    return true;
}

DiscriminatorParams DiscriminatorParams::zeros(const DiscriminatorArchitecture& arch)
{
    if (arch.width == 0 || arch.height == 0)
        throw InvalidParameter("discriminator dimensions must be >= 1");
    DiscriminatorParams d;
    d.arch = arch;
    d.layers = chain(arch.image_dim(), arch.hidden, 1);
    return d;
}

DiscriminatorParams DiscriminatorParams::random(const DiscriminatorArchitecture& arch, std::uint64_t seed)
{
    DiscriminatorParams d = zeros(arch);
    Rng rng = make_rng(seed);
    for (auto* b : d.blocks())
        randomize(*b, rng);
    return d;
}

std::vector<DenseLayer*> DiscriminatorParams::blocks()
{
    std::vector<DenseLayer*> out;
    for (auto& l : layers)
        out.push_back(&l);
    return out;
}

std::vector<const DenseLayer*> DiscriminatorParams::blocks() const
{
    std::vector<const DenseLayer*> out;
    for (const auto& l : layers)
        out.push_back(&l);
    return out;
}

std::size_t DiscriminatorParams::parameter_count() const { return count_parameters(blocks()); }

// ---------------------------------------------------------------------------
// Single-image operations

VectorXd to_real_vector(const ComplexImage& img)
{
    const auto n = static_cast<Eigen::Index>(img.size());
    VectorXd v(2 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
        v(i) = img[static_cast<std::size_t>(i)].real();
        v(n + i) = img[static_cast<std::size_t>(i)].imag();
    }
    return v;
}

ComplexImage from_real_vector(std::span<const double> v, std::size_t width, std::size_t height)
{
    const std::size_t n = width * height;
    if (v.size() != 2 * n)
        throw InvalidShape("real vector length must be 2 * width * height");
    ComplexImage img(width, height);
    for (std::size_t i = 0; i < n; ++i)
        img[i] = Complex(v[i], v[n + i]);
    return img;
}

LatentStats encode(const VaeParams& params, const ComplexImage& x)
{
    if (x.width() != params.arch.width || x.height() != params.arch.height)
        throw InvalidShape("encode: image shape does not match the architecture");
    const MatrixXd input = to_real_vector(x);
    EncoderCache c = encoder_forward(params, input);
    return LatentStats{c.mu.col(0), c.logvar.col(0)};
}

VectorXd sample_latent_with_sigma(const VectorXd& mu, const VectorXd& sigma, std::uint64_t seed)
{
    if (mu.size() != sigma.size())
        throw InvalidShape("sample_latent: mu and sigma lengths differ");
    Rng rng = make_rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    VectorXd z(mu.size());
    for (Eigen::Index j = 0; j < mu.size(); ++j)
        z(j) = mu(j) + sigma(j) * normal(rng);
    return z;
}

VectorXd sample_latent(const LatentStats& stats, std::uint64_t seed)
{
    return sample_latent_with_sigma(stats.mu, stats.sigma(), seed);
}

ComplexImage decode(const VaeParams& params, const VectorXd& z)
{
    if (z.size() != static_cast<Eigen::Index>(params.arch.latent_dim))
        throw InvalidShape("decode: latent length does not match latent_dim");
    const MatrixXd zin = z;
    DecoderCache c = decoder_forward(params, zin);
    const VectorXd out = c.output.col(0);
    return from_real_vector(out, params.arch.width, params.arch.height);
}

double kl_gaussian(const LatentStats& stats)
{
    return kl_columns(stats.mu, stats.logvar);
}

double discriminate(const DiscriminatorParams& disc, const ComplexImage& x)
{
    const MatrixXd input = to_real_vector(x);
    return disc_forward(disc, input).output(0, 0);
}

GanLosses gan_losses(const DiscriminatorParams& disc, std::span<const ComplexImage> real,
                     std::span<const ComplexImage> fake)
{
    if (real.empty() || fake.empty())
        throw InvalidParameter("gan_losses: empty batch");
    const MatrixXd dr = disc_forward(disc, stack_images(real)).output;
    const MatrixXd df = disc_forward(disc, stack_images(fake)).output;
    GanLosses g;
    g.generator = (1.0 - df.array()).square().mean();
    g.discriminator = (1.0 - dr.array()).square().mean() + df.array().square().mean();
    return g;
}

// ---------------------------------------------------------------------------
// Composite loss and gradients

LatentNoise LatentNoise::draw(std::size_t latent_dim, std::size_t batch, std::size_t blocks, std::uint64_t seed)
{
    LatentNoise n;
    Rng rng = make_rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t b = 0; b < blocks; ++b) {
        MatrixXd e(static_cast<Eigen::Index>(latent_dim), static_cast<Eigen::Index>(batch));
        for (Eigen::Index c = 0; c < e.cols(); ++c)
            for (Eigen::Index r = 0; r < e.rows(); ++r)
                e(r, c) = normal(rng);
        n.per_block.push_back(std::move(e));
    }
    return n;
}

LatentNoise LatentNoise::zero(std::size_t latent_dim, std::size_t batch, std::size_t blocks)
{
    LatentNoise n;
    for (std::size_t b = 0; b < blocks; ++b)
        n.per_block.push_back(MatrixXd::Zero(static_cast<Eigen::Index>(latent_dim), static_cast<Eigen::Index>(batch)));
    return n;
}

std::vector<ComplexImage> forward_cascade(const VaeParams& params, std::span<const TrainingExample> batch,
                                          std::size_t n_blocks, const LatentNoise& noise)
{
    const CascadeForward f = cascade_forward(params, batch, n_blocks, noise);
    std::vector<ComplexImage> out;
    for (Eigen::Index j = 0; j < f.output.cols(); ++j) {
        const VectorXd col = f.output.col(j);
        out.push_back(from_real_vector(col, params.arch.width, params.arch.height));
    }
    return out;
}

namespace {

struct LossTerms {
    LossBreakdown loss;
    MatrixXd target;
    DiscCache disc;
};

LossTerms evaluate_loss(const VaeParams& params, std::span<const TrainingExample> batch, const TrainingConfig& config,
                        const CascadeForward& f, const DiscriminatorParams* disc)
{
    LossTerms t;
    const double batch_n = static_cast<double>(batch.size());
    const double pixels = static_cast<double>(params.arch.width * params.arch.height);
    std::vector<ComplexImage> targets;
    for (const auto& ex : batch)
        targets.push_back(ex.x0);
    t.target = stack_images(targets);

    t.loss.pixel = (f.output - t.target).squaredNorm() / (batch_n * pixels);
    double kl = 0.0;
    for (const auto& b : f.blocks)
        kl += kl_columns(b.enc.mu, b.enc.logvar);
    t.loss.kl = kl / (batch_n * static_cast<double>(f.blocks.size()));
    if (config.lambda > 0.0) {
        if (!disc)
            throw InvalidParameter("lambda > 0 requires discriminator parameters");
        t.disc = disc_forward(*disc, f.output);
        t.loss.adversarial = (1.0 - t.disc.output.array()).square().mean();
    }
    t.loss.total = t.loss.pixel + config.eta * t.loss.kl + config.lambda * t.loss.adversarial;
    return t;
}

} // namespace

LossBreakdown vae_loss(const VaeParams& params, std::span<const TrainingExample> batch, const TrainingConfig& config,
                       const LatentNoise& noise, const DiscriminatorParams* disc)
{
    const CascadeForward f = cascade_forward(params, batch, config.n_recurrent_blocks, noise);
    return evaluate_loss(params, batch, config, f, disc).loss;
}

VaeGradients gradients(const VaeParams& params, std::span<const TrainingExample> batch, const TrainingConfig& config,
                       const LatentNoise& noise, const DiscriminatorParams* disc)
{
    const CascadeForward f = cascade_forward(params, batch, config.n_recurrent_blocks, noise);
    const LossTerms terms = evaluate_loss(params, batch, config, f, disc);

    const LossBreakdown& l = terms.loss;
    if (!finite(l.total)) {
        std::ostringstream msg;
        msg << "non-finite loss (pixel=" << l.pixel << ", kl=" << l.kl << ", adversarial=" << l.adversarial << ")";
        throw NumericalError(msg.str());
    }

    const auto w = params.arch.width;
    const auto h = params.arch.height;
    const double batch_n = static_cast<double>(batch.size());
    const double pixels = static_cast<double>(w * h);
    const double kl_weight = config.eta / (batch_n * static_cast<double>(f.blocks.size()));

    VaeGradients out{l, VaeParams::zeros(params.arch), {}};
    VaeParams& g = out.grad;

    MatrixXd dx = (2.0 / (batch_n * pixels)) * (f.output - terms.target);
    if (config.lambda > 0.0) {
        const MatrixXd dd = (-2.0 * config.lambda / batch_n) * (1.0 - terms.disc.output.array()).matrix();
        dx += disc_backward(*disc, nullptr, f.output, terms.disc, dd);
    }

    for (std::size_t b = f.blocks.size(); b-- > 0;) {
        const BlockCache& c = f.blocks[b];
        MatrixXd dy = project_unsampled_columns(dx, batch, w, h);

        for (std::size_t li = params.decoder.size(); li-- > 0;) {
            const MatrixXd& in = li == 0 ? c.z : c.dec.activations[li - 1];
            dy = affine_backward(params.decoder[li], g.decoder[li], in, dy);
            if (li > 0)
                relu_backward_inplace(dy, c.dec.activations[li - 1]);
        }
        const MatrixXd& dz = dy;
        const MatrixXd& eps = noise.per_block[b];
        const auto half_sigma = (0.5 * c.enc.logvar.array()).exp();
        const MatrixXd dmu = dz + kl_weight * c.enc.mu;
        const MatrixXd dlogvar = (dz.array() * eps.array() * 0.5 * half_sigma
                                  + kl_weight * 0.5 * (c.enc.logvar.array().exp() - 1.0)).matrix();

        const MatrixXd& enc_out = params.encoder.empty() ? c.input : c.enc.activations.back();
        MatrixXd dh = affine_backward(params.mu_head, g.mu_head, enc_out, dmu);
        dh += affine_backward(params.logvar_head, g.logvar_head, enc_out, dlogvar);
        for (std::size_t li = params.encoder.size(); li-- > 0;) {
            relu_backward_inplace(dh, c.enc.activations[li]);
            const MatrixXd& in = li == 0 ? c.input : c.enc.activations[li - 1];
            if (li == 0 && b == 0) {
                // Nothing upstream of the first block's input.
                g.encoder[0].weight.noalias() += dh * in.transpose();
                g.encoder[0].bias += dh.rowwise().sum();
                dh.resize(0, 0);
                break;
            }
            dh = affine_backward(params.encoder[li], g.encoder[li], in, dh);
        }
        // The input of block b is the data-consistent output of block b-1.
        dx = std::move(dh);
    }

    for (Eigen::Index j = 0; j < f.output.cols(); ++j) {
        const VectorXd col = f.output.col(j);
        out.reconstructions.push_back(from_real_vector(col, w, h));
    }
    return out;
}

DiscriminatorGradients discriminator_gradients(const DiscriminatorParams& disc, std::span<const ComplexImage> real,
                                               std::span<const ComplexImage> fake)
{
    if (real.empty() || fake.empty())
        throw InvalidParameter("discriminator_gradients: empty batch");
    DiscriminatorGradients out{0.0, DiscriminatorParams::zeros(disc.arch)};
    const MatrixXd xr = stack_images(real);
    const MatrixXd xf = stack_images(fake);
    const DiscCache cr = disc_forward(disc, xr);
    const DiscCache cf = disc_forward(disc, xf);
    const double nr = static_cast<double>(real.size());
    const double nf = static_cast<double>(fake.size());
    out.loss = (1.0 - cr.output.array()).square().mean() + cf.output.array().square().mean();
    if (!finite(out.loss))
        throw NumericalError("non-finite discriminator loss");
    disc_backward(disc, &out.grad, xr, cr, ((-2.0 / nr) * (1.0 - cr.output.array())).matrix());
    disc_backward(disc, &out.grad, xf, cf, ((2.0 / nf) * cf.output.array()).matrix());
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer

AdamState AdamState::for_blocks(const std::vector<const DenseLayer*>& blocks)
{
    AdamState s;
    for (const auto* b : blocks) {
        s.m_weight.push_back(MatrixXd::Zero(b->weight.rows(), b->weight.cols()));
        s.v_weight.push_back(MatrixXd::Zero(b->weight.rows(), b->weight.cols()));
        s.m_bias.push_back(VectorXd::Zero(b->bias.size()));
        s.v_bias.push_back(VectorXd::Zero(b->bias.size()));
    }
    return s;
}

void adam_step(const std::vector<DenseLayer*>& params, const std::vector<const DenseLayer*>& grads, AdamState& state,
               const AdamConfig& config)
{
    if (params.size() != grads.size() || params.size() != state.m_weight.size())
        throw InvalidShape("adam_step: parameter, gradient and state block counts differ");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);

    const double lr = config.learning_rate;
    const double b1 = config.beta1;
    const double b2 = config.beta2;
    auto update = [&](auto& theta, const auto& grad, auto& m, auto& v) {
        if (theta.rows() != grad.rows() || theta.cols() != grad.cols())
            throw InvalidShape("adam_step: gradient shape differs from parameter shape");
        m.array() = b1 * m.array() + (1.0 - b1) * grad.array();
        v.array() = b2 * v.array() + (1.0 - b2) * grad.array().square();
        theta.array() -= (lr / c1) * m.array() / ((v.array() * (1.0 / c2)).sqrt() + config.eps);
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
        update(params[i]->weight, grads[i]->weight, state.m_weight[i], state.v_weight[i]);
        update(params[i]->bias, grads[i]->bias, state.m_bias[i], state.v_bias[i]);
    }
}

// ---------------------------------------------------------------------------
// Training

void TrainingConfig::validate() const
{
    if (!(eta >= 0.0) || !std::isfinite(eta))
        throw InvalidParameter("eta must be >= 0");
    if (!(lambda >= 0.0 && lambda < 1.0))
        throw InvalidParameter("lambda must lie in [0, 1)");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw InvalidParameter("learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps_adam > 0.0))
        throw InvalidParameter("Adam hyperparameters out of range");
    if (batch_size < 1)
        throw InvalidParameter("batch_size must be >= 1");
    if (latent_dim < 1)
        throw InvalidParameter("latent_dim must be >= 1");
    if (n_recurrent_blocks < 1)
        throw InvalidParameter("n_recurrent_blocks must be >= 1");
    if (!(noise_std >= 0.0))
        throw InvalidParameter("noise_std must be >= 0");
    if (input_mode == InputMode::density_compensated && density_masks < 1)
        throw InvalidParameter("density_masks must be >= 1");
}

ComplexImage dihedral(const ComplexImage& img, unsigned symmetry)
{
    const std::size_t w = img.width();
    const std::size_t h = img.height();
    const bool transpose = (symmetry & 4u) && w == h;
    ComplexImage out(w, h);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            std::size_t sx = (symmetry & 1u) ? w - 1 - x : x;
            std::size_t sy = (symmetry & 2u) ? h - 1 - y : y;
            if (transpose)
                std::swap(sx, sy);
            out(x, y) = img(sx, sy);
        }
    return out;
}

namespace {

// Seed substreams used by train().
enum Stream : std::uint64_t { vae_init = 1, disc_init, density_stream, batch_pick, example, latent };

} // namespace

VdMaskParams mask_params(const TrainingConfig& config, Extent extent)
{
    return {extent.width, extent.height, config.acceleration, config.calib_fraction, config.density_power};
}

SamplingDensity input_density(const TrainingConfig& config, const VdMaskParams& mp)
{
    return estimate_density(mp, config.density_masks, derive_seed(config.seed, {density_stream}));
}

TrainingExample make_example(const ComplexImage& x0, const TrainingConfig& config, const SamplingDensity* density,
                             std::uint64_t seed)
{
    const VdMaskParams mp{x0.width(), x0.height(), config.acceleration, config.calib_fraction, config.density_power};
    TrainingExample ex;
    ex.mask = make_vd_mask(mp, derive_seed(seed, {0}));
    ex.y = undersample(x0, ex.mask, config.noise_std, derive_seed(seed, {1}));
    if (config.input_mode == InputMode::density_compensated) {
        if (!density)
            throw InvalidParameter("density-compensated input requires a sampling density");
        ex.x_input = density_compensate(ex.y, ex.mask, *density);
    } else {
        ex.x_input = zero_fill(ex.y, ex.mask);
    }
    ex.x0 = x0;
    return ex;
}

TrainResult train(const std::vector<ComplexImage>& images, const TrainingConfig& config, const ProgressCallback& progress)
{
    config.validate();
    if (images.empty())
        throw InvalidParameter("train: empty dataset");
    const Extent extent = images.front().extent();
    for (const auto& img : images)
        if (img.extent() != extent)
            throw InvalidShape("train: images have differing shapes");

    const VaeArchitecture arch{extent.width, extent.height, config.encoder_hidden, config.latent_dim,
                               config.decoder_hidden};
    const DiscriminatorArchitecture darch{extent.width, extent.height, config.discriminator_hidden};

    auto result = std::make_shared<TrainResult>();
    result->vae = VaeParams::random(arch, derive_seed(config.seed, {vae_init}), config.logvar_init_bias);
    result->discriminator = DiscriminatorParams::random(darch, derive_seed(config.seed, {disc_init}));

    const VdMaskParams mp = mask_params(config, extent);
    std::optional<SamplingDensity> density;
    if (config.input_mode == InputMode::density_compensated)
        density = input_density(config, mp);
    const VdMaskSampler sampler(mp);

    AdamState vae_state = AdamState::for_blocks(std::as_const(result->vae).blocks());
    AdamState disc_state = AdamState::for_blocks(std::as_const(result->discriminator).blocks());
    const bool adversarial = config.lambda > 0.0;

    std::vector<TrainingExample> batch(config.batch_size);
    std::vector<ComplexImage> real(config.batch_size);
    for (std::size_t it = 0; it < config.n_iterations; ++it) {
        Rng pick = make_rng(config.seed, {batch_pick, it});
        std::uniform_int_distribution<std::size_t> index(0, images.size() - 1);
        for (std::size_t j = 0; j < config.batch_size; ++j) {
            const std::size_t picked = index(pick);
            const unsigned symmetry = config.augment_flips ? static_cast<unsigned>(pick() & 7u) : 0u;
            const ComplexImage x0 = symmetry ? dihedral(images[picked], symmetry) : images[picked];
            const std::uint64_t s = derive_seed(config.seed, {example, it, j});
            TrainingExample& ex = batch[j];
            ex.mask = sampler.draw(derive_seed(s, {0}));
            ex.y = undersample(x0, ex.mask, config.noise_std, derive_seed(s, {1}));
            ex.x_input = density ? density_compensate(ex.y, ex.mask, *density) : zero_fill(ex.y, ex.mask);
            ex.x0 = x0;
            real[j] = x0;
        }
        const LatentNoise noise = LatentNoise::draw(config.latent_dim, config.batch_size, config.n_recurrent_blocks,
                                                    derive_seed(config.seed, {latent, it}));

        double lr = config.learning_rate;
        if (config.lr_halving_interval > 0)
            lr *= std::pow(0.5, static_cast<double>(it / config.lr_halving_interval));

        VaeGradients g;
        try {
            g = gradients(result->vae, batch, config, noise, adversarial ? &result->discriminator : nullptr);
        } catch (const NumericalError& e) {
            throw TrainingDiverged("training diverged at iteration " + std::to_string(it) + ": " + e.what(), result);
        }

        LossRecord rec{it, g.loss, 0.0, lr};
        const AdamConfig adam{lr, config.beta1, config.beta2, config.eps_adam};
        if (!std::as_const(g.grad).all_finite())
            throw TrainingDiverged("training diverged at iteration " + std::to_string(it) + ": non-finite gradient",
                                   result);
        adam_step(result->vae.blocks(), std::as_const(g.grad).blocks(), vae_state, adam);
        if (adversarial) {
            const auto dg = discriminator_gradients(result->discriminator, real, g.reconstructions);
            rec.discriminator = dg.loss;
            adam_step(result->discriminator.blocks(), std::as_const(dg.grad).blocks(), disc_state, adam);
        }
        result->curve.push_back(rec);
        if (progress)
            progress(rec);
    }
    return std::move(*result);
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void put_sizes(std::string& out, const std::vector<std::size_t>& sizes)
{
    io::put_u32(out, static_cast<std::uint32_t>(sizes.size()));
    for (auto s : sizes)
        io::put_u32(out, static_cast<std::uint32_t>(s));
}

std::vector<std::size_t> get_sizes(std::string_view in, std::size_t& pos)
{
    const auto n = io::get_u32(in, pos);
    if (n > 64)
        throw Error("implausible layer count");
    std::vector<std::size_t> sizes(n);
    for (auto& s : sizes)
        s = io::get_u32(in, pos);
    return sizes;
}

void put_blocks(std::string& out, const std::vector<const DenseLayer*>& blocks)
{
    for (const auto* b : blocks) {
        for (Eigen::Index r = 0; r < b->weight.rows(); ++r)
            for (Eigen::Index c = 0; c < b->weight.cols(); ++c)
                io::put_f32(out, static_cast<float>(b->weight(r, c)));
        for (Eigen::Index r = 0; r < b->bias.size(); ++r)
            io::put_f32(out, static_cast<float>(b->bias(r)));
    }
}

void get_blocks(std::string_view in, std::size_t& pos, const std::vector<DenseLayer*>& blocks)
{
    for (auto* b : blocks) {
        for (Eigen::Index r = 0; r < b->weight.rows(); ++r)
            for (Eigen::Index c = 0; c < b->weight.cols(); ++c)
                b->weight(r, c) = io::get_f32(in, pos);
        for (Eigen::Index r = 0; r < b->bias.size(); ++r)
            b->bias(r) = io::get_f32(in, pos);
    }
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const VaeParams& vae, const DiscriminatorParams& disc)
{
    std::string out = "VAEP";
    io::put_u32(out, kCheckpointVersion);
    io::put_u32(out, static_cast<std::uint32_t>(vae.arch.width));
    io::put_u32(out, static_cast<std::uint32_t>(vae.arch.height));
    io::put_u32(out, static_cast<std::uint32_t>(vae.arch.latent_dim));
    put_sizes(out, vae.arch.encoder_hidden);
    put_sizes(out, vae.arch.decoder_hidden);
    put_sizes(out, disc.arch.hidden);
    put_blocks(out, vae.blocks());
    put_blocks(out, disc.blocks());
    io::write_file_atomic(path, out);
}

std::pair<VaeParams, DiscriminatorParams> load_checkpoint(const std::filesystem::path& path)
{
    const std::string bytes = io::read_file(path);
    try {
        if (bytes.size() < 4 || bytes.compare(0, 4, "VAEP") != 0)
            throw Error("bad magic, expected VAEP");
        std::size_t pos = 4;
        if (io::get_u32(bytes, pos) != kCheckpointVersion)
            throw Error("unsupported checkpoint version");
        VaeArchitecture arch;
        arch.width = io::get_u32(bytes, pos);
        arch.height = io::get_u32(bytes, pos);
        arch.latent_dim = io::get_u32(bytes, pos);
        arch.encoder_hidden = get_sizes(bytes, pos);
        arch.decoder_hidden = get_sizes(bytes, pos);
        DiscriminatorArchitecture darch{arch.width, arch.height, get_sizes(bytes, pos)};
        VaeParams vae = VaeParams::zeros(arch);
        DiscriminatorParams disc = DiscriminatorParams::zeros(darch);
        get_blocks(bytes, pos, vae.blocks());
        get_blocks(bytes, pos, disc.blocks());
        if (pos != bytes.size())
            throw Error("trailing bytes after parameter blocks");
        if (!vae.all_finite())
            throw Error("non-finite parameters");
        return {std::move(vae), std::move(disc)};
    } catch (const IoError&) {
        throw;
    } catch (const Error& e) {
        throw IoError(std::string("invalid checkpoint (") + e.what() + ")", path.string());
    }
}

} // namespace mriuq
