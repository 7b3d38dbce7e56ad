#include "mriuq/recon.hpp"

#include <cmath>
#include <limits>

namespace mriuq {

ComplexImage data_consistency(const ComplexImage& x, const KSpace& y, const SamplingMask& mask)
{
    require_same_shape(x, y, "data_consistency");
    require_same_shape(x, mask, "data_consistency");
    KSpace k = fft2_centered(x);
    for (std::size_t i = 0; i < k.size(); ++i)
        if (mask.sampled(i))
            k[i] = y[i];
    return ifft2_centered(k);
}

ComplexImage project_unsampled(const ComplexImage& g, const SamplingMask& mask)
{
    require_same_shape(g, mask, "project_unsampled");
    KSpace k = fft2_centered(g);
    for (std::size_t i = 0; i < k.size(); ++i)
        if (mask.sampled(i))
            k[i] = Complex{};
    return ifft2_centered(k);
}

LinearReconstructor::LinearReconstructor(Eigen::MatrixXd matrix, std::size_t width, std::size_t height)
  : matrix_(std::move(matrix)), width_(width), height_(height)
{
    const auto dim = static_cast<Eigen::Index>(2 * width * height);
    if (matrix_.rows() != dim || matrix_.cols() != dim)
        throw InvalidShape("LinearReconstructor: matrix must be 2n x 2n for an image of n pixels");
}

ComplexImage LinearReconstructor::apply(const ComplexImage& x) const
{
    if (x.width() != width_ || x.height() != height_)
        throw InvalidShape("LinearReconstructor: image shape does not match matrix");
    const Eigen::VectorXd out = matrix_ * to_real_vector(x);
    return from_real_vector(out, width_, height_);
}

SoftThresholdReconstructor::SoftThresholdReconstructor(double tau)
  : tau_(tau)
{
    if (!(tau >= 0.0) || !std::isfinite(tau))
        throw InvalidParameter("soft threshold must be >= 0");
}

ComplexImage SoftThresholdReconstructor::apply(const ComplexImage& x) const
{
    KSpace k = fft2_centered(x);
    for (auto& c : k) {
        const double mag = std::abs(c);
        c = mag > tau_ ? c * ((mag - tau_) / mag) : Complex{};
    }
    return ifft2_centered(k);
}

double SoftThresholdReconstructor::analytic_dof(const ComplexImage& x) const
{
    const KSpace k = fft2_centered(x);
    double dof = 0.0;
    for (const auto& c : k) {
        const double mag = std::abs(c);
        if (mag > tau_)
            dof += 1.0 - tau_ / (2.0 * mag);
    }
    return dof;
}

VaeReconstructor::VaeReconstructor(std::shared_ptr<const VaeParams> params, std::optional<std::uint64_t> latent_seed)
  : params_(std::move(params)), latent_seed_(latent_seed)
{
    if (!params_)
        throw InvalidParameter("VaeReconstructor: null parameters");
}

ComplexImage VaeReconstructor::apply(const ComplexImage& x) const
{
    const LatentStats stats = encode(*params_, x);
    if (latent_seed_)
        return decode(*params_, sample_latent(stats, *latent_seed_));
    return decode(*params_, stats.mu);
}

ComplexImage reconstruct(const Reconstructor& h, const ComplexImage& x_input, const CascadeConfig& cascade)
{
    if (cascade.n_recurrent_blocks < 1)
        throw InvalidParameter("reconstruct: n_recurrent_blocks must be >= 1");
    ComplexImage x = x_input;
    for (std::size_t b = 0; b < cascade.n_recurrent_blocks; ++b) {
        ComplexImage out = h(x);
        if (!out.same_shape(x))
            throw ContractViolation("reconstruct: reconstructor changed the image shape");
        x = data_consistency(out, cascade.y, cascade.mask);
    }
    return x;
}

CascadeReconstructor::CascadeReconstructor(std::shared_ptr<const Reconstructor> inner, CascadeConfig cascade)
  : inner_(std::move(inner)), cascade_(std::move(cascade))
{
    if (!inner_)
        throw InvalidParameter("CascadeReconstructor: null reconstructor");
    if (cascade_.n_recurrent_blocks < 1)
        throw InvalidParameter("CascadeReconstructor: n_recurrent_blocks must be >= 1");
    require_same_shape(cascade_.y, cascade_.mask, "CascadeReconstructor");
}

InputCascadeReconstructor::InputCascadeReconstructor(std::shared_ptr<const Reconstructor> inner,
                                                     std::size_t n_recurrent_blocks, SamplingMask mask,
                                                     std::optional<SamplingDensity> density)
  : inner_(std::move(inner)), n_blocks_(n_recurrent_blocks), mask_(std::move(mask)), density_(std::move(density))
{
    if (!inner_)
        throw InvalidParameter("InputCascadeReconstructor: null reconstructor");
    if (n_blocks_ < 1)
        throw InvalidParameter("InputCascadeReconstructor: n_recurrent_blocks must be >= 1");
    if (density_)
        require_same_shape(density_->probabilities, mask_, "InputCascadeReconstructor");
}

KSpace InputCascadeReconstructor::measurements(const ComplexImage& x) const
{
    require_same_shape(x, mask_, "InputCascadeReconstructor");
    KSpace k = fft2_centered(x);
    for (std::size_t i = 0; i < k.size(); ++i) {
        if (!mask_.sampled(i))
            k[i] = Complex{};
        else if (density_)
            k[i] *= density_->probabilities[i];
    }
    return k;
}

ComplexImage InputCascadeReconstructor::apply(const ComplexImage& x) const
{
    return reconstruct(*inner_, x, CascadeConfig{n_blocks_, measurements(x), mask_});
}

double snr_db(const ComplexImage& x_hat, const ComplexImage& x0)
{
    require_same_shape(x_hat, x0, "snr_db");
    const double signal = squared_norm(x0);
    if (signal == 0.0)
        throw InvalidParameter("snr_db: reference image is zero");
    const double err = squared_norm(x_hat - x0);
    if (err == 0.0)
        return kSnrCapDb;
    return std::min(kSnrCapDb, 10.0 * std::log10(signal / err));
}

} // namespace mriuq
