#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "mriuq/grid.hpp"
#include "mriuq/kspace.hpp"
#include "mriuq/model.hpp"

namespace mriuq {

// Affine projection onto {x : F(x) = y on the sampled set}: sampled
// coefficients are replaced by y, the rest keep F(x).
ComplexImage data_consistency(const ComplexImage& x, const KSpace& y, const SamplingMask& mask);

// Linear part of data_consistency, F^-1 (1 - mask) F g. Self-adjoint; it is
// also the backward pass of data_consistency.
ComplexImage project_unsampled(const ComplexImage& g, const SamplingMask& mask);

// Single-input map h : image -> image. Implementations are immutable after
// construction, so apply() may be called concurrently.
class Reconstructor {
public:
    virtual ~Reconstructor() = default;

    virtual ComplexImage apply(const ComplexImage& x) const = 0;
    virtual std::string name() const = 0;

    ComplexImage operator()(const ComplexImage& x) const { return apply(x); }
};

class IdentityReconstructor final : public Reconstructor {
public:
    ComplexImage apply(const ComplexImage& x) const override { return x; }
    std::string name() const override { return "identity"; }
};

// x -> c x
class ScaledIdentityReconstructor final : public Reconstructor {
public:
    explicit ScaledIdentityReconstructor(double scale) : scale_(scale) { }

    ComplexImage apply(const ComplexImage& x) const override { return x * scale_; }
    std::string name() const override { return "scaled-identity"; }

private:
    double scale_;
};

// h(x) = A vec(x), A acting on stacked real/imaginary coordinates (2n x 2n).
class LinearReconstructor final : public Reconstructor {
public:
    LinearReconstructor(Eigen::MatrixXd matrix, std::size_t width, std::size_t height);

    ComplexImage apply(const ComplexImage& x) const override;
    std::string name() const override { return "linear"; }

    const Eigen::MatrixXd& matrix() const noexcept { return matrix_; }
    // tr(A) over the 2n real coordinates.
    double trace() const { return matrix_.trace(); }

private:
    Eigen::MatrixXd matrix_;
    std::size_t width_;
    std::size_t height_;
};

// Complex soft-thresholding of the centered unitary Fourier coefficients:
// c -> max(|c| - tau, 0) c / |c|.
class SoftThresholdReconstructor final : public Reconstructor {
public:
    explicit SoftThresholdReconstructor(double tau);

    ComplexImage apply(const ComplexImage& x) const override;
    std::string name() const override { return "soft-threshold"; }

    double tau() const noexcept { return tau_; }

    // Divergence at x in the complex-pixel convention (real divergence / 2).
    // Each coefficient above tau contributes 1 along its phase direction and
    // (1 - tau/|c|) across it, so the total is sum_{|c| > tau} (1 - tau / (2|c|)).
    double analytic_dof(const ComplexImage& x) const;

private:
    double tau_;
};

// h(x) = g(z) with z the posterior mean of f(x), or a latent sample when a
// seed is given. No data consistency; wrap in CascadeReconstructor for that.
class VaeReconstructor final : public Reconstructor {
public:
    explicit VaeReconstructor(std::shared_ptr<const VaeParams> params, std::optional<std::uint64_t> latent_seed = {});

    ComplexImage apply(const ComplexImage& x) const override;
    std::string name() const override { return "vae"; }

    const VaeParams& params() const noexcept { return *params_; }

private:
    std::shared_ptr<const VaeParams> params_;
    std::optional<std::uint64_t> latent_seed_;
};

struct CascadeConfig {
    std::size_t n_recurrent_blocks = 1;
    KSpace y;
    SamplingMask mask;
};

// x_hat = (DC o h)^n (x_input); every block reuses the same h.
ComplexImage reconstruct(const Reconstructor& h, const ComplexImage& x_input, const CascadeConfig& cascade);

// reconstruct() packaged as a Reconstructor, so the whole cascade can be
// handed to the risk estimators.
class CascadeReconstructor final : public Reconstructor {
public:
    CascadeReconstructor(std::shared_ptr<const Reconstructor> inner, CascadeConfig cascade);

    ComplexImage apply(const ComplexImage& x) const override { return reconstruct(*inner_, x, cascade_); }
    std::string name() const override { return inner_->name() + "-cascade"; }

private:
    std::shared_ptr<const Reconstructor> inner_;
    CascadeConfig cascade_;
};

// Cascade whose data-consistency targets are read from its input:
// y(x) = mask . D . F(x). For the network input formed from measurements y
// (zero-filled with D = 1, or density-compensated with the same D) this
// gives the same output as CascadeReconstructor, but perturbations of the
// input also reach the sampled coefficients, so the Jacobian is that of
// the whole pipeline from network input to reconstruction.
class InputCascadeReconstructor final : public Reconstructor {
public:
    // Without a density the input is taken to be zero-filled.
    InputCascadeReconstructor(std::shared_ptr<const Reconstructor> inner, std::size_t n_recurrent_blocks,
                              SamplingMask mask, std::optional<SamplingDensity> density = {});

    ComplexImage apply(const ComplexImage& x) const override;
    std::string name() const override { return inner_->name() + "-input-cascade"; }

    // The measurements implied by x.
    KSpace measurements(const ComplexImage& x) const;

private:
    std::shared_ptr<const Reconstructor> inner_;
    std::size_t n_blocks_;
    SamplingMask mask_;
    std::optional<SamplingDensity> density_;
};

inline constexpr double kSnrCapDb = 300.0;

// 20 log10(||x0|| / ||x_hat - x0||), capped at kSnrCapDb.
double snr_db(const ComplexImage& x_hat, const ComplexImage& x0);

} // namespace mriuq
