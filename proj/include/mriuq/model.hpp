#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mriuq/grid.hpp"
#include "mriuq/kspace.hpp"

namespace mriuq {

struct DenseLayer {
    Eigen::MatrixXd weight; // out x in
    Eigen::VectorXd bias;

    std::size_t inputs() const { return static_cast<std::size_t>(weight.cols()); }
    std::size_t outputs() const { return static_cast<std::size_t>(weight.rows()); }
};

struct VaeArchitecture {
    std::size_t width = 32;
    std::size_t height = 32;
    std::vector<std::size_t> encoder_hidden{256, 128};
    std::size_t latent_dim = 64;
    std::vector<std::size_t> decoder_hidden{128, 256};

    std::size_t image_dim() const { return 2 * width * height; }
    bool operator==(const VaeArchitecture&) const = default;
};

// Encoder: dense layers with ReLU, then two linear heads (mu, log sigma^2).
// Decoder: dense layers with ReLU on all but the last, which emits
// 2*width*height values read as [real parts..., imaginary parts...].
struct VaeParams {
    VaeArchitecture arch;
    std::vector<DenseLayer> encoder;
    DenseLayer mu_head;
    DenseLayer logvar_head;
    std::vector<DenseLayer> decoder;

    static VaeParams zeros(const VaeArchitecture& arch);
    // Weights and biases uniform in +-1/sqrt(fan_in); the log-variance head
    // bias is set to logvar_bias so early training is not swamped by latent noise.
    static VaeParams random(const VaeArchitecture& arch, std::uint64_t seed, double logvar_bias = -6.0);

    // Declaration order: encoder layers, mu head, logvar head, decoder layers.
    std::vector<DenseLayer*> blocks();
    std::vector<const DenseLayer*> blocks() const;
    std::size_t parameter_count() const;
    bool all_finite() const;
};

struct DiscriminatorArchitecture {
    std::size_t width = 32;
    std::size_t height = 32;
    std::vector<std::size_t> hidden{64, 32};

    std::size_t image_dim() const { return 2 * width * height; }
    bool operator==(const DiscriminatorArchitecture&) const = default;
};

// Dense ReLU network image -> real scalar (least-squares GAN critic).
struct DiscriminatorParams {
    DiscriminatorArchitecture arch;
    std::vector<DenseLayer> layers;

    static DiscriminatorParams zeros(const DiscriminatorArchitecture& arch);
    static DiscriminatorParams random(const DiscriminatorArchitecture& arch, std::uint64_t seed);

    std::vector<DenseLayer*> blocks();
    std::vector<const DenseLayer*> blocks() const;
    std::size_t parameter_count() const;
};

struct LatentStats {
    Eigen::VectorXd mu;
    Eigen::VectorXd logvar;

    Eigen::VectorXd sigma() const { return (0.5 * logvar.array()).exp().matrix(); }
};

// Stacked real/imaginary coordinates: [re_0..re_{n-1}, im_0..im_{n-1}].
Eigen::VectorXd to_real_vector(const ComplexImage& img);
ComplexImage from_real_vector(std::span<const double> v, std::size_t width, std::size_t height);
inline ComplexImage from_real_vector(const Eigen::VectorXd& v, std::size_t width, std::size_t height)
{
    return from_real_vector(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())), width, height);
}

LatentStats encode(const VaeParams& params, const ComplexImage& x);
// z = mu + sigma .* eps with eps ~ N(0, I) drawn from seed.
Eigen::VectorXd sample_latent(const LatentStats& stats, std::uint64_t seed);
Eigen::VectorXd sample_latent_with_sigma(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma, std::uint64_t seed);
ComplexImage decode(const VaeParams& params, const Eigen::VectorXd& z);

// 1/2 sum_j (mu_j^2 + sigma_j^2 - log sigma_j^2 - 1)
double kl_gaussian(const LatentStats& stats);

double discriminate(const DiscriminatorParams& disc, const ComplexImage& x);

enum class InputMode { zero_filled, density_compensated };

struct TrainingConfig {
    double eta = 1e-7;
    double lambda = 0.0;
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    std::size_t batch_size = 4;
    std::size_t n_iterations = 6000;
    std::size_t latent_dim = 64;
    std::size_t n_recurrent_blocks = 1;
    std::uint64_t seed = 0;

    std::vector<std::size_t> encoder_hidden{256, 128};
    std::vector<std::size_t> decoder_hidden{128, 256};
    std::vector<std::size_t> discriminator_hidden{64, 32};
    double logvar_init_bias = -6.0;
    // Learning rate is halved every this many iterations (0 disables).
    std::size_t lr_halving_interval = 0;
    // Apply a random flip (and transpose, for square images) to each
    // training image before simulating its measurement.
    bool augment_flips = true;

    // Measurement simulation for each training example.
    double acceleration = 4.0;
    double calib_fraction = 0.0625;
    double density_power = 3.0;
    double noise_std = 0.0;
    InputMode input_mode = InputMode::density_compensated;
    std::size_t density_masks = 100;

    void validate() const;
};

struct TrainingExample {
    ComplexImage x_input;
    KSpace y;
    SamplingMask mask;
    ComplexImage x0;
};

// Standard-normal reparameterization noise, one (latent_dim x batch) matrix
// per recurrent block. Held fixed for one loss/gradient evaluation.
struct LatentNoise {
    std::vector<Eigen::MatrixXd> per_block;

    static LatentNoise draw(std::size_t latent_dim, std::size_t batch, std::size_t blocks, std::uint64_t seed);
    static LatentNoise zero(std::size_t latent_dim, std::size_t batch, std::size_t blocks);
};

struct LossBreakdown {
    double total = 0.0;
    double pixel = 0.0;       // mean over batch of ||x_hat - x0||^2 / n
    double kl = 0.0;          // mean over batch and blocks of KL(q || N(0, I))
    double adversarial = 0.0; // mean over batch of (1 - D(x_hat))^2, before lambda
};

struct GanLosses {
    double generator = 0.0;     // E[(1 - D(x_hat))^2]
    double discriminator = 0.0; // E[(1 - D(x))^2] + E[D(x_hat)^2]
};

GanLosses gan_losses(const DiscriminatorParams& disc, std::span<const ComplexImage> real,
                     std::span<const ComplexImage> fake);

// Runs the weight-shared cascade (encode -> reparameterize -> decode -> data
// consistency) n_recurrent_blocks times on every example.
std::vector<ComplexImage> forward_cascade(const VaeParams& params, std::span<const TrainingExample> batch,
                                          std::size_t n_blocks, const LatentNoise& noise);

LossBreakdown vae_loss(const VaeParams& params, std::span<const TrainingExample> batch, const TrainingConfig& config,
                       const LatentNoise& noise, const DiscriminatorParams* disc = nullptr);

struct VaeGradients {
    LossBreakdown loss;
    VaeParams grad;
    std::vector<ComplexImage> reconstructions;
};

// Exact gradients of vae_loss by reverse-mode differentiation through the
// decoder, reparameterization, encoder, data consistency and (when
// lambda > 0) the discriminator.
VaeGradients gradients(const VaeParams& params, std::span<const TrainingExample> batch, const TrainingConfig& config,
                       const LatentNoise& noise, const DiscriminatorParams* disc = nullptr);

struct DiscriminatorGradients {
    double loss = 0.0;
    DiscriminatorParams grad;
};

DiscriminatorGradients discriminator_gradients(const DiscriminatorParams& disc, std::span<const ComplexImage> real,
                                               std::span<const ComplexImage> fake);

struct AdamConfig {
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<Eigen::MatrixXd> m_weight, v_weight;
    std::vector<Eigen::VectorXd> m_bias, v_bias;
    std::size_t step = 0;

    static AdamState for_blocks(const std::vector<const DenseLayer*>& blocks);
};

void adam_step(const std::vector<DenseLayer*>& params, const std::vector<const DenseLayer*>& grads, AdamState& state,
               const AdamConfig& config);

struct LossRecord {
    std::size_t iteration = 0;
    LossBreakdown generator;
    double discriminator = 0.0;
    double learning_rate = 0.0;
};

struct TrainResult {
    VaeParams vae;
    DiscriminatorParams discriminator;
    std::vector<LossRecord> curve;
};

class TrainingDiverged : public NumericalError {
public:
    TrainingDiverged(const std::string& what, std::shared_ptr<const TrainResult> last_finite)
      : NumericalError(what), last_finite_(std::move(last_finite))
    { }

    // Parameters and loss curve up to the last iteration with a finite loss.
    const TrainResult& last_finite() const { return *last_finite_; }

private:
    std::shared_ptr<const TrainResult> last_finite_;
};

// One of the 8 symmetries of the square: bit 0 flips x, bit 1 flips y,
// bit 2 transposes (ignored for non-square images).
ComplexImage dihedral(const ComplexImage& img, unsigned symmetry);

// Mask parameters of the measurements simulated for training.
VdMaskParams mask_params(const TrainingConfig& config, Extent extent);

// Density used to compensate network inputs under config, for masks drawn
// with mp: estimate_density over config.density_masks masks, seeded from
// config.seed. train() uses mask_params(config, extent).
SamplingDensity input_density(const TrainingConfig& config, const VdMaskParams& mp);

// Simulates a measurement for one training image: draws a variable-density
// mask, undersamples (with config.noise_std) and forms the network input.
TrainingExample make_example(const ComplexImage& x0, const TrainingConfig& config, const SamplingDensity* density,
                             std::uint64_t seed);

using ProgressCallback = std::function<void(const LossRecord&)>;

TrainResult train(const std::vector<ComplexImage>& images, const TrainingConfig& config,
                  const ProgressCallback& progress = {});

// Binary checkpoint: "VAEP", u32 format version, architecture header
// (width, height, latent_dim, counts and sizes of encoder/decoder/
// discriminator hidden layers), then f32 weight (row-major) and bias blocks
// in declaration order, VAE first, discriminator second.
void save_checkpoint(const std::filesystem::path& path, const VaeParams& vae, const DiscriminatorParams& disc);
std::pair<VaeParams, DiscriminatorParams> load_checkpoint(const std::filesystem::path& path);

} // namespace mriuq
