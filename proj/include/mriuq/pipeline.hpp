#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mriuq/kspace.hpp"
#include "mriuq/model.hpp"
#include "mriuq/recon.hpp"
#include "mriuq/uq.hpp"

namespace mriuq {

// Trained network plus the measurement settings it was trained with.
struct Model {
    std::shared_ptr<const VaeParams> vae; // null for the identity debug model
    TrainingConfig config;

    bool is_identity() const noexcept { return !vae; }
    static Model identity();
};

// Writes the VAEP checkpoint and "<path>.json" holding the training config.
void save_model(const std::filesystem::path& path, const TrainResult& result, const TrainingConfig& config);
// Reads both files; a missing sidecar is an I/O error.
Model load_model(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

// Settings for evaluating a model on held-out images.
struct EvalContext {
    Model model;
    VdMaskParams mask;
    SamplingDensity density;
    std::size_t n_recurrent_blocks = 1;
    double noise_std = 0.0;
    std::uint64_t seed = 0;
};

// Unset fields fall back to the model's training config. The density is
// input_density(config, mask), i.e. the training density at the training
// acceleration.
EvalContext make_context(const Model& model, Extent extent, std::optional<double> acceleration = {},
                         std::optional<std::size_t> n_recurrent_blocks = {}, std::optional<double> noise_std = {},
                         std::uint64_t seed = 0);

struct TestCase {
    std::size_t index = 0;
    ComplexImage x0;
    SamplingMask mask;
    KSpace y;
    ComplexImage x_zf;
    ComplexImage x_dc; // density compensated
    // What the model sees: x_dc for density-compensated models, x_zf
    // otherwise (and always for the identity model).
    const ComplexImage& x_input(const EvalContext& ctx) const;
};

// Mask from derive_seed(ctx.seed, {index, 0}), noise from
// derive_seed(ctx.seed, {index, 1}).
TestCase make_test_case(const EvalContext& ctx, const ComplexImage& x0, std::size_t index);

// The map from x_input(ctx) to the reconstruction: the input-coupled cascade
// of the VAE (posterior mean), or the identity.
std::shared_ptr<const Reconstructor> reconstructor(const EvalContext& ctx, const TestCase& c);

// The same cascade taking the density-compensated image as input, as the
// SURE estimate requires.
std::shared_ptr<const Reconstructor> sure_reconstructor(const EvalContext& ctx, const TestCase& c);

struct ReconResult {
    std::size_t index = 0;
    ComplexImage x_hat;
    double snr_zf_db = 0.0;
    double snr_db = 0.0;
    double mse_zf = 0.0;
    double mse = 0.0;
};

// One result per image, in input order. Images are processed in parallel
// up to max_threads().
std::vector<ReconResult> evaluate_recon(const EvalContext& ctx, std::span<const ComplexImage> images);

// Density-compensated SURE for each image. Case i uses probe seed
// derive_seed(options.seed, {i}); case ids are prefix + zero-padded index.
std::vector<SureCase> evaluate_sure(const EvalContext& ctx, std::span<const ComplexImage> images,
                                    const SureOptions& options, const std::string& prefix = "case_");

double median(std::vector<double> values);

nlohmann::json to_json(const Model& model);

} // namespace mriuq
