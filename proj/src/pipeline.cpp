#include "mriuq/pipeline.hpp"

#include <algorithm>
#include <cstdio>

#include "mriuq/error.hpp"
#include "mriuq/io.hpp"
#include "mriuq/parallel.hpp"
#include "mriuq/random.hpp"
#include "mriuq/serialize.hpp"

namespace mriuq {

Model Model::identity()
{
    Model m;
    m.config.input_mode = InputMode::zero_filled;
    return m;
}

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint)
{
    auto p = checkpoint;
    p += ".json";
    return p;
}

void save_model(const std::filesystem::path& path, const TrainResult& result, const TrainingConfig& config)
{
    save_checkpoint(path, result.vae, result.discriminator);
    nlohmann::json j;
    j["format"] = "mriuq-model";
    j["version"] = 1;
    j["width"] = result.vae.arch.width;
    j["height"] = result.vae.arch.height;
    j["parameters"] = result.vae.parameter_count();
    j["training"] = config;
    if (!result.curve.empty()) {
        const auto& last = result.curve.back();
        j["final_loss"] = {{"iteration", last.iteration},
                           {"total", last.generator.total},
                           {"pixel", last.generator.pixel},
                           {"kl", last.generator.kl},
                           {"adversarial", last.generator.adversarial}};
    }
    io::write_file_atomic(sidecar_path(path), j.dump(2) + "\n");
}

Model load_model(const std::filesystem::path& path)
{
    auto [vae, disc] = load_checkpoint(path);
    const auto side = sidecar_path(path);
    Model m;
    try {
        const auto j = nlohmann::json::parse(io::read_file(side));
        m.config = j.at("training").get<TrainingConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed model sidecar (") + e.what() + ")", side.string());
    }
    if (m.config.latent_dim != vae.arch.latent_dim || m.config.encoder_hidden != vae.arch.encoder_hidden ||
        m.config.decoder_hidden != vae.arch.decoder_hidden)
        throw IoError("model sidecar does not match the checkpoint architecture", side.string());
    m.vae = std::make_shared<const VaeParams>(std::move(vae));
    return m;
}

EvalContext make_context(const Model& model, Extent extent, std::optional<double> acceleration,
                         std::optional<std::size_t> n_recurrent_blocks, std::optional<double> noise_std,
                         std::uint64_t seed)
{
    if (model.vae && (model.vae->arch.width != extent.width || model.vae->arch.height != extent.height))
        throw InvalidShape("model was trained on " + std::to_string(model.vae->arch.width) + "x" +
                           std::to_string(model.vae->arch.height) + " images");
    EvalContext ctx;
    ctx.model = model;
    ctx.mask = mask_params(model.config, extent);
    if (acceleration)
        ctx.mask.acceleration = *acceleration;
    ctx.density = input_density(model.config, ctx.mask);
    ctx.n_recurrent_blocks = n_recurrent_blocks.value_or(model.config.n_recurrent_blocks);
    if (ctx.n_recurrent_blocks < 1)
        throw InvalidParameter("n_recurrent_blocks must be >= 1");
    ctx.noise_std = noise_std.value_or(model.config.noise_std);
    ctx.seed = seed;
    return ctx;
}

const ComplexImage& TestCase::x_input(const EvalContext& ctx) const
{
    return ctx.model.config.input_mode == InputMode::density_compensated && !ctx.model.is_identity() ? x_dc : x_zf;
}

TestCase make_test_case(const EvalContext& ctx, const ComplexImage& x0, std::size_t index)
{
    if (x0.width() != ctx.mask.width || x0.height() != ctx.mask.height)
        throw InvalidShape("test image shape differs from the evaluation mask");
    TestCase c;
    c.index = index;
    c.x0 = x0;
    c.mask = make_vd_mask(ctx.mask, derive_seed(ctx.seed, {index, 0}));
    c.y = undersample(x0, c.mask, ctx.noise_std, derive_seed(ctx.seed, {index, 1}));
    c.x_zf = zero_fill(c.y, c.mask);
    c.x_dc = density_compensate(c.y, c.mask, ctx.density);
    return c;
}

namespace {

std::shared_ptr<const Reconstructor> cascade(const EvalContext& ctx, const TestCase& c, bool compensated)
{
    if (ctx.model.is_identity())
        return std::make_shared<IdentityReconstructor>();
    auto inner = std::make_shared<const VaeReconstructor>(ctx.model.vae);
    return std::make_shared<InputCascadeReconstructor>(
        inner, ctx.n_recurrent_blocks, c.mask, compensated ? std::optional(ctx.density) : std::nullopt);
}

} // namespace

std::shared_ptr<const Reconstructor> reconstructor(const EvalContext& ctx, const TestCase& c)
{
    return cascade(ctx, c, ctx.model.config.input_mode == InputMode::density_compensated);
}

std::shared_ptr<const Reconstructor> sure_reconstructor(const EvalContext& ctx, const TestCase& c)
{
    return cascade(ctx, c, true);
}

std::vector<ReconResult> evaluate_recon(const EvalContext& ctx, std::span<const ComplexImage> images)
{
    std::vector<ReconResult> out(images.size());
    parallel_for(images.size(), [&](std::size_t i) {
        const TestCase c = make_test_case(ctx, images[i], i);
        ReconResult& r = out[i];
        r.index = i;
        r.x_hat = reconstructor(ctx, c)->apply(c.x_input(ctx));
        r.snr_zf_db = snr_db(c.x_zf, c.x0);
        r.snr_db = snr_db(r.x_hat, c.x0);
        r.mse_zf = mse(c.x_zf, c.x0);
        r.mse = mse(r.x_hat, c.x0);
    });
    return out;
}

std::vector<SureCase> evaluate_sure(const EvalContext& ctx, std::span<const ComplexImage> images,
                                    const SureOptions& options, const std::string& prefix)
{
    std::vector<SureCase> out(images.size());
    parallel_for(images.size(), [&](std::size_t i) {
        const TestCase c = make_test_case(ctx, images[i], i);
        SureOptions o = options;
        o.seed = derive_seed(options.seed, {i});
        ComplexImage x_hat;
        SureCase& s = out[i];
        char id[32];
        std::snprintf(id, sizeof id, "%04zu", i);
        s.case_id = prefix + id;
        s.accel = ctx.mask.acceleration;
        s.lambda = ctx.model.config.lambda;
        s.n_rb = ctx.n_recurrent_blocks;
        s.report = sure(*sure_reconstructor(ctx, c), c.y, c.mask, ctx.density, o, &x_hat);
        s.mse = mse(x_hat, c.x0);
        s.snr_db = snr_db(x_hat, c.x0);
    });
    return out;
}

double median(std::vector<double> values)
{
    if (values.empty())
        throw InvalidParameter("median of an empty set");
    const std::size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    const double upper = values[mid];
    if (values.size() % 2 == 1)
        return upper;
    const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

nlohmann::json to_json(const Model& model)
{
    nlohmann::json j;
    j["identity"] = model.is_identity();
    j["training"] = model.config;
    return j;
}

} // namespace mriuq
