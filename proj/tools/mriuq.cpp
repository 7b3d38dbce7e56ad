// mriuq: dataset generation, training, reconstruction, uncertainty maps,
// SURE evaluation and residual normality analysis.

#include <CLI11.hpp>
#include <json.hpp>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mriuq/data.hpp"
#include "mriuq/error.hpp"
#include "mriuq/io.hpp"
#include "mriuq/parallel.hpp"
#include "mriuq/pipeline.hpp"
#include "mriuq/random.hpp"
#include "mriuq/serialize.hpp"

namespace fs = std::filesystem;
using namespace mriuq;
using nlohmann::json;

namespace {

enum ExitCode : int { exit_ok = 0, exit_usage = 2, exit_numerical = 3, exit_io = 4 };

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Reference SURE-MSE R^2 of the full-scale experiment, by acceleration.
const std::array<std::pair<int, double>, 4> kReferenceR2{{{2, 0.97}, {4, 0.90}, {8, 0.92}, {16, 0.84}}};

struct RunConfig {
    std::string command;
    std::uint64_t seed = 0;
    std::string manifest;
    std::string checkpoint;
    std::string out;
    // Shortcuts; unset means "from the training config" (train) or "as the
    // model was trained" (evaluation).
    std::optional<double> accel;
    std::optional<double> lambda;
    std::optional<double> eta;
    std::optional<std::size_t> rb;
    std::optional<double> epsilon;
    std::optional<double> noise_std;
    std::size_t k = 1000;
    std::size_t probes = 10;

    std::size_t n_images = 600;
    std::array<double, 3> split_ratios{0.7, 0.15, 0.15};
    std::size_t slices_per_family = 5;
    PhantomSpec phantom;

    TrainingConfig training;
    std::size_t log_every = 0;

    std::string split = "test";
    std::size_t limit = 0;
    std::size_t image = 0;
    bool identity_model = false;
    bool sigma_zero = false;
    bool truth = true;
    std::vector<double> sweep;
    std::size_t density_masks = 100;
    std::size_t quantiles = 101;
    std::size_t histogram_bins = 48;
};

template <class T>
json optional_json(const std::optional<T>& v)
{
    return v ? json(*v) : json(nullptr);
}

json to_json(const RunConfig& c)
{
    return json{{"command", c.command},
                {"seed", c.seed},
                {"manifest", c.manifest},
                {"checkpoint", c.checkpoint},
                {"out", c.out},
                {"accel", optional_json(c.accel)},
                {"lambda", optional_json(c.lambda)},
                {"eta", optional_json(c.eta)},
                {"rb", optional_json(c.rb)},
                {"epsilon", optional_json(c.epsilon)},
                {"noise_std", optional_json(c.noise_std)},
                {"k", c.k},
                {"probes", c.probes},
                {"n_images", c.n_images},
                {"split_ratios", c.split_ratios},
                {"slices_per_family", c.slices_per_family},
                {"phantom", c.phantom},
                {"training", c.training},
                {"log_every", c.log_every},
                {"split", c.split},
                {"limit", c.limit},
                {"image", c.image},
                {"identity_model", c.identity_model},
                {"sigma_zero", c.sigma_zero},
                {"truth", c.truth},
                {"sweep", c.sweep},
                {"density_masks", c.density_masks},
                {"quantiles", c.quantiles},
                {"histogram_bins", c.histogram_bins}};
}

template <class T>
void read_key(const json& j, const char* key, T& field)
{
    if (j.contains(key))
        j.at(key).get_to(field);
}

template <class T>
void read_key(const json& j, const char* key, std::optional<T>& field)
{
    if (j.contains(key))
        field = j.at(key).is_null() ? std::nullopt : std::optional<T>(j.at(key).get<T>());
}

// Keys missing from the file keep their current values; unknown keys are
// rejected so that typos do not pass silently.
void apply_config_file(const fs::path& path, RunConfig& c)
{
    json j;
    try {
        j = json::parse(io::read_file(path));
    } catch (const json::exception& e) {
        throw UsageError("config " + path.string() + ": " + e.what());
    }
    if (!j.is_object())
        throw UsageError("config " + path.string() + ": top level must be an object");
    const json known = to_json(RunConfig{});
    for (const auto& [key, value] : j.items())
        if (!known.contains(key) || key == "command")
            throw UsageError("config " + path.string() + ": unknown key '" + key + "'");
    try {
        read_key(j, "seed", c.seed);
        read_key(j, "manifest", c.manifest);
        read_key(j, "checkpoint", c.checkpoint);
        read_key(j, "out", c.out);
        read_key(j, "accel", c.accel);
        read_key(j, "lambda", c.lambda);
        read_key(j, "eta", c.eta);
        read_key(j, "rb", c.rb);
        read_key(j, "epsilon", c.epsilon);
        read_key(j, "noise_std", c.noise_std);
        read_key(j, "k", c.k);
        read_key(j, "probes", c.probes);
        read_key(j, "n_images", c.n_images);
        read_key(j, "split_ratios", c.split_ratios);
        read_key(j, "slices_per_family", c.slices_per_family);
        read_key(j, "log_every", c.log_every);
        read_key(j, "split", c.split);
        read_key(j, "limit", c.limit);
        read_key(j, "image", c.image);
        read_key(j, "identity_model", c.identity_model);
        read_key(j, "sigma_zero", c.sigma_zero);
        read_key(j, "truth", c.truth);
        read_key(j, "sweep", c.sweep);
        read_key(j, "density_masks", c.density_masks);
        read_key(j, "quantiles", c.quantiles);
        read_key(j, "histogram_bins", c.histogram_bins);
        if (j.contains("phantom"))
            c.phantom = j.at("phantom").get<PhantomSpec>();
        if (j.contains("training"))
            c.training = j.at("training").get<TrainingConfig>();
    } catch (const json::exception& e) {
        throw UsageError("config " + path.string() + ": " + e.what());
    }
}

// Command-line values; each overrides the config file when given.
struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> manifest, checkpoint, out, split;
    std::optional<double> accel, lambda, eta, epsilon, noise_std;
    std::optional<std::size_t> rb, k, probes, n_images, iterations, limit, image, log_every;
    std::optional<std::vector<double>> sweep;
    std::optional<std::vector<double>> ratios;
    bool identity_model = false;
    bool sigma_zero = false;
    bool no_truth = false;
};

template <class T>
CLI::Option* add_flag_value(CLI::App* app, const std::string& name, std::optional<T>& target, const std::string& help)
{
    return app->add_option_function<T>(name, [&target](const T& v) { target = v; }, help);
}

void apply_flags(const Flags& f, RunConfig& c)
{
    if (f.seed)
        c.seed = *f.seed;
    if (f.manifest)
        c.manifest = *f.manifest;
    if (f.checkpoint)
        c.checkpoint = *f.checkpoint;
    if (f.out)
        c.out = *f.out;
    if (f.split)
        c.split = *f.split;
    if (f.accel)
        c.accel = f.accel;
    if (f.lambda)
        c.lambda = f.lambda;
    if (f.eta)
        c.eta = f.eta;
    if (f.epsilon)
        c.epsilon = f.epsilon;
    if (f.noise_std)
        c.noise_std = f.noise_std;
    if (f.rb)
        c.rb = f.rb;
    if (f.k)
        c.k = *f.k;
    if (f.probes)
        c.probes = *f.probes;
    if (f.n_images)
        c.n_images = *f.n_images;
    if (f.iterations)
        c.training.n_iterations = *f.iterations;
    if (f.limit)
        c.limit = *f.limit;
    if (f.image)
        c.image = *f.image;
    if (f.log_every)
        c.log_every = *f.log_every;
    if (f.sweep)
        c.sweep = *f.sweep;
    if (f.ratios) {
        if (f.ratios->size() != 3)
            throw UsageError("--ratios takes three values (train val test)");
        c.split_ratios = {(*f.ratios)[0], (*f.ratios)[1], (*f.ratios)[2]};
    }
    if (f.identity_model)
        c.identity_model = true;
    if (f.sigma_zero)
        c.sigma_zero = true;
    if (f.no_truth)
        c.truth = false;
}

void configure_threads()
{
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("MRI_UQ_THREADS"); env && *env) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (*end != '\0' || v < 1)
            throw UsageError(std::string("MRI_UQ_THREADS must be a positive integer, got '") + env + "'");
        n = static_cast<std::size_t>(v);
    }
    set_max_threads(n);
}

void write_text(const fs::path& path, const std::string& text) { io::write_file_atomic(path, text); }

void prepare_out(const RunConfig& c)
{
    std::error_code ec;
    fs::create_directories(c.out, ec);
    if (ec || !fs::is_directory(c.out))
        throw IoError("cannot create output directory", c.out);
}

void echo_config(const RunConfig& c, const json& extra = {})
{
    json j = to_json(c);
    if (!extra.is_null())
        j["resolved"] = extra;
    write_text(fs::path(c.out) / "config.json", j.dump(2) + "\n");
}

void require_manifest(const RunConfig& c)
{
    if (c.manifest.empty())
        throw UsageError("--manifest is required");
    if (!fs::is_regular_file(c.manifest))
        throw UsageError("manifest not found: " + c.manifest);
}

void require_model(const RunConfig& c)
{
    if (c.identity_model)
        return;
    if (c.checkpoint.empty())
        throw UsageError("--checkpoint is required (or --identity-model)");
    if (!fs::is_regular_file(c.checkpoint))
        throw UsageError("checkpoint not found: " + c.checkpoint);
}

Model resolve_model(const RunConfig& c) { return c.identity_model ? Model::identity() : load_model(c.checkpoint); }

Split resolve_split(const RunConfig& c)
{
    try {
        return split_from_string(c.split);
    } catch (const Error&) {
        throw UsageError("--split must be train, val or test");
    }
}

struct SplitImages {
    std::vector<ComplexImage> images;
    std::vector<std::string> paths;
};

SplitImages load_images(const RunConfig& c)
{
    const auto manifest = load_manifest(c.manifest);
    const Split split = resolve_split(c);
    auto idx = manifest.indices(split);
    if (c.limit > 0 && idx.size() > c.limit)
        idx.resize(c.limit);
    if (idx.empty())
        throw UsageError("split '" + c.split + "' of " + c.manifest + " is empty");
    SplitImages out;
    for (std::size_t i : idx) {
        out.paths.push_back(manifest.images[i].path);
        out.images.push_back(io::read_cimg(manifest.directory / manifest.images[i].path));
    }
    return out;
}

std::string case_name(const std::string& split, std::size_t i)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%04zu", split.c_str(), i);
    return buf;
}

std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

int cmd_gen(RunConfig& c)
{
    double sum = c.split_ratios[0] + c.split_ratios[1] + c.split_ratios[2];
    if (std::abs(sum - 1.0) > 1e-9)
        throw UsageError("split ratios must sum to 1 (got " + fmt(sum) + ")");
    if (c.n_images < 3)
        throw UsageError("n_images must be >= 3");
    c.phantom.validate();
    prepare_out(c);
    DatasetOptions o;
    o.n_images = c.n_images;
    o.split_ratios = c.split_ratios;
    o.slices_per_family = c.slices_per_family;
    o.seed = c.seed;
    generate_dataset(c.phantom, o, c.out);
    echo_config(c);
    std::cout << (fs::path(c.out) / "manifest.json").string() << "\n";
    return exit_ok;
}

std::string loss_csv(const std::vector<LossRecord>& curve)
{
    std::string s = "iteration,total,pixel,kl,adversarial,discriminator,learning_rate\n";
    for (const auto& r : curve)
        s += std::to_string(r.iteration) + "," + fmt(r.generator.total) + "," + fmt(r.generator.pixel) + "," +
             fmt(r.generator.kl) + "," + fmt(r.generator.adversarial) + "," + fmt(r.discriminator) + "," +
             fmt(r.learning_rate) + "\n";
    return s;
}

int cmd_train(RunConfig& c)
{
    require_manifest(c);
    TrainingConfig& t = c.training;
    t.seed = c.seed;
    if (c.accel)
        t.acceleration = *c.accel;
    if (c.lambda)
        t.lambda = *c.lambda;
    if (c.eta)
        t.eta = *c.eta;
    if (c.rb)
        t.n_recurrent_blocks = *c.rb;
    if (c.noise_std)
        t.noise_std = *c.noise_std;
    try {
        t.validate();
    } catch (const InvalidParameter& e) {
        throw UsageError(e.what());
    }
    prepare_out(c);
    const auto manifest = load_manifest(c.manifest);
    const auto images = load_split(manifest, Split::train);
    if (images.empty())
        throw UsageError("manifest has no training images");
    const fs::path ckpt = c.checkpoint.empty() ? fs::path(c.out) / "model.vaep" : fs::path(c.checkpoint);
    c.checkpoint = ckpt.string();
    echo_config(c);

    const std::size_t every = c.log_every;
    auto progress = [every](const LossRecord& r) {
        if (every > 0 && (r.iteration + 1) % every == 0)
            std::cerr << "iter " << r.iteration + 1 << " loss " << fmt(r.generator.total) << " pixel "
                      << fmt(r.generator.pixel) << "\n";
    };
    try {
        const TrainResult result = train(images, t, progress);
        save_model(ckpt, result, t);
        write_text(fs::path(c.out) / "loss.csv", loss_csv(result.curve));
    } catch (const TrainingDiverged& e) {
        save_model(ckpt, e.last_finite(), t);
        write_text(fs::path(c.out) / "loss.csv", loss_csv(e.last_finite().curve));
        std::cerr << "mriuq train: " << e.what() << "; last finite state saved to " << ckpt.string() << "\n";
        return exit_numerical;
    }
    std::cout << ckpt.string() << "\n";
    return exit_ok;
}

int cmd_recon(RunConfig& c)
{
    require_manifest(c);
    require_model(c);
    prepare_out(c);
    const Model model = resolve_model(c);
    const auto data = load_images(c);
    const auto ctx = make_context(model, data.images.front().extent(), c.accel, c.rb, c.noise_std, c.seed);
    echo_config(c, {{"model", to_json(model)}, {"acceleration", ctx.mask.acceleration},
                    {"n_recurrent_blocks", ctx.n_recurrent_blocks}, {"noise_std", ctx.noise_std}});
    const auto results = evaluate_recon(ctx, data.images);

    const fs::path img_dir = fs::path(c.out) / "images";
    fs::create_directories(img_dir);
    std::string csv = "case_id,source,snr_zf_db,snr_db,mse_zf,mse\n";
    std::vector<double> zf, net;
    for (const auto& r : results) {
        const std::string id = case_name(c.split, r.index);
        io::write_cimg(img_dir / (id + ".cimg"), r.x_hat);
        io::write_pgm(img_dir / (id + ".pgm"), magnitude(r.x_hat));
        csv += id + "," + data.paths[r.index] + "," + fmt(r.snr_zf_db) + "," + fmt(r.snr_db) + "," + fmt(r.mse_zf) +
               "," + fmt(r.mse) + "\n";
        zf.push_back(r.snr_zf_db);
        net.push_back(r.snr_db);
    }
    write_text(fs::path(c.out) / "recon.csv", csv);
    std::cout << "images " << results.size() << "  median SNR zero-filled " << fmt(median(zf)) << " dB  model "
              << fmt(median(net)) << " dB\n";
    return exit_ok;
}

int cmd_map(RunConfig& c)
{
    require_manifest(c);
    if (c.identity_model)
        throw UsageError("map needs a VAE checkpoint");
    require_model(c);
    if (c.k < 2)
        throw UsageError("--k must be >= 2");
    prepare_out(c);
    const Model model = resolve_model(c);
    const auto data = load_images(c);
    if (c.image >= data.images.size())
        throw UsageError("--image " + std::to_string(c.image) + " is out of range (split has " +
                         std::to_string(data.images.size()) + " images)");
    const auto ctx = make_context(model, data.images.front().extent(), c.accel, c.rb, c.noise_std, c.seed);
    echo_config(c, {{"model", to_json(model)}, {"acceleration", ctx.mask.acceleration},
                    {"n_recurrent_blocks", ctx.n_recurrent_blocks}});
    const TestCase tc = make_test_case(ctx, data.images[c.image], c.image);
    const DataConsistencyTarget dc{tc.y, tc.mask, ctx.n_recurrent_blocks};
    const auto samples = monte_carlo_samples(*model.vae, tc.x_input(ctx), c.k, derive_seed(c.seed, {c.image, 2}),
                                             &dc, c.sigma_zero ? 0.0 : 1.0);
    const UncertaintyMap map = c.truth ? bias_error_maps(samples, tc.x0) : sample_statistics(samples);
    export_maps(map, c.out);
    io::write_cimg(fs::path(c.out) / "mean.cimg", map.mean);
    const auto s = summarize(map.variance);
    std::cout << "case " << case_name(c.split, c.image) << "  k " << map.k << "  variance mean " << fmt(s.mean)
              << " max " << fmt(s.max) << "\n";
    return exit_ok;
}

int cmd_sure(RunConfig& c)
{
    require_manifest(c);
    require_model(c);
    if (c.probes < 1)
        throw UsageError("--probes must be >= 1");
    if (c.epsilon && !(*c.epsilon > 0.0))
        throw UsageError("--epsilon must be > 0");
    prepare_out(c);
    const Model model = resolve_model(c);
    const auto data = load_images(c);
    std::vector<double> accels = c.sweep;
    if (accels.empty())
        accels.push_back(c.accel.value_or(model.config.acceleration));

    SureOptions so;
    so.n_probes = c.probes;
    so.seed = derive_seed(c.seed, {3});
    so.epsilon = c.epsilon;

    json reference = json::object();
    for (const auto& [a, r2] : kReferenceR2)
        reference[std::to_string(a)] = r2;
    json summary{{"reference_r_squared", reference}, {"accelerations", json::array()}};
    std::vector<SureCase> all;
    std::cout << "reference SURE-MSE R^2 (full-scale data): 2x 0.97, 4x 0.90, 8x 0.92, 16x 0.84\n";
    for (double a : accels) {
        const auto ctx = make_context(model, data.images.front().extent(), a, c.rb, c.noise_std, c.seed);
        const auto cases = evaluate_sure(ctx, data.images, so, "a" + fmt(a) + "_" + c.split + "_");
        std::vector<std::pair<SureReport, double>> pairs;
        std::vector<double> dof, rss, sure_db, err, snr;
        for (const auto& s : cases) {
            pairs.emplace_back(s.report, s.mse);
            dof.push_back(s.report.dof);
            rss.push_back(s.report.sigma2);
            sure_db.push_back(s.report.sure_db);
            err.push_back(s.mse);
            snr.push_back(s.snr_db);
        }
        json entry{{"accel", a},
                   {"n_cases", cases.size()},
                   {"n_recurrent_blocks", ctx.n_recurrent_blocks},
                   {"median", {{"dof", median(dof)}, {"rss_per_pixel", median(rss)}, {"sure_db", median(sure_db)},
                               {"mse", median(err)}, {"snr_db", median(snr)}}}};
        std::cout << "accel " << fmt(a) << "  cases " << cases.size() << "  median DOF " << fmt(median(dof))
                  << "  median SURE " << fmt(median(sure_db)) << " dB  median SNR " << fmt(median(snr)) << " dB";
        if (cases.size() >= 2) {
            const auto corr = sure_mse_correlation(pairs);
            entry["correlation"] = to_json(corr);
            std::cout << "  R^2 " << fmt(corr.r_squared);
        }
        std::cout << "\n";
        summary["accelerations"].push_back(entry);
        all.insert(all.end(), cases.begin(), cases.end());
    }
    echo_config(c, {{"model", to_json(model)}, {"accelerations", accels}});
    write_text(fs::path(c.out) / "sure.csv", sure_csv(all));
    write_text(fs::path(c.out) / "sure.json", summary.dump(2) + "\n");
    return exit_ok;
}

int cmd_qq(RunConfig& c)
{
    require_manifest(c);
    if (c.quantiles < 2)
        throw UsageError("quantiles must be >= 2");
    if (c.histogram_bins < 2)
        throw UsageError("histogram_bins must be >= 2");
    prepare_out(c);
    const auto data = load_images(c);
    std::vector<double> accels = c.sweep;
    if (accels.empty()) {
        if (c.accel)
            accels.push_back(*c.accel);
        else
            accels = {2.0, 4.0, 8.0, 16.0};
    }
    echo_config(c, {{"accelerations", accels}});
    const Extent extent = data.images.front().extent();
    const double noise = c.noise_std.value_or(0.0);

    std::string stats = "accel,input,count,mean,std,skewness,excess_kurtosis,degenerate\n";
    std::string qq = "accel,input,theoretical,empirical\n";
    std::string hist = "accel,input,bin_low,bin_high,count\n";
    const double span = 6.0;
    for (std::size_t ai = 0; ai < accels.size(); ++ai) {
        const VdMaskParams mp{extent.width, extent.height, accels[ai], c.training.calib_fraction,
                              c.training.density_power};
        const auto density = estimate_density(mp, c.density_masks, derive_seed(c.seed, {ai, 0}));
        std::vector<double> plain, compensated;
        for (std::size_t i = 0; i < data.images.size(); ++i) {
            const auto& x0 = data.images[i];
            const auto mask = make_vd_mask(mp, derive_seed(c.seed, {ai, 1, i}));
            const auto y = undersample(x0, mask, noise, derive_seed(c.seed, {ai, 2, i}));
            append_residual_components(zero_fill(y, mask), x0, plain);
            append_residual_components(density_compensate(y, mask, density), x0, compensated);
        }
        for (const auto& [name, values] : {std::pair{"zero-filled", &plain}, std::pair{"compensated", &compensated}}) {
            const ResidualStats r = residual_stats(*values, c.quantiles);
            const std::string a = fmt(accels[ai]);
            stats += a + "," + name + "," + std::to_string(r.count) + "," + fmt(r.mean) + "," + fmt(r.std) + "," +
                     fmt(r.skewness) + "," + fmt(r.excess_kurtosis) + "," + (r.degenerate ? "1" : "0") + "\n";
            for (const auto& [t, e] : r.qq_pairs)
                qq += a + "," + name + "," + fmt(t) + "," + fmt(e) + "\n";
            // Standardized residuals in equal bins over [-span, span]; the
            // end bins collect the tails.
            std::vector<std::size_t> counts(c.histogram_bins, 0);
            const double width = 2.0 * span / static_cast<double>(c.histogram_bins);
            for (double v : *values) {
                const double z = r.degenerate ? 0.0 : (v - r.mean) / r.std;
                const double pos = std::clamp((z + span) / width, 0.0, static_cast<double>(c.histogram_bins) - 1.0);
                ++counts[static_cast<std::size_t>(pos)];
            }
            for (std::size_t b = 0; b < counts.size(); ++b)
                hist += a + "," + name + "," + fmt(-span + width * double(b)) + "," + fmt(-span + width * double(b + 1)) +
                        "," + std::to_string(counts[b]) + "\n";
            std::cout << "accel " << a << "  " << name << "  mean " << fmt(r.mean) << "  excess kurtosis "
                      << fmt(r.excess_kurtosis) << (r.degenerate ? "  (degenerate)" : "") << "\n";
        }
    }
    write_text(fs::path(c.out) / "qq_stats.csv", stats);
    write_text(fs::path(c.out) / "qq_pairs.csv", qq);
    write_text(fs::path(c.out) / "histogram.csv", hist);
    return exit_ok;
}

void add_common(CLI::App* sub, Flags& f)
{
    sub->add_option("--config", f.config, "JSON config file; command-line flags take precedence");
    add_flag_value(sub, "--seed", f.seed, "Global seed");
    add_flag_value(sub, "--out", f.out, "Output directory");
}

void add_eval(CLI::App* sub, Flags& f)
{
    add_flag_value(sub, "--manifest", f.manifest, "Dataset manifest.json");
    add_flag_value(sub, "--split", f.split, "train, val or test (default test)");
    add_flag_value(sub, "--limit", f.limit, "Use at most this many images of the split");
    add_flag_value(sub, "--accel", f.accel, "Acceleration (default: as trained)");
    add_flag_value(sub, "--noise-std", f.noise_std, "Per-component k-space noise std (default: as trained)");
}

void add_model(CLI::App* sub, Flags& f)
{
    add_flag_value(sub, "--checkpoint", f.checkpoint, "Model checkpoint (.vaep with .vaep.json sidecar)");
    add_flag_value(sub, "--rb", f.rb, "Recurrent blocks (default: as trained)");
    sub->add_flag("--identity-model", f.identity_model, "Debug: use the identity map as the model");
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Uncertainty quantification for undersampled MRI reconstruction"};
    app.require_subcommand(1);
    Flags f;

    auto* gen = app.add_subcommand("gen", "Generate a phantom dataset and manifest");
    add_common(gen, f);
    add_flag_value(gen, "--n-images", f.n_images, "Number of phantoms (default 600)");
    add_flag_value(gen, "--ratios", f.ratios, "Split ratios train val test (default 0.7 0.15 0.15)")->expected(3);

    auto* tr = app.add_subcommand("train", "Train the VAE on the training split");
    add_common(tr, f);
    add_flag_value(tr, "--manifest", f.manifest, "Dataset manifest.json");
    add_flag_value(tr, "--checkpoint", f.checkpoint, "Checkpoint path (default <out>/model.vaep)");
    add_flag_value(tr, "--accel", f.accel, "Training acceleration");
    add_flag_value(tr, "--lambda", f.lambda, "Adversarial weight");
    add_flag_value(tr, "--eta", f.eta, "KL weight");
    add_flag_value(tr, "--rb", f.rb, "Recurrent blocks");
    add_flag_value(tr, "--noise-std", f.noise_std, "Per-component k-space noise std");
    add_flag_value(tr, "--iterations", f.iterations, "Training iterations");
    add_flag_value(tr, "--log-every", f.log_every, "Print the loss every N iterations (0: quiet)");

    auto* rc = app.add_subcommand("recon", "Reconstruct a split and report SNR");
    add_common(rc, f);
    add_eval(rc, f);
    add_model(rc, f);

    auto* mp = app.add_subcommand("map", "Monte Carlo uncertainty maps for one image");
    add_common(mp, f);
    add_eval(mp, f);
    add_model(mp, f);
    add_flag_value(mp, "--k", f.k, "Number of latent samples (default 1000)");
    add_flag_value(mp, "--image", f.image, "Image index within the split");
    mp->add_flag("--sigma-zero", f.sigma_zero, "Debug: draw every sample at the posterior mean");
    mp->add_flag("--no-truth", f.no_truth, "Omit bias and error maps");

    auto* su = app.add_subcommand("sure", "Density-compensated SURE and SURE-MSE correlation");
    add_common(su, f);
    add_eval(su, f);
    add_model(su, f);
    add_flag_value(su, "--probes", f.probes, "Probe vectors for the Jacobian trace (default 10)");
    add_flag_value(su, "--epsilon", f.epsilon, "Probe step (default max |x| / 1000)");
    add_flag_value(su, "--sweep", f.sweep, "Accelerations to evaluate, e.g. --sweep 2 4 8 16");

    auto* qq = app.add_subcommand("qq", "Residual statistics of zero-filled and compensated inputs");
    add_common(qq, f);
    add_eval(qq, f);
    add_flag_value(qq, "--sweep", f.sweep, "Accelerations (default 2 4 8 16)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_usage;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        configure_threads();
        RunConfig c;
        c.command = command;
        c.out = command == "gen" ? "data" : "runs/" + command;
        if (!f.config.empty()) {
            if (!fs::is_regular_file(f.config))
                throw UsageError("config not found: " + f.config);
            apply_config_file(f.config, c);
        }
        apply_flags(f, c);
        if (command == "gen")
            return cmd_gen(c);
        if (command == "train")
            return cmd_train(c);
        if (command == "recon")
            return cmd_recon(c);
        if (command == "map")
            return cmd_map(c);
        if (command == "sure")
            return cmd_sure(c);
        return cmd_qq(c);
    } catch (const UsageError& e) {
        std::cerr << "mriuq " << command << ": " << e.what() << "\n";
        return exit_usage;
    } catch (const IoError& e) {
        std::cerr << "mriuq " << command << ": " << e.what() << "\n";
        return exit_io;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "mriuq " << command << ": " << e.what() << "\n";
        return exit_io;
    } catch (const NumericalError& e) {
        std::cerr << "mriuq " << command << ": " << e.what() << "\n";
        return exit_numerical;
    } catch (const Error& e) {
        std::cerr << "mriuq " << command << ": " << e.what() << "\n";
        return exit_usage;
    } catch (const std::exception& e) {
        std::cerr << "mriuq " << command << ": unexpected error: " << e.what() << "\n";
        return 1;
    }
}
