#include "mriuq/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "mriuq/io.hpp"
#include "mriuq/random.hpp"
#include "mriuq/serialize.hpp"

namespace mriuq {

namespace fs = std::filesystem;

bool Ellipse::contains(double x, double y) const noexcept
{
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    const double u = (x - cx) * c + (y - cy) * s;
    const double v = -(x - cx) * s + (y - cy) * c;
    return (u / a) * (u / a) + (v / b) * (v / b) <= 1.0;
}

RealMap rasterize(const Ellipse& e, std::size_t width, std::size_t height, std::size_t supersample)
{
    if (supersample < 1)
        throw InvalidParameter("supersample must be >= 1");
    RealMap out(width, height);
    const double ss = static_cast<double>(supersample);
    const double weight = 1.0 / (ss * ss);
    for (std::size_t j = 0; j < height; ++j)
        for (std::size_t i = 0; i < width; ++i) {
            double covered = 0.0;
            for (std::size_t sj = 0; sj < supersample; ++sj)
                for (std::size_t si = 0; si < supersample; ++si) {
                    const double x = (static_cast<double>(i) + (static_cast<double>(si) + 0.5) / ss)
                                         * 2.0 / static_cast<double>(width) - 1.0;
                    const double y = (static_cast<double>(j) + (static_cast<double>(sj) + 0.5) / ss)
                                         * 2.0 / static_cast<double>(height) - 1.0;
                    if (e.contains(x, y))
                        covered += weight;
                }
            out(i, j) = covered;
        }
    return out;
}

void PhantomSpec::validate() const
{
    if (width == 0 || height == 0)
        throw InvalidShape("phantom dimensions must be >= 1");
    if (n_ellipses < 1)
        throw InvalidParameter("n_ellipses must be >= 1");
    if (!(intensity_low <= intensity_high) || !std::isfinite(intensity_low) || !std::isfinite(intensity_high))
        throw InvalidParameter("intensity range must satisfy low <= high");
    if (supersample < 1)
        throw InvalidParameter("supersample must be >= 1");
    if (!(slice >= -1.0 && slice <= 1.0))
        throw InvalidParameter("slice must lie in [-1, 1]");
}

std::vector<Ellipse> phantom_ellipses(const PhantomSpec& spec)
{
    spec.validate();
    Rng rng = make_rng(spec.family_seed, {0});
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    const double span = spec.intensity_high - spec.intensity_low;

    std::vector<Ellipse> out;
    Ellipse body;
    body.a = uniform(0.55, 0.85);
    body.b = uniform(0.55, 0.85);
    body.theta = uniform(-0.3, 0.3);
    body.cx = uniform(-0.08, 0.08);
    body.cy = uniform(-0.08, 0.08);
    body.intensity = spec.intensity_low + span * uniform(0.6, 0.9);
    out.push_back(body);

    const double t = spec.slice;
    for (std::size_t k = 1; k < spec.n_ellipses; ++k) {
        const double r = uniform(0.0, 0.6);
        const double angle = uniform(0.0, 2.0 * std::numbers::pi);
        Ellipse e;
        e.a = uniform(0.05, 0.3) * body.a;
        e.b = uniform(0.05, 0.3) * body.b;
        e.theta = uniform(0.0, std::numbers::pi);
        e.intensity = span * uniform(-0.4, 0.4);
        const double depth = uniform(-1.0, 1.0);
        const double drift = uniform(-0.15, 0.15);
        // Structures taper away from their own depth and drift across slices.
        const double taper = std::sqrt(std::max(0.25, 1.0 - 0.25 * (t - depth) * (t - depth)));
        e.a *= taper;
        e.b *= taper;
        e.cx = body.cx + r * body.a * std::cos(angle) + drift * t;
        e.cy = body.cy + r * body.b * std::sin(angle) - drift * t;
        out.push_back(e);
    }
    return out;
}

ComplexImage generate_phantom(const PhantomSpec& spec)
{
    return render_phantom(phantom_ellipses(spec), spec);
}

ComplexImage render_phantom(std::span<const Ellipse> ellipses, const PhantomSpec& spec)
{
    spec.validate();
    const std::size_t w = spec.width;
    const std::size_t h = spec.height;
    const std::size_t ss = spec.supersample;

    // Sum intensities on the fine grid, clip, then box-average to pixels.
    Grid<double> fine(w * ss, h * ss);
    for (std::size_t j = 0; j < fine.height(); ++j)
        for (std::size_t i = 0; i < fine.width(); ++i) {
            const double x = (static_cast<double>(i) + 0.5) * 2.0 / static_cast<double>(fine.width()) - 1.0;
            const double y = (static_cast<double>(j) + 0.5) * 2.0 / static_cast<double>(fine.height()) - 1.0;
            double v = 0.0;
            for (const auto& e : ellipses)
                if (e.contains(x, y))
                    v += e.intensity;
            fine(i, j) = std::clamp(v, spec.intensity_low, spec.intensity_high);
        }
    ComplexImage img(w, h);
    for (std::size_t j = 0; j < h; ++j)
        for (std::size_t i = 0; i < w; ++i) {
            double acc = 0.0;
            for (std::size_t sj = 0; sj < ss; ++sj)
                for (std::size_t si = 0; si < ss; ++si)
                    acc += fine(i * ss + si, j * ss + sj);
            img(i, j) = acc / static_cast<double>(ss * ss);
        }

    if (spec.phase_mode == PhaseMode::smooth_random) {
        Rng rng = make_rng(spec.seed, {1});
        std::normal_distribution<double> amp(0.0, 0.3);
        std::uniform_real_distribution<double> offset(0.0, 2.0 * std::numbers::pi);
        RealMap phase(w, h);
        for (int kx = -1; kx <= 1; ++kx)
            for (int ky = -1; ky <= 1; ++ky) {
                const double c = amp(rng);
                const double o = offset(rng);
                for (std::size_t j = 0; j < h; ++j)
                    for (std::size_t i = 0; i < w; ++i)
                        phase(i, j) += c * std::cos(2.0 * std::numbers::pi
                                                        * (kx * static_cast<double>(i) / static_cast<double>(w)
                                                           + ky * static_cast<double>(j) / static_cast<double>(h))
                                                    + o);
            }
        for (std::size_t p = 0; p < img.size(); ++p)
            img[p] *= std::polar(1.0, phase[p]);
    }
    return img;
}

std::string to_string(Split s)
{
    switch (s) {
    case Split::train:
        return "train";
    case Split::val:
        return "val";
    case Split::test:
        return "test";
    }
    return "train";
}

Split split_from_string(const std::string& s)
{
    if (s == "train")
        return Split::train;
    if (s == "val")
        return Split::val;
    if (s == "test")
        return Split::test;
    throw InvalidParameter("unknown split '" + s + "'");
}

std::vector<std::size_t> DatasetManifest::indices(Split s) const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < images.size(); ++i)
        if (images[i].split == s)
            out.push_back(i);
    return out;
}

std::array<std::size_t, 3> split_counts(std::size_t n_images, const std::array<double, 3>& ratios)
{
    double sum = 0.0;
    for (double r : ratios) {
        if (!(r >= 0.0) || !std::isfinite(r))
            throw InvalidParameter("split ratios must be >= 0");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw InvalidParameter("split ratios must sum to 1");

    std::array<std::size_t, 3> counts{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < 3; ++s) {
        const double exact = ratios[s] * static_cast<double>(n_images);
        counts[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        frac[s] = exact - static_cast<double>(counts[s]);
        assigned += counts[s];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return frac[a] > frac[b]; });
    for (std::size_t k = 0; assigned < n_images; ++k, ++assigned)
        ++counts[order[k % 3]];
    return counts;
}

DatasetManifest plan_dataset(const PhantomSpec& spec, const DatasetOptions& options)
{
    spec.validate();
    if (options.n_images < 3)
        throw InvalidParameter("n_images must be >= 3");
    if (options.slices_per_family < 1)
        throw InvalidParameter("slices_per_family must be >= 1");
    const auto counts = split_counts(options.n_images, options.split_ratios);

    DatasetManifest m;
    m.split_ratios = options.split_ratios;
    m.seed = options.seed;
    m.slices_per_family = options.slices_per_family;
    m.spec = spec;

    std::uint64_t family = 0;
    std::size_t index = 0;
    for (std::size_t s = 0; s < 3; ++s) {
        for (std::size_t left = counts[s]; left > 0;) {
            const std::size_t members = std::min(left, options.slices_per_family);
            for (std::size_t k = 0; k < members; ++k, ++index) {
                ManifestEntry e;
                char name[32];
                std::snprintf(name, sizeof name, "img_%05zu.cimg", index);
                e.path = name;
                e.split = static_cast<Split>(s);
                e.family_id = family;
                e.seed = derive_seed(options.seed, {1, index});
                m.images.push_back(std::move(e));
            }
            left -= members;
            ++family;
        }
    }
    return m;
}

ComplexImage generate_entry(const DatasetManifest& manifest, std::size_t index)
{
    const ManifestEntry& e = manifest.images.at(index);
    std::size_t first = index;
    while (first > 0 && manifest.images[first - 1].family_id == e.family_id)
        --first;
    std::size_t members = 0;
    while (first + members < manifest.images.size() && manifest.images[first + members].family_id == e.family_id)
        ++members;

    PhantomSpec spec = manifest.spec;
    spec.family_seed = derive_seed(manifest.seed, {0, e.family_id});
    spec.seed = e.seed;
    spec.slice = members > 1 ? -1.0 + 2.0 * static_cast<double>(index - first) / static_cast<double>(members - 1) : 0.0;
    return generate_phantom(spec);
}

DatasetManifest generate_dataset(const PhantomSpec& spec, const DatasetOptions& options, const fs::path& out_dir)
{
    DatasetManifest m = plan_dataset(spec, options);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir))
        throw IoError("cannot create output directory", out_dir.string());
    m.directory = out_dir;
    for (std::size_t i = 0; i < m.images.size(); ++i)
        io::write_cimg(out_dir / m.images[i].path, generate_entry(m, i));
    save_manifest(m, out_dir / "manifest.json");
    return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path)
{
    nlohmann::json images = nlohmann::json::array();
    for (const auto& e : manifest.images)
        images.push_back({{"path", e.path}, {"split", to_string(e.split)}, {"family_id", e.family_id}, {"seed", e.seed}});
    const nlohmann::json j{
        {"schema_version", manifest.schema_version},
        {"seed", manifest.seed},
        {"split_ratios", manifest.split_ratios},
        {"slices_per_family", manifest.slices_per_family},
        {"spec", manifest.spec},
        {"images", images},
    };
    io::write_file_atomic(path, j.dump(2) + "\n");
}

DatasetManifest load_manifest(const fs::path& path)
{
    const std::string text = io::read_file(path);
    DatasetManifest m;
    try {
        const auto j = nlohmann::json::parse(text);
        m.schema_version = j.at("schema_version").get<int>();
        if (m.schema_version != DatasetManifest::kSchemaVersion)
            throw Error("unsupported schema_version " + std::to_string(m.schema_version));
        m.seed = j.at("seed").get<std::uint64_t>();
        m.split_ratios = j.at("split_ratios").get<std::array<double, 3>>();
        m.slices_per_family = j.value("slices_per_family", std::size_t{1});
        m.spec = j.at("spec").get<PhantomSpec>();
        for (const auto& e : j.at("images"))
            m.images.push_back(ManifestEntry{e.at("path").get<std::string>(),
                                             split_from_string(e.at("split").get<std::string>()),
                                             e.at("family_id").get<std::uint64_t>(), e.at("seed").get<std::uint64_t>()});
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed manifest (") + e.what() + ")", path.string());
    } catch (const InvalidParameter& e) {
        throw IoError(std::string("malformed manifest (") + e.what() + ")", path.string());
    } catch (const IoError&) {
        throw;
    } catch (const Error& e) {
        throw IoError(std::string("malformed manifest (") + e.what() + ")", path.string());
    }
    m.directory = path.parent_path();
    return m;
}

std::vector<ComplexImage> load_split(const DatasetManifest& manifest, Split split)
{
    std::vector<ComplexImage> out;
    for (auto i : manifest.indices(split))
        out.push_back(io::read_cimg(manifest.directory / manifest.images[i].path));
    return out;
}

} // namespace mriuq
