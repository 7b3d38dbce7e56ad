#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mriuq/grid.hpp"

namespace mriuq {

enum class PhaseMode { zero, smooth_random };

// Ellipse in normalized coordinates: the image spans [-1, 1] on both axes
// and pixel (i, j) has its centre at ((i + 0.5) 2/width - 1, (j + 0.5) 2/height - 1).
struct Ellipse {
    double cx = 0.0;
    double cy = 0.0;
    double a = 0.5; // semi-axis along the rotated x direction
    double b = 0.5;
    double theta = 0.0;
    double intensity = 1.0;

    bool contains(double x, double y) const noexcept;
};

// Fraction of each pixel covered by the ellipse, estimated on a
// supersample x supersample grid of sub-pixel centres.
RealMap rasterize(const Ellipse& e, std::size_t width, std::size_t height, std::size_t supersample = 1);

struct PhantomSpec {
    std::size_t width = 32;
    std::size_t height = 32;
    // One body ellipse plus n_ellipses - 1 internal structures.
    std::size_t n_ellipses = 6;
    double intensity_low = 0.0;
    double intensity_high = 1.0;
    PhaseMode phase_mode = PhaseMode::smooth_random;
    std::size_t supersample = 2;
    // Anatomy is drawn from family_seed; slice in [-1, 1] moves the internal
    // structures along the slice axis, and seed drives the phase field.
    std::uint64_t family_seed = 0;
    double slice = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

// Anatomy of one phantom before rasterization.
std::vector<Ellipse> phantom_ellipses(const PhantomSpec& spec);

ComplexImage generate_phantom(const PhantomSpec& spec);

// Sums the ellipse intensities on the supersampled grid, clips to the
// intensity range, box-averages to pixels and applies the phase field.
ComplexImage render_phantom(std::span<const Ellipse> ellipses, const PhantomSpec& spec);

enum class Split { train, val, test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct ManifestEntry {
    std::string path; // relative to the manifest directory
    Split split = Split::train;
    std::uint64_t family_id = 0;
    std::uint64_t seed = 0;
};

struct DatasetManifest {
    static constexpr int kSchemaVersion = 1;

    int schema_version = kSchemaVersion;
    std::vector<ManifestEntry> images;
    std::array<double, 3> split_ratios{0.7, 0.15, 0.15};
    std::uint64_t seed = 0;
    std::size_t slices_per_family = 5;
    PhantomSpec spec;
    std::filesystem::path directory; // where the manifest lives; not serialized

    std::vector<std::size_t> indices(Split s) const;
};

struct DatasetOptions {
    std::size_t n_images = 600;
    std::array<double, 3> split_ratios{0.7, 0.15, 0.15};
    std::size_t slices_per_family = 5;
    std::uint64_t seed = 0;
};

// Image counts per split: floor(r n), remaining images going to the largest
// fractional parts (ties to the earlier split).
std::array<std::size_t, 3> split_counts(std::size_t n_images, const std::array<double, 3>& ratios);

// Families of up to slices_per_family images are formed inside each split,
// so family members never straddle splits and split sizes are exact.
DatasetManifest plan_dataset(const PhantomSpec& spec, const DatasetOptions& options);

// Phantom for one manifest entry.
ComplexImage generate_entry(const DatasetManifest& manifest, std::size_t index);

// Writes every CIMG file and manifest.json into out_dir.
DatasetManifest generate_dataset(const PhantomSpec& spec, const DatasetOptions& options,
                                 const std::filesystem::path& out_dir);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

std::vector<ComplexImage> load_split(const DatasetManifest& manifest, Split split);

} // namespace mriuq
