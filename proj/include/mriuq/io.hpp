#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "mriuq/grid.hpp"
#include "mriuq/kspace.hpp"

namespace mriuq::io {

// Binary little-endian layouts:
//   CIMG: "CIMG", u32 width, u32 height, width*height (f32 real, f32 imag), row-major
//   MASK: "MASK", u32 width, u32 height, width*height f32 (0 or 1)
//   DENS: "DENS", u32 width, u32 height, width*height f32 probabilities
void write_cimg(const std::filesystem::path& path, const ComplexImage& img);
ComplexImage read_cimg(const std::filesystem::path& path);

void write_mask(const std::filesystem::path& path, const SamplingMask& mask);
SamplingMask read_mask(const std::filesystem::path& path);

void write_density(const std::filesystem::path& path, const SamplingDensity& density);
SamplingDensity read_density(const std::filesystem::path& path);

// 8-bit binary PGM (P5), linearly scaled so the map maximum becomes 255.
// Negative and non-finite entries are written as 0.
void write_pgm(const std::filesystem::path& path, const RealMap& map);

// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

// Little-endian primitives shared with the checkpoint format.
void put_u32(std::string& out, std::uint32_t v);
void put_f32(std::string& out, float v);
std::uint32_t get_u32(std::string_view in, std::size_t& pos);
float get_f32(std::string_view in, std::size_t& pos);

} // namespace mriuq::io
