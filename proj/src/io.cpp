#include "mriuq/io.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>
#include <unistd.h>

namespace mriuq::io {

namespace fs = std::filesystem;

void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::string& out, float v)
{
    put_u32(out, std::bit_cast<std::uint32_t>(v));
}

std::uint32_t get_u32(std::string_view in, std::size_t& pos)
{
    if (pos + 4 > in.size())
        throw Error("truncated binary data");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += 4;
    return v;
}

float get_f32(std::string_view in, std::size_t& pos)
{
    return std::bit_cast<float>(get_u32(in, pos));
}

void write_file_atomic(const fs::path& path, std::string_view contents)
{
    static std::atomic<unsigned> counter{0};
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError("cannot open for writing", tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out)
            throw IoError("write failed", tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("cannot rename into place", path.string());
    }
}

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open for reading", path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace {

std::string header(std::string_view magic, std::size_t width, std::size_t height)
{
    std::string out(magic);
    put_u32(out, static_cast<std::uint32_t>(width));
    put_u32(out, static_cast<std::uint32_t>(height));
    return out;
}

struct Parsed {
    std::string bytes;
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t pos = 0;
};

Parsed parse_header(const fs::path& path, std::string_view magic, std::size_t floats_per_pixel)
{
    Parsed p{read_file(path)};
    if (p.bytes.size() < 12 || std::string_view(p.bytes).substr(0, 4) != magic)
        throw IoError("bad magic, expected " + std::string(magic), path.string());
    p.pos = 4;
    p.width = get_u32(p.bytes, p.pos);
    p.height = get_u32(p.bytes, p.pos);
    if (p.width == 0 || p.height == 0)
        throw IoError("zero dimension in header", path.string());
    if (p.bytes.size() != 12 + 4 * floats_per_pixel * p.width * p.height)
        throw IoError("payload size does not match header", path.string());
    return p;
}

} // namespace

void write_cimg(const fs::path& path, const ComplexImage& img)
{
    std::string out = header("CIMG", img.width(), img.height());
    out.reserve(out.size() + 8 * img.size());
    for (const auto& v : img) {
        put_f32(out, static_cast<float>(v.real()));
        put_f32(out, static_cast<float>(v.imag()));
    }
    write_file_atomic(path, out);
}

ComplexImage read_cimg(const fs::path& path)
{
    auto p = parse_header(path, "CIMG", 2);
    ComplexImage img(p.width, p.height);
    for (auto& v : img) {
        const float re = get_f32(p.bytes, p.pos);
        const float im = get_f32(p.bytes, p.pos);
        v = Complex(re, im);
    }
    if (!all_finite(img))
        throw IoError("non-finite amplitude", path.string());
    return img;
}

void write_mask(const fs::path& path, const SamplingMask& mask)
{
    std::string out = header("MASK", mask.width(), mask.height());
    for (auto v : mask.pattern)
        put_f32(out, v ? 1.0f : 0.0f);
    write_file_atomic(path, out);
}

SamplingMask read_mask(const fs::path& path)
{
    auto p = parse_header(path, "MASK", 1);
    SamplingMask mask{Grid<std::uint8_t>(p.width, p.height, std::uint8_t{0}), 1.0, 0};
    for (auto& v : mask.pattern)
        v = get_f32(p.bytes, p.pos) != 0.0f ? 1 : 0;
    mask.acceleration = mask.realized_acceleration();
    return mask;
}

void write_density(const fs::path& path, const SamplingDensity& density)
{
    std::string out = header("DENS", density.width(), density.height());
    for (double v : density.probabilities)
        put_f32(out, static_cast<float>(v));
    write_file_atomic(path, out);
}

SamplingDensity read_density(const fs::path& path)
{
    auto p = parse_header(path, "DENS", 1);
    SamplingDensity d{RealMap(p.width, p.height), 0};
    for (auto& v : d.probabilities) {
        v = get_f32(p.bytes, p.pos);
        if (!(v > 0.0) || !std::isfinite(v))
            throw IoError("density entries must be positive", path.string());
    }
    return d;
}

void write_pgm(const fs::path& path, const RealMap& map)
{
    double max = 0.0;
    for (double v : map)
        if (std::isfinite(v))
            max = std::max(max, v);
    std::string out = "P5\n" + std::to_string(map.width()) + " " + std::to_string(map.height()) + "\n255\n";
    out.reserve(out.size() + map.size());
    for (double v : map) {
        double s = (max > 0.0 && std::isfinite(v) && v > 0.0) ? v / max * 255.0 : 0.0;
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(s, 0.0, 255.0)))));
    }
    write_file_atomic(path, out);
}

} // namespace mriuq::io
