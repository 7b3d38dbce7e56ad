#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "mriuq/error.hpp"

namespace mriuq {

using Complex = std::complex<double>;

struct Extent {
    std::size_t width = 0;
    std::size_t height = 0;

    std::size_t size() const noexcept { return width * height; }
    bool operator==(const Extent&) const = default;
};

struct ImageDomain;
struct FourierDomain;

// Row-major 2D grid. The tag keeps image-domain and k-space data from being
// mixed up; conversion between the two goes through fft2_centered/ifft2_centered.
template <typename T, typename Tag = void>
class Grid {
public:
    using value_type = T;

    Grid() = default;

    Grid(std::size_t width, std::size_t height, T fill = T{})
      : extent_{width, height}, values_(checked_size(width, height), fill)
    { }

    Grid(Extent extent, T fill = T{})
      : Grid(extent.width, extent.height, fill)
    { }

    Grid(std::size_t width, std::size_t height, std::vector<T> values)
      : extent_{width, height}, values_(std::move(values))
    {
        if (values_.size() != checked_size(width, height))
            throw InvalidShape("grid value count does not match width x height");
    }

    std::size_t width() const noexcept { return extent_.width; }
    std::size_t height() const noexcept { return extent_.height; }
    std::size_t size() const noexcept { return values_.size(); }
    Extent extent() const noexcept { return extent_; }
    bool empty() const noexcept { return values_.empty(); }

    T& operator()(std::size_t x, std::size_t y) { return values_[y * extent_.width + x]; }
    const T& operator()(std::size_t x, std::size_t y) const { return values_[y * extent_.width + x]; }
    T& operator[](std::size_t i) { return values_[i]; }
    const T& operator[](std::size_t i) const { return values_[i]; }

    std::span<T> values() noexcept { return values_; }
    std::span<const T> values() const noexcept { return values_; }
    T* data() noexcept { return values_.data(); }
    const T* data() const noexcept { return values_.data(); }

    auto begin() noexcept { return values_.begin(); }
    auto end() noexcept { return values_.end(); }
    auto begin() const noexcept { return values_.begin(); }
    auto end() const noexcept { return values_.end(); }

    bool same_shape(const auto& other) const noexcept
    {
        return width() == other.width() && height() == other.height();
    }

    Grid& operator+=(const Grid& rhs)
    {
        require_same_shape(rhs);
        for (std::size_t i = 0; i < size(); ++i)
            values_[i] += rhs.values_[i];
        return *this;
    }

    Grid& operator-=(const Grid& rhs)
    {
        require_same_shape(rhs);
        for (std::size_t i = 0; i < size(); ++i)
            values_[i] -= rhs.values_[i];
        return *this;
    }

    template <typename S>
    Grid& operator*=(S scale)
    {
        for (auto& v : values_)
            v *= scale;
        return *this;
    }

    friend Grid operator+(Grid lhs, const Grid& rhs) { return lhs += rhs; }
    friend Grid operator-(Grid lhs, const Grid& rhs) { return lhs -= rhs; }
    template <typename S>
    friend Grid operator*(Grid lhs, S scale) { return lhs *= scale; }
    template <typename S>
    friend Grid operator*(S scale, Grid rhs) { return rhs *= scale; }

    bool operator==(const Grid&) const = default;

private:
    static std::size_t checked_size(std::size_t width, std::size_t height)
    {
        if (width == 0 || height == 0)
            throw InvalidShape("grid dimensions must be at least 1x1");
        return width * height;
    }

    void require_same_shape(const Grid& rhs) const
    {
        if (!same_shape(rhs))
            throw InvalidShape("grid shapes differ");
    }

    Extent extent_{};
    std::vector<T> values_;
};

using ComplexImage = Grid<Complex, ImageDomain>;
using KSpace = Grid<Complex, FourierDomain>;
using RealMap = Grid<double>;

template <typename Tag>
double squared_norm(const Grid<Complex, Tag>& g)
{
    double s = 0.0;
    for (const auto& v : g)
        s += std::norm(v);
    return s;
}

template <typename Tag>
bool all_finite(const Grid<Complex, Tag>& g)
{
    for (const auto& v : g)
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
            return false;
    return true;
}

inline RealMap magnitude(const ComplexImage& img)
{
    RealMap out(img.extent());
    for (std::size_t i = 0; i < img.size(); ++i)
        out[i] = std::abs(img[i]);
    return out;
}

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* what)
{
    if (a.width() != b.width() || a.height() != b.height())
        throw InvalidShape(std::string(what) + ": shape mismatch");
}

} // namespace mriuq
