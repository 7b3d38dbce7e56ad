#pragma once

#include <random>

#include "mriuq/grid.hpp"

namespace testutil {

inline mriuq::ComplexImage random_image(std::size_t w, std::size_t h, std::uint64_t seed, double scale = 1.0)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    mriuq::ComplexImage img(w, h);
    for (auto& v : img) {
        const double re = normal(rng);
        const double im = normal(rng);
        v = {re, im};
    }
    return img;
}

template <typename Tag>
double max_abs_diff(const mriuq::Grid<mriuq::Complex, Tag>& a, const mriuq::Grid<mriuq::Complex, Tag>& b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace testutil
