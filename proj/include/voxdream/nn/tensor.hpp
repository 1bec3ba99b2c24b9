#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace voxdream::nn {

using Shape = std::vector<int>;

inline std::int64_t shape_size(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s);

// Dense row-major tensor of doubles. All training and verification runs in
// 64-bit; checkpoints store 64-bit values by default (32-bit optional).
struct Tensor {
    Shape shape;
    std::vector<double> v;

    Tensor() = default;
    Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), v(static_cast<size_t>(shape_size(shape)), fill) {}
    Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), v(std::move(values)) {
        assert(static_cast<std::int64_t>(v.size()) == shape_size(shape));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor scalar(double x) { return Tensor({1}, {x}); }

    std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
    double& operator[](std::int64_t i) { return v[static_cast<size_t>(i)]; }
    double operator[](std::int64_t i) const { return v[static_cast<size_t>(i)]; }

    bool all_finite() const;
};

bool same_shape(const Shape& a, const Shape& b);

}  // namespace voxdream::nn
