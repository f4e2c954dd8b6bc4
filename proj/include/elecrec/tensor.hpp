#pragma once
// Dense row-major tensor. Plain value type: the tape owns the autodiff
// bookkeeping, this is just shape + storage.

#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "elecrec/errors.hpp"

namespace elec {

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

inline std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

template <class S>
struct Tensor {
    std::vector<int> shape;
    std::vector<S> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> shp) : shape(std::move(shp)) {
        check_dims();
        data.assign(static_cast<size_t>(shape_numel(shape)), S(0));
    }

    Tensor(std::vector<int> shp, std::vector<S> values) : shape(std::move(shp)), data(std::move(values)) {
        check_dims();
        if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
            throw ShapeError("tensor data size " + std::to_string(data.size()) + " does not match shape " +
                             shape_str(shape));
    }

    static Tensor scalar(S v) { return Tensor({1}, {v}); }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    // Size of the last axis; tensors are treated as [rows x last_dim] by most ops.
    int last_dim() const { return shape.empty() ? 1 : shape.back(); }
    std::int64_t rows() const { return shape.empty() ? 1 : numel() / last_dim(); }

    S* ptr() { return data.data(); }
    const S* ptr() const { return data.data(); }

    void fill(S v) { std::fill(data.begin(), data.end(), v); }

private:
    void check_dims() const {
        for (int d : shape)
            if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    }
};

// Large negative additive-mask / forced-logit surrogate for -inf.
template <class S>
constexpr S neg_inf_surrogate() {
    return S(-1e9);
}

}  // namespace elec
