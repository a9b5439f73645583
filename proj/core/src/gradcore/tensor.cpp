#include "spectradiff/gradcore/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "spectradiff/errors.hpp"

namespace spectradiff {

std::size_t shape_numel(const Shape& shape) noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<std::size_t>());
}

std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) {
            out += "x";
        }
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

namespace {

void check_shape(const Shape& shape) {
    if (shape.empty()) {
        throw DimensionError("Tensor: shape must have at least one extent");
    }
    for (auto extent : shape) {
        if (extent == 0) {
            throw DimensionError("Tensor: extents must be positive, got " + shape_string(shape));
        }
    }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    check_shape(shape);
    auto impl = std::make_shared<Storage>();
    impl->data.assign(shape_numel(shape), value);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    check_shape(shape);
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("Tensor: " + std::to_string(data.size()) +
                             " values do not fill shape " + shape_string(shape));
    }
    auto impl = std::make_shared<Storage>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from(const Matrix& m, bool requires_grad) {
    return from({m.rows(), m.cols()}, m.data(), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return full({1}, value, requires_grad); }

Tensor::Storage& Tensor::storage() const {
    if (!impl_) {
        throw ContractError("Tensor: access to an undefined tensor");
    }
    return *impl_;
}

const Shape& Tensor::shape() const { return storage().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("Tensor::dim: axis out of range for " + shape_string(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return storage().data.size(); }

std::span<double> Tensor::data() { return storage().data; }
std::span<const double> Tensor::data() const { return storage().data; }

double Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("Tensor::item: tensor of shape " + shape_string(shape()) + " is not a scalar");
    }
    return storage().data[0];
}

void Tensor::set_requires_grad(bool value) { storage().requires_grad = value; }

std::span<double> Tensor::grad() const {
    auto& s = storage();
    if (s.grad.empty()) {
        s.grad.assign(s.data.size(), 0.0);
    }
    return s.grad;
}

void Tensor::zero_grad() {
    auto& s = storage();
    std::fill(s.grad.begin(), s.grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), storage().data, false); }

Tensor Tensor::clone() const { return from(shape(), storage().data, requires_grad()); }

Matrix Tensor::to_matrix() const {
    const auto& s = storage();
    const std::size_t cols = s.shape.back();
    return Matrix(s.data.size() / cols, cols, s.data);
}

}  // namespace spectradiff
