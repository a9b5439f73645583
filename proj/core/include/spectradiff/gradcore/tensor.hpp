#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spectradiff/matrix.hpp"

namespace spectradiff {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

/// Dense 64-bit tensor handle.
///
/// Copies share storage (like a reference-counted buffer); use clone() for an
/// independent value. A tensor either is a leaf (created by the factories
/// below, e.g. a parameter) or the output of a recorded op in a Graph. The
/// gradient buffer is allocated lazily, always with the same shape as the data.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor from(const Matrix& m, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<double> data();
    std::span<const double> data() const;
    double item() const;

    bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool value);

    bool has_grad() const noexcept { return impl_ && !impl_->grad.empty(); }
    /// Gradient buffer, zero-allocated on first access. The handle is
    /// shallow, so this is callable on a const handle.
    std::span<double> grad() const;
    void zero_grad();

    /// Independent copy of the data; never requires grad.
    Tensor detach() const;
    /// Independent copy of data and requires_grad flag (no grad buffer).
    Tensor clone() const;
    /// Row-major 2-D view copy: leading extents flattened into rows.
    Matrix to_matrix() const;

    bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

private:
    struct Storage {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    explicit Tensor(std::shared_ptr<Storage> impl) : impl_(std::move(impl)) {}
    Storage& storage() const;

    std::shared_ptr<Storage> impl_;
};

}  // namespace spectradiff
