#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace surgvae {

/// Dense row-major tensor of 64-bit reals.
///
/// Construction validates that product(shape) == data.size() and that every
/// entry is finite; non-finite values are rejected so numerical failures
/// surface where they originate rather than propagating through a run.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor scalar(double value);
    /// 1 x n row vector.
    static Tensor row(std::vector<double> values);
    /// n x 1 column vector.
    static Tensor col(std::vector<double> values);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_[axis]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    /// Element access for rank-2 tensors.
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

    /// Scalar extraction; requires numel() == 1.
    double item() const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

    /// Re-checks the finite invariant after in-place mutation through data().
    void check_finite(const char* context) const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::string shape_to_string(const std::vector<std::size_t>& shape);

}  // namespace surgvae
