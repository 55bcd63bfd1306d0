#include "surgvae/tensor.hpp"

#include <cmath>
#include <sstream>
#include <utility>

#include "surgvae/errors.hpp"

namespace surgvae {

std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    std::size_t n = 1;
    for (std::size_t d : shape_) {
        if (d == 0) throw DimensionError("tensor shape has zero extent " + shape_to_string(shape_));
        n *= d;
    }
    if (n != data_.size()) {
        throw DimensionError("tensor shape " + shape_to_string(shape_) + " expects " +
                             std::to_string(n) + " values, got " + std::to_string(data_.size()));
    }
    check_finite("construction");
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
}

Tensor Tensor::col(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n, 1}, std::move(values));
}

double Tensor::item() const {
    if (numel() != 1) {
        throw UsageError("item() requires a scalar tensor, got shape " + shape_str());
    }
    return data_[0];
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

void Tensor::check_finite(const char* context) const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!std::isfinite(data_[i])) {
            throw DomainError(std::string("non-finite value at flat index ") + std::to_string(i) +
                              " during " + context + " (shape " + shape_str() + ")");
        }
    }
}

}  // namespace surgvae
