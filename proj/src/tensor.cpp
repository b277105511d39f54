#include "oen/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace oen {

std::string shape_to_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::int64_t Tensor::shape_size(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw std::invalid_argument("Tensor: non-positive extent in shape " + shape_to_string(shape));
        n *= e;
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_size(shape_)), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != static_cast<std::int64_t>(data_.size())) {
        throw std::invalid_argument("Tensor: shape " + shape_to_string(shape_) + " does not match data length " +
                                    std::to_string(data_.size()));
    }
}

int Tensor::extent(int axis) const {
    if (axis < 0 || axis >= rank()) {
        throw std::invalid_argument("Tensor: axis " + std::to_string(axis) + " out of range for rank " +
                                    std::to_string(rank()));
    }
    return shape_[static_cast<std::size_t>(axis)];
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

}  // namespace oen
