#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace oen {

// Dense multi-dimensional array of 64-bit floats, row-major.
// The universal value type for images, weights, activations and gradients.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);
    Tensor(std::vector<int> shape, std::vector<double> data);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int extent(int axis) const;
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // row-major accessors for the common ranks
    double& at2(int a, int b) { return data_[idx2(a, b)]; }
    double at2(int a, int b) const { return data_[idx2(a, b)]; }
    double& at3(int a, int b, int c) { return data_[idx3(a, b, c)]; }
    double at3(int a, int b, int c) const { return data_[idx3(a, b, c)]; }
    double& at4(int a, int b, int c, int d) { return data_[idx4(a, b, c, d)]; }
    double at4(int a, int b, int c, int d) const { return data_[idx4(a, b, c, d)]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    std::string shape_str() const;

    static std::int64_t shape_size(const std::vector<int>& shape);

private:
    std::size_t idx2(int a, int b) const {
        return static_cast<std::size_t>(a) * shape_[1] + b;
    }
    std::size_t idx3(int a, int b, int c) const {
        return (static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c;
    }
    std::size_t idx4(int a, int b, int c, int d) const {
        return ((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d;
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

std::string shape_to_string(const std::vector<int>& shape);

}  // namespace oen
