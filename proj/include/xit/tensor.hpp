#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace xit {

// Dense row-major tensor of rank 1..3. Small on purpose: the training graphs
// only ever need vectors, matrices and (batch, channel, time) blocks.
template <typename S>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int64_t> shape, S fill = S(0))
        : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    const std::vector<int64_t>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }
    std::vector<S>& raw() { return data_; }
    const std::vector<S>& raw() const { return data_; }

    S& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    S operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    S& at(int64_t i) { return data_[static_cast<size_t>(i)]; }
    S& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    S& at(int64_t i, int64_t j, int64_t k) {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    S at(int64_t i) const { return data_[static_cast<size_t>(i)]; }
    S at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    S at(int64_t i, int64_t j, int64_t k) const {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }

    void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (S v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename T>
    Tensor<T> cast() const {
        Tensor<T> out(shape_);
        for (int64_t i = 0; i < size(); ++i) out[i] = static_cast<T>(data_[static_cast<size_t>(i)]);
        return out;
    }

    static std::string shape_str(const std::vector<int64_t>& s) {
        std::string out = "(";
        for (size_t i = 0; i < s.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(s[i]);
        }
        return out + ")";
    }

private:
    static size_t checked_size(const std::vector<int64_t>& shape) {
        if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d <= 0) throw std::invalid_argument("tensor: nonpositive dimension " + shape_str(shape));
            n *= d;
        }
        return static_cast<size_t>(n);
    }

    std::vector<int64_t> shape_;
    std::vector<S> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace xit
