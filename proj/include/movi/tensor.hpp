#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace movi {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

// Dense row-major tensor. Network activations use NCHW throughout.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape)
        : shape_(std::move(shape)), data_(numel_of(shape_), T(0)) {}
    Tensor(Shape shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<int64_t>(data_.size()) != numel_of(shape_))
            throw std::invalid_argument("tensor data size does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    bool defined() const { return !shape_.empty(); }
    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // NCHW element access.
    T& at4(int64_t n, int64_t c, int64_t y, int64_t x) {
        assert(rank() == 4);
        return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
    }
    const T& at4(int64_t n, int64_t c, int64_t y, int64_t x) const {
        assert(rank() == 4);
        return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
    }
    T& at3(int64_t c, int64_t y, int64_t x) {
        assert(rank() == 3);
        return data_[static_cast<size_t>((c * shape_[1] + y) * shape_[2] + x)];
    }
    const T& at3(int64_t c, int64_t y, int64_t x) const {
        assert(rank() == 3);
        return data_[static_cast<size_t>((c * shape_[1] + y) * shape_[2] + x)];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
        return out;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    void add_(const Tensor& o) {
        assert(same_shape(o));
        for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

}  // namespace movi
