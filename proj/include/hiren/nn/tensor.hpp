#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hiren/errors.hpp"

namespace hiren::nn {

// Dense row-major tensor with value semantics. Rank up to 4 in practice
// (images are NCHW, sequences are (rows, T, F)).
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(count(shape_)), T(0));
    }

    Tensor(std::vector<int> shape, T fill_value) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(count(shape_)), fill_value);
    }

    Tensor(std::vector<int> shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
        if (static_cast<int64_t>(data_.size()) != count(shape_))
            throw ShapeError("tensor data size does not match shape " + shape_string());
    }

    static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

    bool empty() const { return data_.empty(); }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    int rank() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }

    int dim(int i) const {
        if (i < 0 || i >= rank()) throw ShapeError("dim index out of range for " + shape_string());
        return shape_[static_cast<size_t>(i)];
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    T& at(int i) { return data_[static_cast<size_t>(i)]; }
    const T& at(int i) const { return data_[static_cast<size_t>(i)]; }

    T& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    const T& at(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }

    T& at(int i, int j, int k) {
        return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    const T& at(int i, int j, int k) const {
        return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }

    T& at(int i, int j, int k, int l) {
        return data_[((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    const T& at(int i, int j, int k, int l) const {
        return data_[((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(std::vector<int> new_shape) const {
        if (count(new_shape) != size())
            throw ShapeError("reshape from " + shape_string() + " changes element count");
        Tensor out = *this;
        out.shape_ = std::move(new_shape);
        return out;
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    std::string shape_string() const {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
        os << ")";
        return os.str();
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (int64_t i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
        return out;
    }

    static int64_t count(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) {
            if (d < 0) throw ShapeError("negative dimension in tensor shape");
            n *= d;
        }
        return n;
    }

private:
    std::vector<int> shape_;
    std::vector<T> data_;
};

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(where) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
}

}  // namespace hiren::nn
