#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sglab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_volume(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
    std::string out;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += 'x';
        out += std::to_string(shape[i]);
    }
    return out.empty() ? std::string("scalar") : out;
}

/// Dense row-major tensor. Images use NHWC (batch, height, width, channel);
/// a single image is HWC.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{0})
        : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_volume(shape_))
            throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_string(shape_));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    // NHWC accessors.
    T& operator()(std::size_t n, std::size_t h, std::size_t w, std::size_t c) noexcept {
        return data_[((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
    }
    const T& operator()(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const noexcept {
        return data_[((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    Tensor reshaped(Shape shape) const {
        if (shape_volume(shape) != size())
            throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " +
                                        shape_string(shape));
        return Tensor(std::move(shape), data_);
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

/// Batch slice [n] of an NHWC tensor as an HWC tensor.
template <typename T>
Tensor<T> batch_item(const Tensor<T>& batch, std::size_t n) {
    Shape item(batch.shape().begin() + 1, batch.shape().end());
    const std::size_t stride = shape_volume(item);
    std::vector<T> data(batch.data() + n * stride, batch.data() + (n + 1) * stride);
    return Tensor<T>(std::move(item), std::move(data));
}

/// Stack equally shaped tensors along a new leading batch axis.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& items) {
    if (items.empty()) throw std::invalid_argument("stack of zero tensors");
    Shape shape = items.front().shape();
    shape.insert(shape.begin(), items.size());
    std::vector<T> data;
    data.reserve(shape_volume(shape));
    for (const auto& item : items) {
        if (item.shape() != items.front().shape())
            throw std::invalid_argument("stack: shape mismatch " + shape_string(item.shape()) + " vs " +
                                        shape_string(items.front().shape()));
        data.insert(data.end(), item.storage().begin(), item.storage().end());
    }
    return Tensor<T>(std::move(shape), std::move(data));
}

/// Concatenate two NHWC tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1) ||
        a.dim(2) != b.dim(2))
        throw std::invalid_argument("concat_channels: incompatible shapes " + shape_string(a.shape()) +
                                    " and " + shape_string(b.shape()));
    const std::size_t ca = a.dim(3), cb = b.dim(3), pixels = a.size() / ca;
    Tensor<T> out({a.dim(0), a.dim(1), a.dim(2), ca + cb});
    for (std::size_t p = 0; p < pixels; ++p) {
        std::copy_n(a.data() + p * ca, ca, out.data() + p * (ca + cb));
        std::copy_n(b.data() + p * cb, cb, out.data() + p * (ca + cb) + ca);
    }
    return out;
}

/// Concatenate two tensors along the leading (batch) axis.
template <typename T>
Tensor<T> concat_batch(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() == 0 || a.rank() != b.rank() || !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1))
        throw std::invalid_argument("concat_batch: incompatible shapes " + shape_string(a.shape()) + " and " +
                                    shape_string(b.shape()));
    Shape shape = a.shape();
    shape[0] += b.dim(0);
    std::vector<T> data(a.storage());
    data.insert(data.end(), b.storage().begin(), b.storage().end());
    return Tensor<T>(std::move(shape), std::move(data));
}

/// Rows [first, first + count) of the leading axis.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& x, std::size_t first, std::size_t count) {
    if (x.rank() == 0 || first + count > x.dim(0)) throw std::invalid_argument("slice_batch out of range");
    Shape shape = x.shape();
    shape[0] = count;
    const std::size_t stride = x.size() / x.dim(0);
    std::vector<T> data(x.data() + first * stride, x.data() + (first + count) * stride);
    return Tensor<T>(std::move(shape), std::move(data));
}

/// Channels [first, first + count) of an NHWC tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t first, std::size_t count) {
    const std::size_t c = x.dim(3);
    if (first + count > c) throw std::invalid_argument("slice_channels out of range");
    const std::size_t pixels = x.size() / c;
    Tensor<T> out({x.dim(0), x.dim(1), x.dim(2), count});
    for (std::size_t p = 0; p < pixels; ++p)
        std::copy_n(x.data() + p * c + first, count, out.data() + p * count);
    return out;
}

}  // namespace sglab
