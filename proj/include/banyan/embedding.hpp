#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace banyan {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// K channels of U values each, stored channel-major: value (k, u) lives at
// k * U + u, which is also its index in the flattened D = U*K vector.
template <class T>
class ChannelEmbedding {
 public:
  ChannelEmbedding() = default;
  ChannelEmbedding(std::size_t channels, std::size_t width)
      : channels_(channels), width_(width), values_(channels * width, T(0)) {}
  ChannelEmbedding(std::size_t channels, std::size_t width, std::vector<T> values)
      : channels_(channels), width_(width), values_(std::move(values)) {
    if (values_.size() != channels * width) throw ShapeError("embedding value count does not match K*U");
  }

  std::size_t channels() const { return channels_; }
  std::size_t width() const { return width_; }
  std::size_t dim() const { return values_.size(); }

  T& at(std::size_t k, std::size_t u) { return values_[k * width_ + u]; }
  const T& at(std::size_t k, std::size_t u) const { return values_[k * width_ + u]; }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  std::span<T> flat() { return values_; }
  std::span<const T> flat() const { return values_; }
  std::span<const T> channel(std::size_t k) const { return flat().subspan(k * width_, width_); }

  bool same_shape(const ChannelEmbedding& other) const {
    return channels_ == other.channels_ && width_ == other.width_;
  }

  bool operator==(const ChannelEmbedding&) const = default;

 private:
  std::size_t channels_ = 0;
  std::size_t width_ = 0;
  std::vector<T> values_;
};

// Cosine over the flattened vectors. A zero-norm input has similarity 0.
template <class T>
T cosine(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("cosine: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * double(b[i]);
    na += double(a[i]) * double(a[i]);
    nb += double(b[i]) * double(b[i]);
  }
  if (na == 0.0 || nb == 0.0) return T(0);
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return static_cast<T>(c > 1.0 ? 1.0 : (c < -1.0 ? -1.0 : c));
}

template <class T>
T cosine(const ChannelEmbedding<T>& a, const ChannelEmbedding<T>& b) {
  return cosine<T>(a.flat(), b.flat());
}

}  // namespace banyan
