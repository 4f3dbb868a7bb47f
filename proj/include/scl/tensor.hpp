#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace scl {

// Shapes are channels-last: {H,W,C} for feature maps, {T,H,W,C} for clips.
using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::int64_t shape_elems(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

// Dense row-major tensor. Rank 1..4, extents >= 1 for anything that flows
// through numeric kernels (a zero extent is representable so that e.g. an
// empty channel concat can be expressed; kernels reject empty inputs).
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;

  explicit Tensor(Shape s) : shape(std::move(s)) {
    check_shape();
    data.assign(static_cast<size_t>(shape_elems(shape)), T(0));
  }

  Tensor(Shape s, T fill) : shape(std::move(s)) {
    check_shape();
    data.assign(static_cast<size_t>(shape_elems(shape)), fill);
  }

  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    check_shape();
    if (static_cast<std::int64_t>(data.size()) != shape_elems(shape))
      throw std::invalid_argument("tensor: buffer length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
  }

  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

  int rank() const { return static_cast<int>(shape.size()); }
  int extent(int i) const { return shape[static_cast<size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  bool empty() const { return data.empty(); }

  T& operator[](std::int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data[static_cast<size_t>(i)]; }

  // rank-3 {H,W,C}
  T& at(int y, int x, int c) { return data[static_cast<size_t>((y * shape[1] + x) * shape[2] + c)]; }
  const T& at(int y, int x, int c) const {
    return data[static_cast<size_t>((y * shape[1] + x) * shape[2] + c)];
  }

  // rank-4 {T,H,W,C}
  T& at(int t, int y, int x, int c) {
    return data[static_cast<size_t>(((static_cast<std::int64_t>(t) * shape[1] + y) * shape[2] + x) *
                                        shape[3] +
                                    c)];
  }
  const T& at(int t, int y, int x, int c) const {
    return data[static_cast<size_t>(((static_cast<std::int64_t>(t) * shape[1] + y) * shape[2] + x) *
                                        shape[3] +
                                    c)];
  }

  // rank-2 {R,C}
  T& at2(int i, int j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
  const T& at2(int i, int j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

 private:
  void check_shape() const {
    if (shape.empty() || shape.size() > 4)
      throw std::invalid_argument("tensor: rank must be 1..4, got shape " + shape_str(shape));
    for (int e : shape)
      if (e < 0) throw std::invalid_argument("tensor: negative extent in shape " + shape_str(shape));
  }
};

template <typename T>
inline bool operator==(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape == b.shape && a.data == b.data;
}

template <typename T>
inline void require_rank(const Tensor<T>& t, int rank, const char* what) {
  if (t.rank() != rank)
    throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) +
                                " tensor, got shape " + shape_str(t.shape));
}

template <typename T>
inline void require_nonempty(const Tensor<T>& t, const char* what) {
  if (t.empty())
    throw std::invalid_argument(std::string(what) + ": empty tensor of shape " + shape_str(t.shape));
}

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                                shape_str(b.shape));
}

enum class Eltwise { add, sub, hadamard, abs };

template <typename T>
inline Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = a;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <typename T>
inline Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out = a;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

template <typename T>
inline Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "hadamard");
  Tensor<T> out = a;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

template <typename T>
inline Tensor<T> abs_of(const Tensor<T>& a) {
  Tensor<T> out = a;
  for (auto& v : out.data) v = std::abs(v);
  return out;
}

template <typename T>
inline Tensor<T> elementwise(Eltwise kind, const Tensor<T>& a, const Tensor<T>* b = nullptr) {
  switch (kind) {
    case Eltwise::add:
      if (!b) throw std::invalid_argument("elementwise add: missing second operand");
      return add(a, *b);
    case Eltwise::sub:
      if (!b) throw std::invalid_argument("elementwise sub: missing second operand");
      return sub(a, *b);
    case Eltwise::hadamard:
      if (!b) throw std::invalid_argument("elementwise hadamard: missing second operand");
      return hadamard(a, *b);
    case Eltwise::abs:
      return abs_of(a);
  }
  throw std::invalid_argument("elementwise: unknown kind");
}

template <typename T>
inline Tensor<T> scaled(const Tensor<T>& a, T s) {
  Tensor<T> out = a;
  for (auto& v : out.data) v *= s;
  return out;
}

// Concatenates two {H,W,C} maps along the channel axis. Either operand may
// have zero channels, in which case the other is returned unchanged.
template <typename T>
inline Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 3, "concat_channels");
  require_rank(b, 3, "concat_channels");
  if (a.extent(0) != b.extent(0) || a.extent(1) != b.extent(1))
    throw std::invalid_argument("concat_channels: spatial mismatch " + shape_str(a.shape) + " vs " +
                                shape_str(b.shape));
  const int h = a.extent(0), w = a.extent(1), ca = a.extent(2), cb = b.extent(2);
  Tensor<T> out({h, w, ca + cb});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ca; ++c) out.at(y, x, c) = a.at(y, x, c);
      for (int c = 0; c < cb; ++c) out.at(y, x, ca + c) = b.at(y, x, c);
    }
  return out;
}

template <typename T>
inline T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "max_abs_diff");
  T m = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Deterministic RNG with explicitly coded draw algorithms so that results are
// reproducible across standard library implementations.
struct Rng {
  std::mt19937_64 eng;

  explicit Rng(std::uint64_t seed) : eng(seed) {}

  double uniform() {  // [0,1)
    return static_cast<double>(eng() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {  // Box-Muller
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  std::uint64_t integer(std::uint64_t n) { return eng() % n; }

  bool bernoulli(double p) { return uniform() < p; }

  // splitmix64-style mixing for deriving independent per-item seeds
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b = 0x9e3779b97f4a7c15ull,
                           std::uint64_t c = 0xbf58476d1ce4e5b9ull) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1) + 0x94d049bb133111ebull * (c + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
};

}  // namespace scl
