// Dense vector/matrix primitives, the semi-diagonal transition matrix and its
// forward/backward kernels, deterministic RNG, and tensor initialization.
// Everything computes in 64-bit floats.

#ifndef GRNN_LINALG_HPP_
#define GRNN_LINALG_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace grnn {

using Vec = std::vector<double>;

namespace detail {

inline void format_into(std::ostringstream&) {}

template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& head, const Rest&... rest) {
  os << head;
  format_into(os, rest...);
}

}  // namespace detail

template <typename... Args>
std::string str_cat(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  return os.str();
}

/// Thrown when operand shapes disagree; the message names the offending
/// operand.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

inline void check_shape(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

inline void check_arg(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

// ---------------------------------------------------------------------------
// Deterministic randomness.
//
// All stochastic choices in the library flow through Rng so that a fixed seed
// yields bit-identical results on any platform. std::mt19937_64 output is
// pinned by the standard; the derived draws below avoid the
// implementation-defined std:: distributions.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return state_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(state_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi], inclusive.
  long uniform_int(long lo, long hi) {
    check_arg(lo <= hi, "uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<long>(state_() % span);
  }

  /// Fisher-Yates shuffle (std::shuffle is implementation-defined).
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j =
          static_cast<std::size_t>(uniform_int(0, static_cast<long>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 state_;
};

// ---------------------------------------------------------------------------
// Small vector helpers.
// ---------------------------------------------------------------------------

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(double alpha, const Vec& x, Vec& y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vec concat(const Vec& a, const Vec& b) {
  Vec out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

inline Vec concat(const Vec& a, const Vec& b, const Vec& c) {
  Vec out;
  out.reserve(a.size() + b.size() + c.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  out.insert(out.end(), c.begin(), c.end());
  return out;
}

inline bool all_finite(const Vec& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// DenseMatrix: row-major 2-D array of doubles.
// ---------------------------------------------------------------------------

class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), values_(rows * cols, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }

  double& at(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const {
    return values_[r * cols_ + c];
  }

  double* row(std::size_t r) { return values_.data() + r * cols_; }
  const double* row(std::size_t r) const { return values_.data() + r * cols_; }

  Vec& values() { return values_; }
  const Vec& values() const { return values_; }

  bool same_shape(const DenseMatrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vec values_;
};

/// y = M x + bias (bias optional).
inline Vec matvec(const DenseMatrix& m, const Vec& x, const Vec* bias = nullptr) {
  check_shape(x.size() == m.cols(), str_cat("matvec: x has length ", x.size(),
                                            ", matrix has ", m.cols(),
                                            " columns"));
  if (bias != nullptr) {
    check_shape(bias->size() == m.rows(),
                str_cat("matvec: bias has length ", bias->size(),
                        ", matrix has ", m.rows(), " rows"));
  }
  Vec y(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double* row = m.row(r);
    double s = bias != nullptr ? (*bias)[r] : 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) s += row[c] * x[c];
    y[r] = s;
  }
  return y;
}

/// dM += dy ⊗ x (outer-product accumulation for the backward pass).
inline void add_outer(DenseMatrix& dm, const Vec& dy, const Vec& x) {
  check_shape(dy.size() == dm.rows() && x.size() == dm.cols(),
              "add_outer: gradient shapes disagree with matrix");
  for (std::size_t r = 0; r < dm.rows(); ++r) {
    double* row = dm.row(r);
    const double g = dy[r];
    if (g == 0.0) continue;
    for (std::size_t c = 0; c < dm.cols(); ++c) row[c] += g * x[c];
  }
}

/// dx += Mᵀ dy.
inline void add_matvec_transpose(const DenseMatrix& m, const Vec& dy, Vec& dx) {
  check_shape(dy.size() == m.rows() && dx.size() == m.cols(),
              "add_matvec_transpose: shapes disagree with matrix");
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    const double* row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) dx[c] += g * row[c];
  }
}

// ---------------------------------------------------------------------------
// SemiDiagonalMatrix
//
// Transition matrix over a state split into L grounded dimensions g and Dc
// control dimensions c, applied to the concatenated [g, c, x]:
//   - the grounded-to-grounded block is diagonal (one scalar per label),
//   - grounded rows read [c, x] densely,
//   - control rows read [g, c, x] densely.
// Parameter count is L + L(Dc+De) + Dc(L+Dc+De): linear in L for fixed
// Dc, De.
// ---------------------------------------------------------------------------

struct SemiDiagonalMatrix {
  std::size_t num_labels = 0;   // L
  std::size_t control_dim = 0;  // Dc
  std::size_t input_dim = 0;    // De

  Vec diag;                    // length L
  DenseMatrix grounded_dense;  // L x (Dc + De), columns over [c, x]
  DenseMatrix control_dense;   // Dc x (L + Dc + De), columns over [g, c, x]

  SemiDiagonalMatrix() = default;
  SemiDiagonalMatrix(std::size_t labels, std::size_t control,
                     std::size_t input)
      : num_labels(labels),
        control_dim(control),
        input_dim(input),
        diag(labels, 0.0),
        grounded_dense(labels, control + input),
        control_dense(control, labels + control + input) {}

  std::size_t state_dim() const { return num_labels + control_dim; }

  std::size_t parameter_count() const {
    return num_labels + num_labels * (control_dim + input_dim) +
           control_dim * (num_labels + control_dim + input_dim);
  }

  bool same_dims(const SemiDiagonalMatrix& o) const {
    return num_labels == o.num_labels && control_dim == o.control_dim &&
           input_dim == o.input_dim;
  }
};

inline void check_semidiag_operands(const SemiDiagonalMatrix& m, const Vec& g,
                                    const Vec& c, const Vec& x) {
  check_shape(g.size() == m.num_labels,
              str_cat("semidiag: operand g has length ", g.size(),
                      ", expected ", m.num_labels));
  check_shape(c.size() == m.control_dim,
              str_cat("semidiag: operand c has length ", c.size(),
                      ", expected ", m.control_dim));
  check_shape(x.size() == m.input_dim,
              str_cat("semidiag: operand x has length ", x.size(),
                      ", expected ", m.input_dim));
}

/// out[l]   = diag[l] g[l] + grounded_dense[l]·[c,x] + bias[l]        (l < L)
/// out[L+j] = control_dense[j]·[g,c,x] + bias[L+j]
inline Vec semidiag_matvec(const SemiDiagonalMatrix& m, const Vec& g,
                           const Vec& c, const Vec& x, const Vec& bias) {
  check_semidiag_operands(m, g, c, x);
  check_shape(bias.size() == m.state_dim(),
              str_cat("semidiag: operand bias has length ", bias.size(),
                      ", expected ", m.state_dim()));
  const std::size_t L = m.num_labels;
  const std::size_t dc = m.control_dim;
  const std::size_t de = m.input_dim;
  Vec out(L + dc, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    const double* row = m.grounded_dense.row(l);
    double s = m.diag[l] * g[l] + bias[l];
    for (std::size_t k = 0; k < dc; ++k) s += row[k] * c[k];
    for (std::size_t k = 0; k < de; ++k) s += row[dc + k] * x[k];
    out[l] = s;
  }
  for (std::size_t j = 0; j < dc; ++j) {
    const double* row = m.control_dense.row(j);
    double s = bias[L + j];
    for (std::size_t k = 0; k < L; ++k) s += row[k] * g[k];
    for (std::size_t k = 0; k < dc; ++k) s += row[L + k] * c[k];
    for (std::size_t k = 0; k < de; ++k) s += row[L + dc + k] * x[k];
    out[L + j] = s;
  }
  return out;
}

/// Dense (L+Dc) x (L+Dc+De) expansion whose matvec on [g, c, x] (plus bias)
/// equals semidiag_matvec. Off-diagonal entries of the upper-left LxL block
/// are exactly zero. Used as the structural oracle in tests.
inline DenseMatrix dense_equivalent(const SemiDiagonalMatrix& m) {
  const std::size_t L = m.num_labels;
  const std::size_t dc = m.control_dim;
  const std::size_t de = m.input_dim;
  DenseMatrix out(L + dc, L + dc + de);
  for (std::size_t l = 0; l < L; ++l) {
    out.at(l, l) = m.diag[l];
    for (std::size_t k = 0; k < dc + de; ++k) {
      out.at(l, L + k) = m.grounded_dense.at(l, k);
    }
  }
  for (std::size_t j = 0; j < dc; ++j) {
    for (std::size_t k = 0; k < L + dc + de; ++k) {
      out.at(L + j, k) = m.control_dense.at(j, k);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// GradientTape: ordered record of vectors saved by a forward pass. Each op
// documents how many slots it appends; the matching backward reads them by
// base index.
// ---------------------------------------------------------------------------

class GradientTape {
 public:
  /// Appends a vector, returning its slot index.
  std::size_t save(Vec v) {
    slots_.push_back(std::move(v));
    return slots_.size() - 1;
  }

  const Vec& slot(std::size_t i) const {
    if (i >= slots_.size()) {
      throw std::out_of_range(str_cat("GradientTape: slot ", i, " of ",
                                      slots_.size()));
    }
    return slots_[i];
  }

  std::size_t size() const { return slots_.size(); }
  void clear() { slots_.clear(); }

 private:
  std::vector<Vec> slots_;
};

/// Parameter and input gradients of one semidiag_matvec application.
struct SemiDiagBackwardResult {
  SemiDiagonalMatrix param_grads;  // same dims as the forward matrix
  Vec bias_grad;                   // L + Dc
  Vec g_grad;                      // L
  Vec c_grad;                      // Dc
  Vec x_grad;                      // De
};

/// Accumulating reverse-mode kernel; callers own the gradient buffers so a
/// sequence of steps can add into shared accumulators.
inline void semidiag_backward_acc(const SemiDiagonalMatrix& m, const Vec& g,
                                  const Vec& c, const Vec& x,
                                  const Vec& upstream,
                                  SemiDiagonalMatrix& param_grads,
                                  Vec& bias_grad, Vec& g_grad, Vec& c_grad,
                                  Vec& x_grad) {
  check_semidiag_operands(m, g, c, x);
  check_shape(upstream.size() == m.state_dim(),
              str_cat("semidiag_backward: upstream has length ",
                      upstream.size(), ", expected ", m.state_dim()));
  check_shape(param_grads.same_dims(m),
              "semidiag_backward: gradient buffer dims disagree with matrix");
  const std::size_t L = m.num_labels;
  const std::size_t dc = m.control_dim;
  const std::size_t de = m.input_dim;
  for (std::size_t l = 0; l < L; ++l) {
    const double du = upstream[l];
    bias_grad[l] += du;
    if (du == 0.0) continue;
    param_grads.diag[l] += du * g[l];
    g_grad[l] += m.diag[l] * du;
    double* grow = param_grads.grounded_dense.row(l);
    const double* row = m.grounded_dense.row(l);
    for (std::size_t k = 0; k < dc; ++k) {
      grow[k] += du * c[k];
      c_grad[k] += row[k] * du;
    }
    for (std::size_t k = 0; k < de; ++k) {
      grow[dc + k] += du * x[k];
      x_grad[k] += row[dc + k] * du;
    }
  }
  for (std::size_t j = 0; j < dc; ++j) {
    const double du = upstream[L + j];
    bias_grad[L + j] += du;
    if (du == 0.0) continue;
    double* grow = param_grads.control_dense.row(j);
    const double* row = m.control_dense.row(j);
    for (std::size_t k = 0; k < L; ++k) {
      grow[k] += du * g[k];
      g_grad[k] += row[k] * du;
    }
    for (std::size_t k = 0; k < dc; ++k) {
      grow[L + k] += du * c[k];
      c_grad[k] += row[L + k] * du;
    }
    for (std::size_t k = 0; k < de; ++k) {
      grow[L + dc + k] += du * x[k];
      x_grad[k] += row[L + dc + k] * du;
    }
  }
}

/// Forward with tape: appends the slots [g, c, x] and returns the base index.
inline Vec semidiag_matvec(const SemiDiagonalMatrix& m, const Vec& g,
                           const Vec& c, const Vec& x, const Vec& bias,
                           GradientTape& tape, std::size_t& base) {
  Vec out = semidiag_matvec(m, g, c, x, bias);
  base = tape.save(g);
  tape.save(c);
  tape.save(x);
  return out;
}

/// Reverse-mode of semidiag_matvec from a tape produced by the forward call
/// above (slots base, base+1, base+2 hold g, c, x).
inline SemiDiagBackwardResult semidiag_backward(const SemiDiagonalMatrix& m,
                                                const GradientTape& tape,
                                                std::size_t base,
                                                const Vec& upstream) {
  SemiDiagBackwardResult out;
  out.param_grads =
      SemiDiagonalMatrix(m.num_labels, m.control_dim, m.input_dim);
  out.bias_grad.assign(m.state_dim(), 0.0);
  out.g_grad.assign(m.num_labels, 0.0);
  out.c_grad.assign(m.control_dim, 0.0);
  out.x_grad.assign(m.input_dim, 0.0);
  semidiag_backward_acc(m, tape.slot(base), tape.slot(base + 1),
                        tape.slot(base + 2), upstream, out.param_grads,
                        out.bias_grad, out.g_grad, out.c_grad, out.x_grad);
  return out;
}

inline SemiDiagBackwardResult semidiag_backward(const SemiDiagonalMatrix& m,
                                                const GradientTape& tape,
                                                const Vec& upstream) {
  return semidiag_backward(m, tape, 0, upstream);
}

// ---------------------------------------------------------------------------
// Tensor initialization.
// ---------------------------------------------------------------------------

enum class InitScheme { kUniformScaled, kZeros };

/// Draws into an existing buffer; order of draws is row-major.
inline void init_tensor_inplace(Vec& out,
                                const std::vector<std::size_t>& shape,
                                InitScheme scheme, Rng& rng) {
  check_arg(!shape.empty(), "init_tensor: shape must be nonempty");
  std::size_t total = 1;
  for (std::size_t d : shape) {
    check_arg(d > 0, "init_tensor: zero-sized dimension");
    total *= d;
  }
  out.assign(total, 0.0);
  if (scheme == InitScheme::kZeros) return;
  const std::size_t fan_in = shape.back();
  const std::size_t fan_out = shape.size() > 1 ? total / fan_in : 1;
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : out) v = rng.uniform(-s, s);
}

/// Deterministic for a fixed seed: same seed, same tensor, bit for bit.
/// uniform_scaled draws from U(-s, s) with s = sqrt(6 / (fan_in + fan_out)).
inline Vec init_tensor(const std::vector<std::size_t>& shape, InitScheme scheme,
                       std::uint64_t seed) {
  Rng rng(seed);
  Vec out;
  init_tensor_inplace(out, shape, scheme, rng);
  return out;
}

// ---------------------------------------------------------------------------
// parallel_for: runs fn(i) for i in [0, n) on up to `workers` threads.
// Output slots must be disjoint per index; with that discipline results are
// independent of the worker count.
// ---------------------------------------------------------------------------

inline std::size_t default_workers() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : hc;
}

inline void parallel_for(std::size_t n, std::size_t workers,
                         const std::function<void(std::size_t)>& fn) {
  if (workers == 0) workers = default_workers();
  workers = std::min(workers, n == 0 ? std::size_t{1} : n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

// FNV-1a, used wherever a stable content hash is needed (splits, vocab ids).
inline std::uint64_t fnv1a64_bytes(const void* data, std::size_t len,
                                   std::uint64_t seed = 14695981039346656037ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s,
                             std::uint64_t seed = 14695981039346656037ULL) {
  return fnv1a64_bytes(s.data(), s.size(), seed);
}

}  // namespace grnn

#endif  // GRNN_LINALG_HPP_
