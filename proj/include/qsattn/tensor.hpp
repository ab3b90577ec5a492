#ifndef QSATTN_TENSOR_HPP
#define QSATTN_TENSOR_HPP

#include <Eigen/Core>
#include <concepts>
#include <functional>
#include <memory>

#include "qsattn/common.hpp"

namespace qsattn {

namespace detail {
inline bool& grad_mode() {
  static thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// Disables recording of backward nodes for its scope.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <std::floating_point S>
struct TensorImpl {
  Shape shape;
  std::vector<S> data;
  std::vector<S> grad;  // empty until a backward pass touches this tensor
  bool requires_grad = false;

  std::vector<S>& grad_buf() {
    if (grad.empty()) grad.assign(data.size(), S(0));
    return grad;
  }
};

// Dense tensor handle with value semantics on the handle and shared storage
// underneath. Mutation happens only through recorded ops (and the optimizer,
// which owns its leaves between tapes).
template <std::floating_point S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() : impl_(std::make_shared<TensorImpl<S>>()) {}

  Tensor(Shape shape, std::vector<S> data) : impl_(std::make_shared<TensorImpl<S>>()) {
    if (shape_numel(shape) != static_cast<Index>(data.size()))
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match buffer of " +
                       std::to_string(data.size()) + " elements");
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
  }

  static Tensor zeros(Shape shape) {
    return Tensor(std::move(shape), std::vector<S>(static_cast<size_t>(shape_numel(shape)), S(0)));
  }

  static Tensor full(Shape shape, S value) {
    return Tensor(std::move(shape), std::vector<S>(static_cast<size_t>(shape_numel(shape)), value));
  }

  static Tensor scalar(S value) { return Tensor({1}, {value}); }

  static Tensor randn(Shape shape, Rng& rng, S mean = S(0), S stddev = S(1)) {
    std::vector<S> d(static_cast<size_t>(shape_numel(shape)));
    for (auto& v : d) v = static_cast<S>(rng.normal(mean, stddev));
    return Tensor(std::move(shape), std::move(d));
  }

  static Tensor rand_uniform(Shape shape, Rng& rng, S lo = S(0), S hi = S(1)) {
    std::vector<S> d(static_cast<size_t>(shape_numel(shape)));
    for (auto& v : d) v = static_cast<S>(rng.uniform(lo, hi));
    return Tensor(std::move(shape), std::move(d));
  }

  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  Index dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  Index numel() const { return static_cast<Index>(impl_->data.size()); }

  const std::vector<S>& data() const { return impl_->data; }
  std::vector<S>& mutable_data() { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<S>& grad() const { return impl_->grad; }
  std::vector<S>& grad_buf() { return impl_->grad_buf(); }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), S(0));
  }

  S item() const {
    if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not scalar");
    return impl_->data[0];
  }

  Tensor clone() const {
    Tensor out(impl_->shape, impl_->data);
    return out;
  }

  const std::shared_ptr<TensorImpl<S>>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<S>> impl_;
};

// Recorded list of backward closures in creation (topological) order. One
// tape owns one training step; backward replays the list in reverse.
template <std::floating_point S>
class Tape {
 public:
  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(active_ptr()) { active_ptr() = &t; }
    ~Scope() { active_ptr() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* active() { return active_ptr(); }

  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

  size_t size() const { return nodes_.size(); }

  void backward(const Tensor<S>& loss) {
    if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    auto& g = loss.impl()->grad_buf();
    g[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void clear() { nodes_.clear(); }

 private:
  static Tape*& active_ptr() {
    static thread_local Tape* a = nullptr;
    return a;
  }
  std::vector<std::function<void()>> nodes_;
};

namespace detail {

template <std::floating_point S>
inline bool recording() {
  return grad_mode() && Tape<S>::active() != nullptr;
}

template <std::floating_point S>
inline void mark_and_record(Tensor<S>& out, std::function<void()> fn) {
  out.set_requires_grad(true);
  Tape<S>::active()->record(std::move(fn));
}

template <std::floating_point S>
inline void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <std::floating_point S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <std::floating_point S>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <std::floating_point S, class Fwd, class Dfn>
Tensor<S> unary_op(const Tensor<S>& x, Fwd fwd, Dfn dfn) {
  const auto& xd = x.data();
  std::vector<S> yd(xd.size());
  for (size_t i = 0; i < xd.size(); ++i) yd[i] = fwd(xd[i]);
  Tensor<S> y(x.shape(), std::move(yd));
  if (detail::recording<S>() && x.requires_grad()) {
    detail::mark_and_record(y, [xi = x.impl(), yi = y.impl(), dfn] {
      if (yi->grad.empty()) return;
      auto& gx = xi->grad_buf();
      const auto& gy = yi->grad;
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * dfn(xi->data[i], yi->data[i]);
    });
  }
  return y;
}

template <std::floating_point S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<S> yd(a.data().size());
  for (size_t i = 0; i < yd.size(); ++i) yd[i] = a.data()[i] + b.data()[i];
  Tensor<S> y(a.shape(), std::move(yd));
  if (detail::recording<S>() && (a.requires_grad() || b.requires_grad())) {
    detail::mark_and_record(y, [ai = a.impl(), bi = b.impl(), yi = y.impl()] {
      if (yi->grad.empty()) return;
      const auto& gy = yi->grad;
      if (ai->requires_grad) {
        auto& ga = ai->grad_buf();
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
      }
      if (bi->requires_grad) {
        auto& gb = bi->grad_buf();
        for (size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i];
      }
    });
  }
  return y;
}

template <std::floating_point S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<S> yd(a.data().size());
  for (size_t i = 0; i < yd.size(); ++i) yd[i] = a.data()[i] - b.data()[i];
  Tensor<S> y(a.shape(), std::move(yd));
  if (detail::recording<S>() && (a.requires_grad() || b.requires_grad())) {
    detail::mark_and_record(y, [ai = a.impl(), bi = b.impl(), yi = y.impl()] {
      if (yi->grad.empty()) return;
      const auto& gy = yi->grad;
      if (ai->requires_grad) {
        auto& ga = ai->grad_buf();
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
      }
      if (bi->requires_grad) {
        auto& gb = bi->grad_buf();
        for (size_t i = 0; i < gb.size(); ++i) gb[i] -= gy[i];
      }
    });
  }
  return y;
}

template <std::floating_point S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<S> yd(a.data().size());
  for (size_t i = 0; i < yd.size(); ++i) yd[i] = a.data()[i] * b.data()[i];
  Tensor<S> y(a.shape(), std::move(yd));
  if (detail::recording<S>() && (a.requires_grad() || b.requires_grad())) {
    detail::mark_and_record(y, [ai = a.impl(), bi = b.impl(), yi = y.impl()] {
      if (yi->grad.empty()) return;
      const auto& gy = yi->grad;
      if (ai->requires_grad) {
        auto& ga = ai->grad_buf();
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        auto& gb = bi->grad_buf();
        for (size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * ai->data[i];
      }
    });
  }
  return y;
}

template <std::floating_point S>
Tensor<S> add_scalar(const Tensor<S>& x, S c) {
  return unary_op(
      x, [c](S v) { return v + c; }, [](S, S) { return S(1); });
}

template <std::floating_point S>
Tensor<S> mul_scalar(const Tensor<S>& x, S c) {
  return unary_op(
      x, [c](S v) { return v * c; }, [c](S, S) { return c; });
}

template <std::floating_point S>
Tensor<S> neg(const Tensor<S>& x) {
  return mul_scalar(x, S(-1));
}

template <std::floating_point S>
Tensor<S> exp(const Tensor<S>& x) {
  return unary_op(
      x, [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}

template <std::floating_point S>
Tensor<S> log(const Tensor<S>& x) {
  return unary_op(
      x, [](S v) { return std::log(v); }, [](S v, S) { return S(1) / v; });
}

template <std::floating_point S>
Tensor<S> tanh(const Tensor<S>& x) {
  return unary_op(
      x, [](S v) { return std::tanh(v); }, [](S, S y) { return S(1) - y * y; });
}

template <std::floating_point S>
Tensor<S> relu(const Tensor<S>& x) {
  return unary_op(
      x, [](S v) { return v > S(0) ? v : S(0); }, [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <std::floating_point S>
Tensor<S> leaky_relu(const Tensor<S>& x, S slope = S(0.2)) {
  return unary_op(
      x, [slope](S v) { return v > S(0) ? v : slope * v; },
      [slope](S v, S) { return v > S(0) ? S(1) : slope; });
}

template <std::floating_point S>
Tensor<S> softplus(const Tensor<S>& x) {
  auto fwd = [](S v) { return v > S(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); };
  auto dfn = [](S v, S) { return S(1) / (S(1) + std::exp(-v)); };
  return unary_op(x, fwd, dfn);
}

template <std::floating_point S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
  return add(a, b);
}
template <std::floating_point S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) {
  return sub(a, b);
}
template <std::floating_point S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) {
  return mul(a, b);
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

template <std::floating_point S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: expected 2-D operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const Index m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<S> y = Tensor<S>::zeros({m, n});
  {
    detail::ConstMatMap<S> A(a.data().data(), m, k), B(b.data().data(), k, n);
    detail::MatMap<S> Y(y.mutable_data().data(), m, n);
    Y.noalias() = A * B;
  }
  if (detail::recording<S>() && (a.requires_grad() || b.requires_grad())) {
    detail::mark_and_record(y, [ai = a.impl(), bi = b.impl(), yi = y.impl(), m, k, n] {
      if (yi->grad.empty()) return;
      detail::ConstMatMap<S> G(yi->grad.data(), m, n);
      if (ai->requires_grad) {
        detail::ConstMatMap<S> B(bi->data.data(), k, n);
        detail::MatMap<S> GA(ai->grad_buf().data(), m, k);
        GA.noalias() += G * B.transpose();
      }
      if (bi->requires_grad) {
        detail::ConstMatMap<S> A(ai->data.data(), m, k);
        detail::MatMap<S> GB(bi->grad_buf().data(), k, n);
        GB.noalias() += A.transpose() * G;
      }
    });
  }
  return y;
}

template <std::floating_point S>
Tensor<S> transpose(const Tensor<S>& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expected 2-D tensor, got " + shape_str(x.shape()));
  const Index r = x.dim(0), c = x.dim(1);
  std::vector<S> yd(static_cast<size_t>(r * c));
  const S* xd = x.data().data();
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) yd[static_cast<size_t>(j * r + i)] = xd[i * c + j];
  Tensor<S> y({c, r}, std::move(yd));
  if (detail::recording<S>() && x.requires_grad()) {
    detail::mark_and_record(y, [xi = x.impl(), yi = y.impl(), r, c] {
      if (yi->grad.empty()) return;
      auto& gx = xi->grad_buf();
      const auto& gy = yi->grad;
      for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) gx[static_cast<size_t>(i * c + j)] += gy[static_cast<size_t>(j * r + i)];
    });
  }
  return y;
}

template <std::floating_point S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor<S> y(std::move(shape), x.data());
  if (detail::recording<S>() && x.requires_grad()) {
    detail::mark_and_record(y, [xi = x.impl(), yi = y.impl()] {
      if (yi->grad.empty()) return;
      auto& gx = xi->grad_buf();
      const auto& gy = yi->grad;
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    });
  }
  return y;
}

// [C,H,W] -> [HW,C] row-major over spatial locations.
template <std::floating_point S>
Tensor<S> chw_to_rows(const Tensor<S>& x) {
  if (x.rank() != 3) throw ShapeError("chw_to_rows: expected [C,H,W], got " + shape_str(x.shape()));
  return transpose(reshape(x, {x.dim(0), x.dim(1) * x.dim(2)}));
}

// ---------------------------------------------------------------------------
// softmax / reductions
// ---------------------------------------------------------------------------

template <std::floating_point S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
  if (x.rank() != 2) throw ShapeError("softmax_rows: expected 2-D tensor, got " + shape_str(x.shape()));
  const Index r = x.dim(0), c = x.dim(1);
  const S* xd = x.data().data();
  for (Index i = 0; i < r * c; ++i)
    if (std::isnan(xd[i])) throw NumericError("softmax_rows: NaN input at flat index " + std::to_string(i));
  std::vector<S> yd(static_cast<size_t>(r * c));
  for (Index i = 0; i < r; ++i) {
    const S* row = xd + i * c;
    S* out = yd.data() + i * c;
    S mx = row[0];
    for (Index j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    S sum = S(0);
    for (Index j = 0; j < c; ++j) {
      out[j] = std::exp(row[j] - mx);
      sum += out[j];
    }
    for (Index j = 0; j < c; ++j) out[j] /= sum;
  }
  Tensor<S> y({r, c}, std::move(yd));
  if (detail::recording<S>() && x.requires_grad()) {
    detail::mark_and_record(y, [xi = x.impl(), yi = y.impl(), r, c] {
      if (yi->grad.empty()) return;
      auto& gx = xi->grad_buf();
      const auto& gy = yi->grad;
      const auto& yv = yi->data;
      for (Index i = 0; i < r; ++i) {
        S dot = S(0);
        for (Index j = 0; j < c; ++j) dot += gy[static_cast<size_t>(i * c + j)] * yv[static_cast<size_t>(i * c + j)];
        for (Index j = 0; j < c; ++j) {
          const size_t k = static_cast<size_t>(i * c + j);
          gx[k] += yv[k] * (gy[k] - dot);
        }
      }
    });
  }
  return y;
}

template <std::floating_point S>
Tensor<S> logsumexp_rows(const Tensor<S>& x) {
  if (x.rank() != 2) throw ShapeError("logsumexp_rows: expected 2-D tensor, got " + shape_str(x.shape()));
  const Index r = x.dim(0), c = x.dim(1);
  const S* xd = x.data().data();
  std::vector<S> yd(static_cast<size_t>(r));
  for (Index i = 0; i < r; ++i) {
    const S* row = xd + i * c;
    S mx = row[0];
    for (Index j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    S sum = S(0);
    for (Index j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    yd[static_cast<size_t>(i)] = mx + std::log(sum);
  }
  Tensor<S> y({r}, std::move(yd));
  if (detail::recording<S>() && x.requires_grad()) {
    detail::mark_and_record(y, [xi = x.impl(), yi = y.impl(), r, c] {
      if (yi->grad.empty()) return;
      auto& gx = xi->grad_buf();
      const auto& gy = yi->grad;
      for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) {
          const size_t k = static_cast<size_t>(i * c + j);
          gx[k] += gy[static_cast<size_t>(i)] * std::exp(xi->data[k] - yi->data[static_cast<size_t>(i)]);
        }
    });
  }
  return y;
}

template <std::floating_point S>
Tensor<S> sum(const Tensor<S>& x) {
  S total = S(0);
  for (S v : x.data()) total += v;
  Tensor<S> y = Tensor<S>::scalar(total);
  if (detail::recording<S>() && x.requires_grad()) {
    detail::mark_and_record(y, [xi = x.impl(), yi = y.impl()] {
      if (yi->grad.empty()) return;
      auto& gx = xi->grad_buf();
      const S g = yi->grad[0];
      for (auto& v : gx) v += g;
    });
  }
  return y;
}

template <std::floating_point S>
Tensor<S> mean(const Tensor<S>& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return mul_scalar(sum(x), S(1) / static_cast<S>(x.numel()));
}

template <std::floating_point S>
Tensor<S> sum_rows(const Tensor<S>& x) {
  if (x.rank() != 2) throw ShapeError("sum_rows: expected 2-D tensor, got " + shape_str(x.shape()));
  const Index r = x.dim(0), c = x.dim(1);
  std::vector<S> yd(static_cast<size_t>(r), S(0));
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) yd[static_cast<size_t>(i)] += x.data()[static_cast<size_t>(i * c + j)];
  Tensor<S> y({r}, std::move(yd));
  if (detail::recording<S>() && x.requires_grad()) {
    detail::mark_and_record(y, [xi = x.impl(), yi = y.impl(), r, c] {
      if (yi->grad.empty()) return;
      auto& gx = xi->grad_buf();
      for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) gx[static_cast<size_t>(i * c + j)] += yi->grad[static_cast<size_t>(i)];
    });
  }
  return y;
}

template <std::floating_point S>
Tensor<S> mean_rows(const Tensor<S>& x) {
  if (x.rank() != 2) throw ShapeError("mean_rows: expected 2-D tensor, got " + shape_str(x.shape()));
  return mul_scalar(sum_rows(x), S(1) / static_cast<S>(x.dim(1)));
}

// Row-wise max; ties resolve to the first (lowest column) maximum.
template <std::floating_point S>
Tensor<S> max_rows(const Tensor<S>& x) {
  if (x.rank() != 2) throw ShapeError("max_rows: expected 2-D tensor, got " + shape_str(x.shape()));
  const Index r = x.dim(0), c = x.dim(1);
  std::vector<S> yd(static_cast<size_t>(r));
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<size_t>(r));
  for (Index i = 0; i < r; ++i) {
    Index best = 0;
    for (Index j = 1; j < c; ++j)
      if (x.data()[static_cast<size_t>(i * c + j)] > x.data()[static_cast<size_t>(i * c + best)]) best = j;
    (*argmax)[static_cast<size_t>(i)] = best;
    yd[static_cast<size_t>(i)] = x.data()[static_cast<size_t>(i * c + best)];
  }
  Tensor<S> y({r}, std::move(yd));
  if (detail::recording<S>() && x.requires_grad()) {
    detail::mark_and_record(y, [xi = x.impl(), yi = y.impl(), argmax, c] {
      if (yi->grad.empty()) return;
      auto& gx = xi->grad_buf();
      for (size_t i = 0; i < argmax->size(); ++i)
        gx[static_cast<size_t>(static_cast<Index>(i) * c + (*argmax)[i])] += yi->grad[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// indexing / assembly
// ---------------------------------------------------------------------------

template <std::floating_point S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<Index>& indices) {
  if (x.rank() != 2) throw ShapeError("gather_rows: expected 2-D tensor, got " + shape_str(x.shape()));
  const Index r = x.dim(0), c = x.dim(1), n = static_cast<Index>(indices.size());
  for (Index i : indices)
    if (i < 0 || i >= r) throw ShapeError("gather_rows: index " + std::to_string(i) + " outside [0," + std::to_string(r) + ")");
  std::vector<S> yd(static_cast<size_t>(n * c));
  for (Index i = 0; i < n; ++i)
    std::copy_n(x.data().data() + indices[static_cast<size_t>(i)] * c, c, yd.data() + i * c);
  Tensor<S> y({n, c}, std::move(yd));
  if (detail::recording<S>() && x.requires_grad()) {
    detail::mark_and_record(y, [xi = x.impl(), yi = y.impl(), indices, c] {
      if (yi->grad.empty()) return;
      auto& gx = xi->grad_buf();
      for (size_t i = 0; i < indices.size(); ++i)
        for (Index j = 0; j < c; ++j)
          gx[static_cast<size_t>(indices[i] * c + j)] += yi->grad[i * static_cast<size_t>(c) + static_cast<size_t>(j)];
    });
  }
  return y;
}

template <std::floating_point S>
Tensor<S> concat_rows(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw ShapeError("concat_rows: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const Index ra = a.dim(0), rb = b.dim(0), c = a.dim(1);
  std::vector<S> yd;
  yd.reserve(static_cast<size_t>((ra + rb) * c));
  yd.insert(yd.end(), a.data().begin(), a.data().end());
  yd.insert(yd.end(), b.data().begin(), b.data().end());
  Tensor<S> y({ra + rb, c}, std::move(yd));
  if (detail::recording<S>() && (a.requires_grad() || b.requires_grad())) {
    detail::mark_and_record(y, [ai = a.impl(), bi = b.impl(), yi = y.impl(), ra, c] {
      if (yi->grad.empty()) return;
      const auto& gy = yi->grad;
      if (ai->requires_grad) {
        auto& ga = ai->grad_buf();
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
      }
      if (bi->requires_grad) {
        auto& gb = bi->grad_buf();
        const size_t off = static_cast<size_t>(ra * c);
        for (size_t i = 0; i < gb.size(); ++i) gb[i] += gy[off + i];
      }
    });
  }
  return y;
}

// x: [r,c], v: [c]; adds v to every row.
template <std::floating_point S>
Tensor<S> add_rowvec(const Tensor<S>& x, const Tensor<S>& v) {
  if (x.rank() != 2 || v.rank() != 1 || v.dim(0) != x.dim(1))
    throw ShapeError("add_rowvec: incompatible shapes " + shape_str(x.shape()) + " and " + shape_str(v.shape()));
  const Index r = x.dim(0), c = x.dim(1);
  std::vector<S> yd(static_cast<size_t>(r * c));
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j)
      yd[static_cast<size_t>(i * c + j)] = x.data()[static_cast<size_t>(i * c + j)] + v.data()[static_cast<size_t>(j)];
  Tensor<S> y({r, c}, std::move(yd));
  if (detail::recording<S>() && (x.requires_grad() || v.requires_grad())) {
    detail::mark_and_record(y, [xi = x.impl(), vi = v.impl(), yi = y.impl(), r, c] {
      if (yi->grad.empty()) return;
      const auto& gy = yi->grad;
      if (xi->requires_grad) {
        auto& gx = xi->grad_buf();
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
      }
      if (vi->requires_grad) {
        auto& gv = vi->grad_buf();
        for (Index i = 0; i < r; ++i)
          for (Index j = 0; j < c; ++j) gv[static_cast<size_t>(j)] += gy[static_cast<size_t>(i * c + j)];
      }
    });
  }
  return y;
}

template <std::floating_point S>
Tensor<S> diag(const Tensor<S>& x) {
  if (x.rank() != 2 || x.dim(0) != x.dim(1))
    throw ShapeError("diag: expected square matrix, got " + shape_str(x.shape()));
  const Index n = x.dim(0);
  std::vector<S> yd(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) yd[static_cast<size_t>(i)] = x.data()[static_cast<size_t>(i * n + i)];
  Tensor<S> y({n}, std::move(yd));
  if (detail::recording<S>() && x.requires_grad()) {
    detail::mark_and_record(y, [xi = x.impl(), yi = y.impl(), n] {
      if (yi->grad.empty()) return;
      auto& gx = xi->grad_buf();
      for (Index i = 0; i < n; ++i) gx[static_cast<size_t>(i * n + i)] += yi->grad[static_cast<size_t>(i)];
    });
  }
  return y;
}

// Shannon entropy per row with the 0*log(0) := 0 convention: non-finite log
// terms are masked out rather than propagated.
template <std::floating_point S>
Tensor<S> entropy_rows(const Tensor<S>& p) {
  if (p.rank() != 2) throw ShapeError("entropy_rows: expected 2-D tensor, got " + shape_str(p.shape()));
  const Index r = p.dim(0), c = p.dim(1);
  const S* pd = p.data().data();
  for (Index i = 0; i < r * c; ++i)
    if (pd[i] < S(-1e-12) || std::isnan(pd[i]))
      throw NumericError("entropy_rows: negative or NaN probability at flat index " + std::to_string(i));
  std::vector<S> yd(static_cast<size_t>(r), S(0));
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) {
      const S v = pd[i * c + j];
      if (v > S(0)) {
        const S lg = std::log(v);
        if (std::isfinite(lg)) yd[static_cast<size_t>(i)] -= v * lg;
      }
    }
  Tensor<S> y({r}, std::move(yd));
  if (detail::recording<S>() && p.requires_grad()) {
    detail::mark_and_record(y, [pi = p.impl(), yi = y.impl(), r, c] {
      if (yi->grad.empty()) return;
      auto& gp = pi->grad_buf();
      for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) {
          const S v = pi->data[static_cast<size_t>(i * c + j)];
          if (v > S(0)) gp[static_cast<size_t>(i * c + j)] += yi->grad[static_cast<size_t>(i)] * (-std::log(v) - S(1));
        }
    });
  }
  return y;
}

template <std::floating_point S>
Tensor<S> l2_normalize_rows(const Tensor<S>& x, S eps = S(1e-12)) {
  if (x.rank() != 2) throw ShapeError("l2_normalize_rows: expected 2-D tensor, got " + shape_str(x.shape()));
  const Index r = x.dim(0), c = x.dim(1);
  std::vector<S> yd(static_cast<size_t>(r * c));
  auto norms = std::make_shared<std::vector<S>>(static_cast<size_t>(r));
  for (Index i = 0; i < r; ++i) {
    S sq = S(0);
    for (Index j = 0; j < c; ++j) {
      const S v = x.data()[static_cast<size_t>(i * c + j)];
      sq += v * v;
    }
    const S nr = std::max(std::sqrt(sq), eps);
    (*norms)[static_cast<size_t>(i)] = nr;
    for (Index j = 0; j < c; ++j) yd[static_cast<size_t>(i * c + j)] = x.data()[static_cast<size_t>(i * c + j)] / nr;
  }
  Tensor<S> y({r, c}, std::move(yd));
  if (detail::recording<S>() && x.requires_grad()) {
    detail::mark_and_record(y, [xi = x.impl(), yi = y.impl(), norms, r, c, eps] {
      if (yi->grad.empty()) return;
      auto& gx = xi->grad_buf();
      const auto& gy = yi->grad;
      for (Index i = 0; i < r; ++i) {
        const S nr = (*norms)[static_cast<size_t>(i)];
        if (nr <= eps) {
          for (Index j = 0; j < c; ++j) gx[static_cast<size_t>(i * c + j)] += gy[static_cast<size_t>(i * c + j)] / eps;
          continue;
        }
        S dot = S(0);
        for (Index j = 0; j < c; ++j)
          dot += gy[static_cast<size_t>(i * c + j)] * xi->data[static_cast<size_t>(i * c + j)];
        for (Index j = 0; j < c; ++j) {
          const size_t k = static_cast<size_t>(i * c + j);
          gx[k] += gy[k] / nr - xi->data[k] * dot / (nr * nr * nr);
        }
      }
    });
  }
  return y;
}

// Stop-gradient: same values, fresh storage, no tape participation.
template <std::floating_point S>
Tensor<S> detach(const Tensor<S>& x) {
  return Tensor<S>(x.shape(), x.data());
}

}  // namespace qsattn

#endif  // QSATTN_TENSOR_HPP
