#pragma once
// Minimal reverse-mode differentiation core: a tape of vector-valued nodes
// with hand-written adjoints for the primitives the objectives need (dense
// affine layers, pointwise activations, DFT/IDFT, complex arithmetic,
// reductions), plus parameter flattening, ADAM, and a finite-difference
// gradient check.
//
// Complex-valued nodes use a plane layout: a spectrum over N modes is one
// node of length 2N holding [re(0..N-1), im(0..N-1)].
//
// Batch reductions use a pairwise tree sum, which fixes the floating-point
// reduction order regardless of how per-sample terms were produced.

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "eivoplab/rng.hpp"
#include "eivoplab/spectral.hpp"

namespace eivoplab::diffcore {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(std::vector<double> value, bool requires_grad) {
    return alloc(std::move(value), requires_grad);
  }
  Var constant(std::vector<double> value) { return alloc(std::move(value), false); }
  Var constant(double v) { return alloc(std::vector<double>{v}, false); }

  const std::vector<double>& val(Var v) const { return nodes_[check(v)].value; }
  const std::vector<double>& adjoint(Var v) const { return nodes_[check(v)].adjoint; }
  std::vector<double>& adj(Var v) { return nodes_[check(v)].adjoint; }
  bool tracked(Var v) const { return nodes_[check(v)].track; }
  bool grad_enabled() const { return grad_enabled_; }

  /// Allocates a node; `track` is forced off when gradients are disabled.
  Var alloc(std::vector<double> value, bool track) {
    nodes_.push_back(Node{std::move(value), {}, track && grad_enabled_, nullptr});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  /// Attaches the reverse-pass closure of a freshly allocated node. The
  /// closure must add d(root)/d(node) contributions into the inputs' adj().
  void set_pull(Var v, std::function<void()> pull) {
    Node& n = nodes_[check(v)];
    if (n.track) n.pull = std::move(pull);
  }

  /// Seeds d(root)/d(root) = 1 and pulls adjoints in reverse order.
  void backward(Var root) {
    const int r = check(root);
    if (nodes_[r].value.size() != 1)
      throw std::invalid_argument("backward: root must be a scalar node");
    for (auto& n : nodes_) n.adjoint.assign(n.value.size(), 0.0);
    nodes_[r].adjoint[0] = 1.0;
    for (int i = r; i >= 0; --i)
      if (nodes_[i].track && nodes_[i].pull) nodes_[i].pull();
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<double> value;
    std::vector<double> adjoint;
    bool track = false;
    std::function<void()> pull;
  };

  int check(Var v) const {
    if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
      throw std::invalid_argument("Tape: variable from another tape or invalid");
    return v.id;
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

namespace detail {

inline Tape& same_tape(Var a) {
  if (!a.tape) throw std::invalid_argument("diffcore: variable without tape");
  return *a.tape;
}

inline Tape& same_tape(Var a, Var b) {
  Tape& t = same_tape(a);
  if (b.tape != &t) throw std::invalid_argument("diffcore: mixed tapes");
  return t;
}

inline double bval(const std::vector<double>& v, std::size_t i) {
  return v[v.size() == 1 ? 0 : i];
}

// Adds w into x.adj honoring scalar broadcast (a broadcast scalar collects
// the sum of all incoming adjoint components).
inline void accum(Tape& t, Var x, const std::vector<double>& w,
                  const std::function<double(std::size_t)>& contrib) {
  if (!t.tracked(x)) return;
  auto& a = t.adj(x);
  if (a.size() == 1 && w.size() > 1) {
    double s = 0;
    for (std::size_t i = 0; i < w.size(); ++i) s += contrib(i);
    a[0] += s;
  } else {
    for (std::size_t i = 0; i < w.size(); ++i) a[i] += contrib(i);
  }
}

}  // namespace detail

// ---- elementwise arithmetic (scalar broadcast on either side) ----

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const auto &va = t.val(a), &vb = t.val(b);
  const std::size_t n = std::max(va.size(), vb.size());
  if ((va.size() != n && va.size() != 1) || (vb.size() != n && vb.size() != 1))
    throw std::invalid_argument("add: size mismatch");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = detail::bval(va, i) + detail::bval(vb, i);
  Var v = t.alloc(std::move(out), t.tracked(a) || t.tracked(b));
  t.set_pull(v, [&t, a, b, v]() {
    const auto& w = t.adjoint(v);
    detail::accum(t, a, w, [&](std::size_t i) { return w[i]; });
    detail::accum(t, b, w, [&](std::size_t i) { return w[i]; });
  });
  return v;
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const auto &va = t.val(a), &vb = t.val(b);
  const std::size_t n = std::max(va.size(), vb.size());
  if ((va.size() != n && va.size() != 1) || (vb.size() != n && vb.size() != 1))
    throw std::invalid_argument("sub: size mismatch");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = detail::bval(va, i) - detail::bval(vb, i);
  Var v = t.alloc(std::move(out), t.tracked(a) || t.tracked(b));
  t.set_pull(v, [&t, a, b, v]() {
    const auto& w = t.adjoint(v);
    detail::accum(t, a, w, [&](std::size_t i) { return w[i]; });
    detail::accum(t, b, w, [&](std::size_t i) { return -w[i]; });
  });
  return v;
}

inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const auto &va = t.val(a), &vb = t.val(b);
  const std::size_t n = std::max(va.size(), vb.size());
  if ((va.size() != n && va.size() != 1) || (vb.size() != n && vb.size() != 1))
    throw std::invalid_argument("mul: size mismatch");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = detail::bval(va, i) * detail::bval(vb, i);
  Var v = t.alloc(std::move(out), t.tracked(a) || t.tracked(b));
  t.set_pull(v, [&t, a, b, v]() {
    const auto& w = t.adjoint(v);
    const auto &xa = t.val(a), &xb = t.val(b);
    detail::accum(t, a, w, [&](std::size_t i) { return w[i] * detail::bval(xb, i); });
    detail::accum(t, b, w, [&](std::size_t i) { return w[i] * detail::bval(xa, i); });
  });
  return v;
}

inline Var div(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const auto &va = t.val(a), &vb = t.val(b);
  const std::size_t n = std::max(va.size(), vb.size());
  if ((va.size() != n && va.size() != 1) || (vb.size() != n && vb.size() != 1))
    throw std::invalid_argument("div: size mismatch");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = detail::bval(va, i) / detail::bval(vb, i);
  Var v = t.alloc(std::move(out), t.tracked(a) || t.tracked(b));
  t.set_pull(v, [&t, a, b, v]() {
    const auto& w = t.adjoint(v);
    const auto &xa = t.val(a), &xb = t.val(b);
    detail::accum(t, a, w, [&](std::size_t i) { return w[i] / detail::bval(xb, i); });
    detail::accum(t, b, w, [&](std::size_t i) {
      const double d = detail::bval(xb, i);
      return -w[i] * detail::bval(xa, i) / (d * d);
    });
  });
  return v;
}

inline Var scale(Var a, double c) {
  Tape& t = detail::same_tape(a);
  std::vector<double> out = t.val(a);
  for (auto& x : out) x *= c;
  Var v = t.alloc(std::move(out), t.tracked(a));
  t.set_pull(v, [&t, a, v, c]() {
    const auto& w = t.adjoint(v);
    detail::accum(t, a, w, [&](std::size_t i) { return c * w[i]; });
  });
  return v;
}

inline Var add_const(Var a, double c) {
  Tape& t = detail::same_tape(a);
  std::vector<double> out = t.val(a);
  for (auto& x : out) x += c;
  Var v = t.alloc(std::move(out), t.tracked(a));
  t.set_pull(v, [&t, a, v]() {
    const auto& w = t.adjoint(v);
    detail::accum(t, a, w, [&](std::size_t i) { return w[i]; });
  });
  return v;
}

inline Var neg(Var a) { return scale(a, -1.0); }

// ---- pointwise nonlinearities ----

namespace detail {

template <class F, class D>
Var pointwise(Var a, F f, D df) {
  Tape& t = same_tape(a);
  const auto& va = t.val(a);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = f(va[i]);
  Var v = t.alloc(std::move(out), t.tracked(a));
  t.set_pull(v, [&t, a, v, df]() {
    const auto& w = t.adjoint(v);
    const auto& x = t.val(a);
    accum(t, a, w, [&](std::size_t i) { return w[i] * df(x[i]); });
  });
  return v;
}

}  // namespace detail

inline Var elu(Var a) {
  return detail::pointwise(
      a, [](double z) { return z > 0 ? z : std::expm1(z); },
      [](double z) { return z > 0 ? 1.0 : std::exp(z); });
}

inline Var tanh_act(Var a) {
  return detail::pointwise(
      a, [](double z) { return std::tanh(z); },
      [](double z) {
        const double th = std::tanh(z);
        return 1.0 - th * th;
      });
}

inline Var sigmoid(Var a) {
  const auto sg = [](double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                                               : std::exp(z) / (1.0 + std::exp(z)); };
  return detail::pointwise(a, sg, [sg](double z) {
    const double s = sg(z);
    return s * (1.0 - s);
  });
}

inline Var softplus(Var a) {
  return detail::pointwise(
      a, [](double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); },
      [](double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                                   : std::exp(z) / (1.0 + std::exp(z)); });
}

inline Var exp_act(Var a) {
  return detail::pointwise(a, [](double z) { return std::exp(z); },
                           [](double z) { return std::exp(z); });
}

inline Var log_act(Var a) {
  return detail::pointwise(a, [](double z) { return std::log(z); },
                           [](double z) { return 1.0 / z; });
}

inline Var square(Var a) {
  return detail::pointwise(a, [](double z) { return z * z; },
                           [](double z) { return 2.0 * z; });
}

inline Var erfc_act(Var a) {
  return detail::pointwise(
      a, [](double z) { return std::erfc(z); },
      [](double z) { return -2.0 / std::sqrt(std::numbers::pi) * std::exp(-z * z); });
}

// ---- reductions ----

inline Var sum(Var a) {
  Tape& t = detail::same_tape(a);
  const auto& va = t.val(a);
  double s = 0;
  for (double x : va) s += x;
  Var v = t.alloc({s}, t.tracked(a));
  t.set_pull(v, [&t, a, v]() {
    const double w = t.adjoint(v)[0];
    auto& adj = t.adj(a);
    for (auto& x : adj) x += w;
  });
  return v;
}

inline Var sumsq(Var a) {
  Tape& t = detail::same_tape(a);
  const auto& va = t.val(a);
  double s = 0;
  for (double x : va) s += x * x;
  Var v = t.alloc({s}, t.tracked(a));
  t.set_pull(v, [&t, a, v]() {
    const double w = t.adjoint(v)[0];
    const auto& x = t.val(a);
    auto& adj = t.adj(a);
    for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += 2.0 * x[i] * w;
  });
  return v;
}

/// Deterministic pairwise sum of scalar terms; fixes the reduction order.
inline Var tree_sum(std::vector<Var> terms) {
  if (terms.empty()) throw std::invalid_argument("tree_sum: empty term list");
  while (terms.size() > 1) {
    std::vector<Var> next;
    next.reserve(terms.size() / 2 + 1);
    for (std::size_t i = 0; i + 1 < terms.size(); i += 2)
      next.push_back(add(terms[i], terms[i + 1]));
    if (terms.size() % 2 == 1) next.push_back(terms.back());
    terms = std::move(next);
  }
  return terms[0];
}

// ---- dense layers ----

/// Batched affine map: x is (batch x in) row-major, W is (out x in), b is
/// (out). Returns (batch x out).
inline Var affine(Var x, Var W, Var b, int batch, int in, int out) {
  Tape& t = detail::same_tape(x, W);
  if (b.tape != &t) throw std::invalid_argument("affine: mixed tapes");
  const auto &vx = t.val(x), &vW = t.val(W), &vb = t.val(b);
  if (vx.size() != static_cast<std::size_t>(batch) * in ||
      vW.size() != static_cast<std::size_t>(out) * in ||
      vb.size() != static_cast<std::size_t>(out))
    throw std::invalid_argument("affine: shape mismatch");
  std::vector<double> y(static_cast<std::size_t>(batch) * out);
  for (int s = 0; s < batch; ++s)
    for (int o = 0; o < out; ++o) {
      double acc = vb[o];
      const double* xr = vx.data() + static_cast<std::size_t>(s) * in;
      const double* wr = vW.data() + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) acc += xr[i] * wr[i];
      y[static_cast<std::size_t>(s) * out + o] = acc;
    }
  Var v = t.alloc(std::move(y), t.tracked(x) || t.tracked(W) || t.tracked(b));
  t.set_pull(v, [&t, x, W, b, v, batch, in, out]() {
    const auto& w = t.adjoint(v);
    const auto &vx = t.val(x), &vW = t.val(W);
    if (t.tracked(x)) {
      auto& ax = t.adj(x);
      for (int s = 0; s < batch; ++s)
        for (int o = 0; o < out; ++o) {
          const double g = w[static_cast<std::size_t>(s) * out + o];
          const double* wr = vW.data() + static_cast<std::size_t>(o) * in;
          double* ar = ax.data() + static_cast<std::size_t>(s) * in;
          for (int i = 0; i < in; ++i) ar[i] += g * wr[i];
        }
    }
    if (t.tracked(W)) {
      auto& aW = t.adj(W);
      for (int s = 0; s < batch; ++s)
        for (int o = 0; o < out; ++o) {
          const double g = w[static_cast<std::size_t>(s) * out + o];
          const double* xr = vx.data() + static_cast<std::size_t>(s) * in;
          double* wr = aW.data() + static_cast<std::size_t>(o) * in;
          for (int i = 0; i < in; ++i) wr[i] += g * xr[i];
        }
    }
    if (t.tracked(b)) {
      auto& ab = t.adj(b);
      for (int s = 0; s < batch; ++s)
        for (int o = 0; o < out; ++o) ab[o] += w[static_cast<std::size_t>(s) * out + o];
    }
  });
  return v;
}

/// C = A * T^T where A is (rows x p) and T is (cols x p); C is (rows x cols).
inline Var matmul_nt(Var A, Var T, int rows, int cols, int p) {
  Tape& t = detail::same_tape(A, T);
  const auto &va = t.val(A), &vt = t.val(T);
  if (va.size() != static_cast<std::size_t>(rows) * p ||
      vt.size() != static_cast<std::size_t>(cols) * p)
    throw std::invalid_argument("matmul_nt: shape mismatch");
  std::vector<double> c(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < cols; ++j) {
      double acc = 0;
      const double* ar = va.data() + static_cast<std::size_t>(r) * p;
      const double* tr = vt.data() + static_cast<std::size_t>(j) * p;
      for (int k = 0; k < p; ++k) acc += ar[k] * tr[k];
      c[static_cast<std::size_t>(r) * cols + j] = acc;
    }
  Var v = t.alloc(std::move(c), t.tracked(A) || t.tracked(T));
  t.set_pull(v, [&t, A, T, v, rows, cols, p]() {
    const auto& w = t.adjoint(v);
    const auto &va = t.val(A), &vt = t.val(T);
    if (t.tracked(A)) {
      auto& aa = t.adj(A);
      for (int r = 0; r < rows; ++r)
        for (int j = 0; j < cols; ++j) {
          const double g = w[static_cast<std::size_t>(r) * cols + j];
          const double* tr = vt.data() + static_cast<std::size_t>(j) * p;
          double* ar = aa.data() + static_cast<std::size_t>(r) * p;
          for (int k = 0; k < p; ++k) ar[k] += g * tr[k];
        }
    }
    if (t.tracked(T)) {
      auto& at = t.adj(T);
      for (int r = 0; r < rows; ++r)
        for (int j = 0; j < cols; ++j) {
          const double g = w[static_cast<std::size_t>(r) * cols + j];
          const double* ar = va.data() + static_cast<std::size_t>(r) * p;
          double* tr = at.data() + static_cast<std::size_t>(j) * p;
          for (int k = 0; k < p; ++k) tr[k] += g * ar[k];
        }
    }
  });
  return v;
}

// ---- spectral primitives (complex plane layout [re..., im...]) ----

/// Unnormalized forward DFT of a real node; result has 2N plane layout.
inline Var dft_real(Var u, int n0, int n1) {
  Tape& t = detail::same_tape(u);
  const auto& vu = t.val(u);
  const std::size_t n = static_cast<std::size_t>(n0) * std::max(n1, 1);
  if (vu.size() != n) throw std::invalid_argument("dft_real: shape mismatch");
  std::vector<std::complex<double>> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = {vu[i], 0.0};
  spectral::detail::fft_exec(buf.data(), n0, std::max(n1, 1), -1);
  std::vector<double> planes(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    planes[i] = buf[i].real();
    planes[n + i] = buf[i].imag();
  }
  Var v = t.alloc(std::move(planes), t.tracked(u));
  t.set_pull(v, [&t, u, v, n0, n1, n]() {
    const auto& w = t.adjoint(v);
    // Adjoint of c = F u for real u: u.adj += Re(F^H applied plane-wise)
    // = Re(unnormalized backward FFT of (wr + i wi)).
    std::vector<std::complex<double>> buf(n);
    for (std::size_t i = 0; i < n; ++i) buf[i] = {w[i], w[n + i]};
    spectral::detail::fft_exec(buf.data(), n0, std::max(n1, 1), +1);
    auto& au = t.adj(u);
    for (std::size_t i = 0; i < n; ++i) au[i] += buf[i].real();
  });
  return v;
}

/// Normalized (1/N) inverse DFT of a plane-layout node; returns the real
/// part. Inputs are expected Hermitian so the imaginary part is residue.
inline Var idft_real(Var c, int n0, int n1) {
  Tape& t = detail::same_tape(c);
  const auto& vc = t.val(c);
  const std::size_t n = static_cast<std::size_t>(n0) * std::max(n1, 1);
  if (vc.size() != 2 * n) throw std::invalid_argument("idft_real: shape mismatch");
  std::vector<std::complex<double>> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = {vc[i], vc[n + i]};
  spectral::detail::fft_exec(buf.data(), n0, std::max(n1, 1), +1);
  const double s = 1.0 / static_cast<double>(n);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = buf[i].real() * s;
  Var v = t.alloc(std::move(out), t.tracked(c));
  t.set_pull(v, [&t, c, v, n0, n1, n, s]() {
    const auto& w = t.adjoint(v);
    // y = (1/N)(Re(F)cr + Im(F)ci) with symmetric Re(F), Im(F):
    // (cr.adj, ci.adj) += (1/N) * planes(forward FFT of real w).
    std::vector<std::complex<double>> buf(n);
    for (std::size_t i = 0; i < n; ++i) buf[i] = {w[i], 0.0};
    spectral::detail::fft_exec(buf.data(), n0, std::max(n1, 1), -1);
    auto& ac = t.adj(c);
    for (std::size_t i = 0; i < n; ++i) {
      ac[i] += buf[i].real() * s;
      ac[n + i] += buf[i].imag() * s;
    }
  });
  return v;
}

/// Elementwise complex multiply of two plane-layout nodes.
inline Var cmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const auto &va = t.val(a), &vb = t.val(b);
  if (va.size() != vb.size() || va.size() % 2 != 0)
    throw std::invalid_argument("cmul: shape mismatch");
  const std::size_t n = va.size() / 2;
  std::vector<double> out(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = va[i] * vb[i] - va[n + i] * vb[n + i];
    out[n + i] = va[i] * vb[n + i] + va[n + i] * vb[i];
  }
  Var v = t.alloc(std::move(out), t.tracked(a) || t.tracked(b));
  t.set_pull(v, [&t, a, b, v, n]() {
    const auto& w = t.adjoint(v);
    const auto &va = t.val(a), &vb = t.val(b);
    if (t.tracked(a)) {
      auto& aa = t.adj(a);
      for (std::size_t i = 0; i < n; ++i) {
        aa[i] += w[i] * vb[i] + w[n + i] * vb[n + i];
        aa[n + i] += -w[i] * vb[n + i] + w[n + i] * vb[i];
      }
    }
    if (t.tracked(b)) {
      auto& ab = t.adj(b);
      for (std::size_t i = 0; i < n; ++i) {
        ab[i] += w[i] * va[i] + w[n + i] * va[n + i];
        ab[n + i] += -w[i] * va[n + i] + w[n + i] * va[i];
      }
    }
  });
  return v;
}

/// Scales a plane-layout spectrum by a real per-mode gain vector.
inline Var cscale_real(Var gain, Var c) {
  Tape& t = detail::same_tape(gain, c);
  const auto &vg = t.val(gain), &vc = t.val(c);
  if (vc.size() != 2 * vg.size()) throw std::invalid_argument("cscale_real: shape mismatch");
  const std::size_t n = vg.size();
  std::vector<double> out(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = vg[i] * vc[i];
    out[n + i] = vg[i] * vc[n + i];
  }
  Var v = t.alloc(std::move(out), t.tracked(gain) || t.tracked(c));
  t.set_pull(v, [&t, gain, c, v, n]() {
    const auto& w = t.adjoint(v);
    const auto &vg = t.val(gain), &vc = t.val(c);
    if (t.tracked(gain)) {
      auto& ag = t.adj(gain);
      for (std::size_t i = 0; i < n; ++i)
        ag[i] += w[i] * vc[i] + w[n + i] * vc[n + i];
    }
    if (t.tracked(c)) {
      auto& ac = t.adj(c);
      for (std::size_t i = 0; i < n; ++i) {
        ac[i] += vg[i] * w[i];
        ac[n + i] += vg[i] * w[n + i];
      }
    }
  });
  return v;
}

/// Hermitian symmetrization s(j) <- (s(j) + conj(s(-j)))/2 of a plane-layout
/// spectrum; neg[j] maps each mode index to the index of its negated
/// wavenumber. Self-adjoint, so the pull applies the same map to adjoints.
inline Var hermit_sym(Var s, const std::vector<int>& neg) {
  Tape& t = detail::same_tape(s);
  const auto& vs = t.val(s);
  const std::size_t n = neg.size();
  if (vs.size() != 2 * n) throw std::invalid_argument("hermit_sym: shape mismatch");
  std::vector<double> out(2 * n);
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = 0.5 * (vs[j] + vs[neg[j]]);
    out[n + j] = 0.5 * (vs[n + j] - vs[n + neg[j]]);
  }
  Var v = t.alloc(std::move(out), t.tracked(s));
  t.set_pull(v, [&t, s, v, neg, n]() {  // neg copied: caller's vector may die
    const auto& w = t.adjoint(v);
    auto& as = t.adj(s);
    for (std::size_t j = 0; j < n; ++j) {
      as[j] += 0.5 * (w[j] + w[neg[j]]);
      as[n + j] += 0.5 * (w[n + j] - w[n + neg[j]]);
    }
  });
  return v;
}

/// Converts row-major (N x 2) pairs [re0, im0, re1, im1, ...] to plane
/// layout [re..., im...]. Pure permutation.
inline Var deinterleave2(Var a) {
  Tape& t = detail::same_tape(a);
  const auto& va = t.val(a);
  if (va.size() % 2 != 0) throw std::invalid_argument("deinterleave2: odd size");
  const std::size_t n = va.size() / 2;
  std::vector<double> out(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = va[2 * i];
    out[n + i] = va[2 * i + 1];
  }
  Var v = t.alloc(std::move(out), t.tracked(a));
  t.set_pull(v, [&t, a, v, n]() {
    const auto& w = t.adjoint(v);
    auto& aa = t.adj(a);
    for (std::size_t i = 0; i < n; ++i) {
      aa[2 * i] += w[i];
      aa[2 * i + 1] += w[n + i];
    }
  });
  return v;
}

// ---- parameter flattening ----

struct ParamVector {
  struct Segment {
    std::string name;
    std::size_t offset = 0;
    std::size_t len = 0;
  };

  std::vector<double> values;
  std::vector<Segment> segments;

  std::size_t size() const { return values.size(); }

  void add_segment(const std::string& name, std::size_t len, double fill = 0.0) {
    for (const auto& s : segments)
      if (s.name == name) throw std::invalid_argument("ParamVector: duplicate segment " + name);
    segments.push_back({name, values.size(), len});
    values.resize(values.size() + len, fill);
  }

  const Segment& segment(const std::string& name) const {
    for (const auto& s : segments)
      if (s.name == name) return s;
    throw std::invalid_argument("ParamVector: unknown segment " + name);
  }

  bool has_segment(const std::string& name) const noexcept {
    for (const auto& s : segments)
      if (s.name == name) return true;
    return false;
  }

  std::span<double> view(const std::string& name) {
    const Segment& s = segment(name);
    return {values.data() + s.offset, s.len};
  }
  std::span<const double> view(const std::string& name) const {
    const Segment& s = segment(name);
    return {values.data() + s.offset, s.len};
  }
};

/// One tape leaf per segment; gradients are collected back into flat order.
struct ParamBinding {
  Tape* tape = nullptr;
  const ParamVector* params = nullptr;
  std::vector<Var> vars;  // parallel to params->segments

  Var at(const std::string& name) const {
    for (std::size_t i = 0; i < params->segments.size(); ++i)
      if (params->segments[i].name == name) return vars[i];
    throw std::invalid_argument("ParamBinding: unknown segment " + name);
  }
};

inline ParamBinding bind(Tape& t, const ParamVector& p, bool requires_grad = true) {
  ParamBinding b{&t, &p, {}};
  b.vars.reserve(p.segments.size());
  for (const auto& s : p.segments) {
    std::vector<double> v(p.values.begin() + s.offset, p.values.begin() + s.offset + s.len);
    b.vars.push_back(t.leaf(std::move(v), requires_grad));
  }
  return b;
}

inline std::vector<double> collect_gradient(const Tape& t, const ParamBinding& b) {
  std::vector<double> g(b.params->size(), 0.0);
  for (std::size_t i = 0; i < b.vars.size(); ++i) {
    const auto& seg = b.params->segments[i];
    const auto& adj = t.adjoint(b.vars[i]);
    if (adj.size() != seg.len) continue;  // backward not run or segment untracked
    for (std::size_t k = 0; k < seg.len; ++k) g[seg.offset + k] = adj[k];
  }
  return g;
}

// ---- dense networks ----

enum class Act { elu, tanh };

struct MlpSpec {
  int in_dim = 1;
  int out_dim = 1;
  int width = 5;
  int depth = 5;  // hidden layer count; 0 means a single affine map
  Act act = Act::elu;
};

namespace detail {

inline void mlp_layer_dims(const MlpSpec& s, int layer, int& in, int& out) {
  in = (layer == 0) ? s.in_dim : s.width;
  out = (layer == s.depth) ? s.out_dim : s.width;
}

}  // namespace detail

/// Declares weight/bias segments "<prefix>.W<l>" / "<prefix>.b<l>".
inline void declare_mlp(ParamVector& p, const std::string& prefix, const MlpSpec& s) {
  if (s.in_dim < 1 || s.out_dim < 1 || s.width < 1 || s.depth < 0)
    throw std::invalid_argument("declare_mlp: bad spec");
  for (int l = 0; l <= s.depth; ++l) {
    int in, out;
    detail::mlp_layer_dims(s, l, in, out);
    p.add_segment(prefix + ".W" + std::to_string(l),
                  static_cast<std::size_t>(in) * out);
    p.add_segment(prefix + ".b" + std::to_string(l), static_cast<std::size_t>(out));
  }
}

/// Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.
inline void init_mlp(ParamVector& p, const std::string& prefix, const MlpSpec& s,
                     rng::Rng& r) {
  for (int l = 0; l <= s.depth; ++l) {
    int in, out;
    detail::mlp_layer_dims(s, l, in, out);
    const double bound = std::sqrt(6.0 / (in + out));
    auto W = p.view(prefix + ".W" + std::to_string(l));
    for (auto& w : W) w = r.uniform(-bound, bound);
    auto b = p.view(prefix + ".b" + std::to_string(l));
    for (auto& x : b) x = 0.0;
  }
}

/// Tape-free forward pass for a single input vector.
inline std::vector<double> mlp_forward(const MlpSpec& s, const ParamVector& p,
                                       const std::string& prefix,
                                       const std::vector<double>& x) {
  if (static_cast<int>(x.size()) != s.in_dim)
    throw std::invalid_argument("mlp_forward: input size mismatch");
  std::vector<double> cur = x;
  for (int l = 0; l <= s.depth; ++l) {
    int in, out;
    detail::mlp_layer_dims(s, l, in, out);
    auto W = p.view(prefix + ".W" + std::to_string(l));
    auto b = p.view(prefix + ".b" + std::to_string(l));
    std::vector<double> next(out);
    for (int o = 0; o < out; ++o) {
      double acc = b[o];
      for (int i = 0; i < in; ++i) acc += W[static_cast<std::size_t>(o) * in + i] * cur[i];
      next[o] = acc;
    }
    if (l < s.depth)
      for (auto& z : next)
        z = (s.act == Act::elu) ? (z > 0 ? z : std::expm1(z)) : std::tanh(z);
    cur = std::move(next);
  }
  return cur;
}

/// Batched on-tape forward pass; x is (batch x in_dim) row-major.
inline Var mlp_apply(const MlpSpec& s, const ParamBinding& b, const std::string& prefix,
                     Var x, int batch) {
  Var cur = x;
  for (int l = 0; l <= s.depth; ++l) {
    int in, out;
    detail::mlp_layer_dims(s, l, in, out);
    cur = affine(cur, b.at(prefix + ".W" + std::to_string(l)),
                 b.at(prefix + ".b" + std::to_string(l)), batch, in, out);
    if (l < s.depth) cur = (s.act == Act::elu) ? elu(cur) : tanh_act(cur);
  }
  return cur;
}

// ---- objectives, gradients, optimization ----

using Objective = std::function<Var(Tape&, const ParamBinding&)>;

inline double eval_objective(const Objective& f, const ParamVector& p) {
  Tape t(false);
  ParamBinding b = bind(t, p, false);
  Var r = f(t, b);
  if (t.val(r).size() != 1) throw std::invalid_argument("eval_objective: non-scalar objective");
  return t.val(r)[0];
}

struct GradResult {
  double value = 0;
  std::vector<double> gradient;
};

inline GradResult grad(const Objective& f, const ParamVector& p) {
  Tape t;
  ParamBinding b = bind(t, p, true);
  Var r = f(t, b);
  t.backward(r);
  return {t.val(r)[0], collect_gradient(t, b)};
}

struct AdamState {
  std::int64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;  // first moments, sized on first use
  std::vector<double> v;  // second moments

  explicit AdamState(double learning_rate = 1e-3) : lr(learning_rate) {}
};

inline void adam_step(AdamState& st, ParamVector& p, const std::vector<double>& g) {
  if (g.size() != p.size()) throw std::invalid_argument("adam_step: gradient size mismatch");
  if (st.m.empty()) {
    st.m.assign(p.size(), 0.0);
    st.v.assign(p.size(), 0.0);
  }
  if (st.m.size() != p.size()) throw std::invalid_argument("adam_step: state size mismatch");
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g[i] * g[i];
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    p.values[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
  }
}

/// Compares grad() against central finite differences. Small parameter
/// vectors are probed per coordinate; large ones along random unit
/// directions. Returns the max relative error.
inline double finite_diff_check(const Objective& f, const ParamVector& p, double h,
                                std::uint64_t probe_seed = 0x5eed) {
  if (!(h > 0)) throw std::invalid_argument("finite_diff_check: h must be > 0");
  const GradResult gr = grad(f, p);
  double gmax = 1e-12;
  for (double g : gr.gradient) gmax = std::max(gmax, std::abs(g));

  const auto directional = [&](const std::vector<double>& dir) {
    ParamVector q = p;
    for (std::size_t i = 0; i < q.size(); ++i) q.values[i] = p.values[i] + h * dir[i];
    const double fp = eval_objective(f, q);
    for (std::size_t i = 0; i < q.size(); ++i) q.values[i] = p.values[i] - h * dir[i];
    const double fm = eval_objective(f, q);
    return (fp - fm) / (2.0 * h);
  };

  double worst = 0;
  const auto compare = [&](double fd, double gd) {
    const double denom = std::max({std::abs(fd), std::abs(gd), 1e-6 * gmax, 1e-12});
    worst = std::max(worst, std::abs(fd - gd) / denom);
  };

  if (p.size() <= 64) {
    std::vector<double> dir(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
      dir[i] = 1.0;
      compare(directional(dir), gr.gradient[i]);
      dir[i] = 0.0;
    }
  } else {
    rng::Rng r(probe_seed);
    for (int probe = 0; probe < 24; ++probe) {
      std::vector<double> dir(p.size());
      double norm = 0;
      for (auto& d : dir) {
        d = r.normal();
        norm += d * d;
      }
      norm = std::sqrt(norm);
      double gd = 0;
      for (std::size_t i = 0; i < dir.size(); ++i) {
        dir[i] /= norm;
        gd += dir[i] * gr.gradient[i];
      }
      compare(directional(dir), gd);
    }
  }
  return worst;
}

}  // namespace eivoplab::diffcore
