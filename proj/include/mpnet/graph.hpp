#pragma once

#include <Eigen/Dense>

#include <functional>
#include <limits>
#include <utility>

#include "mpnet/tensor.hpp"

namespace mpnet {

namespace detail {
using EigenRowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EigenRowMat>;
using CMap = Eigen::Map<const EigenRowMat>;

inline CMap cmap(const std::vector<double>& v, int r, int c) {
  return CMap(v.data(), r, c);
}
inline Map map(std::vector<double>& v, int r, int c) {
  return Map(v.data(), r, c);
}
}  // namespace detail

// Reverse-mode differentiation over an explicit record of operations.
// Each op appends a node holding its forward value and a closure that
// scatters the node's gradient back into its parents; backward() replays
// the record in reverse. One Graph per forward pass; parameters are bound
// as leaves and receive accumulated gradients when backward() finishes.
class Graph {
 public:
  using Id = int;

  static constexpr double kEpsNorm = 1e-12;  // cosine/norm denominator clamp
  static constexpr double kLogClamp = 1e-12;

  // ---- leaves ----

  Id constant(Tensor t) { return push(std::move(t), false, nullptr); }

  Id input(const Tensor& t) { return push(t, false, nullptr); }

  Id param(Parameter& p) { return push(p.tensor, true, &p); }

  // ---- core ops ----

  Id matmul(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_arg(ta.cols == tb.rows, "matmul: inner dimensions disagree " +
                                      ta.shape_str() + " vs " + tb.shape_str());
    Tensor out(ta.rows, tb.cols);
    detail::map(out.data, out.rows, out.cols).noalias() =
        detail::cmap(ta.data, ta.rows, ta.cols) *
        detail::cmap(tb.data, tb.rows, tb.cols);
    return push(std::move(out), needs(a) || needs(b), nullptr,
                [a, b](Graph& g, Id self) {
                  const Tensor& A = g.val(a);
                  const Tensor& B = g.val(b);
                  auto G = detail::cmap(g.grad_ref(self), A.rows, B.cols);
                  if (g.needs(a)) {
                    auto GA = detail::map(g.grad_buf(a), A.rows, A.cols);
                    GA.noalias() += G * detail::cmap(B.data, B.rows, B.cols).transpose();
                  }
                  if (g.needs(b)) {
                    auto GB = detail::map(g.grad_buf(b), B.rows, B.cols);
                    GB.noalias() += detail::cmap(A.data, A.rows, A.cols).transpose() * G;
                  }
                });
  }

  Id add(Id a, Id b) { return ewise(a, b, /*sign=*/+1.0, "add"); }
  Id sub(Id a, Id b) { return ewise(a, b, /*sign=*/-1.0, "sub"); }

  Id mul(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_arg(ta.same_shape(tb), "mul: shape mismatch " + ta.shape_str() +
                                     " vs " + tb.shape_str());
    Tensor out(ta.rows, ta.cols);
    for (std::size_t i = 0; i < out.size(); ++i)
      out.data[i] = ta.data[i] * tb.data[i];
    return push(std::move(out), needs(a) || needs(b), nullptr,
                [a, b](Graph& g, Id self) {
                  const auto& gr = g.grad_ref(self);
                  if (g.needs(a)) {
                    auto& ga = g.grad_buf(a);
                    const auto& vb = g.val(b).data;
                    for (std::size_t i = 0; i < gr.size(); ++i) ga[i] += gr[i] * vb[i];
                  }
                  if (g.needs(b)) {
                    auto& gb = g.grad_buf(b);
                    const auto& va = g.val(a).data;
                    for (std::size_t i = 0; i < gr.size(); ++i) gb[i] += gr[i] * va[i];
                  }
                });
  }

  // x: PxD plus row vector b: 1xD broadcast over rows.
  Id add_row(Id x, Id b) {
    const Tensor& tx = val(x);
    const Tensor& tb = val(b);
    check_arg(tb.rows == 1 && tb.cols == tx.cols,
              "add_row: bias must be 1x" + std::to_string(tx.cols) + ", got " +
                  tb.shape_str());
    Tensor out = tx;
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out.at(i, j) += tb.at(0, j);
    return push(std::move(out), needs(x) || needs(b), nullptr,
                [x, b](Graph& g, Id self) {
                  const Tensor& o = g.node(self).value;
                  const auto& gr = g.grad_ref(self);
                  if (g.needs(x)) {
                    auto& gx = g.grad_buf(x);
                    for (std::size_t i = 0; i < gr.size(); ++i) gx[i] += gr[i];
                  }
                  if (g.needs(b)) {
                    auto& gb = g.grad_buf(b);
                    for (int i = 0; i < o.rows; ++i)
                      for (int j = 0; j < o.cols; ++j)
                        gb[j] += gr[static_cast<std::size_t>(i) * o.cols + j];
                  }
                });
  }

  // out = x*w + b, the shared-MLP building block.
  Id affine(Id x, Id w, Id b) { return add_row(matmul(x, w), b); }

  Id scale(Id a, double s) {
    Tensor out = val(a);
    for (double& v : out.data) v *= s;
    return push(std::move(out), needs(a), nullptr, [a, s](Graph& g, Id self) {
      if (!g.needs(a)) return;
      const auto& gr = g.grad_ref(self);
      auto& ga = g.grad_buf(a);
      for (std::size_t i = 0; i < gr.size(); ++i) ga[i] += s * gr[i];
    });
  }

  Id add_scalar(Id a, double s) {
    Tensor out = val(a);
    for (double& v : out.data) v += s;
    return push(std::move(out), needs(a), nullptr, [a](Graph& g, Id self) {
      if (!g.needs(a)) return;
      const auto& gr = g.grad_ref(self);
      auto& ga = g.grad_buf(a);
      for (std::size_t i = 0; i < gr.size(); ++i) ga[i] += gr[i];
    });
  }

  Id relu(Id a) {
    Tensor out = val(a);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return push(std::move(out), needs(a), nullptr, [a](Graph& g, Id self) {
      if (!g.needs(a)) return;
      const auto& gr = g.grad_ref(self);
      const auto& va = g.val(a).data;
      auto& ga = g.grad_buf(a);
      for (std::size_t i = 0; i < gr.size(); ++i)
        if (va[i] > 0.0) ga[i] += gr[i];  // subgradient 0 at exactly 0
    });
  }

  // Rowwise softmax, stabilized by rowmax subtraction.
  Id row_softmax(Id a) {
    const Tensor& ta = val(a);
    Tensor out(ta.rows, ta.cols);
    for (int i = 0; i < ta.rows; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < ta.cols; ++j) mx = std::max(mx, ta.at(i, j));
      double sum = 0.0;
      for (int j = 0; j < ta.cols; ++j) {
        const double e = std::exp(ta.at(i, j) - mx);
        out.at(i, j) = e;
        sum += e;
      }
      for (int j = 0; j < ta.cols; ++j) out.at(i, j) /= sum;
    }
    return push(std::move(out), needs(a), nullptr, [a](Graph& g, Id self) {
      if (!g.needs(a)) return;
      const Tensor& p = g.node(self).value;
      const auto& gr = g.grad_ref(self);
      auto& ga = g.grad_buf(a);
      for (int i = 0; i < p.rows; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * p.cols;
        double dot = 0.0;
        for (int j = 0; j < p.cols; ++j) dot += gr[off + j] * p.data[off + j];
        for (int j = 0; j < p.cols; ++j)
          ga[off + j] += p.data[off + j] * (gr[off + j] - dot);
      }
    });
  }

  // out[i,j] = <a_i,b_j> / (|a_i|*|b_j|), norms clamped to kEpsNorm.
  // Differentiable w.r.t. both sides; clamped rows get a frozen denominator.
  Id cosine_rows(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_arg(ta.cols == tb.cols, "cosine_rows: feature dims disagree " +
                                      ta.shape_str() + " vs " + tb.shape_str());
    const int P = ta.rows, N = tb.rows, D = ta.cols;
    std::vector<double> na(P), nb(N);
    std::vector<bool> ca(P), cb(N);
    for (int i = 0; i < P; ++i) {
      double s = 0.0;
      for (int d = 0; d < D; ++d) s += ta.at(i, d) * ta.at(i, d);
      const double n = std::sqrt(s);
      ca[i] = n < kEpsNorm;
      na[i] = ca[i] ? kEpsNorm : n;
      if (ca[i]) ++clamp_events_;
    }
    for (int j = 0; j < N; ++j) {
      double s = 0.0;
      for (int d = 0; d < D; ++d) s += tb.at(j, d) * tb.at(j, d);
      const double n = std::sqrt(s);
      cb[j] = n < kEpsNorm;
      nb[j] = cb[j] ? kEpsNorm : n;
      if (cb[j]) ++clamp_events_;
    }
    Tensor out(P, N);
    detail::map(out.data, P, N).noalias() =
        detail::cmap(ta.data, P, D) * detail::cmap(tb.data, N, D).transpose();
    for (int i = 0; i < P; ++i)
      for (int j = 0; j < N; ++j) out.at(i, j) /= na[i] * nb[j];
    return push(std::move(out), needs(a) || needs(b), nullptr,
                [a, b, na, nb, ca, cb](Graph& g, Id self) {
                  const Tensor& A = g.val(a);
                  const Tensor& B = g.val(b);
                  const Tensor& S = g.node(self).value;
                  const int P = A.rows, N = B.rows, D = A.cols;
                  const auto& gr = g.grad_ref(self);
                  // ghat[i,j] = gr[i,j] / (na_i * nb_j)
                  std::vector<double> ghat(gr.size());
                  for (int i = 0; i < P; ++i)
                    for (int j = 0; j < N; ++j) {
                      const std::size_t k = static_cast<std::size_t>(i) * N + j;
                      ghat[k] = gr[k] / (na[i] * nb[j]);
                    }
                  if (g.needs(a)) {
                    auto& ga = g.grad_buf(a);
                    detail::map(ga, P, D).noalias() +=
                        detail::cmap(ghat, P, N) * detail::cmap(B.data, N, D);
                    for (int i = 0; i < P; ++i) {
                      if (ca[i]) continue;  // clamped: denominator is constant
                      double c = 0.0;
                      for (int j = 0; j < N; ++j) {
                        const std::size_t k = static_cast<std::size_t>(i) * N + j;
                        c += gr[k] * S.data[k];
                      }
                      c /= na[i] * na[i];
                      for (int d = 0; d < D; ++d)
                        ga[static_cast<std::size_t>(i) * D + d] -= c * A.at(i, d);
                    }
                  }
                  if (g.needs(b)) {
                    auto& gb = g.grad_buf(b);
                    detail::map(gb, N, D).noalias() +=
                        detail::cmap(ghat, P, N).transpose() * detail::cmap(A.data, P, D);
                    for (int j = 0; j < N; ++j) {
                      if (cb[j]) continue;
                      double c = 0.0;
                      for (int i = 0; i < P; ++i) {
                        const std::size_t k = static_cast<std::size_t>(i) * N + j;
                        c += gr[k] * S.data[k];
                      }
                      c /= nb[j] * nb[j];
                      for (int d = 0; d < D; ++d)
                        gb[static_cast<std::size_t>(j) * D + d] -= c * B.at(j, d);
                    }
                  }
                });
  }

  // Euclidean norm per row, PxD -> Px1. Forward is exact; backward clamps
  // the denominator so an all-zero row yields a zero (not NaN) gradient.
  Id row_norm(Id a) {
    const Tensor& ta = val(a);
    Tensor out(ta.rows, 1);
    for (int i = 0; i < ta.rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < ta.cols; ++j) s += ta.at(i, j) * ta.at(i, j);
      out.at(i, 0) = std::sqrt(s);
    }
    return push(std::move(out), needs(a), nullptr, [a](Graph& g, Id self) {
      if (!g.needs(a)) return;
      const Tensor& A = g.val(a);
      const Tensor& n = g.node(self).value;
      const auto& gr = g.grad_ref(self);
      auto& ga = g.grad_buf(a);
      for (int i = 0; i < A.rows; ++i) {
        const double denom = std::max(n.at(i, 0), kEpsNorm);
        const double c = gr[i] / denom;
        for (int j = 0; j < A.cols; ++j)
          ga[static_cast<std::size_t>(i) * A.cols + j] += c * A.at(i, j);
      }
    });
  }

  Id row_sum(Id a) {
    const Tensor& ta = val(a);
    Tensor out(ta.rows, 1);
    for (int i = 0; i < ta.rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < ta.cols; ++j) s += ta.at(i, j);
      out.at(i, 0) = s;
    }
    return push(std::move(out), needs(a), nullptr, [a](Graph& g, Id self) {
      if (!g.needs(a)) return;
      const Tensor& A = g.val(a);
      const auto& gr = g.grad_ref(self);
      auto& ga = g.grad_buf(a);
      for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j)
          ga[static_cast<std::size_t>(i) * A.cols + j] += gr[i];
    });
  }

  // ln(max(x, kLogClamp)); gradient is zero for clamped entries.
  Id log_clamped(Id a) {
    Tensor out = val(a);
    for (double& v : out.data) v = std::log(std::max(v, kLogClamp));
    return push(std::move(out), needs(a), nullptr, [a](Graph& g, Id self) {
      if (!g.needs(a)) return;
      const auto& gr = g.grad_ref(self);
      const auto& va = g.val(a).data;
      auto& ga = g.grad_buf(a);
      for (std::size_t i = 0; i < gr.size(); ++i)
        if (va[i] > kLogClamp) ga[i] += gr[i] / va[i];
    });
  }

  // x^e elementwise for x >= 0. e == 0 gives exactly 1 with zero gradient.
  Id pow_const(Id a, double e) {
    const Tensor& ta = val(a);
    Tensor out(ta.rows, ta.cols);
    if (e == 0.0) {
      std::fill(out.data.begin(), out.data.end(), 1.0);
    } else {
      for (std::size_t i = 0; i < out.size(); ++i)
        out.data[i] = std::pow(ta.data[i], e);
    }
    return push(std::move(out), needs(a) && e != 0.0, nullptr,
                [a, e](Graph& g, Id self) {
                  if (!g.needs(a) || e == 0.0) return;
                  const auto& gr = g.grad_ref(self);
                  const auto& va = g.val(a).data;
                  auto& ga = g.grad_buf(a);
                  for (std::size_t i = 0; i < gr.size(); ++i) {
                    if (va[i] == 0.0) {
                      if (e == 1.0) ga[i] += gr[i];
                      continue;  // e<1 at 0: leave subgradient 0
                    }
                    ga[i] += gr[i] * e * std::pow(va[i], e - 1.0);
                  }
                });
  }

  Id reciprocal(Id a) {
    Tensor out = val(a);
    for (double& v : out.data) v = 1.0 / v;
    return push(std::move(out), needs(a), nullptr, [a](Graph& g, Id self) {
      if (!g.needs(a)) return;
      const auto& gr = g.grad_ref(self);
      const auto& va = g.val(a).data;
      auto& ga = g.grad_buf(a);
      for (std::size_t i = 0; i < gr.size(); ++i)
        ga[i] -= gr[i] / (va[i] * va[i]);
    });
  }

  // Scale row i of x by s[i]; x: PxD, s: Px1.
  Id mul_col(Id x, Id s) {
    const Tensor& tx = val(x);
    const Tensor& ts = val(s);
    check_arg(ts.rows == tx.rows && ts.cols == 1,
              "mul_col: scale must be " + Tensor::shape_str(tx.rows, 1) +
                  ", got " + ts.shape_str());
    Tensor out = tx;
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out.at(i, j) *= ts.at(i, 0);
    return push(std::move(out), needs(x) || needs(s), nullptr,
                [x, s](Graph& g, Id self) {
                  const Tensor& X = g.val(x);
                  const Tensor& S = g.val(s);
                  const auto& gr = g.grad_ref(self);
                  if (g.needs(x)) {
                    auto& gx = g.grad_buf(x);
                    for (int i = 0; i < X.rows; ++i)
                      for (int j = 0; j < X.cols; ++j)
                        gx[static_cast<std::size_t>(i) * X.cols + j] +=
                            gr[static_cast<std::size_t>(i) * X.cols + j] * S.at(i, 0);
                  }
                  if (g.needs(s)) {
                    auto& gs = g.grad_buf(s);
                    for (int i = 0; i < X.rows; ++i) {
                      double acc = 0.0;
                      for (int j = 0; j < X.cols; ++j)
                        acc += gr[static_cast<std::size_t>(i) * X.cols + j] * X.at(i, j);
                      gs[i] += acc;
                    }
                  }
                });
  }

  Id gather_rows(Id x, std::vector<int> idx) {
    const Tensor& tx = val(x);
    for (int i : idx)
      check_arg(i >= 0 && i < tx.rows,
                "gather_rows: index " + std::to_string(i) + " out of range for " +
                    tx.shape_str());
    Tensor out(static_cast<int>(idx.size()), tx.cols);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (int j = 0; j < tx.cols; ++j)
        out.at(static_cast<int>(r), j) = tx.at(idx[r], j);
    return push(std::move(out), needs(x), nullptr,
                [x, idx = std::move(idx)](Graph& g, Id self) {
                  if (!g.needs(x)) return;
                  const Tensor& X = g.val(x);
                  const auto& gr = g.grad_ref(self);
                  auto& gx = g.grad_buf(x);
                  for (std::size_t r = 0; r < idx.size(); ++r)
                    for (int j = 0; j < X.cols; ++j)
                      gx[static_cast<std::size_t>(idx[r]) * X.cols + j] +=
                          gr[r * X.cols + j];
                });
  }

  // out[i,0] = x[i, labels[i]]
  Id gather_label(Id x, std::vector<int> labels) {
    const Tensor& tx = val(x);
    check_arg(static_cast<int>(labels.size()) == tx.rows,
              "gather_label: need one label per row of " + tx.shape_str());
    for (int y : labels)
      check_arg(y >= 0 && y < tx.cols,
                "gather_label: label " + std::to_string(y) + " out of range for " +
                    tx.shape_str());
    Tensor out(tx.rows, 1);
    for (int i = 0; i < tx.rows; ++i) out.at(i, 0) = tx.at(i, labels[i]);
    return push(std::move(out), needs(x), nullptr,
                [x, labels = std::move(labels)](Graph& g, Id self) {
                  if (!g.needs(x)) return;
                  const Tensor& X = g.val(x);
                  const auto& gr = g.grad_ref(self);
                  auto& gx = g.grad_buf(x);
                  for (int i = 0; i < X.rows; ++i)
                    gx[static_cast<std::size_t>(i) * X.cols + labels[i]] += gr[i];
                });
  }

  // Per-segment columnwise max; every segment id in [0,nseg) must own at
  // least one row. Gradient routes to the first maximizing row.
  Id segment_max(Id x, const std::vector<int>& seg, int nseg) {
    const Tensor& tx = val(x);
    check_arg(static_cast<int>(seg.size()) == tx.rows,
              "segment_max: need one segment id per row of " + tx.shape_str());
    check_arg(nseg > 0, "segment_max: nseg must be positive");
    for (int s : seg)
      check_arg(s >= 0 && s < nseg, "segment_max: segment id out of range");
    Tensor out = Tensor::full(nseg, tx.cols, -std::numeric_limits<double>::infinity());
    std::vector<int> argmax(static_cast<std::size_t>(nseg) * tx.cols, -1);
    for (int i = 0; i < tx.rows; ++i) {
      const int s = seg[i];
      for (int j = 0; j < tx.cols; ++j) {
        if (tx.at(i, j) > out.at(s, j)) {
          out.at(s, j) = tx.at(i, j);
          argmax[static_cast<std::size_t>(s) * tx.cols + j] = i;
        }
      }
    }
    for (double v : out.data)
      check_arg(std::isfinite(v), "segment_max: empty segment");
    return push(std::move(out), needs(x), nullptr,
                [x, argmax = std::move(argmax)](Graph& g, Id self) {
                  if (!g.needs(x)) return;
                  const Tensor& o = g.node(self).value;
                  const auto& gr = g.grad_ref(self);
                  auto& gx = g.grad_buf(x);
                  const int cols = o.cols;
                  for (int s = 0; s < o.rows; ++s)
                    for (int j = 0; j < cols; ++j) {
                      const std::size_t k = static_cast<std::size_t>(s) * cols + j;
                      gx[static_cast<std::size_t>(argmax[k]) * cols + j] += gr[k];
                    }
                });
  }

  // Per-segment columnwise mean; every segment id in [0,nseg) must own at
  // least one row.
  Id segment_mean(Id x, const std::vector<int>& seg, int nseg) {
    const Tensor& tx = val(x);
    check_arg(static_cast<int>(seg.size()) == tx.rows,
              "segment_mean: need one segment id per row of " + tx.shape_str());
    check_arg(nseg > 0, "segment_mean: nseg must be positive");
    std::vector<int> count(nseg, 0);
    for (int s : seg) {
      check_arg(s >= 0 && s < nseg, "segment_mean: segment id out of range");
      ++count[s];
    }
    for (int c : count) check_arg(c > 0, "segment_mean: empty segment");
    Tensor out = Tensor::zeros(nseg, tx.cols);
    for (int i = 0; i < tx.rows; ++i) {
      const int s = seg[i];
      for (int j = 0; j < tx.cols; ++j)
        out.at(s, j) += tx.at(i, j) / count[s];
    }
    return push(std::move(out), needs(x), nullptr,
                [x, seg, count = std::move(count)](Graph& g, Id self) {
                  if (!g.needs(x)) return;
                  const Tensor& o = g.node(self).value;
                  const auto& gr = g.grad_ref(self);
                  auto& gx = g.grad_buf(x);
                  const int cols = o.cols;
                  for (std::size_t i = 0; i < seg.size(); ++i) {
                    const int s = seg[i];
                    for (int j = 0; j < cols; ++j)
                      gx[i * cols + j] +=
                          gr[static_cast<std::size_t>(s) * cols + j] / count[s];
                  }
                });
  }

  Id concat_cols(const std::vector<Id>& parts) {
    check_arg(!parts.empty(), "concat_cols: no inputs");
    const int rows = val(parts[0]).rows;
    int total = 0;
    for (Id p : parts) {
      check_arg(val(p).rows == rows, "concat_cols: row counts disagree");
      total += val(p).cols;
    }
    Tensor out(rows, total);
    int off = 0;
    bool ng = false;
    for (Id p : parts) {
      const Tensor& tp = val(p);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < tp.cols; ++j) out.at(i, off + j) = tp.at(i, j);
      off += tp.cols;
      ng = ng || needs(p);
    }
    return push(std::move(out), ng, nullptr, [parts](Graph& g, Id self) {
      const Tensor& o = g.node(self).value;
      const auto& gr = g.grad_ref(self);
      int off = 0;
      for (Id p : parts) {
        const Tensor& tp = g.val(p);
        if (g.needs(p)) {
          auto& gp = g.grad_buf(p);
          for (int i = 0; i < o.rows; ++i)
            for (int j = 0; j < tp.cols; ++j)
              gp[static_cast<std::size_t>(i) * tp.cols + j] +=
                  gr[static_cast<std::size_t>(i) * o.cols + off + j];
        }
        off += tp.cols;
      }
    });
  }

  Id reshape(Id a, int r, int c) {
    const Tensor& ta = val(a);
    check_arg(static_cast<std::size_t>(r) * c == ta.size(),
              "reshape: size mismatch " + ta.shape_str() + " -> " +
                  Tensor::shape_str(r, c));
    Tensor out(r, c);
    out.data = ta.data;
    return push(std::move(out), needs(a), nullptr, [a](Graph& g, Id self) {
      if (!g.needs(a)) return;
      const auto& gr = g.grad_ref(self);
      auto& ga = g.grad_buf(a);
      for (std::size_t i = 0; i < gr.size(); ++i) ga[i] += gr[i];
    });
  }

  Id sum_all(Id a) {
    const Tensor& ta = val(a);
    double s = 0.0;
    for (double v : ta.data) s += v;
    return push(Tensor::scalar(s), needs(a), nullptr, [a](Graph& g, Id self) {
      if (!g.needs(a)) return;
      const double gv = g.grad_ref(self)[0];
      auto& ga = g.grad_buf(a);
      for (double& v : ga) v += gv;
    });
  }

  Id mean_all(Id a) {
    const Tensor& ta = val(a);
    check_arg(ta.size() > 0, "mean_all: empty tensor");
    return scale(sum_all(a), 1.0 / static_cast<double>(ta.size()));
  }

  // sum(x .* w) for a constant weight vector; the reduction every
  // instance-normalized loss term uses.
  Id weighted_sum(Id x, std::vector<double> w) {
    const Tensor& tx = val(x);
    check_arg(w.size() == tx.size(), "weighted_sum: weight size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += tx.data[i] * w[i];
    return push(Tensor::scalar(s), needs(x), nullptr,
                [x, w = std::move(w)](Graph& g, Id self) {
                  if (!g.needs(x)) return;
                  const double gv = g.grad_ref(self)[0];
                  auto& gx = g.grad_buf(x);
                  for (std::size_t i = 0; i < w.size(); ++i) gx[i] += gv * w[i];
                });
  }

  // ---- execution ----

  const Tensor& value(Id id) const { return val(id); }

  // Gradient of the last backward() w.r.t. node id (empty if untouched).
  std::vector<double> gradient(Id id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
    return n.grad;
  }

  // Reverse replay from a scalar output. Accumulates into the bound
  // Parameters' tensor.grad; a parameter untouched by the output still
  // ends up with a defined all-zero gradient.
  void backward(Id output) {
    const Tensor& out = val(output);
    check_arg(out.rows == 1 && out.cols == 1,
              "backward: output must be scalar, got " + out.shape_str());
    grad_buf(output).assign(1, 1.0);
    for (Id id = output; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.needs_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, id);
    }
    for (Node& n : nodes_) {
      if (!n.bound) continue;
      n.bound->tensor.ensure_grad();
      if (n.grad.empty()) continue;
      auto& pg = *n.bound->tensor.grad;
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
    }
  }

  std::size_t num_nodes() const { return nodes_.size(); }
  std::int64_t clamp_events() const { return clamp_events_; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;  // empty == all zero
    std::function<void(Graph&, Id)> backward;
    bool needs_grad = false;
    Parameter* bound = nullptr;
  };

  Id push(Tensor value, bool needs_grad, Parameter* bound,
          std::function<void(Graph&, Id)> back = nullptr) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.bound = bound;
    n.backward = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size()) - 1;
  }

  Id ewise(Id a, Id b, double sign, const char* name) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_arg(ta.same_shape(tb), std::string(name) + ": shape mismatch " +
                                     ta.shape_str() + " vs " + tb.shape_str());
    Tensor out(ta.rows, ta.cols);
    for (std::size_t i = 0; i < out.size(); ++i)
      out.data[i] = ta.data[i] + sign * tb.data[i];
    return push(std::move(out), needs(a) || needs(b), nullptr,
                [a, b, sign](Graph& g, Id self) {
                  const auto& gr = g.grad_ref(self);
                  if (g.needs(a)) {
                    auto& ga = g.grad_buf(a);
                    for (std::size_t i = 0; i < gr.size(); ++i) ga[i] += gr[i];
                  }
                  if (g.needs(b)) {
                    auto& gb = g.grad_buf(b);
                    for (std::size_t i = 0; i < gr.size(); ++i) gb[i] += sign * gr[i];
                  }
                });
  }

  const Tensor& val(Id id) const {
    check_arg(id >= 0 && id < static_cast<Id>(nodes_.size()), "Graph: bad node id");
    return nodes_[static_cast<std::size_t>(id)].value;
  }
  Node& node(Id id) { return nodes_[static_cast<std::size_t>(id)]; }
  bool needs(Id id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  std::vector<double>& grad_buf(Id id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }
  const std::vector<double>& grad_ref(Id id) const {
    return nodes_[static_cast<std::size_t>(id)].grad;
  }

  std::vector<Node> nodes_;
  std::int64_t clamp_events_ = 0;
};

}  // namespace mpnet
