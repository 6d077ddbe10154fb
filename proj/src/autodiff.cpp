#include "h4d/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace h4d {

const Tensor& Var::value() const { return tape_->value(*this); }

void Tape::check_owner(Var v) const {
  if (v.tape() != this) throw std::logic_error("Var recorded on a different tape");
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    check_owner(in);
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, needs});
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  check_owner(loss);
  if (value(loss).size() != 1) {
    throw DimensionError("backward() needs a scalar loss, got shape " + shape_string(value(loss).shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  nodes_[loss.id()].grad = Tensor(value(loss).shape(), 1.0f);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

Tensor Tape::grad(Var v) const {
  check_owner(v);
  const Node& n = nodes_[v.id()];
  if (n.grad.empty() && !n.value.empty()) return Tensor(n.value.shape());
  return n.grad;
}

Tensor& Tape::grad_ref(Var v) {
  Node& n = nodes_[v.id()];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_string(t.shape()));
  }
}

bool needs(Tape& t, Var v) { return t.requires_grad(v); }

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMatrixXd widen(const Tensor& t, std::size_t rows, std::size_t cols) {
  return Eigen::Map<const RowMatrixXf>(t.data(), Eigen::Index(rows), Eigen::Index(cols)).cast<double>();
}

Eigen::Map<RowMatrixXf> as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return Eigen::Map<RowMatrixXf>(t.data(), Eigen::Index(rows), Eigen::Index(cols));
}

template <class F>
Var unary(Var a, F&& f, Tape::BackwardFn bw) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return a.tape()->record(std::move(out), {a}, std::move(bw));
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank(A, 2, "matmul");
  require_rank(B, 2, "matmul");
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  if (B.dim(0) != k) {
    throw DimensionError("matmul: inner dims disagree " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
  }
  // Products are accumulated in double and rounded once.
  Tensor C(Shape{m, n});
  as_matrix(C, m, n) = (widen(A, m, k) * widen(B, k, n)).cast<float>();
  return a.tape()->record(std::move(C), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    const RowMatrixXd G = widen(g, m, n);
    if (needs(t, a)) {
      auto ga = as_matrix(t.grad_ref(a), m, k);
      ga += (G * widen(t.value(b), k, n).transpose()).cast<float>();
    }
    if (needs(t, b)) {
      auto gb = as_matrix(t.grad_ref(b), k, n);
      gb += (widen(t.value(a), m, k).transpose() * G).cast<float>();
    }
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    for (Var v : {a, b}) {
      if (!needs(t, v)) continue;
      Tensor& gv = t.grad_ref(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (needs(t, a)) {
      Tensor& ga = t.grad_ref(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (needs(t, b)) {
      Tensor& gb = t.grad_ref(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    if (needs(t, a)) {
      Tensor& ga = t.grad_ref(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (needs(t, b)) {
      Tensor& gb = t.grad_ref(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

Var scale(Var a, float s) {
  return unary(a, [s](float x) { return x * s; }, [a, s](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

Var add_row(Var a, Var bias) {
  const Tensor& A = a.value();
  const Tensor& b = bias.value();
  require_rank(A, 2, "add_row");
  if (b.rank() != 1 || b.dim(0) != A.dim(1)) {
    throw DimensionError("add_row: bias " + shape_string(b.shape()) + " vs matrix " + shape_string(A.shape()));
  }
  const std::size_t m = A.dim(0), n = A.dim(1);
  Tensor out = A;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
  return a.tape()->record(std::move(out), {a, bias}, [a, bias, m, n](Tape& t, const Tensor& g) {
    if (needs(t, a)) {
      Tensor& ga = t.grad_ref(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (needs(t, bias)) {
      std::vector<double> acc(n, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) acc[j] += g[i * n + j];
      Tensor& gb = t.grad_ref(bias);
      for (std::size_t j = 0; j < n; ++j) gb[j] += static_cast<float>(acc[j]);
    }
  });
}

Var relu(Var a) {
  return unary(a, [](float x) { return x > 0.0f ? x : 0.0f; }, [a](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0f) ga[i] += g[i];
  });
}

namespace {
float sigmoid_scalar(float x) { return static_cast<float>(1.0 / (1.0 + std::exp(-double(x)))); }
}  // namespace

Var sigmoid(Var a) {
  return unary(a, sigmoid_scalar, [a](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const float s = sigmoid_scalar(x[i]);
      ga[i] += g[i] * s * (1.0f - s);
    }
  });
}

Var tanh(Var a) {
  return unary(a, [](float x) { return std::tanh(x); }, [a](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const float y = std::tanh(x[i]);
      ga[i] += g[i] * (1.0f - y * y);
    }
  });
}

Var square(Var a) {
  return unary(a, [](float x) { return x * x; }, [a](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0f * x[i] * g[i];
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (float v : a.value().values()) s += v;
  return a.tape()->record(Tensor::scalar(static_cast<float>(s)), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_ref(a);
    const float gv = g[0];
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gv;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean of empty tensor");
  double s = 0.0;
  for (float v : a.value().values()) s += v;
  return a.tape()->record(Tensor::scalar(static_cast<float>(s / double(n))), {a}, [a, n](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_ref(a);
    const float gv = static_cast<float>(double(g[0]) / double(n));
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gv;
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat of no tensors");
  std::vector<float> data;
  for (const Var& p : parts) {
    require_rank(p.value(), 1, "concat");
    data.insert(data.end(), p.value().values().begin(), p.value().values().end());
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  const std::size_t n = data.size();
  return parts[0].tape()->record(Tensor(Shape{n}, std::move(data)), parts, [inputs](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : inputs) {
      const std::size_t len = t.value(p).size();
      if (t.requires_grad(p)) {
        Tensor& gp = t.grad_ref(p);
        for (std::size_t i = 0; i < len; ++i) gp[i] += g[off + i];
      }
      off += len;
    }
  });
}

Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

Var concat_cols(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank(A, 2, "concat_cols");
  require_rank(B, 2, "concat_cols");
  if (A.dim(0) != B.dim(0)) {
    throw DimensionError("concat_cols: row counts " + shape_string(A.shape()) + " vs " + shape_string(B.shape()));
  }
  const std::size_t m = A.dim(0), p = A.dim(1), q = B.dim(1);
  Tensor out(Shape{m, p + q});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(A.data() + i * p, p, out.data() + i * (p + q));
    std::copy_n(B.data() + i * q, q, out.data() + i * (p + q) + p);
  }
  return a.tape()->record(std::move(out), {a, b}, [a, b, m, p, q](Tape& t, const Tensor& g) {
    if (needs(t, a)) {
      Tensor& ga = t.grad_ref(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += g[i * (p + q) + j];
    }
    if (needs(t, b)) {
      Tensor& gb = t.grad_ref(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < q; ++j) gb[i * q + j] += g[i * (p + q) + p + j];
    }
  });
}

Var slice(Var a, std::size_t begin, std::size_t end) {
  const Tensor& A = a.value();
  require_rank(A, 1, "slice");
  if (begin > end || end > A.size()) throw DimensionError("slice: range out of bounds");
  std::vector<float> data(A.data() + begin, A.data() + end);
  return a.tape()->record(Tensor(Shape{end - begin}, std::move(data)), {a}, [a, begin](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[begin + i] += g[i];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& A = a.value();
  require_rank(A, 2, "slice_cols");
  const std::size_t m = A.dim(0), n = A.dim(1), w = end - begin;
  if (begin > end || end > n) throw DimensionError("slice_cols: range out of bounds");
  Tensor out(Shape{m, w});
  for (std::size_t i = 0; i < m; ++i) std::copy_n(A.data() + i * n + begin, w, out.data() + i * w);
  return a.tape()->record(std::move(out), {a}, [a, begin, m, n, w](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += g[i * w + j];
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& A = a.value();
  require_rank(A, 2, "gather_rows");
  const std::size_t n = A.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor out(Shape{idx.size(), n});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= A.dim(0)) throw DimensionError("gather_rows: index out of range");
    std::copy_n(A.data() + idx[r] * n, n, out.data() + r * n);
  }
  return a.tape()->record(std::move(out), {a}, [a, idx, n](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_ref(a);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) ga[idx[r] * n + j] += g[r * n + j];
  });
}

Var row(Var a, std::size_t index) {
  const Tensor& A = a.value();
  require_rank(A, 2, "row");
  if (index >= A.dim(0)) throw DimensionError("row: index out of range");
  const std::size_t n = A.dim(1);
  std::vector<float> data(A.data() + index * n, A.data() + (index + 1) * n);
  return a.tape()->record(Tensor(Shape{n}, std::move(data)), {a}, [a, index, n](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_ref(a);
    for (std::size_t j = 0; j < n; ++j) ga[index * n + j] += g[j];
  });
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw DimensionError("stack_rows of no tensors");
  const std::size_t n = rows[0].value().size();
  Tensor out(Shape{rows.size(), n});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require_rank(rows[r].value(), 1, "stack_rows");
    if (rows[r].value().size() != n) throw DimensionError("stack_rows: ragged rows");
    std::copy_n(rows[r].value().data(), n, out.data() + r * n);
  }
  std::vector<Var> inputs(rows.begin(), rows.end());
  return rows[0].tape()->record(std::move(out), rows, [inputs, n](Tape& t, const Tensor& g) {
    for (std::size_t r = 0; r < inputs.size(); ++r) {
      if (!t.requires_grad(inputs[r])) continue;
      Tensor& gr = t.grad_ref(inputs[r]);
      for (std::size_t j = 0; j < n; ++j) gr[j] += g[r * n + j];
    }
  });
}

Var repeat_segments(Var a, std::size_t n) {
  const Tensor& A = a.value();
  require_rank(A, 2, "repeat_segments");
  const std::size_t s = A.dim(0), c = A.dim(1);
  Tensor out(Shape{s * n, c});
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t r = 0; r < n; ++r) std::copy_n(A.data() + i * c, c, out.data() + (i * n + r) * c);
  return a.tape()->record(std::move(out), {a}, [a, s, n, c](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        double acc = 0.0;
        for (std::size_t r = 0; r < n; ++r) acc += g[(i * n + r) * c + j];
        ga[i * c + j] += static_cast<float>(acc);
      }
    }
  });
}

Var segment_max(Var a, std::size_t segments) {
  const Tensor& A = a.value();
  require_rank(A, 2, "segment_max");
  if (segments == 0 || A.dim(0) == 0 || A.dim(0) % segments != 0) {
    throw DimensionError("segment_max: " + std::to_string(A.dim(0)) + " rows not divisible into " +
                         std::to_string(segments) + " nonempty segments");
  }
  const std::size_t n = A.dim(0) / segments, c = A.dim(1);
  Tensor out(Shape{segments, c});
  std::vector<std::size_t> arg(segments * c);
  for (std::size_t s = 0; s < segments; ++s) {
    for (std::size_t j = 0; j < c; ++j) {
      std::size_t best = s * n;
      float bv = A[best * c + j];
      for (std::size_t r = s * n + 1; r < (s + 1) * n; ++r) {
        // Ties resolve to the lowest row; the value is order independent either way.
        if (A[r * c + j] > bv) {
          bv = A[r * c + j];
          best = r;
        }
      }
      out[s * c + j] = bv;
      arg[s * c + j] = best;
    }
  }
  return a.tape()->record(std::move(out), {a}, [a, arg, c](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < arg.size(); ++i) ga[arg[i] * c + (i % c)] += g[i];
  });
}

Var outer_add_rows(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank(A, 2, "outer_add_rows");
  require_rank(B, 2, "outer_add_rows");
  if (A.dim(1) != B.dim(1)) throw DimensionError("outer_add_rows: column counts differ");
  const std::size_t l = A.dim(0), v = B.dim(0), h = A.dim(1);
  Tensor out(Shape{l * v, h});
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < v; ++j)
      for (std::size_t k = 0; k < h; ++k) out[(i * v + j) * h + k] = A[i * h + k] + B[j * h + k];
  return a.tape()->record(std::move(out), {a, b}, [a, b, l, v, h](Tape& t, const Tensor& g) {
    if (needs(t, a)) {
      Tensor& ga = t.grad_ref(a);
      for (std::size_t i = 0; i < l; ++i)
        for (std::size_t k = 0; k < h; ++k) {
          double acc = 0.0;
          for (std::size_t j = 0; j < v; ++j) acc += g[(i * v + j) * h + k];
          ga[i * h + k] += static_cast<float>(acc);
        }
    }
    if (needs(t, b)) {
      std::vector<double> acc(v * h, 0.0);
      for (std::size_t i = 0; i < l; ++i)
        for (std::size_t j = 0; j < v * h; ++j) acc[j] += g[i * v * h + j];
      Tensor& gb = t.grad_ref(b);
      for (std::size_t j = 0; j < v * h; ++j) gb[j] += static_cast<float>(acc[j]);
    }
  });
}

}  // namespace h4d
