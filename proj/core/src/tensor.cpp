#include "adat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "adat/rng.hpp"

namespace adat {

namespace {

Precision g_precision = Precision::f64;

void quantize_all(std::vector<double>& v, Precision mode) {
  if (mode != Precision::f32) return;
  for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

void check_finite(const std::vector<double>& v, const char* op_name) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::runtime_error(std::string("non-finite value produced by ") + op_name);
    }
  }
}

[[noreturn]] void shape_error(const char* op_name, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op_name) + ": incompatible shapes " +
                              shape_str(a) + " and " + shape_str(b));
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

Graph* same_graph(const Tensor& a, const Tensor& b) {
  require(a.valid() && b.valid(), "operation on an empty tensor handle");
  require(a.graph() == b.graph(), "operands belong to different graphs");
  return a.graph();
}

// Rows/cols view of a tensor treated as a matrix: last axis is the column
// axis, everything before it is flattened into rows.
std::pair<std::size_t, std::size_t> as_matrix(const Shape& s) {
  require(!s.empty(), "expected a non-scalar tensor");
  std::size_t cols = s.back();
  std::size_t rows = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) rows *= s[i];
  return {rows, cols};
}

}  // namespace

void set_precision(Precision p) { g_precision = p; }
Precision precision() { return g_precision; }

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

TensorData::TensorData(Shape s, std::vector<double> v)
    : shape(std::move(s)), values(std::move(v)) {
  if (numel(shape) != values.size()) {
    throw std::invalid_argument("TensorData: shape " + shape_str(shape) +
                                " does not match " + std::to_string(values.size()) +
                                " values");
  }
}

TensorData TensorData::zeros(Shape s) {
  std::size_t n = numel(s);
  return TensorData(std::move(s), std::vector<double>(n, 0.0));
}

TensorData TensorData::full(Shape s, double fill) {
  std::size_t n = numel(s);
  return TensorData(std::move(s), std::vector<double>(n, fill));
}

const Shape& Tensor::shape() const { return graph_->node(id_).shape; }
const std::vector<double>& Tensor::values() const { return graph_->node(id_).values; }
std::size_t Tensor::size() const { return values().size(); }
std::size_t Tensor::rows() const { return shape().at(0); }
bool Tensor::requires_grad() const { return graph_->node(id_).requires_grad; }

double Tensor::scalar() const {
  require(size() == 1, "scalar() on tensor with " + std::to_string(size()) + " elements");
  return values()[0];
}

Graph::Graph() : mode_(precision()) {}

Tensor Graph::emplace(Shape shape, std::vector<double> values, bool needs_grad,
                      std::function<void(Graph&)> backprop, const char* op_name) {
  require(numel(shape) == values.size(), std::string(op_name) + ": internal shape mismatch");
  quantize_all(values, mode_);
  check_finite(values, op_name);
  Node n;
  n.shape = std::move(shape);
  n.values = std::move(values);
  n.needs_grad = needs_grad;
  if (needs_grad) {
    n.grad.assign(n.values.size(), 0.0);
    n.backprop = std::move(backprop);
  }
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Graph::leaf(TensorData data, bool requires_grad) {
  quantize_all(data.values, mode_);
  check_finite(data.values, "leaf");
  Node n;
  n.shape = std::move(data.shape);
  n.values = std::move(data.values);
  n.requires_grad = requires_grad;
  n.needs_grad = requires_grad;
  if (requires_grad) n.grad.assign(n.values.size(), 0.0);
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Graph::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  return leaf(TensorData(std::move(shape), std::move(values)), requires_grad);
}

Tensor Graph::constant(Shape shape, std::vector<double> values) {
  return leaf(TensorData(std::move(shape), std::move(values)), false);
}

Tensor Graph::scalar_leaf(double v) { return constant({1}, {v}); }

void Graph::backward(const Tensor& root) {
  require(root.valid() && root.graph() == this, "backward: root from another graph");
  const int root_id = root.node_id();
  Node& r = nodes_[static_cast<std::size_t>(root_id)];
  if (numel(r.shape) != 1) {
    throw std::invalid_argument("backward: root must hold exactly one element, got " +
                                shape_str(r.shape));
  }
  for (Node& n : nodes_) {
    if (n.needs_grad) std::fill(n.grad.begin(), n.grad.end(), 0.0);
  }
  if (!r.needs_grad) return;  // nothing on the path requires gradients
  r.grad[0] = 1.0;
  for (int id = root_id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.needs_grad && n.backprop) n.backprop(*this);
  }
  if (mode_ == Precision::f32) {
    for (Node& n : nodes_) quantize_all(n.grad, Precision::f32);
  }
}

const std::vector<double>& Graph::grad_of(const Tensor& t) const {
  const Node& n = node(t.node_id());
  require(n.needs_grad, "grad_of: tensor does not carry gradients");
  return n.grad;
}

TensorData Graph::value_of(const Tensor& t) const {
  const Node& n = node(t.node_id());
  return TensorData(n.shape, n.values);
}

// ----- elementwise -----

Tensor add(const Tensor& a, const Tensor& b) {
  Graph* g = same_graph(a, b);
  const auto& na = g->node(a.node_id());
  const auto& nb = g->node(b.node_id());
  if (na.shape != nb.shape) shape_error("add", na.shape, nb.shape);
  std::vector<double> out(na.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.values[i] + nb.values[i];
  int ia = a.node_id(), ib = b.node_id();
  bool needs = na.needs_grad || nb.needs_grad;
  Tensor t = g->emplace(na.shape, std::move(out), needs, nullptr, "add");
  if (needs) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ia, ib, self](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& pa = gr.node_mut(ia);
      auto& pb = gr.node_mut(ib);
      if (pa.needs_grad)
        for (std::size_t i = 0; i < gs.size(); ++i) pa.grad[i] += gs[i];
      if (pb.needs_grad)
        for (std::size_t i = 0; i < gs.size(); ++i) pb.grad[i] += gs[i];
    };
  }
  return t;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Graph* g = same_graph(a, b);
  const auto& na = g->node(a.node_id());
  const auto& nb = g->node(b.node_id());
  if (na.shape != nb.shape) shape_error("sub", na.shape, nb.shape);
  std::vector<double> out(na.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.values[i] - nb.values[i];
  int ia = a.node_id(), ib = b.node_id();
  bool needs = na.needs_grad || nb.needs_grad;
  Tensor t = g->emplace(na.shape, std::move(out), needs, nullptr, "sub");
  if (needs) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ia, ib, self](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& pa = gr.node_mut(ia);
      auto& pb = gr.node_mut(ib);
      if (pa.needs_grad)
        for (std::size_t i = 0; i < gs.size(); ++i) pa.grad[i] += gs[i];
      if (pb.needs_grad)
        for (std::size_t i = 0; i < gs.size(); ++i) pb.grad[i] -= gs[i];
    };
  }
  return t;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Graph* g = same_graph(a, b);
  const auto& na = g->node(a.node_id());
  const auto& nb = g->node(b.node_id());
  if (na.shape != nb.shape) shape_error("mul", na.shape, nb.shape);
  std::vector<double> out(na.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.values[i] * nb.values[i];
  int ia = a.node_id(), ib = b.node_id();
  bool needs = na.needs_grad || nb.needs_grad;
  Tensor t = g->emplace(na.shape, std::move(out), needs, nullptr, "mul");
  if (needs) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ia, ib, self](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& pa = gr.node_mut(ia);
      auto& pb = gr.node_mut(ib);
      if (pa.needs_grad)
        for (std::size_t i = 0; i < gs.size(); ++i) pa.grad[i] += gs[i] * pb.values[i];
      if (pb.needs_grad)
        for (std::size_t i = 0; i < gs.size(); ++i) pb.grad[i] += gs[i] * pa.values[i];
    };
  }
  return t;
}

Tensor scale(const Tensor& a, double c) {
  Graph* g = a.graph();
  const auto& na = g->node(a.node_id());
  std::vector<double> out(na.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.values[i] * c;
  int ia = a.node_id();
  Tensor t = g->emplace(na.shape, std::move(out), na.needs_grad, nullptr, "scale");
  if (na.needs_grad) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ia, self, c](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& pa = gr.node_mut(ia);
      for (std::size_t i = 0; i < gs.size(); ++i) pa.grad[i] += gs[i] * c;
    };
  }
  return t;
}

Tensor add_const(const Tensor& a, double c) {
  Graph* g = a.graph();
  const auto& na = g->node(a.node_id());
  std::vector<double> out(na.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.values[i] + c;
  int ia = a.node_id();
  Tensor t = g->emplace(na.shape, std::move(out), na.needs_grad, nullptr, "add_const");
  if (na.needs_grad) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ia, self](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& pa = gr.node_mut(ia);
      for (std::size_t i = 0; i < gs.size(); ++i) pa.grad[i] += gs[i];
    };
  }
  return t;
}

Tensor relu(const Tensor& a) {
  Graph* g = a.graph();
  const auto& na = g->node(a.node_id());
  std::vector<double> out(na.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.values[i] > 0.0 ? na.values[i] : 0.0;
  int ia = a.node_id();
  Tensor t = g->emplace(na.shape, std::move(out), na.needs_grad, nullptr, "relu");
  if (na.needs_grad) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ia, self](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& pa = gr.node_mut(ia);
      for (std::size_t i = 0; i < gs.size(); ++i) {
        if (pa.values[i] > 0.0) pa.grad[i] += gs[i];
      }
    };
  }
  return t;
}

// ----- matrix ops -----

Tensor matmul(const Tensor& a, const Tensor& b) {
  Graph* g = same_graph(a, b);
  const auto& na = g->node(a.node_id());
  const auto& nb = g->node(b.node_id());
  require(na.shape.size() == 2 && nb.shape.size() == 2,
          "matmul: operands must be matrices, got " + shape_str(na.shape) + " and " +
              shape_str(nb.shape));
  const std::size_t m = na.shape[0], k = na.shape[1];
  const std::size_t k2 = nb.shape[0], n = nb.shape[1];
  if (k != k2) shape_error("matmul", na.shape, nb.shape);
  std::vector<double> out(m * n, 0.0);
  const double* A = na.values.data();
  const double* B = nb.values.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = A[i * k + kk];
      if (av == 0.0) continue;
      const double* brow = B + kk * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  int ia = a.node_id(), ib = b.node_id();
  bool needs = na.needs_grad || nb.needs_grad;
  Tensor t = g->emplace({m, n}, std::move(out), needs, nullptr, "matmul");
  if (needs) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ia, ib, self, m, k, n](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& pa = gr.node_mut(ia);
      auto& pb = gr.node_mut(ib);
      if (pa.needs_grad) {  // dA = dY * B^T
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            double acc = 0.0;
            const double* grow = gs.data() + i * n;
            const double* brow = pb.values.data() + kk * n;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            pa.grad[i * k + kk] += acc;
          }
        }
      }
      if (pb.needs_grad) {  // dB = A^T * dY
        for (std::size_t kk = 0; kk < k; ++kk) {
          for (std::size_t i = 0; i < m; ++i) {
            const double av = pa.values[i * k + kk];
            if (av == 0.0) continue;
            const double* grow = gs.data() + i * n;
            double* brow = pb.grad.data() + kk * n;
            for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
        }
      }
    };
  }
  return t;
}

Tensor transpose(const Tensor& a) {
  Graph* g = a.graph();
  const auto& na = g->node(a.node_id());
  require(na.shape.size() == 2, "transpose: expected a matrix, got " + shape_str(na.shape));
  const std::size_t m = na.shape[0], n = na.shape[1];
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = na.values[i * n + j];
  int ia = a.node_id();
  Tensor t = g->emplace({n, m}, std::move(out), na.needs_grad, nullptr, "transpose");
  if (na.needs_grad) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ia, self, m, n](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& pa = gr.node_mut(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) pa.grad[i * n + j] += gs[j * m + i];
    };
  }
  return t;
}

// ----- row/column structure -----

Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_rows: no parts");
  Graph* g = parts[0].graph();
  std::size_t cols = 0, rows = 0;
  bool needs = false;
  for (const Tensor& p : parts) {
    require(p.graph() == g, "concat_rows: parts from different graphs");
    const auto& np = g->node(p.node_id());
    require(np.shape.size() == 2, "concat_rows: parts must be matrices");
    if (cols == 0) cols = np.shape[1];
    require(np.shape[1] == cols, "concat_rows: column counts differ");
    rows += np.shape[0];
    needs = needs || np.needs_grad;
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  for (const Tensor& p : parts) {
    const auto& np = g->node(p.node_id());
    offsets.push_back(out.size());
    out.insert(out.end(), np.values.begin(), np.values.end());
    ids.push_back(p.node_id());
  }
  Tensor t = g->emplace({rows, cols}, std::move(out), needs, nullptr, "concat_rows");
  if (needs) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ids, offsets, self](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      for (std::size_t pi = 0; pi < ids.size(); ++pi) {
        auto& pp = gr.node_mut(ids[pi]);
        if (!pp.needs_grad) continue;
        const std::size_t off = offsets[pi];
        for (std::size_t i = 0; i < pp.grad.size(); ++i) pp.grad[i] += gs[off + i];
      }
    };
  }
  return t;
}

Tensor slice_rows(const Tensor& a, std::size_t row_begin, std::size_t row_end) {
  Graph* g = a.graph();
  const auto& na = g->node(a.node_id());
  require(na.shape.size() == 2, "slice_rows: expected a matrix");
  const std::size_t m = na.shape[0], n = na.shape[1];
  require(row_begin <= row_end && row_end <= m,
          "slice_rows: range [" + std::to_string(row_begin) + "," + std::to_string(row_end) +
              ") out of bounds for " + shape_str(na.shape));
  const std::size_t rows = row_end - row_begin;
  std::vector<double> out(na.values.begin() + static_cast<std::ptrdiff_t>(row_begin * n),
                          na.values.begin() + static_cast<std::ptrdiff_t>(row_end * n));
  int ia = a.node_id();
  Tensor t = g->emplace({rows, n}, std::move(out), na.needs_grad, nullptr, "slice_rows");
  if (na.needs_grad) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ia, self, row_begin, n](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& pa = gr.node_mut(ia);
      for (std::size_t i = 0; i < gs.size(); ++i) pa.grad[row_begin * n + i] += gs[i];
    };
  }
  return t;
}

Tensor slice_cols(const Tensor& a, std::size_t col_begin, std::size_t col_end) {
  Graph* g = a.graph();
  const auto& na = g->node(a.node_id());
  require(na.shape.size() == 2, "slice_cols: expected a matrix");
  const std::size_t m = na.shape[0], n = na.shape[1];
  require(col_begin <= col_end && col_end <= n, "slice_cols: range out of bounds");
  const std::size_t cols = col_end - col_begin;
  std::vector<double> out(m * cols);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = na.values[i * n + col_begin + j];
  int ia = a.node_id();
  Tensor t = g->emplace({m, cols}, std::move(out), na.needs_grad, nullptr, "slice_cols");
  if (na.needs_grad) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ia, self, col_begin, n, cols, m](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& pa = gr.node_mut(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < cols; ++j)
          pa.grad[i * n + col_begin + j] += gs[i * cols + j];
    };
  }
  return t;
}

Tensor broadcast_rows(const Tensor& a, std::size_t rows) {
  Graph* g = a.graph();
  const auto& na = g->node(a.node_id());
  require(na.shape.size() == 2 && na.shape[0] == 1,
          "broadcast_rows: expected a [1 x n] matrix, got " + shape_str(na.shape));
  require(rows >= 1, "broadcast_rows: zero rows");
  const std::size_t n = na.shape[1];
  std::vector<double> out(rows * n);
  for (std::size_t i = 0; i < rows; ++i)
    std::copy(na.values.begin(), na.values.end(), out.begin() + static_cast<std::ptrdiff_t>(i * n));
  int ia = a.node_id();
  Tensor t = g->emplace({rows, n}, std::move(out), na.needs_grad, nullptr, "broadcast_rows");
  if (na.needs_grad) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ia, self, rows, n](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& pa = gr.node_mut(ia);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < n; ++j) pa.grad[j] += gs[i * n + j];
    };
  }
  return t;
}

Tensor add_rowwise(const Tensor& a, const Tensor& row) {
  Graph* g = same_graph(a, row);
  const auto& na = g->node(a.node_id());
  const auto& nr = g->node(row.node_id());
  auto [m, n] = as_matrix(na.shape);
  require(nr.values.size() == n, "add_rowwise: row vector length " +
                                     std::to_string(nr.values.size()) + " does not match " +
                                     shape_str(na.shape));
  std::vector<double> out(na.values.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = na.values[i * n + j] + nr.values[j];
  int ia = a.node_id(), ir = row.node_id();
  bool needs = na.needs_grad || nr.needs_grad;
  Tensor t = g->emplace(na.shape, std::move(out), needs, nullptr, "add_rowwise");
  if (needs) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ia, ir, self, m, n](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& pa = gr.node_mut(ia);
      auto& pr = gr.node_mut(ir);
      if (pa.needs_grad)
        for (std::size_t i = 0; i < gs.size(); ++i) pa.grad[i] += gs[i];
      if (pr.needs_grad)
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) pr.grad[j] += gs[i * n + j];
    };
  }
  return t;
}

Tensor mul_colvec(const Tensor& a, const Tensor& col) {
  Graph* g = same_graph(a, col);
  const auto& na = g->node(a.node_id());
  const auto& nc = g->node(col.node_id());
  require(na.shape.size() == 2, "mul_colvec: expected a matrix");
  const std::size_t m = na.shape[0], n = na.shape[1];
  require(nc.values.size() == m, "mul_colvec: column vector length mismatch");
  std::vector<double> out(na.values.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = na.values[i * n + j] * nc.values[i];
  int ia = a.node_id(), ic = col.node_id();
  bool needs = na.needs_grad || nc.needs_grad;
  Tensor t = g->emplace(na.shape, std::move(out), needs, nullptr, "mul_colvec");
  if (needs) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ia, ic, self, m, n](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& pa = gr.node_mut(ia);
      auto& pc = gr.node_mut(ic);
      if (pa.needs_grad)
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) pa.grad[i * n + j] += gs[i * n + j] * pc.values[i];
      if (pc.needs_grad)
        for (std::size_t i = 0; i < m; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += gs[i * n + j] * pa.values[i * n + j];
          pc.grad[i] += acc;
        }
    };
  }
  return t;
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
  Graph* g = table.graph();
  const auto& nt = g->node(table.node_id());
  require(nt.shape.size() == 2, "gather_rows: expected a matrix table");
  require(!ids.empty(), "gather_rows: empty id list");
  const std::size_t v = nt.shape[0], d = nt.shape[1];
  for (int id : ids)
    require(id >= 0 && static_cast<std::size_t>(id) < v,
            "gather_rows: id " + std::to_string(id) + " outside table of " + std::to_string(v));
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(nt.values.begin() + static_cast<std::ptrdiff_t>(ids[i] * static_cast<int>(d)), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  int it = table.node_id();
  Tensor t = g->emplace({ids.size(), d}, std::move(out), nt.needs_grad, nullptr, "gather_rows");
  if (nt.needs_grad) {
    int self = t.node_id();
    auto idcopy = ids;
    g->node_mut(self).backprop = [it, self, idcopy, d](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& pt = gr.node_mut(it);
      for (std::size_t i = 0; i < idcopy.size(); ++i)
        for (std::size_t j = 0; j < d; ++j)
          pt.grad[static_cast<std::size_t>(idcopy[i]) * d + j] += gs[i * d + j];
    };
  }
  return t;
}

Tensor shift_rows(const Tensor& a, int offset) {
  Graph* g = a.graph();
  const auto& na = g->node(a.node_id());
  require(na.shape.size() == 2, "shift_rows: expected a matrix");
  const std::size_t m = na.shape[0], n = na.shape[1];
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) - offset;
    if (src < 0 || src >= static_cast<std::ptrdiff_t>(m)) continue;
    std::copy_n(na.values.begin() + src * static_cast<std::ptrdiff_t>(n), n,
                out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  int ia = a.node_id();
  Tensor t = g->emplace(na.shape, std::move(out), na.needs_grad, nullptr, "shift_rows");
  if (na.needs_grad) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ia, self, offset, m, n](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& pa = gr.node_mut(ia);
      for (std::size_t i = 0; i < m; ++i) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) - offset;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(m)) continue;
        for (std::size_t j = 0; j < n; ++j)
          pa.grad[static_cast<std::size_t>(src) * n + j] += gs[i * n + j];
      }
    };
  }
  return t;
}

Tensor reshape(const Tensor& a, Shape shape) {
  Graph* g = a.graph();
  const auto& na = g->node(a.node_id());
  require(numel(shape) == na.values.size(), "reshape: " + shape_str(na.shape) + " to " +
                                                shape_str(shape) + " changes element count");
  std::vector<double> out = na.values;
  int ia = a.node_id();
  Tensor t = g->emplace(std::move(shape), std::move(out), na.needs_grad, nullptr, "reshape");
  if (na.needs_grad) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ia, self](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& pa = gr.node_mut(ia);
      for (std::size_t i = 0; i < gs.size(); ++i) pa.grad[i] += gs[i];
    };
  }
  return t;
}

// ----- reductions -----

Tensor sum(const Tensor& a) {
  Graph* g = a.graph();
  const auto& na = g->node(a.node_id());
  double acc = 0.0;
  for (double v : na.values) acc += v;
  int ia = a.node_id();
  Tensor t = g->emplace({1}, {acc}, na.needs_grad, nullptr, "sum");
  if (na.needs_grad) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ia, self](Graph& gr) {
      const double gs = gr.node(self).grad[0];
      auto& pa = gr.node_mut(ia);
      for (double& gv : pa.grad) gv += gs;
    };
  }
  return t;
}

Tensor mean_all(const Tensor& a) {
  const std::size_t n = a.size();
  require(n > 0, "mean_all: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Tensor mean_axis0(const Tensor& a) {
  Graph* g = a.graph();
  const auto& na = g->node(a.node_id());
  require(na.shape.size() == 2, "mean_axis0: expected a matrix");
  const std::size_t m = na.shape[0], n = na.shape[1];
  require(m >= 1, "mean_axis0: empty input");
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += na.values[i * n + j];
  for (double& v : out) v /= static_cast<double>(m);
  int ia = a.node_id();
  Tensor t = g->emplace({1, n}, std::move(out), na.needs_grad, nullptr, "mean_axis0");
  if (na.needs_grad) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ia, self, m, n](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& pa = gr.node_mut(ia);
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) pa.grad[i * n + j] += gs[j] * inv;
    };
  }
  return t;
}

// ----- normalization and softmax -----

namespace {

// Iterates over 1-D slices along `axis`, calling fn(base_index, stride).
template <typename Fn>
void for_each_lane(const Shape& shape, std::size_t axis, Fn&& fn) {
  const std::size_t rank = shape.size();
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < rank; ++i) inner *= shape[i];
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  const std::size_t extent = shape[axis];
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      fn(o * extent * inner + in, inner);
    }
  }
}

}  // namespace

Tensor softmax(const Tensor& a, std::size_t axis) {
  Graph* g = a.graph();
  const auto& na = g->node(a.node_id());
  require(axis < na.shape.size(), "softmax: axis " + std::to_string(axis) +
                                      " out of range for " + shape_str(na.shape));
  const std::size_t extent = na.shape[axis];
  require(extent > 0, "softmax: empty axis");
  std::vector<double> out(na.values.size());
  for_each_lane(na.shape, axis, [&](std::size_t base, std::size_t stride) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < extent; ++i) mx = std::max(mx, na.values[base + i * stride]);
    if (!std::isfinite(mx)) throw std::runtime_error("softmax: non-finite input");
    double denom = 0.0;
    for (std::size_t i = 0; i < extent; ++i) {
      const double e = std::exp(na.values[base + i * stride] - mx);
      out[base + i * stride] = e;
      denom += e;
    }
    if (!(denom > 0.0) || !std::isfinite(denom))
      throw std::runtime_error("softmax: exponential overflow");
    for (std::size_t i = 0; i < extent; ++i) out[base + i * stride] /= denom;
  });
  int ia = a.node_id();
  Shape shp = na.shape;
  Tensor t = g->emplace(na.shape, std::move(out), na.needs_grad, nullptr, "softmax");
  if (na.needs_grad) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ia, self, shp, axis, extent](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      const auto& y = gr.node(self).values;
      auto& pa = gr.node_mut(ia);
      for_each_lane(shp, axis, [&](std::size_t base, std::size_t stride) {
        double dot = 0.0;
        for (std::size_t i = 0; i < extent; ++i)
          dot += gs[base + i * stride] * y[base + i * stride];
        for (std::size_t i = 0; i < extent; ++i) {
          const std::size_t idx = base + i * stride;
          pa.grad[idx] += y[idx] * (gs[idx] - dot);
        }
      });
    };
  }
  return t;
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  Graph* g = a.graph();
  const auto& na = g->node(a.node_id());
  require(axis < na.shape.size(), "log_softmax: axis out of range");
  const std::size_t extent = na.shape[axis];
  require(extent > 0, "log_softmax: empty axis");
  std::vector<double> out(na.values.size());
  for_each_lane(na.shape, axis, [&](std::size_t base, std::size_t stride) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < extent; ++i) mx = std::max(mx, na.values[base + i * stride]);
    if (!std::isfinite(mx)) throw std::runtime_error("log_softmax: non-finite input");
    double denom = 0.0;
    for (std::size_t i = 0; i < extent; ++i) denom += std::exp(na.values[base + i * stride] - mx);
    const double lse = mx + std::log(denom);
    for (std::size_t i = 0; i < extent; ++i)
      out[base + i * stride] = na.values[base + i * stride] - lse;
  });
  int ia = a.node_id();
  Shape shp = na.shape;
  Tensor t = g->emplace(na.shape, std::move(out), na.needs_grad, nullptr, "log_softmax");
  if (na.needs_grad) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ia, self, shp, axis, extent](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      const auto& y = gr.node(self).values;
      auto& pa = gr.node_mut(ia);
      for_each_lane(shp, axis, [&](std::size_t base, std::size_t stride) {
        double total = 0.0;
        for (std::size_t i = 0; i < extent; ++i) total += gs[base + i * stride];
        for (std::size_t i = 0; i < extent; ++i) {
          const std::size_t idx = base + i * stride;
          pa.grad[idx] += gs[idx] - std::exp(y[idx]) * total;
        }
      });
    };
  }
  return t;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  Graph* g = same_graph(x, gain);
  same_graph(x, bias);
  require(eps > 0.0, "layer_norm: eps must be positive");
  const auto& nx = g->node(x.node_id());
  const auto& ng = g->node(gain.node_id());
  const auto& nb = g->node(bias.node_id());
  auto [rows, cols] = as_matrix(nx.shape);
  require(cols > 0, "layer_norm: empty last axis");
  require(ng.values.size() == cols && nb.values.size() == cols,
          "layer_norm: gain/bias length must equal last axis extent " + std::to_string(cols));
  std::vector<double> out(nx.values.size());
  auto xhat = std::make_shared<std::vector<double>>(nx.values.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = nx.values.data() + r * cols;
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += row[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double istd = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = istd;
    for (std::size_t j = 0; j < cols; ++j) {
      const double h = (row[j] - mean) * istd;
      (*xhat)[r * cols + j] = h;
      out[r * cols + j] = ng.values[j] * h + nb.values[j];
    }
  }
  int ix = x.node_id(), ig = gain.node_id(), ib = bias.node_id();
  bool needs = nx.needs_grad || ng.needs_grad || nb.needs_grad;
  Tensor t = g->emplace(nx.shape, std::move(out), needs, nullptr, "layer_norm");
  if (needs) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ix, ig, ib, self, rows, cols, xhat, inv_std](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& px = gr.node_mut(ix);
      auto& pg = gr.node_mut(ig);
      auto& pb = gr.node_mut(ib);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* grow = gs.data() + r * cols;
        const double* hrow = xhat->data() + r * cols;
        if (pg.needs_grad)
          for (std::size_t j = 0; j < cols; ++j) pg.grad[j] += grow[j] * hrow[j];
        if (pb.needs_grad)
          for (std::size_t j = 0; j < cols; ++j) pb.grad[j] += grow[j];
        if (px.needs_grad) {
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t j = 0; j < cols; ++j) {
            const double dh = grow[j] * pg.values[j];
            mean_dh += dh;
            mean_dh_h += dh * hrow[j];
          }
          mean_dh /= static_cast<double>(cols);
          mean_dh_h /= static_cast<double>(cols);
          const double istd = (*inv_std)[r];
          for (std::size_t j = 0; j < cols; ++j) {
            const double dh = grow[j] * pg.values[j];
            px.grad[r * cols + j] += istd * (dh - mean_dh - hrow[j] * mean_dh_h);
          }
        }
      }
    };
  }
  return t;
}

// ----- convolution and pooling -----

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
  Graph* g = same_graph(input, kernels);
  same_graph(input, bias);
  const auto& ni = g->node(input.node_id());
  const auto& nk = g->node(kernels.node_id());
  const auto& nb = g->node(bias.node_id());
  require(ni.shape.size() == 4, "conv2d: input must be [frames x channels x H x W], got " +
                                    shape_str(ni.shape));
  require(nk.shape.size() == 4, "conv2d: kernels must be [out x in x kh x kw]");
  const std::size_t N = ni.shape[0], C = ni.shape[1], H = ni.shape[2], W = ni.shape[3];
  const std::size_t O = nk.shape[0], KC = nk.shape[1], KH = nk.shape[2], KW = nk.shape[3];
  if (C != KC) shape_error("conv2d (channel mismatch)", ni.shape, nk.shape);
  require(H >= KH && W >= KW, "conv2d: input " + shape_str(ni.shape) +
                                  " smaller than kernel " + shape_str(nk.shape));
  require(nb.values.size() == O, "conv2d: bias length must equal kernel count");
  const std::size_t OH = H - KH + 1, OW = W - KW + 1;
  std::vector<double> out(N * O * OH * OW, 0.0);
  const auto in_at = [&](std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return ni.values[((n * C + c) * H + y) * W + x];
  };
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t o = 0; o < O; ++o) {
      for (std::size_t y = 0; y < OH; ++y) {
        for (std::size_t x = 0; x < OW; ++x) {
          double acc = nb.values[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < KH; ++u)
              for (std::size_t v = 0; v < KW; ++v)
                acc += in_at(n, c, y + u, x + v) * nk.values[((o * C + c) * KH + u) * KW + v];
          out[((n * O + o) * OH + y) * OW + x] = acc;
        }
      }
    }
  }
  int ii = input.node_id(), ik = kernels.node_id(), ib = bias.node_id();
  bool needs = ni.needs_grad || nk.needs_grad || nb.needs_grad;
  Tensor t = g->emplace({N, O, OH, OW}, std::move(out), needs, nullptr, "conv2d");
  if (needs) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ii, ik, ib, self, N, C, H, W, O, KH, KW, OH, OW](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& pi = gr.node_mut(ii);
      auto& pk = gr.node_mut(ik);
      auto& pb = gr.node_mut(ib);
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t o = 0; o < O; ++o) {
          for (std::size_t y = 0; y < OH; ++y) {
            for (std::size_t x = 0; x < OW; ++x) {
              const double gv = gs[((n * O + o) * OH + y) * OW + x];
              if (gv == 0.0) continue;
              if (pb.needs_grad) pb.grad[o] += gv;
              for (std::size_t c = 0; c < C; ++c) {
                for (std::size_t u = 0; u < KH; ++u) {
                  for (std::size_t v = 0; v < KW; ++v) {
                    const std::size_t xi = ((n * C + c) * H + y + u) * W + x + v;
                    const std::size_t ki = ((o * C + c) * KH + u) * KW + v;
                    if (pk.needs_grad) pk.grad[ki] += gv * pi.values[xi];
                    if (pi.needs_grad) pi.grad[xi] += gv * pk.values[ki];
                  }
                }
              }
            }
          }
        }
      }
    };
  }
  return t;
}

Tensor maxpool2x2(const Tensor& input) {
  Graph* g = input.graph();
  const auto& ni = g->node(input.node_id());
  require(ni.shape.size() == 4, "maxpool2x2: input must be [frames x channels x H x W]");
  const std::size_t N = ni.shape[0], C = ni.shape[1], H = ni.shape[2], W = ni.shape[3];
  require(H >= 2 && W >= 2, "maxpool2x2: spatial extents must be at least 2, got " +
                                shape_str(ni.shape));
  const std::size_t OH = H / 2, OW = W / 2;
  std::vector<double> out(N * C * OH * OW);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t y = 0; y < OH; ++y) {
        for (std::size_t x = 0; x < OW; ++x) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          // ties keep the first cell in row-major order
          for (std::size_t u = 0; u < 2; ++u) {
            for (std::size_t v = 0; v < 2; ++v) {
              const std::size_t idx = ((n * C + c) * H + 2 * y + u) * W + 2 * x + v;
              if (ni.values[idx] > best) {
                best = ni.values[idx];
                best_idx = idx;
              }
            }
          }
          const std::size_t oi = ((n * C + c) * OH + y) * OW + x;
          out[oi] = best;
          (*argmax)[oi] = best_idx;
        }
      }
    }
  }
  int ii = input.node_id();
  Tensor t = g->emplace({N, C, OH, OW}, std::move(out), ni.needs_grad, nullptr, "maxpool2x2");
  if (ni.needs_grad) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ii, self, argmax](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& pi = gr.node_mut(ii);
      for (std::size_t i = 0; i < gs.size(); ++i) pi.grad[(*argmax)[i]] += gs[i];
    };
  }
  return t;
}

// ----- fused multi-head attention -----

Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
              double scale_denom, const AttendMask& mask) {
  Graph* g = same_graph(q, k);
  same_graph(q, v);
  const auto& nq = g->node(q.node_id());
  const auto& nk = g->node(k.node_id());
  const auto& nv = g->node(v.node_id());
  require(nq.shape.size() == 2 && nk.shape.size() == 2 && nv.shape.size() == 2,
          "attend: q/k/v must be matrices");
  const std::size_t Lq = nq.shape[0], d = nq.shape[1];
  const std::size_t Lk = nk.shape[0];
  require(Lq >= 1 && Lk >= 1, "attend: empty sequence");
  require(nk.shape[1] == d && nv.shape[1] == d && nv.shape[0] == Lk,
          "attend: q " + shape_str(nq.shape) + ", k " + shape_str(nk.shape) + ", v " +
              shape_str(nv.shape) + " are inconsistent");
  require(heads >= 1 && d % static_cast<std::size_t>(heads) == 0,
          "attend: model width " + std::to_string(d) + " not divisible by " +
              std::to_string(heads) + " heads");
  require(scale_denom > 0.0, "attend: scale must be positive");
  if (mask.kind == AttendMask::Kind::causal)
    require(Lq == Lk, "attend: causal mask requires equal query/key lengths");
  if (mask.kind == AttendMask::Kind::row_sets) {
    require(mask.row_sets.size() == Lq, "attend: one index set per query row required");
    for (std::size_t i = 0; i < Lq; ++i) {
      require(!mask.row_sets[i].empty(), "attend: empty index set for row " + std::to_string(i));
      for (int j : mask.row_sets[i])
        require(j >= 0 && static_cast<std::size_t>(j) < Lk,
                "attend: index set entry out of range");
    }
  }
  const std::size_t dh = d / static_cast<std::size_t>(heads);
  const std::size_t H = static_cast<std::size_t>(heads);
  const double inv_scale = 1.0 / scale_denom;

  // Weights are stored densely per (head, query, key); masked positions stay 0.
  auto weights = std::make_shared<std::vector<double>>(H * Lq * Lk, 0.0);
  auto allowed_of = [&](std::size_t i, std::vector<int>& scratch) -> const std::vector<int>& {
    switch (mask.kind) {
      case AttendMask::Kind::row_sets:
        return mask.row_sets[i];
      case AttendMask::Kind::causal:
        scratch.resize(i + 1);
        for (std::size_t j = 0; j <= i; ++j) scratch[j] = static_cast<int>(j);
        return scratch;
      case AttendMask::Kind::dense:
      default:
        scratch.resize(Lk);
        for (std::size_t j = 0; j < Lk; ++j) scratch[j] = static_cast<int>(j);
        return scratch;
    }
  };

  std::vector<double> out(Lq * d, 0.0);
  std::vector<int> scratch;
  std::vector<double> logits;
  for (std::size_t h = 0; h < H; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < Lq; ++i) {
      const std::vector<int>& allow = allowed_of(i, scratch);
      logits.resize(allow.size());
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < allow.size(); ++a) {
        const std::size_t j = static_cast<std::size_t>(allow[a]);
        double dot = 0.0;
        for (std::size_t c = 0; c < dh; ++c)
          dot += nq.values[i * d + off + c] * nk.values[j * d + off + c];
        logits[a] = dot * inv_scale;
        mx = std::max(mx, logits[a]);
      }
      double denom = 0.0;
      for (double& lg : logits) {
        lg = std::exp(lg - mx);
        denom += lg;
      }
      if (!(denom > 0.0) || !std::isfinite(denom))
        throw std::runtime_error("attend: softmax overflow");
      for (std::size_t a = 0; a < allow.size(); ++a) {
        const std::size_t j = static_cast<std::size_t>(allow[a]);
        const double w = logits[a] / denom;
        (*weights)[(h * Lq + i) * Lk + j] = w;
        for (std::size_t c = 0; c < dh; ++c) out[i * d + off + c] += w * nv.values[j * d + off + c];
      }
    }
  }

  int iq = q.node_id(), ik = k.node_id(), iv = v.node_id();
  bool needs = nq.needs_grad || nk.needs_grad || nv.needs_grad;
  AttendMask mask_copy = mask;
  Tensor t = g->emplace({Lq, d}, std::move(out), needs, nullptr, "attend");
  if (needs) {
    int self = t.node_id();
    g->node_mut(self).backprop = [iq, ik, iv, self, H, Lq, Lk, d, dh, inv_scale, weights,
                                  mask_copy](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& pq = gr.node_mut(iq);
      auto& pk = gr.node_mut(ik);
      auto& pv = gr.node_mut(iv);
      std::vector<int> scratch;
      auto allowed_of = [&](std::size_t i) -> const std::vector<int>& {
        switch (mask_copy.kind) {
          case AttendMask::Kind::row_sets:
            return mask_copy.row_sets[i];
          case AttendMask::Kind::causal:
            scratch.resize(i + 1);
            for (std::size_t j = 0; j <= i; ++j) scratch[j] = static_cast<int>(j);
            return scratch;
          case AttendMask::Kind::dense:
          default:
            scratch.resize(Lk);
            for (std::size_t j = 0; j < Lk; ++j) scratch[j] = static_cast<int>(j);
            return scratch;
        }
      };
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < Lq; ++i) {
          const std::vector<int>& allow = allowed_of(i);
          // dW[i,j] = <dO_i, V_j>; dS = W .* (dW - sum_j W dW)
          double wdw = 0.0;
          std::vector<double> dw(allow.size());
          for (std::size_t a = 0; a < allow.size(); ++a) {
            const std::size_t j = static_cast<std::size_t>(allow[a]);
            double dot = 0.0;
            for (std::size_t c = 0; c < dh; ++c)
              dot += gs[i * d + off + c] * pv.values[j * d + off + c];
            dw[a] = dot;
            wdw += (*weights)[(h * Lq + i) * Lk + j] * dot;
          }
          for (std::size_t a = 0; a < allow.size(); ++a) {
            const std::size_t j = static_cast<std::size_t>(allow[a]);
            const double w = (*weights)[(h * Lq + i) * Lk + j];
            const double ds = w * (dw[a] - wdw) * inv_scale;
            if (pv.needs_grad)
              for (std::size_t c = 0; c < dh; ++c)
                pv.grad[j * d + off + c] += w * gs[i * d + off + c];
            if (pq.needs_grad)
              for (std::size_t c = 0; c < dh; ++c)
                pq.grad[i * d + off + c] += ds * pk.values[j * d + off + c];
            if (pk.needs_grad)
              for (std::size_t c = 0; c < dh; ++c)
                pk.grad[j * d + off + c] += ds * pq.values[i * d + off + c];
          }
        }
      }
    };
  }
  return t;
}

Tensor dropout(const Tensor& a, double rate, Rng& rng) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
  if (rate == 0.0) return a;
  Graph* g = a.graph();
  const auto& na = g->node(a.node_id());
  const double keep = 1.0 - rate;
  const double inv_keep = 1.0 / keep;
  auto mask = std::make_shared<std::vector<double>>(na.values.size());
  std::vector<double> out(na.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double m = rng.uniform() < rate ? 0.0 : inv_keep;
    (*mask)[i] = m;
    out[i] = na.values[i] * m;
  }
  int ia = a.node_id();
  Tensor t = g->emplace(na.shape, std::move(out), na.needs_grad, nullptr, "dropout");
  if (na.needs_grad) {
    int self = t.node_id();
    g->node_mut(self).backprop = [ia, self, mask](Graph& gr) {
      const auto& gs = gr.node(self).grad;
      auto& pa = gr.node_mut(ia);
      for (std::size_t i = 0; i < gs.size(); ++i) pa.grad[i] += gs[i] * (*mask)[i];
    };
  }
  return t;
}

std::vector<int> argmax_rows(const TensorData& m) {
  if (m.shape.size() != 2) throw std::invalid_argument("argmax_rows: expected a matrix");
  const std::size_t rows = m.shape[0], cols = m.shape[1];
  if (cols == 0) throw std::invalid_argument("argmax_rows: empty rows");
  std::vector<int> out(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < cols; ++j)
      if (m.values[i * cols + j] > m.values[i * cols + best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> argmax_rows(const Tensor& m) {
  return argmax_rows(m.graph()->value_of(m));
}

}  // namespace adat
