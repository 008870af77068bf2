#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace adat {

// Numeric precision of a run. f64 keeps full double precision; f32 rounds
// every recorded value through IEEE-754 binary32 after each operation.
// The mode is global and must not change while a Graph is alive.
enum class Precision { f64, f32 };

void set_precision(Precision p);
Precision precision();

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Plain shape+values container used for parameters, fixtures and files.
struct TensorData {
  Shape shape;
  std::vector<double> values;

  TensorData() = default;
  TensorData(Shape s, std::vector<double> v);

  static TensorData zeros(Shape s);
  static TensorData full(Shape s, double fill);

  std::size_t size() const { return values.size(); }
  bool operator==(const TensorData& other) const = default;
};

class Graph;

// Lightweight handle into a Graph's computation record.
class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const;
  const std::vector<double>& values() const;
  std::size_t size() const;
  std::size_t rows() const;  // shape[0] of a matrix
  bool requires_grad() const;
  double scalar() const;  // value of a single-element tensor

  Graph* graph() const { return graph_; }
  int node_id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Tensor(Graph* g, int id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  int id_ = -1;
};

// Sparsity pattern for the fused attention operation.
struct AttendMask {
  enum class Kind { dense, causal, row_sets };
  Kind kind = Kind::dense;
  // For row_sets: allowed key positions per query row, each sorted ascending.
  std::vector<std::vector<int>> row_sets;

  static AttendMask dense() { return {}; }
  static AttendMask causal() { return {Kind::causal, {}}; }
  static AttendMask rows(std::vector<std::vector<int>> sets) {
    return {Kind::row_sets, std::move(sets)};
  }
};

// Records a forward computation and runs reverse-mode differentiation over
// it. Nodes are stored in creation order; backward walks ids in reverse,
// which is a reverse topological order, so gradient accumulation is
// deterministic. Single-threaded by contract.
class Graph {
 public:
  Graph();

  Tensor leaf(TensorData data, bool requires_grad = false);
  Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = false);
  Tensor constant(Shape shape, std::vector<double> values);
  Tensor scalar_leaf(double v);

  // Accumulates d(root)/d(node) for every node that can reach a
  // requires_grad leaf. root must hold exactly one element.
  void backward(const Tensor& root);

  const std::vector<double>& grad_of(const Tensor& t) const;
  TensorData value_of(const Tensor& t) const;

  std::size_t node_count() const { return nodes_.size(); }
  Precision mode() const { return mode_; }

  // --- used by operation implementations ---
  struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // allocated iff needs_grad
    bool requires_grad = false;
    bool needs_grad = false;
    std::function<void(Graph&)> backprop;
  };
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  Node& node_mut(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  Tensor emplace(Shape shape, std::vector<double> values, bool needs_grad,
                 std::function<void(Graph&)> backprop, const char* op_name);

 private:
  std::vector<Node> nodes_;
  Precision mode_;
};

// ----- recorded operations -----
// All of these define gradients and are covered by finite-difference checks.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor log_softmax(const Tensor& a, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
Tensor sum(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor mean_axis0(const Tensor& a);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t row_begin, std::size_t row_end);
Tensor slice_cols(const Tensor& a, std::size_t col_begin, std::size_t col_end);
Tensor broadcast_rows(const Tensor& a, std::size_t rows);
Tensor add_rowwise(const Tensor& a, const Tensor& row);
Tensor mul_colvec(const Tensor& a, const Tensor& col);
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);
Tensor shift_rows(const Tensor& a, int offset);
Tensor reshape(const Tensor& a, Shape shape);
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias);
Tensor maxpool2x2(const Tensor& input);
Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
              double scale_denom, const AttendMask& mask);
class Rng;
Tensor dropout(const Tensor& a, double rate, Rng& rng);

// Row-wise argmax over a [m x n] matrix (not recorded, forward only).
std::vector<int> argmax_rows(const TensorData& m);
std::vector<int> argmax_rows(const Tensor& m);

}  // namespace adat
