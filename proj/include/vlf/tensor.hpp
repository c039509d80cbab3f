#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vlf {

namespace detail {
struct TensorNode;
}

// Dense 64-bit float tensor participating in a define-by-run reverse-mode
// autodiff graph. A Tensor is a value-semantic handle; copies alias the same
// node. Shape is immutable after construction. The graph is rebuilt on every
// forward pass and torn down when the last handle goes away.
//
// Threading: a graph and its tensors are confined to one thread during
// construction and backward; after backward everything is read-only and may
// be shared. Independent graphs can run on independent threads.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value,
                     bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // Row-major rows x cols matrix.
  static Tensor matrix(int rows, int cols, std::vector<double> data,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const;
  int rank() const;
  std::size_t size() const;
  int rows() const;  // rank-2 only
  int cols() const;  // rank-2 only

  double value() const;  // scalar tensors only
  double at(std::size_t flat_index) const;
  double at(int r, int c) const;
  std::span<const double> data() const;
  // Leaf initialization / optimizer updates only; never call on a tensor that
  // is part of a live graph you still intend to backward through.
  std::span<double> mutable_data();

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Fresh leaf with copied values and no graph history.
  Tensor detached(bool requires_grad = false) const;

  detail::TensorNode* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node);
  std::shared_ptr<detail::TensorNode> node_;

  friend Tensor make_op(std::vector<int>, std::vector<double>,
                        std::vector<Tensor>,
                        std::function<void(detail::TensorNode&)>);
};

namespace detail {

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(TensorNode&)> backprop;
};

std::vector<double>& ensure_grad(TensorNode& node);

}  // namespace detail

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);           // same shape
Tensor add_row_bias(const Tensor& a, const Tensor& b);  // [m x n] + [1 x n]
Tensor hadamard(const Tensor& a, const Tensor& b);      // same shape
Tensor scale(const Tensor& a, double c);
Tensor vtanh(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor mean_rows(const Tensor& a);  // [n x d] -> [1 x d]
// Column-wise max over rows; gradient routes to the first argmax row.
Tensor max_rows(const Tensor& a);  // [n x d] -> [1 x d]
Tensor sum_all(const Tensor& a);    // -> scalar
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, int begin, int count);
Tensor slice_cols(const Tensor& a, int begin, int count);
Tensor reshape(const Tensor& a, std::vector<int> shape);
// [h x w x c] -> [(h/p * w/p) x (p*p*c)], non-overlapping patches in row-major
// patch order; within a patch, (dy, dx, channel) row-major.
Tensor extract_patches(const Tensor& map, int patch);
// Gather rows of an embedding table; gradient scatters back into the table.
Tensor embed_rows(const Tensor& table, const std::vector<int>& ids);
// Mean cross-entropy of row-wise logits against integer targets.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);
// Mean cross-entropy over positions where mask != 0.
Tensor masked_cross_entropy(const Tensor& logits,
                            const std::vector<int>& targets,
                            const std::vector<std::uint8_t>& mask);

// ---- autodiff -------------------------------------------------------------

// Populates grad on every requires_grad tensor reachable from loss.
// loss must be scalar. Accumulation across fan-out is additive.
void backward(const Tensor& loss);

// Topological order of the graph under root: every node's parents precede it,
// each node listed exactly once. Exposed for inspection and tests.
std::vector<const detail::TensorNode*> topo_order(const Tensor& root);

// Compares the analytic gradient of f at x against central differences.
// Returns the max over coordinates of |a - n| / max(1e-8, |a| + |n|).
// f must be deterministic; eps must lie in (0, 1e-2].
double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x, double eps);

std::string shape_to_string(const std::vector<int>& shape);

}  // namespace vlf
