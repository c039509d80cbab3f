#include "vlf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "vlf/errors.hpp"

namespace vlf {

using detail::TensorNode;
using detail::ensure_grad;

namespace {

std::size_t shape_product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (const int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

void validate_shape(const std::vector<int>& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
  for (const int d : shape) {
    if (d <= 0) {
      throw ShapeError("tensor dimensions must be positive, got " +
                       shape_to_string(shape));
    }
  }
}

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(what) + " expects a rank-2 tensor, got " +
                     shape_to_string(t.shape()));
  }
}

}  // namespace

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace detail {
std::vector<double>& ensure_grad(TensorNode& node) {
  if (node.grad.empty()) node.grad.assign(node.data.size(), 0.0);
  return node.grad;
}
}  // namespace detail

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  validate_shape(shape);
  auto node = std::make_shared<TensorNode>();
  node->data.assign(shape_product(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data,
                         bool requires_grad) {
  validate_shape(shape);
  if (shape_product(shape) != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_to_string(shape));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> data,
                      bool requires_grad) {
  return from_data({rows, cols}, std::move(data), requires_grad);
}

const std::vector<int>& Tensor::shape() const { return node_->shape; }
int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }
std::size_t Tensor::size() const { return node_->data.size(); }

int Tensor::rows() const {
  require_rank2(*this, "rows()");
  return node_->shape[0];
}

int Tensor::cols() const {
  require_rank2(*this, "cols()");
  return node_->shape[1];
}

double Tensor::value() const {
  if (size() != 1) {
    throw ContractError("value() requires a scalar tensor, got " +
                        shape_to_string(shape()));
  }
  return node_->data[0];
}

double Tensor::at(std::size_t flat_index) const {
  return node_->data.at(flat_index);
}

double Tensor::at(int r, int c) const {
  require_rank2(*this, "at(r, c)");
  return node_->data[static_cast<std::size_t>(r) * node_->shape[1] + c];
}

std::span<const double> Tensor::data() const {
  return {node_->data.data(), node_->data.size()};
}

std::span<double> Tensor::mutable_data() {
  return {node_->data.data(), node_->data.size()};
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return {node_->grad.data(), node_->grad.size()};
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detached(bool requires_grad) const {
  return from_data(node_->shape, node_->data, requires_grad);
}

// ---- op construction -------------------------------------------------------

Tensor make_op(std::vector<int> shape, std::vector<double> data,
               std::vector<Tensor> inputs,
               std::function<void(TensorNode&)> backprop) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs_grad = false;
  for (const Tensor& in : inputs) needs_grad = needs_grad || in.requires_grad();
  node->requires_grad = needs_grad;
  if (needs_grad) {
    node->parents.reserve(inputs.size());
    for (const Tensor& in : inputs) node->parents.push_back(in.node_);
    node->backprop = std::move(backprop);
  }
  return Tensor(std::move(node));
}

namespace {

// Shorthand for backprop closures.
TensorNode& parent(TensorNode& self, std::size_t i) {
  return *self.parents[i];
}

}  // namespace

// ---- operations ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const int m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2) {
    throw ShapeError("matmul inner dimensions differ: " +
                     shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  const auto av = a.data();
  const auto bv = b.data();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double aip = av[static_cast<std::size_t>(i) * k + p];
      const std::size_t brow = static_cast<std::size_t>(p) * n;
      const std::size_t orow = static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) out[orow + j] += aip * bv[brow + j];
    }
  }
  return make_op(
      {m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& self) {
        TensorNode& na = parent(self, 0);
        TensorNode& nb = parent(self, 1);
        const std::vector<double>& dc = self.grad;
        if (na.requires_grad) {
          auto& da = ensure_grad(na);  // dA = dC * B^T
          for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
              double s = 0.0;
              for (int j = 0; j < n; ++j)
                s += dc[static_cast<std::size_t>(i) * n + j] *
                     nb.data[static_cast<std::size_t>(p) * n + j];
              da[static_cast<std::size_t>(i) * k + p] += s;
            }
        }
        if (nb.requires_grad) {
          auto& db = ensure_grad(nb);  // dB = A^T * dC
          for (int p = 0; p < k; ++p)
            for (int j = 0; j < n; ++j) {
              double s = 0.0;
              for (int i = 0; i < m; ++i)
                s += na.data[static_cast<std::size_t>(i) * k + p] *
                     dc[static_cast<std::size_t>(i) * n + j];
              db[static_cast<std::size_t>(p) * n + j] += s;
            }
        }
      });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  const auto av = a.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(j) * m + i] =
          av[static_cast<std::size_t>(i) * n + j];
  return make_op({n, m}, std::move(out), {a}, [m, n](TensorNode& self) {
    TensorNode& na = parent(self, 0);
    if (!na.requires_grad) return;
    auto& da = ensure_grad(na);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        da[static_cast<std::size_t>(i) * n + j] +=
            self.grad[static_cast<std::size_t>(j) * m + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add requires identical shapes: " +
                     shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  std::vector<double> out(a.size());
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
    for (int p = 0; p < 2; ++p) {
      TensorNode& np = parent(self, p);
      if (!np.requires_grad) continue;
      auto& dp = ensure_grad(np);
      for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += self.grad[i];
    }
  });
}

Tensor add_row_bias(const Tensor& a, const Tensor& b) {
  require_rank2(a, "add_row_bias");
  require_rank2(b, "add_row_bias");
  if (b.rows() != 1 || b.cols() != a.cols()) {
    throw ShapeError("add_row_bias requires bias [1x" +
                     std::to_string(a.cols()) + "], got " +
                     shape_to_string(b.shape()));
  }
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  const auto av = a.data(), bv = b.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] =
          av[static_cast<std::size_t>(i) * n + j] + bv[j];
  return make_op(a.shape(), std::move(out), {a, b}, [m, n](TensorNode& self) {
    TensorNode& na = parent(self, 0);
    TensorNode& nb = parent(self, 1);
    if (na.requires_grad) {
      auto& da = ensure_grad(na);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += self.grad[i];
    }
    if (nb.requires_grad) {
      auto& db = ensure_grad(nb);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          db[j] += self.grad[static_cast<std::size_t>(i) * n + j];
    }
  });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("hadamard requires identical shapes: " +
                     shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  std::vector<double> out(a.size());
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
    TensorNode& na = parent(self, 0);
    TensorNode& nb = parent(self, 1);
    if (na.requires_grad) {
      auto& da = ensure_grad(na);
      for (std::size_t i = 0; i < da.size(); ++i)
        da[i] += self.grad[i] * nb.data[i];
    }
    if (nb.requires_grad) {
      auto& db = ensure_grad(nb);
      for (std::size_t i = 0; i < db.size(); ++i)
        db[i] += self.grad[i] * na.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  const auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  return make_op(a.shape(), std::move(out), {a}, [c](TensorNode& self) {
    TensorNode& na = parent(self, 0);
    if (!na.requires_grad) return;
    auto& da = ensure_grad(na);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += self.grad[i] * c;
  });
}

Tensor vtanh(const Tensor& a) {
  std::vector<double> out(a.size());
  const auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
  return make_op(a.shape(), std::move(out), {a}, [](TensorNode& self) {
    TensorNode& na = parent(self, 0);
    if (!na.requires_grad) return;
    auto& da = ensure_grad(na);
    for (std::size_t i = 0; i < da.size(); ++i)
      da[i] += self.grad[i] * (1.0 - self.data[i] * self.data[i]);
  });
}

Tensor softmax_rows(const Tensor& a) {
  require_rank2(a, "softmax_rows");
  const int m = a.rows(), n = a.cols();
  const auto av = a.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(av[i])) {
      throw NumericError("softmax_rows input contains a non-finite value");
    }
  }
  std::vector<double> out(a.size());
  for (int i = 0; i < m; ++i) {
    const std::size_t row = static_cast<std::size_t>(i) * n;
    double mx = av[row];
    for (int j = 1; j < n; ++j) mx = std::max(mx, av[row + j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      out[row + j] = std::exp(av[row + j] - mx);
      sum += out[row + j];
    }
    for (int j = 0; j < n; ++j) out[row + j] /= sum;
  }
  return make_op({m, n}, std::move(out), {a}, [m, n](TensorNode& self) {
    TensorNode& na = parent(self, 0);
    if (!na.requires_grad) return;
    auto& da = ensure_grad(na);
    for (int i = 0; i < m; ++i) {
      const std::size_t row = static_cast<std::size_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += self.grad[row + j] * self.data[row + j];
      for (int j = 0; j < n; ++j)
        da[row + j] += self.data[row + j] * (self.grad[row + j] - dot);
    }
  });
}

Tensor mean_rows(const Tensor& a) {
  require_rank2(a, "mean_rows");
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(n, 0.0);
  const auto av = a.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[j] += av[static_cast<std::size_t>(i) * n + j];
  for (int j = 0; j < n; ++j) out[j] /= m;
  return make_op({1, n}, std::move(out), {a}, [m, n](TensorNode& self) {
    TensorNode& na = parent(self, 0);
    if (!na.requires_grad) return;
    auto& da = ensure_grad(na);
    const double inv = 1.0 / m;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        da[static_cast<std::size_t>(i) * n + j] += self.grad[j] * inv;
  });
}

Tensor max_rows(const Tensor& a) {
  require_rank2(a, "max_rows");
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(n);
  std::vector<int> argmax(n, 0);
  const auto av = a.data();
  for (int j = 0; j < n; ++j) {
    out[j] = av[j];
    for (int i = 1; i < m; ++i) {
      const double v = av[static_cast<std::size_t>(i) * n + j];
      if (v > out[j]) {
        out[j] = v;
        argmax[j] = i;
      }
    }
  }
  return make_op({1, n}, std::move(out), {a},
                 [n, argmax = std::move(argmax)](TensorNode& self) {
                   TensorNode& na = parent(self, 0);
                   if (!na.requires_grad) return;
                   auto& da = ensure_grad(na);
                   for (int j = 0; j < n; ++j)
                     da[static_cast<std::size_t>(argmax[j]) * n + j] +=
                         self.grad[j];
                 });
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (const double v : a.data()) s += v;
  return make_op({1}, {s}, {a}, [](TensorNode& self) {
    TensorNode& na = parent(self, 0);
    if (!na.requires_grad) return;
    auto& da = ensure_grad(na);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += self.grad[0];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows requires >= 1 tensor");
  const int n = parts[0].cols();
  int m = 0;
  for (const Tensor& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.cols() != n) {
      throw ShapeError("concat_rows column mismatch: " +
                       shape_to_string(parts[0].shape()) + " vs " +
                       shape_to_string(p.shape()));
    }
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m) * n);
  for (const Tensor& p : parts) {
    const auto pv = p.data();
    out.insert(out.end(), pv.begin(), pv.end());
  }
  return make_op({m, n}, std::move(out), parts, [](TensorNode& self) {
    std::size_t offset = 0;
    for (auto& pn : self.parents) {
      const std::size_t len = pn->data.size();
      if (pn->requires_grad) {
        auto& dp = ensure_grad(*pn);
        for (std::size_t i = 0; i < len; ++i) dp[i] += self.grad[offset + i];
      }
      offset += len;
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols requires >= 1 tensor");
  const int m = parts[0].rows();
  int n = 0;
  std::vector<int> widths;
  for (const Tensor& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.rows() != m) {
      throw ShapeError("concat_cols row mismatch: " +
                       shape_to_string(parts[0].shape()) + " vs " +
                       shape_to_string(p.shape()));
    }
    widths.push_back(p.cols());
    n += p.cols();
  }
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  int col0 = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].data();
    const int w = widths[k];
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        out[static_cast<std::size_t>(i) * n + col0 + j] =
            pv[static_cast<std::size_t>(i) * w + j];
    col0 += w;
  }
  return make_op({m, n}, std::move(out), parts,
                 [m, n, widths](TensorNode& self) {
                   int col0 = 0;
                   for (std::size_t k = 0; k < self.parents.size(); ++k) {
                     TensorNode& pn = *self.parents[k];
                     const int w = widths[k];
                     if (pn.requires_grad) {
                       auto& dp = ensure_grad(pn);
                       for (int i = 0; i < m; ++i)
                         for (int j = 0; j < w; ++j)
                           dp[static_cast<std::size_t>(i) * w + j] +=
                               self.grad[static_cast<std::size_t>(i) * n +
                                         col0 + j];
                     }
                     col0 += w;
                   }
                 });
}

Tensor slice_rows(const Tensor& a, int begin, int count) {
  require_rank2(a, "slice_rows");
  const int m = a.rows(), n = a.cols();
  if (begin < 0 || count < 1 || begin + count > m) {
    throw ShapeError("slice_rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of bounds for " +
                     shape_to_string(a.shape()));
  }
  const auto av = a.data();
  std::vector<double> out(av.begin() + static_cast<std::size_t>(begin) * n,
                          av.begin() + static_cast<std::size_t>(begin + count) * n);
  return make_op({count, n}, std::move(out), {a},
                 [begin, count, n](TensorNode& self) {
                   TensorNode& na = parent(self, 0);
                   if (!na.requires_grad) return;
                   auto& da = ensure_grad(na);
                   const std::size_t base = static_cast<std::size_t>(begin) * n;
                   for (std::size_t i = 0;
                        i < static_cast<std::size_t>(count) * n; ++i)
                     da[base + i] += self.grad[i];
                 });
}

Tensor slice_cols(const Tensor& a, int begin, int count) {
  require_rank2(a, "slice_cols");
  const int m = a.rows(), n = a.cols();
  if (begin < 0 || count < 1 || begin + count > n) {
    throw ShapeError("slice_cols [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of bounds for " +
                     shape_to_string(a.shape()));
  }
  const auto av = a.data();
  std::vector<double> out(static_cast<std::size_t>(m) * count);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < count; ++j)
      out[static_cast<std::size_t>(i) * count + j] =
          av[static_cast<std::size_t>(i) * n + begin + j];
  return make_op({m, count}, std::move(out), {a},
                 [m, n, begin, count](TensorNode& self) {
                   TensorNode& na = parent(self, 0);
                   if (!na.requires_grad) return;
                   auto& da = ensure_grad(na);
                   for (int i = 0; i < m; ++i)
                     for (int j = 0; j < count; ++j)
                       da[static_cast<std::size_t>(i) * n + begin + j] +=
                           self.grad[static_cast<std::size_t>(i) * count + j];
                 });
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  validate_shape(shape);
  if (shape_product(shape) != a.size()) {
    throw ShapeError("reshape from " + shape_to_string(a.shape()) + " to " +
                     shape_to_string(shape) + " changes element count");
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_op(std::move(shape), std::move(out), {a}, [](TensorNode& self) {
    TensorNode& na = parent(self, 0);
    if (!na.requires_grad) return;
    auto& da = ensure_grad(na);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += self.grad[i];
  });
}

Tensor extract_patches(const Tensor& map, int patch) {
  if (map.rank() != 3) {
    throw ShapeError("extract_patches expects [h x w x c], got " +
                     shape_to_string(map.shape()));
  }
  const int h = map.shape()[0], w = map.shape()[1], c = map.shape()[2];
  if (patch < 1 || h % patch != 0 || w % patch != 0) {
    throw ShapeError("patch size " + std::to_string(patch) +
                     " does not divide map " + shape_to_string(map.shape()));
  }
  const int gh = h / patch, gw = w / patch;
  const int tokens = gh * gw;
  const int width = patch * patch * c;
  std::vector<double> out(static_cast<std::size_t>(tokens) * width);
  const auto mv = map.data();
  auto src_index = [w, c](int y, int x, int k) {
    return (static_cast<std::size_t>(y) * w + x) * c + k;
  };
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      const std::size_t row = static_cast<std::size_t>(gy) * gw + gx;
      std::size_t col = 0;
      for (int dy = 0; dy < patch; ++dy)
        for (int dx = 0; dx < patch; ++dx)
          for (int k = 0; k < c; ++k)
            out[row * width + col++] =
                mv[src_index(gy * patch + dy, gx * patch + dx, k)];
    }
  return make_op(
      {tokens, width}, std::move(out), {map},
      [w, c, patch, gh, gw, width](TensorNode& self) {
        TensorNode& na = parent(self, 0);
        if (!na.requires_grad) return;
        auto& da = ensure_grad(na);
        for (int gy = 0; gy < gh; ++gy)
          for (int gx = 0; gx < gw; ++gx) {
            const std::size_t row = static_cast<std::size_t>(gy) * gw + gx;
            std::size_t col = 0;
            for (int dy = 0; dy < patch; ++dy)
              for (int dx = 0; dx < patch; ++dx)
                for (int k = 0; k < c; ++k) {
                  const std::size_t src =
                      (static_cast<std::size_t>(gy * patch + dy) * w +
                       (gx * patch + dx)) *
                          c +
                      k;
                  da[src] += self.grad[row * width + col++];
                }
          }
      });
}

Tensor embed_rows(const Tensor& table, const std::vector<int>& ids) {
  require_rank2(table, "embed_rows");
  const int vocab = table.rows(), d = table.cols();
  if (ids.empty()) throw ContractError("embed_rows requires >= 1 id");
  for (const int id : ids) {
    if (id < 0 || id >= vocab) {
      throw ContractError("embed_rows id " + std::to_string(id) +
                          " outside vocabulary of size " +
                          std::to_string(vocab));
    }
  }
  const int m = static_cast<int>(ids.size());
  std::vector<double> out(static_cast<std::size_t>(m) * d);
  const auto tv = table.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j)
      out[static_cast<std::size_t>(i) * d + j] =
          tv[static_cast<std::size_t>(ids[i]) * d + j];
  return make_op({m, d}, std::move(out), {table}, [ids, d](TensorNode& self) {
    TensorNode& nt = parent(self, 0);
    if (!nt.requires_grad) return;
    auto& dt = ensure_grad(nt);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < d; ++j)
        dt[static_cast<std::size_t>(ids[i]) * d + j] += self.grad[i * d + j];
  });
}

namespace {

Tensor cross_entropy_impl(const Tensor& logits, const std::vector<int>& targets,
                          const std::vector<std::uint8_t>& mask) {
  require_rank2(logits, "cross_entropy");
  const int m = logits.rows(), n = logits.cols();
  if (static_cast<int>(targets.size()) != m ||
      static_cast<int>(mask.size()) != m) {
    throw ContractError("cross_entropy targets/mask length must equal " +
                        std::to_string(m));
  }
  int active = 0;
  for (const auto f : mask) active += f ? 1 : 0;
  if (active == 0) throw ContractError("cross_entropy mask selects no rows");
  for (int i = 0; i < m; ++i) {
    if (mask[i] && (targets[i] < 0 || targets[i] >= n)) {
      throw ContractError("cross_entropy target " + std::to_string(targets[i]) +
                          " outside [0, " + std::to_string(n) + ")");
    }
  }
  const auto lv = logits.data();
  // Per-row softmax probabilities, cached for the backward pass.
  std::vector<double> probs(logits.size());
  double loss = 0.0;
  for (int i = 0; i < m; ++i) {
    const std::size_t row = static_cast<std::size_t>(i) * n;
    double mx = lv[row];
    for (int j = 1; j < n; ++j) mx = std::max(mx, lv[row + j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      probs[row + j] = std::exp(lv[row + j] - mx);
      sum += probs[row + j];
    }
    for (int j = 0; j < n; ++j) probs[row + j] /= sum;
    if (mask[i]) loss -= std::log(probs[row + targets[i]]);
  }
  loss /= active;
  return make_op({1}, {loss}, {logits},
                 [m, n, targets, mask, active,
                  probs = std::move(probs)](TensorNode& self) {
                   TensorNode& nl = parent(self, 0);
                   if (!nl.requires_grad) return;
                   auto& dl = ensure_grad(nl);
                   const double g = self.grad[0] / active;
                   for (int i = 0; i < m; ++i) {
                     if (!mask[i]) continue;
                     const std::size_t row = static_cast<std::size_t>(i) * n;
                     for (int j = 0; j < n; ++j)
                       dl[row + j] += g * (probs[row + j] -
                                           (j == targets[i] ? 1.0 : 0.0));
                   }
                 });
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  return cross_entropy_impl(logits, targets,
                            std::vector<std::uint8_t>(targets.size(), 1));
}

Tensor masked_cross_entropy(const Tensor& logits,
                            const std::vector<int>& targets,
                            const std::vector<std::uint8_t>& mask) {
  return cross_entropy_impl(logits, targets, mask);
}

// ---- autodiff ---------------------------------------------------------------

std::vector<const TensorNode*> topo_order(const Tensor& root) {
  std::vector<const TensorNode*> order;
  std::unordered_set<const TensorNode*> visited;
  // Iterative post-order DFS: a node is appended after all of its parents.
  struct Frame {
    TensorNode* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  if (!root.defined()) throw ContractError("backward on an undefined tensor");
  stack.push_back({root.node(), 0});
  visited.insert(root.node());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode* p = f.node->parents[f.next_parent++].get();
      if (!visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  return order;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward requires a scalar loss tensor");
  }
  if (!loss.requires_grad()) return;  // graph has no trainable leaves
  auto order = topo_order(loss);
  ensure_grad(*loss.node())[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = const_cast<TensorNode*>(*it);
    if (node->backprop && !node->grad.empty()) node->backprop(*node);
  }
}

double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x, double eps) {
  if (!(eps > 0.0) || eps > 1e-2) {
    throw ContractError("grad_check eps must lie in (0, 1e-2]");
  }
  const double y0 = f(x.detached(false)).value();
  const double y1 = f(x.detached(false)).value();
  if (y0 != y1) {
    throw DeterminismError("grad_check: repeated evaluation mismatch (" +
                           std::to_string(y0) + " vs " + std::to_string(y1) +
                           ")");
  }
  Tensor leaf = x.detached(true);
  Tensor loss = f(leaf);
  backward(loss);
  std::vector<double> analytic(leaf.size(), 0.0);
  if (leaf.has_grad()) {
    const auto g = leaf.grad();
    analytic.assign(g.begin(), g.end());
  }
  double max_err = 0.0;
  for (std::size_t i = 0; i < leaf.size(); ++i) {
    Tensor plus = x.detached(false);
    plus.mutable_data()[i] += eps;
    Tensor minus = x.detached(false);
    minus.mutable_data()[i] -= eps;
    const double numeric = (f(plus).value() - f(minus).value()) / (2.0 * eps);
    const double a = analytic[i];
    const double err =
        std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace vlf
