#include "kdrank/autodiff/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "kdrank/error.hpp"

namespace kdrank {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (shape_numel(shape) != data.size()) {
    throw Error(ErrorKind::kDimension,
                "tensor shape " + shape_string(shape) + " needs " +
                    std::to_string(shape_numel(shape)) + " values, got " +
                    std::to_string(data.size()));
  }
  for (std::size_t d : shape) {
    if (d == 0) {
      throw Error(ErrorKind::kDimension,
                  "tensor dimensions must be positive: " + shape_string(shape));
    }
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw Error(ErrorKind::kContract,
                "item() on tensor of shape " + shape_string(shape()));
  }
  return node_->data[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return node_->grad;
}

Tensor Tensor::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(node_->shape, node_->data, requires_grad);
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw Error(ErrorKind::kContract,
                "backward needs a scalar loss, got shape " +
                    (loss.defined() ? shape_string(loss.shape()) : "<undefined>"));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; reversed it is a valid reverse-mode schedule.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next_parent] = stack.back();
    if (next_parent < node->parents.size()) {
      detail::Node* parent = node->parents[next_parent++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  // Interior gradients are only needed during the sweep.
  for (detail::Node* node : order) {
    if (node->backward) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace kdrank
