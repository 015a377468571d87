#include "effops/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "effops/error.hpp"

namespace effops {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : impl_(std::make_shared<detail::TensorImpl>()) {
  if (data.size() != shape_numel(shape)) {
    throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor Tensor::scalar(float value) { return Tensor(Shape{1}, value); }

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw std::out_of_range("tensor axis out of range");
  return s[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<float> Tensor::data() { return impl_->data; }
std::span<const float> Tensor::data() const { return impl_->data; }

float Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<float> Tensor::grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad;
}

void Tensor::zero_grad() const {
  if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

Tensor Tensor::clone() const {
  if (!impl_) return {};
  Tensor out(impl_->shape, impl_->data);
  out.impl_->requires_grad = impl_->requires_grad;
  return out;
}

Tensor randn(Shape shape, float stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<float> dist(0.0f, stddev);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

void Tape::record(std::function<void()> backward_fn) { steps_.push_back(std::move(backward_fn)); }

void Tape::backward(Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (steps_.empty()) throw std::logic_error("backward() on an empty tape");
  if (!std::isfinite(loss.item())) throw NumericError("non-finite loss in backward()");
  loss.grad()[0] = 1.0f;
  NoGradScope no_grad;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  steps_.clear();
}

Tape* active_tape() noexcept { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) noexcept : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() noexcept : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

void backward(Tensor& loss) {
  Tape* tape = active_tape();
  if (tape == nullptr) throw std::logic_error("backward() with no active tape");
  tape->backward(loss);
}

}  // namespace effops
