#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace effops {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until first accumulation
  bool requires_grad = false;
};
}  // namespace detail

// Dense row-major float32 tensor with an optional gradient buffer.
//
// Tensor is a shared handle: copying a Tensor aliases the same storage, which
// is what lets taped backward closures write gradients into parameters.
// Use clone() for an independent deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor scalar(float value);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<float> data();
  std::span<const float> data() const;
  float item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);

  bool has_grad() const;
  // Allocates a zeroed gradient buffer on first use. Gradients belong to the
  // shared storage, so they are writable through any handle.
  std::span<float> grad() const;
  void zero_grad() const;

  Tensor clone() const;
  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

Tensor randn(Shape shape, float stddev, std::mt19937_64& rng);

// Ordered record of backward closures for operations executed while the tape
// is active on the current thread.
class Tape {
 public:
  void record(std::function<void()> backward_fn);
  std::size_t size() const noexcept { return steps_.size(); }
  bool empty() const noexcept { return steps_.empty(); }
  void clear() noexcept { steps_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse, then clears it.
  void backward(Tensor& loss);

 private:
  std::vector<std::function<void()>> steps_;
};

Tape* active_tape() noexcept;

// Activates a tape on this thread for the lifetime of the scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) noexcept;
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording on this thread.
class NoGradScope {
 public:
  NoGradScope() noexcept;
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

// Backward on the thread's active tape.
void backward(Tensor& loss);

}  // namespace effops
