#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "modcomp/errors.hpp"

namespace modcomp {

// Dense row-major tensor. Data and gradient buffers are shared so that op
// closures recorded on a tape can keep them alive; the buffers themselves are
// treated as immutable outside of optimizer steps and backward accumulation.
template <class R>
struct TensorT {
  std::vector<int> shape;
  std::shared_ptr<std::vector<R>> data;
  std::shared_ptr<std::vector<R>> grad;  // allocated iff the tensor participates in autodiff

  TensorT() = default;

  static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
    TensorT t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<R>>(static_cast<std::size_t>(check_numel(t.shape)), R(0));
    if (requires_grad) t.grad = std::make_shared<std::vector<R>>(t.data->size(), R(0));
    return t;
  }

  static TensorT from_values(std::vector<int> shape, std::vector<R> values, bool requires_grad = false) {
    if (check_numel(shape) != static_cast<std::int64_t>(values.size()))
      throw DimensionError("tensor: value count does not match shape");
    TensorT t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<R>>(std::move(values));
    if (requires_grad) t.grad = std::make_shared<std::vector<R>>(t.data->size(), R(0));
    return t;
  }

  std::int64_t numel() const { return data ? static_cast<std::int64_t>(data->size()) : 0; }
  bool defined() const { return static_cast<bool>(data); }
  bool requires_grad() const { return static_cast<bool>(grad); }

  void enable_grad() {
    if (!grad) grad = std::make_shared<std::vector<R>>(data->size(), R(0));
  }
  void drop_grad() { grad.reset(); }
  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), R(0));
  }

  int dim(std::size_t i) const { return shape.at(i); }
  int rows() const { return shape.size() == 2 ? shape[0] : (shape.size() == 1 ? 1 : throw_rank()); }
  int cols() const { return shape.size() == 2 ? shape[1] : (shape.size() == 1 ? shape[0] : throw_rank()); }

  // Buffers are shared; const-ness of the handle is shallow by design.
  R* ptr() const { return data->data(); }
  R* gptr() const { return grad->data(); }

  R& at(std::size_t i) { return (*data)[i]; }
  R at(std::size_t i) const { return (*data)[i]; }

  // Deep copy of the payload; gradient buffer is fresh (zeroed) when requested.
  TensorT clone(bool requires_grad = false) const {
    TensorT t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<R>>(*data);
    if (requires_grad) t.grad = std::make_shared<std::vector<R>>(t.data->size(), R(0));
    return t;
  }

 private:
  static std::int64_t check_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw DimensionError("tensor: dimensions must be positive");
      n *= d;
    }
    return n;
  }
  [[noreturn]] static int throw_rank() { throw DimensionError("tensor: expected rank <= 2 accessor"); }
};

// Reverse-mode tape: ops push their backward closures while the forward pass
// runs; backward() replays them in exact reverse order of recording.
template <class R>
class TapeT {
 public:
  void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

  void backward() {
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

 private:
  std::vector<std::function<void()>> ops_;
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

}  // namespace modcomp
