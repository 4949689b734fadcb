#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "ran/errors.hpp"
#include "ran/rng.hpp"

namespace ran {

// Dense row-major tensor. Data and gradient buffers are shared handles so a
// Tensor can be captured cheaply by backward closures; copying a Tensor
// aliases the same storage (use clone() for a deep copy). Values are treated
// as immutable once an op that recorded a backward step has consumed them.
template <typename Real>
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<Real>> data;
  std::shared_ptr<std::vector<Real>> grad;  // null when gradients are not tracked

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool with_grad = false) {
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<Real>>(checked_size(t.shape), Real(0));
    if (with_grad) t.grad = std::make_shared<std::vector<Real>>(t.data->size(), Real(0));
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<Real> values, bool with_grad = false) {
    const std::size_t n = checked_size(shape);
    if (values.size() != n) throw ShapeError("tensor: value count does not match shape");
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<Real>>(std::move(values));
    if (with_grad) t.require_grad();
    return t;
  }

  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev, bool with_grad = true) {
    Tensor t = zeros(std::move(shape), with_grad);
    for (Real& x : *t.data) x = static_cast<Real>(rng.normal(0.0, stddev));
    return t;
  }

  static Tensor full(std::vector<int> shape, Real value, bool with_grad = false) {
    Tensor t = zeros(std::move(shape), with_grad);
    for (Real& x : *t.data) x = value;
    return t;
  }

  bool defined() const { return static_cast<bool>(data); }
  bool tracked() const { return static_cast<bool>(grad); }
  std::size_t size() const { return data ? data->size() : 0; }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  // 2-D accessors; a 1-D tensor behaves as a single row.
  int rows() const { return ndim() == 1 ? 1 : shape[0]; }
  int cols() const { return ndim() == 1 ? shape[0] : shape[1]; }

  // The handle is a shared view: constness of the handle does not protect the
  // shared buffers, exactly as with shared_ptr itself.
  Real* ptr() const { return data->data(); }
  Real* gptr() const { return grad->data(); }

  Real& at(int r, int c) const { return (*data)[static_cast<std::size_t>(r) * cols() + c]; }
  Real& operator[](std::size_t i) const { return (*data)[i]; }

  void require_grad() {
    if (!grad) grad = std::make_shared<std::vector<Real>>(size(), Real(0));
  }

  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), Real(0));
  }

  Tensor clone() const {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<Real>>(*data);
    if (grad) t.grad = std::make_shared<std::vector<Real>>(*grad);
    return t;
  }

  bool same_storage(const Tensor& other) const { return data == other.data; }

 private:
  static std::size_t checked_size(const std::vector<int>& shape) {
    if (shape.empty()) throw ShapeError("tensor: empty shape");
    std::size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw ShapeError("tensor: dimension must be positive, got " + std::to_string(d));
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }
};

// Records one backward closure per forward op. backward() replays them in
// reverse, which is a valid topological order because the forward pass is
// strictly sequential. Per-step accumulation order is fixed, so gradients are
// bit-reproducible.
template <typename Real>
class Tape {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

  std::size_t size() const { return steps_.size(); }

  // Runs all recorded steps newest-first. The loss gradient must be seeded by
  // the caller before invoking this.
  void backward() {
    if (steps_.empty()) throw StateError("tape: backward called before any forward op was recorded");
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    steps_.clear();
  }

  void clear() { steps_.clear(); }

 private:
  std::vector<std::function<void()>> steps_;
};

// Non-deduced spelling of the tape parameter so call sites can pass a bare
// nullptr; Real is always pinned by the tensor arguments.
template <typename Real>
using TapeArg = typename std::type_identity<Tape<Real>*>::type;

// An op tracks its output when a tape is present and any input is tracked.
template <typename Real>
inline bool track_output(const Tape<Real>* tape, std::initializer_list<const Tensor<Real>*> inputs) {
  if (!tape) return false;
  for (const Tensor<Real>* t : inputs) {
    if (t && t->tracked()) return true;
  }
  return false;
}

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

}  // namespace ran
