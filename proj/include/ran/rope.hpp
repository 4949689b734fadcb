#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ran/errors.hpp"
#include "ran/tensor.hpp"

namespace ran {

// Precomputed rotary tables: pair j of a dim-wide vector is rotated by angle
// pos * theta_j with theta_j = base^(-2j/dim). Rotation preserves the norm of
// every pair, so the backward pass is the same rotation by the negated angle.
template <typename Real>
class RotaryTable {
 public:
  RotaryTable() = default;

  RotaryTable(int dim, int max_pos, Real base = Real(10000)) : dim_(dim), max_pos_(max_pos) {
    if (dim <= 0 || dim % 2 != 0) throw ConfigError("rotary dim must be positive and even");
    if (max_pos <= 0) throw ConfigError("rotary table needs at least one position");
    const int half = dim / 2;
    cos_.resize(static_cast<std::size_t>(max_pos) * half);
    sin_.resize(static_cast<std::size_t>(max_pos) * half);
    for (int p = 0; p < max_pos; ++p) {
      for (int j = 0; j < half; ++j) {
        const Real theta = std::pow(base, Real(-2) * Real(j) / Real(dim));
        const Real a = Real(p) * theta;
        cos_[static_cast<std::size_t>(p) * half + j] = std::cos(a);
        sin_[static_cast<std::size_t>(p) * half + j] = std::sin(a);
      }
    }
  }

  int dim() const { return dim_; }
  int max_pos() const { return max_pos_; }

  // Rotates each row of x by its position. A position of -1 leaves the row
  // untouched (used for the state slot, which carries no position).
  Tensor<Real> apply(const Tensor<Real>& x, const std::vector<int>& positions, TapeArg<Real> tape) const {
    if (x.cols() != dim_) throw ShapeError("rotary: row width " + std::to_string(x.cols()) + " != table dim");
    const int m = x.rows();
    if (static_cast<int>(positions.size()) != m) throw ShapeError("rotary: one position per row required");
    for (int p : positions)
      if (p >= max_pos_) throw PreconditionError("rotary: position exceeds table capacity");
    const int half = dim_ / 2;
    Tensor<Real> out = Tensor<Real>::zeros(x.shape, track_output(tape, {&x}));
    rotate(x.ptr(), out.ptr(), positions, /*invert=*/false);
    if (out.tracked()) {
      // Copy the trig rows so the closure stays valid if the table dies first.
      std::vector<Real> c = cos_, s = sin_;
      const int d = dim_;
      tape->record([x, out, positions, c, s, d, half] {
        if (!x.tracked()) return;
        const int m2 = x.rows();
        for (int i = 0; i < m2; ++i) {
          const Real* og = out.gptr() + static_cast<std::size_t>(i) * d;
          Real* xg = x.gptr() + static_cast<std::size_t>(i) * d;
          const int p = positions[static_cast<std::size_t>(i)];
          if (p < 0) {
            for (int j = 0; j < d; ++j) xg[j] += og[j];
            continue;
          }
          const Real* cp = c.data() + static_cast<std::size_t>(p) * half;
          const Real* sp = s.data() + static_cast<std::size_t>(p) * half;
          for (int j = 0; j < half; ++j) {
            const Real g0 = og[2 * j], g1 = og[2 * j + 1];
            xg[2 * j] += g0 * cp[j] + g1 * sp[j];
            xg[2 * j + 1] += -g0 * sp[j] + g1 * cp[j];
          }
        }
      });
    }
    return out;
  }

 private:
  void rotate(const Real* src, Real* dst, const std::vector<int>& positions, bool invert) const {
    const int half = dim_ / 2;
    const int m = static_cast<int>(positions.size());
    for (int i = 0; i < m; ++i) {
      const Real* xi = src + static_cast<std::size_t>(i) * dim_;
      Real* oi = dst + static_cast<std::size_t>(i) * dim_;
      const int p = positions[static_cast<std::size_t>(i)];
      if (p < 0) {
        for (int j = 0; j < dim_; ++j) oi[j] = xi[j];
        continue;
      }
      const Real* cp = cos_.data() + static_cast<std::size_t>(p) * half;
      const Real* sp = sin_.data() + static_cast<std::size_t>(p) * half;
      for (int j = 0; j < half; ++j) {
        const Real sj = invert ? -sp[j] : sp[j];
        const Real x0 = xi[2 * j], x1 = xi[2 * j + 1];
        oi[2 * j] = x0 * cp[j] - x1 * sj;
        oi[2 * j + 1] = x0 * sj + x1 * cp[j];
      }
    }
  }

  int dim_ = 0;
  int max_pos_ = 0;
  std::vector<Real> cos_;
  std::vector<Real> sin_;
};


// Non-deduced spelling for optional rotary-table arguments, mirroring
// TapeArg: lets call sites disable rotation with a bare nullptr.
template <typename Real>
using RotaryArg = typename std::type_identity<const RotaryTable<Real>*>::type;

}  // namespace ran
