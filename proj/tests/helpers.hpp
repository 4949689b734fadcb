#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <unistd.h>

#include "ran/rng.hpp"
#include "ran/tensor.hpp"

namespace helpers {

template <typename Real>
double max_abs_diff(const ran::Tensor<Real>& a, const ran::Tensor<Real>& b) {
  if (a.shape != b.shape) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>((*a.data)[i]) - static_cast<double>((*b.data)[i])));
  return worst;
}

template <typename Real>
bool bit_equal(const ran::Tensor<Real>& a, const ran::Tensor<Real>& b) {
  if (a.shape != b.shape) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if ((*a.data)[i] != (*b.data)[i]) return false;
  return true;
}

// Checks the recorded backward of `op` against central differences. The loss
// is a fixed random weighting of the op output, so every output entry
// contributes. `op` must rebuild its output from the current input values on
// each call and take the tape as its only argument.
template <typename Op>
double fd_max_rel(std::vector<ran::Tensor<double>*> inputs, Op&& op, double step = 1e-5) {
  for (auto* t : inputs) {
    t->require_grad();
    t->zero_grad();
  }
  ran::Tape<double> tape;
  ran::Tensor<double> out = op(&tape);
  ran::Rng wr(12345);
  std::vector<double> w(out.size());
  for (auto& x : w) x = wr.uniform() * 2.0 - 1.0;
  for (std::size_t i = 0; i < out.size(); ++i) (*out.grad)[i] = w[i];
  tape.backward();

  auto value = [&] {
    ran::Tensor<double> o = op(static_cast<ran::Tape<double>*>(nullptr));
    double s = 0.0;
    for (std::size_t i = 0; i < o.size(); ++i) s += w[i] * (*o.data)[i];
    return s;
  };

  double worst = 0.0;
  for (auto* t : inputs) {
    for (std::size_t j = 0; j < t->size(); ++j) {
      const double saved = (*t->data)[j];
      (*t->data)[j] = saved + step;
      const double up = value();
      (*t->data)[j] = saved - step;
      const double down = value();
      (*t->data)[j] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double an = (*t->grad)[j];
      worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6}));
    }
  }
  return worst;
}

inline std::string temp_dir() {
  static int counter = 0;
  const std::string dir = "/tmp/ran_test_" + std::to_string(++counter) + "_" + std::to_string(::getpid());
  std::string cmd = "mkdir -p " + dir;
  if (std::system(cmd.c_str()) != 0) throw std::runtime_error("cannot create " + dir);
  return dir;
}

inline std::string write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  out.close();
  return path;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return s;
}

inline bool file_exists(const std::string& path) { return std::ifstream(path).good(); }

}  // namespace helpers
