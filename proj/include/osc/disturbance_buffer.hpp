#pragma once

#include <vector>

#include "osc/common.hpp"

namespace osc {

// Ring buffer of the last m disturbances, newest first (the column order of
// W~_{t-1:t-m}); zero-filled before the stream starts, so reads are valid for
// t < 0 as well.
class DisturbanceBuffer {
 public:
  DisturbanceBuffer(int m, int d) : m_(m), d_(d), ring_(m, Vec::Zero(d)) {
    if (m < 1 || d < 1) throw std::invalid_argument("DisturbanceBuffer: m, d must be >= 1");
  }

  int memory() const { return m_; }
  int dim() const { return d_; }

  void push(const Vec& w) {
    if (w.size() != d_) throw DimensionMismatch("DisturbanceBuffer::push: wrong dimension");
    head_ = (head_ + m_ - 1) % m_;
    ring_[head_] = w;
  }

  // col(0) = w_{t-1}, col(1) = w_{t-2}, ...
  const Vec& col(int i) const { return ring_[(head_ + i) % m_]; }

  // W~_{t-1:t-m} * kernel, i.e. sum_s kernel[s] * col(s).
  Vec window_dot(const Vec& kernel) const {
    Vec acc = Vec::Zero(d_);
    const int len = std::min<int>(m_, static_cast<int>(kernel.size()));
    for (int s = 0; s < len; ++s) acc += kernel(s) * col(s);
    return acc;
  }

 private:
  int m_, d_;
  int head_ = 0;
  std::vector<Vec> ring_;
};

}  // namespace osc
