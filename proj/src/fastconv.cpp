#include "osc/fastconv.hpp"

#include <cmath>

namespace osc {

void fft_inplace(std::vector<std::complex<double>>& a, bool inverse, std::uint64_t* ops) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft_inplace: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  int lg = 0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    ++lg;
    const double ang = (inverse ? 2.0 : -2.0) * M_PI / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& z : a) z *= inv;
  }
  if (ops) *ops += 5ull * n * static_cast<std::uint64_t>(lg);
}

std::vector<double> cyclic_convolve(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cyclic_convolve: size mismatch");
  const std::size_t n = a.size();
  std::vector<std::complex<double>> fa(a.begin(), a.end());
  std::vector<std::complex<double>> fb(b.begin(), b.end());
  fft_inplace(fa, false);
  fft_inplace(fb, false);
  for (std::size_t i = 0; i < n; ++i) fa[i] *= fb[i];
  fft_inplace(fa, true);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fa[i].real();
  return out;
}

namespace {

int next_pow2(int v) {
  int p = 1;
  while (p < v) p <<= 1;
  return p;
}

}  // namespace

StreamConvolver::StreamConvolver(const FilterBank& bank, int d, ConvMode mode)
    : m_(bank.m), h_(bank.h), d_(d), kernels_(bank.phis) {
  if (d < 1) throw std::invalid_argument("StreamConvolver: d must be >= 1");
  fast_ = mode == ConvMode::Fast || (mode == ConvMode::Auto && m_ >= 512);
  if (!fast_) {
    window_ = std::make_unique<DisturbanceBuffer>(m_, d_);
    return;
  }

  m_pad_ = next_pow2(std::max(m_, 8));
  direct_lags_ = std::min(m_, 4);
  tail_ = Mat::Zero(d_, m_pad_);
  future_.assign(h_, Mat::Zero(d_, m_pad_));

  for (int len = 4; len < m_pad_; len <<= 1) {
    Segment seg;
    seg.len = len;
    seg.fft_n = 2 * len;
    seg.slice_fft.resize(h_);
    bool any = false;
    for (int j = 0; j < h_; ++j) {
      bool nonzero = false;
      std::vector<std::complex<double>> slice(seg.fft_n, 0.0);
      for (int l = len; l < 2 * len && l < m_; ++l) {
        slice[l - len] = kernels_(l, j);
        nonzero = nonzero || kernels_(l, j) != 0.0;
      }
      if (nonzero) {
        fft_inplace(slice, false);
        seg.slice_fft[j] = std::move(slice);
        any = true;
      }
    }
    if (any) segments_.push_back(std::move(seg));
  }
}

void StreamConvolver::push(const Vec& w) {
  if (w.size() != d_) throw DimensionMismatch("StreamConvolver::push: wrong dimension");
  if (!fast_) {
    window_->push(w);
    ++t_;
    return;
  }
  const int mask = m_pad_ - 1;
  tail_.col(static_cast<int>(t_ & mask)) = w;
  ++t_;
  // The slot that held y_{t-1} now represents y_{t + m_pad - 1}; clear it
  // before any scatter of this push can target it.
  const int recycled = static_cast<int>((t_ + m_pad_ - 1) & mask);
  for (int j = 0; j < h_; ++j) future_[j].col(recycled).setZero();
  for (const Segment& seg : segments_) {
    if (t_ % seg.len == 0) process_block(seg);
  }
}

void StreamConvolver::process_block(const Segment& seg) {
  const int L = seg.len;
  const int n = seg.fft_n;
  const int mask = m_pad_ - 1;
  const long long a = t_ - L;  // block covers inputs [a, a + L)

  // Forward FFT of the block, one per coordinate, shared by all filters.
  std::vector<std::vector<std::complex<double>>> block_fft(d_);
  for (int c = 0; c < d_; ++c) {
    auto& buf = block_fft[c];
    buf.assign(n, 0.0);
    for (int i = 0; i < L; ++i) buf[i] = tail_(c, static_cast<int>((a + i) & mask));
    fft_inplace(buf, false, &ops_);
  }

  std::vector<std::complex<double>> prod(n);
  for (int j = 0; j < h_; ++j) {
    const auto& slice = seg.slice_fft[j];
    if (slice.empty()) continue;
    for (int c = 0; c < d_; ++c) {
      for (int i = 0; i < n; ++i) prod[i] = block_fft[c][i] * slice[i];
      ops_ += 6ull * n;
      fft_inplace(prod, true, &ops_);
      // Linear conv entry nu contributes to y_{t + 1 + nu}.
      Mat& fut = future_[j];
      for (int nu = 0; nu < 2 * L - 1; ++nu) {
        fut(c, static_cast<int>((t_ + 1 + nu) & mask)) += prod[nu].real();
      }
      ops_ += static_cast<std::uint64_t>(2 * L - 1);
    }
  }
}

Vec StreamConvolver::query(int j) const {
  if (j < 0 || j >= h_) throw std::out_of_range("StreamConvolver::query: filter index");
  if (!fast_) {
    ops_ += 2ull * m_ * d_;
    return window_->window_dot(kernels_.col(j));
  }
  const int mask = m_pad_ - 1;
  Vec res = future_[j].col(static_cast<int>(t_ & mask));
  const int lags = static_cast<int>(std::min<long long>(direct_lags_, t_));
  for (int l = 0; l < lags; ++l) {
    res += kernels_(l, j) * tail_.col(static_cast<int>((t_ - 1 - l) & mask));
  }
  ops_ += 2ull * static_cast<std::uint64_t>(lags) * d_;
  return res;
}

std::size_t StreamConvolver::allocated_doubles() const {
  if (!fast_) return static_cast<std::size_t>(m_) * d_ + kernels_.size();
  std::size_t total = kernels_.size() + tail_.size();
  for (const auto& f : future_) total += f.size();
  for (const auto& seg : segments_) {
    for (const auto& s : seg.slice_fft) total += 2 * s.size();
  }
  return total;
}

}  // namespace osc
