#pragma once

#include <complex>
#include <cstdint>
#include <memory>
#include <vector>

#include "osc/common.hpp"
#include "osc/disturbance_buffer.hpp"
#include "osc/hankel.hpp"

namespace osc {

// In-place iterative radix-2 FFT. Size must be a power of two. When `ops` is
// given it is incremented with the standard 5 N log2 N flop count.
void fft_inplace(std::vector<std::complex<double>>& a, bool inverse,
                 std::uint64_t* ops = nullptr);

// Cyclic convolution of real vectors of equal power-of-two length.
std::vector<double> cyclic_convolve(const std::vector<double>& a,
                                    const std::vector<double>& b);

enum class ConvMode { Direct, Fast, Auto };

// ---------------------------------------------------------------------------
// Streaming filter projections: after pushing w_0..w_{t-1}, query(j) equals
//
//   W~_{t-1:t-m} phi_j = sum_{s=1..min(t,m)} phi_j[s-1] w_{t-s}.
//
// Direct mode keeps the window and evaluates the dot products on demand,
// O(m d) per query. Fast mode is an epoched online convolution: the kernel is
// split into lag segments [L, 2L) of doubling length; whenever an aligned
// input block of length L completes, one FFT convolution of the block with
// the matching kernel slice is scattered into a per-filter future ring. A
// segment at lag offset L only ever needs input blocks that are already
// complete, so queries never wait on pending data; the first few lags are
// evaluated directly. Amortized cost per push is O(h d log^2 m), independent
// of the stream length, with no horizon-sized allocation.
// ---------------------------------------------------------------------------

class StreamConvolver {
 public:
  // Fast mode kicks in under Auto once m >= 512; below that direct wins.
  StreamConvolver(const FilterBank& bank, int d, ConvMode mode = ConvMode::Auto);

  int dim() const { return d_; }
  int filters() const { return h_; }
  int memory() const { return m_; }
  bool fast() const { return fast_; }
  long long steps() const { return t_; }

  void push(const Vec& w);
  Vec query(int j) const;

  // Cumulative arithmetic operation count (pushes + queries).
  std::uint64_t ops() const { return ops_; }
  // Total doubles held in internal buffers; O(h m d), never horizon-length.
  std::size_t allocated_doubles() const;

 private:
  struct Segment {
    int len = 0;   // L; covers lags [L, 2L)
    int fft_n = 0; // 2L
    // FFT of each filter's kernel slice, empty when the slice is all zero.
    std::vector<std::vector<std::complex<double>>> slice_fft;
  };

  int m_ = 0, h_ = 0, d_ = 0;
  bool fast_ = false;
  long long t_ = 0;
  mutable std::uint64_t ops_ = 0;

  Mat kernels_;  // m x h (phi columns)

  // Direct mode.
  std::unique_ptr<DisturbanceBuffer> window_;

  // Fast mode.
  int m_pad_ = 0;        // power of two >= max(m, 8)
  int direct_lags_ = 0;  // lags [0, direct_lags_) handled per query
  Mat tail_;             // d x m_pad ring of recent inputs, col = index & mask
  std::vector<Mat> future_;  // per filter: d x m_pad accumulation ring
  std::vector<Segment> segments_;

  void process_block(const Segment& seg);
};

}  // namespace osc
