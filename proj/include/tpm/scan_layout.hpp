#pragma once

#include <cstdint>
#include <vector>

#include "tpm/tensor.hpp"

namespace tpm {

enum class ScanAxis { Horizontal, Vertical };
enum class ScanDir { Forward, Reverse };

// The four cardinal rasters used by the global scan.
enum class Cardinal {
  TopLeftToBottomRight,
  BottomRightToTopLeft,
  TopRightToBottomLeft,
  BottomLeftToTopRight,
};

// Bijection between a 2-D grid and a 1-D scan sequence.
// forward[i] = row-major grid index of sequence position i;
// inverse[g] = sequence position of grid index g.
struct ScanLayout {
  std::vector<std::int32_t> forward;
  std::vector<std::int32_t> inverse;
  int h = 0;
  int w = 0;
};

// Window-major flatten: windows in raster order along `axis`, tokens within
// a window in raster order along the same axis. Every window occupies one
// contiguous span of the sequence. Reverse flips the whole sequence.
ScanLayout build_window_layout(int h, int w, int window, ScanAxis axis, ScanDir dir);

ScanLayout build_cardinal_layout(int h, int w, Cardinal which);

// Axis/direction assignment for the two flattens of one block. WIF and WFF
// share the axis and run in opposite directions; the assignment cycles with
// period 4 so four consecutive blocks cover all cardinal combinations.
struct FlattenSchedule {
  ScanAxis axis;
  ScanDir wif_dir;
  ScanDir wff_dir;
};

FlattenSchedule direction_schedule(int block_index);

// Process-wide layout cache; layouts are immutable once built.
const ScanLayout& cached_window_layout(int h, int w, int window, ScanAxis axis, ScanDir dir);
const ScanLayout& cached_cardinal_layout(int h, int w, Cardinal which);

// [B,C,H,W] -> [B, H*W, C] along the layout; scatter is the exact inverse.
Tensor layout_gather(const Tensor& x, const ScanLayout& layout);
Tensor layout_scatter(const Tensor& seq, const ScanLayout& layout);

}  // namespace tpm
