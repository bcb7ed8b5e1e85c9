#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

namespace pallet {

// Row-major 2D grid; row index x runs along the pallet length, column index y
// along the width.
template <typename T>
class Grid {
 public:
  Grid() : rows_(0), cols_(0) {}
  Grid(int rows, int cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("Grid: negative shape");
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  T& at(int x, int y) { return data_[static_cast<std::size_t>(x) * cols_ + y]; }
  const T& at(int x, int y) const {
    return data_[static_cast<std::size_t>(x) * cols_ + y];
  }

  T* row(int x) { return data_.data() + static_cast<std::size_t>(x) * cols_; }
  const T* row(int x) const {
    return data_.data() + static_cast<std::size_t>(x) * cols_;
  }

  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

  bool same_shape(const Grid& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  Grid transposed() const {
    Grid t(cols_, rows_);
    for (int x = 0; x < rows_; ++x)
      for (int y = 0; y < cols_; ++y) t.at(y, x) = at(x, y);
    return t;
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  int rows_, cols_;
  std::vector<T> data_;
};

struct PalletConfig {
  int length_cells = 25;
  int width_cells = 25;
  int max_height_cells = 25;
  double cell_size = 1.0;  // inches per cell

  void validate() const {
    if (length_cells < 1 || width_cells < 1 || max_height_cells < 1)
      throw std::invalid_argument("PalletConfig: dimensions must be >= 1");
    if (!(cell_size > 0.0))
      throw std::invalid_argument("PalletConfig: cell_size must be > 0");
  }

  std::int64_t cell_count() const {
    return static_cast<std::int64_t>(length_cells) * width_cells;
  }
  std::int64_t volume_cells() const { return cell_count() * max_height_cells; }

  friend bool operator==(const PalletConfig&, const PalletConfig&) = default;
};

struct BoxDims {
  int length = 1;
  int width = 1;
  int height = 1;
  double weight = 1.0;

  void validate() const {
    if (length < 1 || width < 1 || height < 1)
      throw std::invalid_argument("BoxDims: dimensions must be >= 1");
    if (!(weight > 0.0)) throw std::invalid_argument("BoxDims: weight must be > 0");
  }

  std::int64_t volume() const {
    return static_cast<std::int64_t>(length) * width * height;
  }

  bool same_dims(const BoxDims& o) const {
    return length == o.length && width == o.width && height == o.height;
  }

  friend bool operator==(const BoxDims&, const BoxDims&) = default;
};

inline constexpr int kOrientationCount = 6;

// One of the 6 axis-aligned permutations of (length, width, height).
struct Orientation {
  int code = 0;  // in [0, 6)

  void validate() const {
    if (code < 0 || code >= kOrientationCount)
      throw std::out_of_range("Orientation: code out of [0, 6)");
  }

  friend bool operator==(const Orientation&, const Orientation&) = default;
};

struct OrientedBox {
  int length = 1;  // extent along x
  int width = 1;   // extent along y
  int height = 1;  // extent along z
  double weight = 1.0;

  std::int64_t volume() const {
    return static_cast<std::int64_t>(length) * width * height;
  }

  bool same_dims(const OrientedBox& o) const {
    return length == o.length && width == o.width && height == o.height;
  }
};

// Permutation table: code i selects (dims[perm[i][0]], dims[perm[i][1]],
// dims[perm[i][2]]) as (length, width, height).
inline OrientedBox orient(const BoxDims& dims, Orientation o) {
  o.validate();
  static constexpr std::array<std::array<int, 3>, 6> perm = {{
      {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0},
  }};
  const int d[3] = {dims.length, dims.width, dims.height};
  const auto& p = perm[static_cast<std::size_t>(o.code)];
  return OrientedBox{d[p[0]], d[p[1]], d[p[2]], dims.weight};
}

// Always 6 entries; duplicates of symmetric boxes are retained so the action
// tensor keeps its fixed N x 6 x l_p x w_p shape.
inline std::array<OrientedBox, 6> orientations(const BoxDims& dims) {
  dims.validate();
  std::array<OrientedBox, 6> out;
  for (int code = 0; code < kOrientationCount; ++code)
    out[static_cast<std::size_t>(code)] = orient(dims, Orientation{code});
  return out;
}

// Column heights on the pallet (symbol: the discretized pallet configuration).
struct HeightMap {
  Grid<int> heights;
  PalletConfig config;

  HeightMap() = default;
  explicit HeightMap(const PalletConfig& cfg)
      : heights(cfg.length_cells, cfg.width_cells, 0), config(cfg) {}

  int at(int x, int y) const { return heights.at(x, y); }
  int& at(int x, int y) { return heights.at(x, y); }
};

struct BufferState {
  std::vector<std::optional<BoxDims>> slots;
  int capacity = 1;

  explicit BufferState(int n = 1) : slots(static_cast<std::size_t>(n)), capacity(n) {
    if (n < 1) throw std::invalid_argument("BufferState: capacity must be >= 1");
  }

  int occupied_count() const {
    int c = 0;
    for (const auto& s : slots) c += s.has_value() ? 1 : 0;
    return c;
  }
  bool empty() const { return occupied_count() == 0; }
};

// FLB-corner placement: pick buffer slot, orientation, and the grid cell for
// the box's front-left-bottom corner.
struct Action {
  int slot_index = 0;
  Orientation orientation;
  int x = 0;
  int y = 0;

  friend bool operator==(const Action&, const Action&) = default;
};

struct ActionIndex {
  std::int64_t index = 0;
  friend bool operator==(const ActionIndex&, const ActionIndex&) = default;
};

// Flattening of (slot, orientation, x, y); slot-major, y fastest.
class ActionSpace {
 public:
  ActionSpace(int buffer_capacity, const PalletConfig& config)
      : n_(buffer_capacity), lp_(config.length_cells), wp_(config.width_cells) {
    if (n_ < 1) throw std::invalid_argument("ActionSpace: buffer capacity must be >= 1");
    config.validate();
  }

  std::int64_t size() const {
    return static_cast<std::int64_t>(n_) * kOrientationCount * lp_ * wp_;
  }

  ActionIndex encode(const Action& a) const {
    if (a.slot_index < 0 || a.slot_index >= n_)
      throw std::out_of_range("encode_action: slot out of range");
    a.orientation.validate();
    if (a.x < 0 || a.x >= lp_ || a.y < 0 || a.y >= wp_)
      throw std::out_of_range("encode_action: cell out of range");
    const std::int64_t idx =
        ((static_cast<std::int64_t>(a.slot_index) * kOrientationCount +
          a.orientation.code) *
             lp_ +
         a.x) *
            wp_ +
        a.y;
    return ActionIndex{idx};
  }

  Action decode(ActionIndex ai) const {
    if (ai.index < 0 || ai.index >= size())
      throw std::out_of_range("decode_action: index out of range");
    std::int64_t rest = ai.index;
    Action a;
    a.y = static_cast<int>(rest % wp_);
    rest /= wp_;
    a.x = static_cast<int>(rest % lp_);
    rest /= lp_;
    a.orientation.code = static_cast<int>(rest % kOrientationCount);
    a.slot_index = static_cast<int>(rest / kOrientationCount);
    return a;
  }

  int buffer_capacity() const { return n_; }
  int length_cells() const { return lp_; }
  int width_cells() const { return wp_; }

 private:
  int n_, lp_, wp_;
};

// Cell rectangle [x, x+len) x [y, y+wid) plus an in-bounds report.
struct Footprint {
  int x0, y0, x1, y1;  // half-open
  bool in_bounds;

  std::int64_t cell_count() const {
    return static_cast<std::int64_t>(x1 - x0) * (y1 - y0);
  }
};

inline Footprint footprint(const OrientedBox& oriented, int x, int y,
                           const PalletConfig& config) {
  Footprint f{x, y, x + oriented.length, y + oriented.width, false};
  f.in_bounds = x >= 0 && y >= 0 && f.x1 <= config.length_cells &&
                f.y1 <= config.width_cells;
  return f;
}

// Feasibility bitmap over the pallet grid (g_t for one oriented box, or any
// other per-cell predicate).
using MaskBitmap = Grid<std::uint8_t>;

// Height of the tallest column under the footprint; the box rests on it.
inline int resting_height(const HeightMap& heightmap, const OrientedBox& oriented,
                          int x, int y) {
  const Footprint f = footprint(oriented, x, y, heightmap.config);
  if (!f.in_bounds) throw std::out_of_range("resting_height: footprint out of bounds");
  int rest = 0;
  for (int cx = f.x0; cx < f.x1; ++cx) {
    const int* row = heightmap.heights.row(cx);
    for (int cy = f.y0; cy < f.y1; ++cy) rest = std::max(rest, row[cy]);
  }
  return rest;
}

// Sliding-window maximum over len x wid footprints for every anchor cell;
// out-of-bounds anchors get -1. Two monotonic-deque passes.
inline Grid<int> rest_height_map(const HeightMap& heightmap, int len, int wid) {
  const int lp = heightmap.config.length_cells;
  const int wp = heightmap.config.width_cells;
  Grid<int> out(lp, wp, -1);
  if (len > lp || wid > wp) return out;

  Grid<int> rowmax(lp, wp, 0);  // max over [y, y+wid) per row
  std::vector<int> deque_idx(static_cast<std::size_t>(std::max(lp, wp)));
  for (int x = 0; x < lp; ++x) {
    const int* src = heightmap.heights.row(x);
    int head = 0, tail = 0;
    for (int y = 0; y < wp; ++y) {
      while (tail > head && src[deque_idx[tail - 1]] <= src[y]) --tail;
      deque_idx[tail++] = y;
      if (deque_idx[head] <= y - wid) ++head;
      if (y >= wid - 1) rowmax.at(x, y - wid + 1) = src[deque_idx[head]];
    }
  }
  for (int y = 0; y + wid <= wp; ++y) {
    int head = 0, tail = 0;
    for (int x = 0; x < lp; ++x) {
      const int v = rowmax.at(x, y);
      while (tail > head && rowmax.at(deque_idx[tail - 1], y) <= v) --tail;
      deque_idx[tail++] = x;
      if (deque_idx[head] <= x - len) ++head;
      if (x >= len - 1) out.at(x - len + 1, y) = rowmax.at(deque_idx[head], y);
    }
  }
  return out;
}

}  // namespace pallet
