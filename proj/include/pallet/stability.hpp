#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pallet/core.hpp"
#include "pallet/geometry.hpp"
#include "pallet/parallel.hpp"
#include "pallet/rng.hpp"

namespace pallet {

// Monte-Carlo placement noise for the stability oracle. Stds follow the
// execution-uncertainty model: per-axis translational noise on xy (inches)
// and yaw noise about z (degrees).
struct NoiseConfig {
  double translational_std = 0.05;
  double rotational_std_deg = 5.0;
  int samples_per_check = 20;
  double stable_fraction_threshold = 0.95;
  bool nominal_only = false;  // skip noise, label at nominal poses

  void validate() const {
    if (translational_std < 0.0 || rotational_std_deg < 0.0)
      throw std::invalid_argument("NoiseConfig: stds must be >= 0");
    if (samples_per_check < 1)
      throw std::invalid_argument("NoiseConfig: samples_per_check must be >= 1");
    if (!(stable_fraction_threshold > 0.0) || stable_fraction_threshold > 1.0)
      throw std::invalid_argument("NoiseConfig: threshold must be in (0, 1]");
  }
};

// A box resting in the physical stack: continuous pose in inches plus the
// integer rest height in cells. Boxes are listed in placement order.
struct StackBox {
  OrientedBox box;
  double x = 0.0;  // FLB corner, inches
  double y = 0.0;
  int z = 0;       // rest height, cells
  double yaw = 0.0;  // radians about the footprint center
  Polygon base;    // cached footprint polygon

  int top() const { return z + box.height; }
};

inline StackBox make_stack_box(const OrientedBox& box, double x_in, double y_in,
                               int z, double yaw, double cell_size) {
  StackBox b;
  b.box = box;
  b.x = x_in;
  b.y = y_in;
  b.z = z;
  b.yaw = yaw;
  b.base = rotated_rect(x_in, y_in, box.length * cell_size,
                        box.width * cell_size, yaw);
  return b;
}

struct Contact {
  int supporter;  // index into StackModel::boxes
  double area;
  Vec2 centroid;
};

inline constexpr double kContactAreaEps = 1e-9;

// Physical model behind the heightmap. Contacts between already-placed boxes
// are cached incrementally; a contact exists when rest heights meet exactly
// and the continuous footprints overlap with positive area.
struct StackModel {
  PalletConfig pallet;
  std::vector<StackBox> boxes;
  std::vector<std::vector<Contact>> supports;  // supports[i]: contacts below box i

  StackModel() = default;
  explicit StackModel(const PalletConfig& cfg) : pallet(cfg) {}

  std::vector<Contact> contacts_below(const StackBox& b) const {
    std::vector<Contact> out;
    if (b.z == 0) return out;  // ground-supported
    for (int i = 0; i < static_cast<int>(boxes.size()); ++i) {
      const StackBox& a = boxes[static_cast<std::size_t>(i)];
      if (a.top() != b.z) continue;
      Polygon inter = convex_intersect(a.base, b.base);
      const double area = polygon_area(inter);
      if (area > kContactAreaEps)
        out.push_back(Contact{i, area, polygon_centroid(inter)});
    }
    return out;
  }

  void add_box(const StackBox& b) {
    supports.push_back(contacts_below(b));
    boxes.push_back(b);
  }

  // Rest height implied by the boxes beneath a continuous footprint.
  int continuous_rest_height(const Polygon& base) const {
    int rest = 0;
    for (const StackBox& a : boxes) {
      if (a.top() <= rest) continue;
      Polygon inter = convex_intersect(a.base, base);
      if (polygon_area(inter) > kContactAreaEps) rest = a.top();
    }
    return rest;
  }
};

namespace detail {

struct LoadAccumulator {
  double mass = 0.0;
  double mx = 0.0;  // mass-weighted CoM moments
  double my = 0.0;

  void add(double m, const Vec2& at) {
    mass += m;
    mx += m * at.x;
    my += m * at.y;
  }
};

// Top-down quasi-static equilibrium. Each box (plus all load it carries) must
// keep its combined CoM inside the convex hull of its support contacts; its
// load then flows to the supporters, split by contact area and acting at the
// contact centroids. Ground-level boxes always pass: every contact centroid
// and the box's own CoM lie over its footprint.
inline bool propagate_loads(const StackModel& stack, const StackBox* candidate,
                            const std::vector<Contact>* candidate_supports) {
  const int n = static_cast<int>(stack.boxes.size());
  const int total = n + (candidate ? 1 : 0);
  if (total == 0) return true;

  std::vector<LoadAccumulator> loads(static_cast<std::size_t>(total));
  std::vector<int> order(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) {
    const StackBox& b = (i < n) ? stack.boxes[static_cast<std::size_t>(i)] : *candidate;
    loads[static_cast<std::size_t>(i)].add(b.box.weight, polygon_centroid(b.base));
    order[static_cast<std::size_t>(i)] = i;
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const int za = (a < n) ? stack.boxes[static_cast<std::size_t>(a)].z : candidate->z;
    const int zb = (b < n) ? stack.boxes[static_cast<std::size_t>(b)].z : candidate->z;
    if (za != zb) return za > zb;
    return a < b;
  });

  std::vector<Vec2> hull_points;
  for (const int i : order) {
    const StackBox& b = (i < n) ? stack.boxes[static_cast<std::size_t>(i)] : *candidate;
    if (b.z == 0) continue;
    const std::vector<Contact>& contacts =
        (i < n) ? stack.supports[static_cast<std::size_t>(i)] : *candidate_supports;
    if (contacts.empty()) return false;  // floating box, no support at rest height

    const LoadAccumulator& acc = loads[static_cast<std::size_t>(i)];
    const Vec2 com{acc.mx / acc.mass, acc.my / acc.mass};

    hull_points.clear();
    double total_area = 0.0;
    for (const Contact& c : contacts) {
      total_area += c.area;
      const StackBox& sup =
          (c.supporter < n) ? stack.boxes[static_cast<std::size_t>(c.supporter)] : *candidate;
      Polygon inter = convex_intersect(sup.base, b.base);
      for (const Vec2& v : inter) hull_points.push_back(v);
    }
    const Polygon hull = convex_hull(hull_points);
    if (!point_in_convex(hull, com)) return false;

    for (const Contact& c : contacts) {
      loads[static_cast<std::size_t>(c.supporter)].add(
          acc.mass * (c.area / total_area), c.centroid);
    }
  }
  return true;
}

}  // namespace detail

// Deterministic equilibrium check of the whole stack as posed.
inline bool quasi_static_stable(const StackModel& stack) {
  return detail::propagate_loads(stack, nullptr, nullptr);
}

// Same check with one extra box that is not part of the cached stack.
inline bool quasi_static_stable_with(const StackModel& stack,
                                     const StackBox& candidate) {
  const std::vector<Contact> cs = stack.contacts_below(candidate);
  // Candidate contact list references existing boxes only, so supporter
  // indices stay valid.
  return detail::propagate_loads(stack, &candidate, &cs);
}

// Support statistics of a box footprint on the discrete heightmap. A cell
// supports the box iff its column height equals the rest height; corners are
// the four footprint-corner cells.
struct SupportStats {
  double support_fraction = 0.0;
  std::array<bool, 4> corners_supported{};
  int rest_height = 0;

  int corner_count() const {
    int c = 0;
    for (const bool b : corners_supported) c += b ? 1 : 0;
    return c;
  }
};

inline SupportStats support_stats(const HeightMap& heightmap,
                                  const OrientedBox& oriented, int x, int y) {
  const Footprint f = footprint(oriented, x, y, heightmap.config);
  if (!f.in_bounds) throw std::out_of_range("support_stats: footprint out of bounds");
  SupportStats s;
  s.rest_height = resting_height(heightmap, oriented, x, y);
  std::int64_t supported = 0;
  for (int cx = f.x0; cx < f.x1; ++cx) {
    const int* row = heightmap.heights.row(cx);
    for (int cy = f.y0; cy < f.y1; ++cy)
      supported += (row[cy] == s.rest_height) ? 1 : 0;
  }
  s.support_fraction =
      static_cast<double>(supported) / static_cast<double>(f.cell_count());
  const int xs[2] = {f.x0, f.x1 - 1};
  const int ys[2] = {f.y0, f.y1 - 1};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      s.corners_supported[static_cast<std::size_t>(i * 2 + j)] =
          heightmap.at(xs[i], ys[j]) == s.rest_height;
  return s;
}

struct StabilityVerdict {
  bool stable = false;
  double stable_fraction = 0.0;  // fraction of noise draws in equilibrium
  int draws = 0;
};

// Monte-Carlo verdict for placing `oriented` with its FLB corner at cell
// (x, y). Each draw perturbs the new box (translation + yaw), re-derives its
// rest height from the continuous footprint, and checks whole-stack
// equilibrium. Deterministic given the seed.
inline StabilityVerdict check_placement(const StackModel& stack,
                                        const OrientedBox& oriented, int x, int y,
                                        const NoiseConfig& noise,
                                        std::uint64_t seed) {
  noise.validate();
  const double cell = stack.pallet.cell_size;
  const int draws = noise.nominal_only ? 1 : noise.samples_per_check;
  Rng rng(mix_seed(seed));
  int passed = 0;
  for (int k = 0; k < draws; ++k) {
    double dx = 0.0, dy = 0.0, yaw = 0.0;
    if (!noise.nominal_only) {
      dx = rng.normal(0.0, noise.translational_std);
      dy = rng.normal(0.0, noise.translational_std);
      yaw = rng.normal(0.0, noise.rotational_std_deg) * (3.14159265358979323846 / 180.0);
    }
    StackBox cand = make_stack_box(oriented, x * cell + dx, y * cell + dy,
                                   /*z=*/0, yaw, cell);
    cand.z = stack.continuous_rest_height(cand.base);
    if (quasi_static_stable_with(stack, cand)) ++passed;
  }
  StabilityVerdict v;
  v.draws = draws;
  v.stable_fraction = static_cast<double>(passed) / static_cast<double>(draws);
  v.stable = v.stable_fraction >= noise.stable_fraction_threshold - 1e-12;
  return v;
}

// Canonical sub-seed for one placement check, shared by the environment step
// and the oracle mask producer so both see the same verdict.
inline std::uint64_t placement_check_seed(std::uint64_t state_seed, int slot,
                                          int orientation_code, int x, int y,
                                          int width_cells) {
  const std::uint64_t cell =
      static_cast<std::uint64_t>(x) * static_cast<std::uint64_t>(width_cells) +
      static_cast<std::uint64_t>(y);
  return mix_seed(mix_seed(state_seed, static_cast<std::uint64_t>(slot * 6 + orientation_code)),
                  cell);
}

// Brute-force ground truth g_t: one bit per anchor cell, 1 iff the placement
// is in bounds, respects the height cap, and passes check_placement. Each
// cell draws from its own derived seed, so the result is independent of the
// worker count.
inline MaskBitmap label_mask(const StackModel& stack, const HeightMap& heightmap,
                             const OrientedBox& oriented, const NoiseConfig& noise,
                             std::uint64_t seed, unsigned jobs = 1) {
  const int lp = heightmap.config.length_cells;
  const int wp = heightmap.config.width_cells;
  MaskBitmap mask(lp, wp, 0);
  const Grid<int> rest = rest_height_map(heightmap, oriented.length, oriented.width);

  std::vector<std::size_t> eligible;
  for (int x = 0; x < lp; ++x) {
    for (int y = 0; y < wp; ++y) {
      const int r = rest.at(x, y);
      if (r < 0) continue;  // out of bounds
      if (r + oriented.height > heightmap.config.max_height_cells) continue;
      eligible.push_back(static_cast<std::size_t>(x) * static_cast<std::size_t>(wp) +
                         static_cast<std::size_t>(y));
    }
  }
  parallel_for(eligible.size(), jobs, [&](std::size_t i) {
    const int x = static_cast<int>(eligible[i] / static_cast<std::size_t>(wp));
    const int y = static_cast<int>(eligible[i] % static_cast<std::size_t>(wp));
    const StabilityVerdict v = check_placement(
        stack, oriented, x, y, noise,
        mix_seed(seed, static_cast<std::uint64_t>(eligible[i])));
    mask.at(x, y) = v.stable ? 1 : 0;
  });
  return mask;
}

}  // namespace pallet
