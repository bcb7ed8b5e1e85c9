#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "pallet/core.hpp"
#include "pallet/env.hpp"
#include "pallet/learn.hpp"
#include "pallet/parallel.hpp"
#include "pallet/stability.hpp"

namespace pallet {

// One feasibility bit per flattened action; layout matches ActionIndex
// (slot-major, then orientation, then x, then y).
struct FullActionMask {
  int buffer_capacity = 0;
  int length_cells = 0;
  int width_cells = 0;
  std::vector<std::uint8_t> bits;

  FullActionMask() = default;
  FullActionMask(int n, const PalletConfig& cfg)
      : buffer_capacity(n),
        length_cells(cfg.length_cells),
        width_cells(cfg.width_cells),
        bits(static_cast<std::size_t>(n) * kOrientationCount * cfg.length_cells *
                 cfg.width_cells,
             0) {}

  std::int64_t size() const { return static_cast<std::int64_t>(bits.size()); }
  bool test(std::int64_t idx) const {
    return bits[static_cast<std::size_t>(idx)] != 0;
  }

  std::int64_t count_true() const {
    std::int64_t c = 0;
    for (const auto b : bits) c += b != 0 ? 1 : 0;
    return c;
  }

  // Writes a per-cell bitmap into the (slot, orientation) plane.
  void set_plane(int slot, int code, const MaskBitmap& mask) {
    const std::size_t plane = static_cast<std::size_t>(length_cells) * width_cells;
    const std::size_t base =
        (static_cast<std::size_t>(slot) * kOrientationCount +
         static_cast<std::size_t>(code)) *
        plane;
    for (std::size_t i = 0; i < plane; ++i) bits[base + i] = mask.raw()[i];
  }
};

// Geometric feasibility only: in bounds and under the height cap.
inline MaskBitmap geometric_mask(const HeightMap& heightmap,
                                 const OrientedBox& oriented) {
  const PalletConfig& cfg = heightmap.config;
  MaskBitmap mask(cfg.length_cells, cfg.width_cells, 0);
  if (oriented.length > cfg.length_cells || oriented.width > cfg.width_cells)
    return mask;
  const Grid<int> rest = rest_height_map(heightmap, oriented.length, oriented.width);
  for (int x = 0; x < cfg.length_cells; ++x)
    for (int y = 0; y < cfg.width_cells; ++y) {
      const int r = rest.at(x, y);
      mask.at(x, y) = (r >= 0 && r + oriented.height <= cfg.max_height_cells) ? 1 : 0;
    }
  return mask;
}

// Support-area heuristic: a cell is feasible iff the placement is
// geometrically valid and (fraction > 0.60 with 4 corners) or
// (fraction > 0.80 with >= 3 corners) or (fraction > 0.95). Strict
// inequalities.
inline MaskBitmap heuristic_mask(const HeightMap& heightmap,
                                 const OrientedBox& oriented) {
  const PalletConfig& cfg = heightmap.config;
  MaskBitmap mask(cfg.length_cells, cfg.width_cells, 0);
  if (oriented.length > cfg.length_cells || oriented.width > cfg.width_cells)
    return mask;
  const Grid<int> rest = rest_height_map(heightmap, oriented.length, oriented.width);
  for (int x = 0; x + oriented.length <= cfg.length_cells; ++x) {
    for (int y = 0; y + oriented.width <= cfg.width_cells; ++y) {
      const int r = rest.at(x, y);
      if (r < 0 || r + oriented.height > cfg.max_height_cells) continue;
      const SupportStats s = support_stats(heightmap, oriented, x, y);
      const int corners = s.corner_count();
      const double f = s.support_fraction;
      if ((f > 0.60 && corners == 4) || (f > 0.80 && corners >= 3) || f > 0.95)
        mask.at(x, y) = 1;
    }
  }
  return mask;
}

// Learned per-cell probabilities binarized at the threshold, intersected
// with geometric validity.
inline MaskBitmap learned_mask_infer(const MaskModel& model,
                                     const HeightMap& heightmap,
                                     const OrientedBox& oriented,
                                     double threshold) {
  if (heightmap.config.length_cells != model.pallet[0] ||
      heightmap.config.width_cells != model.pallet[1] ||
      heightmap.config.max_height_cells != model.pallet[2])
    throw ConfigError("learned_mask_infer: model was trained for a different pallet");
  const int box[3] = {oriented.length, oriented.width, oriented.height};
  const Grid<double> probs =
      forward(model, build_input(heightmap.heights, box, model.input_scale));
  MaskBitmap bits = geometric_mask(heightmap, oriented);
  for (std::size_t i = 0; i < bits.raw().size(); ++i)
    if (probs.raw()[i] < threshold) bits.raw()[i] = 0;
  return bits;
}

inline MaskBitmap learned_mask_infer(const MaskModel& model,
                                     const HeightMap& heightmap,
                                     const OrientedBox& oriented) {
  return learned_mask_infer(model, heightmap, oriented, model.threshold);
}

// |pred AND truth| / |pred OR truth|; 1.0 when both masks are empty.
inline double mask_iou(const MaskBitmap& predicted, const MaskBitmap& truth) {
  if (!predicted.same_shape(truth))
    throw std::invalid_argument("mask_iou: shape mismatch");
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted.raw()[i] != 0;
    const bool t = truth.raw()[i] != 0;
    inter += (p && t) ? 1 : 0;
    uni += (p || t) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

enum class MaskMode { none, heuristic, learned, oracle };

inline const char* to_string(MaskMode m) {
  switch (m) {
    case MaskMode::none: return "none";
    case MaskMode::heuristic: return "heuristic";
    case MaskMode::learned: return "learned";
    case MaskMode::oracle: return "oracle";
  }
  return "?";
}

// Produces the per-cell bitmap for one (slot, orientation) pair of a state.
// dims_only() producers depend only on (heightmap, oriented dims) and may be
// deduplicated across pairs; the oracle depends on the pair through its
// derived seed.
class MaskProducer {
 public:
  virtual ~MaskProducer() = default;
  virtual MaskBitmap produce(const EnvState& state, int slot, int orientation_code,
                             const OrientedBox& oriented) const = 0;
  virtual bool dims_only() const { return true; }
  virtual MaskMode mode() const = 0;
};

class GeometricProducer final : public MaskProducer {
 public:
  MaskBitmap produce(const EnvState& state, int, int,
                     const OrientedBox& oriented) const override {
    return geometric_mask(state.heightmap, oriented);
  }
  MaskMode mode() const override { return MaskMode::none; }
};

class HeuristicProducer final : public MaskProducer {
 public:
  MaskBitmap produce(const EnvState& state, int, int,
                     const OrientedBox& oriented) const override {
    return heuristic_mask(state.heightmap, oriented);
  }
  MaskMode mode() const override { return MaskMode::heuristic; }
};

class LearnedProducer final : public MaskProducer {
 public:
  LearnedProducer(const MaskModel* model, double threshold)
      : model_(model), threshold_(threshold) {}
  explicit LearnedProducer(const MaskModel* model)
      : model_(model), threshold_(model->threshold) {}

  MaskBitmap produce(const EnvState& state, int, int,
                     const OrientedBox& oriented) const override {
    return learned_mask_infer(*model_, state.heightmap, oriented, threshold_);
  }
  MaskMode mode() const override { return MaskMode::learned; }

 private:
  const MaskModel* model_;
  double threshold_;
};

// Ground-truth producer. Seeds derive from the state's stability seed and
// the (slot, orientation) pair, matching the seeds the environment step will
// use, so a 1-bit here guarantees the step's verdict is stable.
class OracleProducer final : public MaskProducer {
 public:
  OracleProducer(const NoiseConfig& noise, unsigned jobs = 1)
      : noise_(noise), jobs_(jobs) {}

  MaskBitmap produce(const EnvState& state, int slot, int orientation_code,
                     const OrientedBox& oriented) const override {
    const std::uint64_t pair_seed =
        mix_seed(state.stability_seed(),
                 static_cast<std::uint64_t>(slot * kOrientationCount + orientation_code));
    return label_mask(state.stack, state.heightmap, oriented, noise_, pair_seed,
                      jobs_);
  }
  bool dims_only() const override { return false; }
  MaskMode mode() const override { return MaskMode::oracle; }

 private:
  NoiseConfig noise_;
  unsigned jobs_;
};

// Lays out one bitmap per occupied (slot, orientation) pair in ActionIndex
// order; empty slots stay all-false. dims_only producers are evaluated once
// per distinct oriented size.
inline FullActionMask assemble_full_mask(const EnvState& state,
                                         const MaskProducer& producer,
                                         unsigned jobs = 1) {
  const PalletConfig& cfg = state.heightmap.config;
  const int n = state.buffer.capacity;
  FullActionMask full(n, cfg);

  struct Pair {
    int slot, code;
    OrientedBox oriented;
  };
  std::vector<Pair> pairs;
  for (int slot = 0; slot < n; ++slot) {
    const auto& box = state.buffer.slots[static_cast<std::size_t>(slot)];
    if (!box.has_value()) continue;
    const auto obs = orientations(*box);
    for (int code = 0; code < kOrientationCount; ++code)
      pairs.push_back(Pair{slot, code, obs[static_cast<std::size_t>(code)]});
  }

  if (producer.dims_only()) {
    std::map<std::tuple<int, int, int>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& p = pairs[i].oriented;
      groups[{p.length, p.width, p.height}].push_back(i);
    }
    std::vector<const std::vector<std::size_t>*> group_list;
    group_list.reserve(groups.size());
    for (const auto& [dims, members] : groups) group_list.push_back(&members);
    std::vector<MaskBitmap> masks(group_list.size());
    parallel_for(group_list.size(), jobs, [&](std::size_t g) {
      const Pair& rep = pairs[group_list[g]->front()];
      masks[g] = producer.produce(state, rep.slot, rep.code, rep.oriented);
    });
    for (std::size_t g = 0; g < group_list.size(); ++g)
      for (const std::size_t i : *group_list[g])
        full.set_plane(pairs[i].slot, pairs[i].code, masks[g]);
  } else {
    std::vector<MaskBitmap> masks(pairs.size());
    parallel_for(pairs.size(), jobs, [&](std::size_t i) {
      masks[i] =
          producer.produce(state, pairs[i].slot, pairs[i].code, pairs[i].oriented);
    });
    for (std::size_t i = 0; i < pairs.size(); ++i)
      full.set_plane(pairs[i].slot, pairs[i].code, masks[i]);
  }
  return full;
}

// Producer mask with the geometric fallback: if the producer leaves no
// action while geometrically valid ones exist, the geometric mask is used
// instead (and fell_back reports it). Without this the MDP would deadlock on
// an over-strict mask.
inline FullActionMask assemble_with_fallback(const EnvState& state,
                                             const MaskProducer& producer,
                                             unsigned jobs = 1,
                                             bool* fell_back = nullptr) {
  if (fell_back != nullptr) *fell_back = false;
  FullActionMask full = assemble_full_mask(state, producer, jobs);
  if (full.count_true() == 0 && producer.mode() != MaskMode::none) {
    const GeometricProducer geom;
    FullActionMask geometric = assemble_full_mask(state, geom, jobs);
    if (geometric.count_true() > 0) {
      if (fell_back != nullptr) *fell_back = true;
      return geometric;
    }
  }
  return full;
}

}  // namespace pallet
