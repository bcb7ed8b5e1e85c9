#pragma once

#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "pallet/core.hpp"
#include "pallet/rng.hpp"
#include "pallet/stability.hpp"

namespace pallet {

struct ScenarioConfig {
  std::vector<BoxDims> box_catalog;
  int episode_box_count = 80;
  int buffer_capacity = 5;
  double weight_min = 0.5;
  double weight_max = 5.0;
  bool fixed_multiset = false;  // equal counts per size instead of iid draws
  PalletConfig pallet;
  std::uint64_t rng_seed = 0;

  // 80 boxes of 5 sizes on a 25 x 25 x 25 pallet.
  static ScenarioConfig defaults() {
    ScenarioConfig s;
    s.box_catalog = {BoxDims{10, 8, 6}, BoxDims{9, 6, 4}, BoxDims{6, 6, 6},
                     BoxDims{6, 4, 4}, BoxDims{4, 4, 4}};
    return s;
  }

  void validate() const {
    pallet.validate();
    if (box_catalog.empty())
      throw std::invalid_argument("ScenarioConfig: box catalog must be non-empty");
    for (const auto& b : box_catalog) b.validate();
    if (episode_box_count < 1)
      throw std::invalid_argument("ScenarioConfig: episode_box_count must be >= 1");
    if (buffer_capacity < 1)
      throw std::invalid_argument("ScenarioConfig: buffer capacity must be >= 1");
    if (!(weight_min > 0.0) || weight_min > weight_max)
      throw std::invalid_argument("ScenarioConfig: invalid weight range");
  }
};

enum class TerminationReason {
  none,
  stream_exhausted,
  height_exceeded,  // reserved: valid steps cannot exceed the cap
  unstable,
  no_valid_action,
};

inline const char* to_string(TerminationReason r) {
  switch (r) {
    case TerminationReason::none: return "none";
    case TerminationReason::stream_exhausted: return "stream_exhausted";
    case TerminationReason::height_exceeded: return "height_exceeded";
    case TerminationReason::unstable: return "unstable";
    case TerminationReason::no_valid_action: return "no_valid_action";
  }
  return "?";
}

struct EnvState {
  HeightMap heightmap;
  BufferState buffer;
  std::deque<BoxDims> remaining_stream;  // hidden from the policy
  StackModel stack;                      // placed boxes, nominal poses
  int step_count = 0;
  std::int64_t stable_volume = 0;  // cells^3 of stably placed boxes
  bool failed = false;             // an unstable placement occurred
  std::uint64_t episode_seed = 0;

  EnvState() : buffer(1) {}

  // Base seed for stability checks at the current step; combined with the
  // action coordinates it pins every oracle draw of this timestep.
  std::uint64_t stability_seed() const {
    return mix_seed(episode_seed, static_cast<std::uint64_t>(step_count));
  }
};

struct Validity {
  bool ok = false;
  const char* reason = "";
};

inline Validity is_valid_placement(const EnvState& state, const Action& action) {
  const int n = state.buffer.capacity;
  if (action.slot_index < 0 || action.slot_index >= n)
    return {false, "slot index out of range"};
  if (action.orientation.code < 0 || action.orientation.code >= kOrientationCount)
    return {false, "orientation code out of range"};
  const auto& slot = state.buffer.slots[static_cast<std::size_t>(action.slot_index)];
  if (!slot.has_value()) return {false, "buffer slot is empty"};
  const OrientedBox ob = orient(*slot, action.orientation);
  const Footprint f = footprint(ob, action.x, action.y, state.heightmap.config);
  if (!f.in_bounds) return {false, "footprint out of bounds"};
  const int rest = resting_height(state.heightmap, ob, action.x, action.y);
  if (rest + ob.height > state.heightmap.config.max_height_cells)
    return {false, "height cap exceeded"};
  return {true, ""};
}

// True iff some geometrically valid action exists (occupied slot, in-bounds
// footprint, height cap respected).
inline bool any_valid_action(const EnvState& state) {
  const PalletConfig& cfg = state.heightmap.config;
  for (const auto& slot : state.buffer.slots) {
    if (!slot.has_value()) continue;
    for (const OrientedBox& ob : orientations(*slot)) {
      if (ob.length > cfg.length_cells || ob.width > cfg.width_cells) continue;
      const Grid<int> rest = rest_height_map(state.heightmap, ob.length, ob.width);
      for (int x = 0; x + ob.length <= cfg.length_cells; ++x) {
        for (int y = 0; y + ob.width <= cfg.width_cells; ++y) {
          const int r = rest.at(x, y);
          if (r >= 0 && r + ob.height <= cfg.max_height_cells) return true;
        }
      }
    }
  }
  return false;
}

// Fresh episode: iid catalog draws (or an equal-count multiset), uniform
// weights, shuffled order, buffer filled from the stream front.
inline EnvState reset(const ScenarioConfig& scenario, const NoiseConfig& noise,
                      std::uint64_t seed) {
  scenario.validate();
  noise.validate();
  EnvState st;
  st.heightmap = HeightMap(scenario.pallet);
  st.buffer = BufferState(scenario.buffer_capacity);
  st.stack = StackModel(scenario.pallet);
  st.episode_seed = seed;

  Rng rng(mix_seed(seed, 0x5eedULL));
  std::vector<BoxDims> stream;
  stream.reserve(static_cast<std::size_t>(scenario.episode_box_count));
  const std::size_t k = scenario.box_catalog.size();
  if (scenario.fixed_multiset) {
    for (int i = 0; i < scenario.episode_box_count; ++i)
      stream.push_back(scenario.box_catalog[static_cast<std::size_t>(i) % k]);
  } else {
    for (int i = 0; i < scenario.episode_box_count; ++i)
      stream.push_back(scenario.box_catalog[rng.index(k)]);
  }
  for (auto& b : stream) b.weight = rng.uniform(scenario.weight_min, scenario.weight_max);
  rng.shuffle(stream);

  for (const auto& b : stream) st.remaining_stream.push_back(b);
  for (int s = 0; s < scenario.buffer_capacity && !st.remaining_stream.empty(); ++s) {
    st.buffer.slots[static_cast<std::size_t>(s)] = st.remaining_stream.front();
    st.remaining_stream.pop_front();
  }
  return st;
}

struct StepOutcome {
  double reward = 0.0;
  bool done = false;
  TerminationReason reason = TerminationReason::none;
  double stable_fraction = 0.0;
  std::int64_t placed_volume = 0;
};

// Applies one placement. The caller must have checked validity (masked
// sampling guarantees it); an invalid action is a caller bug and throws.
inline StepOutcome step_inplace(EnvState& state, const Action& action,
                                const NoiseConfig& noise) {
  const Validity v = is_valid_placement(state, action);
  if (!v.ok)
    throw std::invalid_argument(std::string("step: invalid action: ") + v.reason);

  const BoxDims box = *state.buffer.slots[static_cast<std::size_t>(action.slot_index)];
  const OrientedBox ob = orient(box, action.orientation);
  const PalletConfig& cfg = state.heightmap.config;
  const int rest = resting_height(state.heightmap, ob, action.x, action.y);

  const std::uint64_t seed =
      placement_check_seed(state.stability_seed(), action.slot_index,
                           action.orientation.code, action.x, action.y,
                           cfg.width_cells);
  const StabilityVerdict verdict =
      check_placement(state.stack, ob, action.x, action.y, noise, seed);

  // Planning state keeps the nominal pose; noise only affects the verdict.
  const double cell = cfg.cell_size;
  state.stack.add_box(
      make_stack_box(ob, action.x * cell, action.y * cell, rest, 0.0, cell));
  const int new_top = rest + ob.height;
  for (int cx = action.x; cx < action.x + ob.length; ++cx)
    for (int cy = action.y; cy < action.y + ob.width; ++cy)
      state.heightmap.at(cx, cy) = new_top;

  StepOutcome out;
  out.stable_fraction = verdict.stable_fraction;
  out.placed_volume = ob.volume();
  if (verdict.stable) {
    state.stable_volume += ob.volume();
    out.reward = static_cast<double>(ob.volume()) /
                 static_cast<double>(cfg.volume_cells());
  }
  state.step_count += 1;

  auto& slot = state.buffer.slots[static_cast<std::size_t>(action.slot_index)];
  if (!state.remaining_stream.empty()) {
    slot = state.remaining_stream.front();
    state.remaining_stream.pop_front();
  } else {
    slot.reset();
  }

  if (!verdict.stable) {
    state.failed = true;
    out.done = true;
    out.reason = TerminationReason::unstable;
  } else if (state.buffer.empty()) {
    out.done = true;
    out.reason = TerminationReason::stream_exhausted;
  } else if (!any_valid_action(state)) {
    out.done = true;
    out.reason = TerminationReason::no_valid_action;
  }
  return out;
}

struct StepResult {
  EnvState next_state;
  double reward = 0.0;
  bool done = false;
  TerminationReason termination_reason = TerminationReason::none;
};

inline StepResult step(const EnvState& state, const Action& action,
                       const NoiseConfig& noise) {
  StepResult r;
  r.next_state = state;
  const StepOutcome out = step_inplace(r.next_state, action, noise);
  r.reward = out.reward;
  r.done = out.done;
  r.termination_reason = out.reason;
  return r;
}

// V_total / V_max over stably placed boxes.
inline double space_utilization(const EnvState& state) {
  return static_cast<double>(state.stable_volume) /
         static_cast<double>(state.heightmap.config.volume_cells());
}

}  // namespace pallet
