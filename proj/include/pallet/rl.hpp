#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "pallet/env.hpp"
#include "pallet/masking.hpp"
#include "pallet/nn.hpp"
#include "pallet/parallel.hpp"
#include "pallet/rng.hpp"

namespace pallet {

struct PolicyArch {
  int conv1_channels = 6;
  int conv2_channels = 12;
  int hm_feature = 48;
  int box_hidden = 24;
  int policy_hidden = 96;
  int value_hidden = 48;
};

// Observation as the policy sees it: normalized heightmap image plus the
// buffer dimension list (empty slots zero-padded, with a presence flag).
struct PolicyObs {
  nn::Tensor heightmap;        // 1 x l_p x w_p, scaled by 1 / h_p
  std::vector<double> buffer;  // N x (l, w, h, presence)
};

inline void build_policy_obs(const EnvState& state, PolicyObs& obs) {
  const PalletConfig& cfg = state.heightmap.config;
  const double scale = 1.0 / static_cast<double>(cfg.max_height_cells);
  obs.heightmap.resize(1, cfg.length_cells, cfg.width_cells);
  for (std::size_t i = 0; i < state.heightmap.heights.size(); ++i)
    obs.heightmap.v[i] = static_cast<double>(state.heightmap.heights.raw()[i]) * scale;
  obs.buffer.assign(static_cast<std::size_t>(state.buffer.capacity) * 4, 0.0);
  for (int s = 0; s < state.buffer.capacity; ++s) {
    const auto& slot = state.buffer.slots[static_cast<std::size_t>(s)];
    if (!slot.has_value()) continue;
    double* at = obs.buffer.data() + static_cast<std::size_t>(s) * 4;
    at[0] = slot->length * scale;
    at[1] = slot->width * scale;
    at[2] = slot->height * scale;
    at[3] = 1.0;
  }
}

// CNN heightmap encoder + MLP buffer encoder feeding a dense policy head
// over the flat combinatorial action space and a scalar value head.
struct PolicyNet {
  PolicyArch arch;
  int buffer_capacity = 1;
  int lp = 0, wp = 0;
  std::int64_t action_count = 0;
  nn::Activation act = nn::Activation::Tanh;

  nn::Conv2D conv1, conv2;
  nn::Dense hm_fc, box_fc1, box_fc2, pol_fc, pol_logits, val_fc, val_out;

  void configure(const PolicyArch& a, int n, const PalletConfig& pallet) {
    arch = a;
    buffer_capacity = n;
    lp = pallet.length_cells;
    wp = pallet.width_cells;
    action_count = static_cast<std::int64_t>(n) * kOrientationCount * lp * wp;
    conv1.configure(1, a.conv1_channels, 3);
    conv2.configure(a.conv1_channels, a.conv2_channels, 3);
    hm_fc.configure(a.conv2_channels * lp * wp, a.hm_feature);
    box_fc1.configure(n * 4, a.box_hidden);
    box_fc2.configure(a.box_hidden, a.box_hidden);
    const int feat = a.hm_feature + a.box_hidden;
    pol_fc.configure(feat, a.policy_hidden);
    pol_logits.configure(a.policy_hidden, static_cast<int>(action_count));
    val_fc.configure(feat, a.value_hidden);
    val_out.configure(a.value_hidden, 1);
  }

  // Zero-initialized heads: uniform logits over the mask and value 0.
  void init(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xF01CULL));
    conv1.init(rng);
    conv2.init(rng);
    hm_fc.init(rng);
    box_fc1.init(rng);
    box_fc2.init(rng);
    pol_fc.init(rng);
    pol_logits.init(rng, /*zero_init=*/true);
    val_fc.init(rng);
    val_out.init(rng, /*zero_init=*/true);
  }

  template <typename Fn>
  void visit(Fn fn) {
    fn(conv1.w, conv1.gw);
    fn(conv1.b, conv1.gb);
    fn(conv2.w, conv2.gw);
    fn(conv2.b, conv2.gb);
    fn(hm_fc.w, hm_fc.gw);
    fn(hm_fc.b, hm_fc.gb);
    fn(box_fc1.w, box_fc1.gw);
    fn(box_fc1.b, box_fc1.gb);
    fn(box_fc2.w, box_fc2.gw);
    fn(box_fc2.b, box_fc2.gb);
    fn(pol_fc.w, pol_fc.gw);
    fn(pol_fc.b, pol_fc.gb);
    fn(pol_logits.w, pol_logits.gw);
    fn(pol_logits.b, pol_logits.gb);
    fn(val_fc.w, val_fc.gw);
    fn(val_fc.b, val_fc.gb);
    fn(val_out.w, val_out.gw);
    fn(val_out.b, val_out.gb);
  }

  struct Work {
    nn::Tensor c1, c2;
    std::vector<double> hm_feat, box_h1, box_h2, feat, pol_h, logits, val_h;
    double value = 0.0;
    // backward scratch
    nn::Tensor g_c1, g_c2;
    std::vector<double> g_hm_feat, g_box_h1, g_box_h2, g_feat, g_pol_h, g_val_h;
  };

  void forward(const PolicyObs& obs, Work& w) const {
    conv1.forward(obs.heightmap, w.c1);
    nn::activation_fwd(act, w.c1.v);
    conv2.forward(w.c1, w.c2);
    nn::activation_fwd(act, w.c2.v);

    w.hm_feat.resize(static_cast<std::size_t>(arch.hm_feature));
    hm_fc.forward(w.c2.v.data(), w.hm_feat.data());
    nn::activation_fwd(act, w.hm_feat);

    w.box_h1.resize(static_cast<std::size_t>(arch.box_hidden));
    box_fc1.forward(obs.buffer.data(), w.box_h1.data());
    nn::activation_fwd(act, w.box_h1);
    w.box_h2.resize(static_cast<std::size_t>(arch.box_hidden));
    box_fc2.forward(w.box_h1.data(), w.box_h2.data());
    nn::activation_fwd(act, w.box_h2);

    w.feat.resize(w.hm_feat.size() + w.box_h2.size());
    std::copy(w.hm_feat.begin(), w.hm_feat.end(), w.feat.begin());
    std::copy(w.box_h2.begin(), w.box_h2.end(),
              w.feat.begin() + static_cast<std::ptrdiff_t>(w.hm_feat.size()));

    w.pol_h.resize(static_cast<std::size_t>(arch.policy_hidden));
    pol_fc.forward(w.feat.data(), w.pol_h.data());
    nn::activation_fwd(act, w.pol_h);
    w.logits.resize(static_cast<std::size_t>(action_count));
    pol_logits.forward(w.pol_h.data(), w.logits.data());

    w.val_h.resize(static_cast<std::size_t>(arch.value_hidden));
    val_fc.forward(w.feat.data(), w.val_h.data());
    nn::activation_fwd(act, w.val_h);
    double v = 0.0;
    val_out.forward(w.val_h.data(), &v);
    w.value = v;
  }

  // Accumulates parameter gradients for d(loss)/d(logits) and
  // d(loss)/d(value).
  void backward(const PolicyObs& obs, Work& w, const std::vector<double>& g_logits,
                double g_value) {
    w.g_pol_h.assign(static_cast<std::size_t>(arch.policy_hidden), 0.0);
    pol_logits.backward(w.pol_h.data(), g_logits.data(), w.g_pol_h.data());
    nn::activation_bwd(act, w.pol_h, w.g_pol_h);
    w.g_feat.assign(w.feat.size(), 0.0);
    pol_fc.backward(w.feat.data(), w.g_pol_h.data(), w.g_feat.data());

    w.g_val_h.assign(static_cast<std::size_t>(arch.value_hidden), 0.0);
    val_out.backward(w.val_h.data(), &g_value, w.g_val_h.data());
    nn::activation_bwd(act, w.val_h, w.g_val_h);
    std::vector<double> g_feat_v(w.feat.size(), 0.0);
    val_fc.backward(w.feat.data(), w.g_val_h.data(), g_feat_v.data());
    for (std::size_t i = 0; i < w.g_feat.size(); ++i) w.g_feat[i] += g_feat_v[i];

    w.g_hm_feat.assign(w.hm_feat.size(), 0.0);
    std::copy(w.g_feat.begin(),
              w.g_feat.begin() + static_cast<std::ptrdiff_t>(w.hm_feat.size()),
              w.g_hm_feat.begin());
    w.g_box_h2.assign(w.box_h2.size(), 0.0);
    std::copy(w.g_feat.begin() + static_cast<std::ptrdiff_t>(w.hm_feat.size()),
              w.g_feat.end(), w.g_box_h2.begin());

    nn::activation_bwd(act, w.box_h2, w.g_box_h2);
    w.g_box_h1.assign(w.box_h1.size(), 0.0);
    box_fc2.backward(w.box_h1.data(), w.g_box_h2.data(), w.g_box_h1.data());
    nn::activation_bwd(act, w.box_h1, w.g_box_h1);
    box_fc1.backward(obs.buffer.data(), w.g_box_h1.data(), nullptr);

    nn::activation_bwd(act, w.hm_feat, w.g_hm_feat);
    w.g_c2.resize(w.c2.c, w.c2.h, w.c2.w);
    hm_fc.backward(w.c2.v.data(), w.g_hm_feat.data(), w.g_c2.v.data());
    nn::activation_bwd(act, w.c2.v, w.g_c2.v);
    conv2.backward(w.c1, w.g_c2, &w.g_c1);
    nn::activation_bwd(act, w.c1.v, w.g_c1.v);
    conv1.backward(obs.heightmap, w.g_c1, nullptr);
  }
};

struct PolicyModel {
  PolicyNet net;
  int buffer_capacity = 1;
  PalletConfig pallet;
};

struct TrainerConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_epsilon = 0.2;
  int rollout_horizon = 64;  // steps per env per update
  int num_envs = 8;
  int epochs_per_update = 4;
  int minibatch_size = 128;
  double learning_rate = 1e-3;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  bool normalize_advantages = true;
  std::int64_t total_env_steps = 200000;
  std::uint64_t rng_seed = 0;
  MaskMode mask_mode = MaskMode::heuristic;
  PolicyArch arch;
  int eval_episodes = 20;

  void validate() const {
    if (!(gamma > 0.0) || gamma > 1.0)
      throw std::invalid_argument("TrainerConfig: gamma must be in (0, 1]");
    if (!(clip_epsilon > 0.0))
      throw std::invalid_argument("TrainerConfig: clip epsilon must be > 0");
    if (gae_lambda < 0.0 || gae_lambda > 1.0)
      throw std::invalid_argument("TrainerConfig: gae_lambda must be in [0, 1]");
    if (rollout_horizon < 1 || num_envs < 1 || epochs_per_update < 1 ||
        minibatch_size < 1)
      throw std::invalid_argument("TrainerConfig: loop sizes must be >= 1");
    if (!(learning_rate > 0.0))
      throw std::invalid_argument("TrainerConfig: learning rate must be > 0");
    if (total_env_steps < 1)
      throw std::invalid_argument("TrainerConfig: total_env_steps must be >= 1");
    if (eval_episodes < 1)
      throw std::invalid_argument("TrainerConfig: eval_episodes must be >= 1");
  }
};

// Log of sum(exp(logits)) over mask-true entries; -inf when none.
inline double masked_logsumexp(const std::vector<double>& logits,
                               const std::vector<std::uint8_t>& mask) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i] != 0) m = std::max(m, logits[i]);
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i] != 0) acc += std::exp(logits[i] - m);
  return m + std::log(acc);
}

// Categorical sample over the masked support of the renormalized softmax;
// masked-out actions carry exactly zero probability. Returns the flat index
// and writes the log-probability.
inline std::int64_t masked_sample(const std::vector<double>& logits,
                                  const FullActionMask& mask, Rng& rng,
                                  double* log_prob) {
  if (static_cast<std::int64_t>(logits.size()) != mask.size())
    throw std::invalid_argument("masked_sample: logits/mask size mismatch");
  const double lse = masked_logsumexp(logits, mask.bits);
  if (!std::isfinite(lse))
    throw std::invalid_argument("masked_sample: mask has no valid action");
  const double u = rng.uniform01();
  double cum = 0.0;
  std::int64_t last_valid = -1;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (mask.bits[i] == 0) continue;
    last_valid = static_cast<std::int64_t>(i);
    cum += std::exp(logits[i] - lse);
    if (u < cum) {
      if (log_prob != nullptr) *log_prob = logits[i] - lse;
      return static_cast<std::int64_t>(i);
    }
  }
  // Rounding residue: fall through to the last valid action.
  if (log_prob != nullptr)
    *log_prob = logits[static_cast<std::size_t>(last_valid)] - lse;
  return last_valid;
}

// Greedy variant: argmax over the masked support (first index wins ties).
inline std::int64_t masked_argmax(const std::vector<double>& logits,
                                  const FullActionMask& mask, double* log_prob) {
  std::int64_t best = -1;
  double best_v = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask.bits[i] != 0 && logits[i] > best_v) {
      best = static_cast<std::int64_t>(i);
      best_v = logits[i];
    }
  if (best < 0) throw std::invalid_argument("masked_argmax: mask has no valid action");
  if (log_prob != nullptr)
    *log_prob = logits[static_cast<std::size_t>(best)] -
                masked_logsumexp(logits, mask.bits);
  return best;
}

inline double masked_entropy(const std::vector<double>& logits,
                             const std::vector<std::uint8_t>& mask, double lse) {
  double h = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (mask[i] == 0) continue;
    const double lp = logits[i] - lse;
    h -= std::exp(lp) * lp;
  }
  return h;
}

// One logged environment transition, as stored during rollouts.
struct StepSample {
  PolicyObs obs;
  std::vector<std::uint8_t> mask;
  std::int64_t action = 0;
  double log_prob = 0.0;
  double reward = 0.0;
  double value = 0.0;
  bool done = false;
  double advantage = 0.0;
  double ret = 0.0;
};

struct Trajectory {
  std::vector<StepSample> steps;
  double bootstrap_value = 0.0;  // value of the state after the last step
};

struct EpisodeStats {
  double utilization = 0.0;
  int steps = 0;
  TerminationReason reason = TerminationReason::none;
};

// Captures (heightmap, oriented box) pairs from visited states with a fixed
// probability per state, one pair drawn uniformly over occupied slots x
// orientations, until the budget is reached.
class StateSampler {
 public:
  StateSampler(double rate, std::size_t budget, std::uint64_t seed)
      : rate_(rate), budget_(budget), rng_(mix_seed(seed, 0xCA97ULL)) {
    if (!(rate > 0.0) || rate > 1.0)
      throw std::invalid_argument("StateSampler: rate must be in (0, 1]");
  }

  void offer(const EnvState& state) {
    if (captured_.size() >= budget_) return;
    if (rate_ < 1.0 && !rng_.bernoulli(rate_)) return;
    std::vector<int> occupied;
    for (int s = 0; s < state.buffer.capacity; ++s)
      if (state.buffer.slots[static_cast<std::size_t>(s)].has_value())
        occupied.push_back(s);
    if (occupied.empty()) return;
    const std::size_t pick = rng_.index(occupied.size() * kOrientationCount);
    const int slot = occupied[pick / kOrientationCount];
    const int code = static_cast<int>(pick % kOrientationCount);
    const BoxDims dims = *state.buffer.slots[static_cast<std::size_t>(slot)];
    captured_.push_back(
        Captured{state.heightmap, orient(dims, Orientation{code})});
  }

  bool full() const { return captured_.size() >= budget_; }

  struct Captured {
    HeightMap heightmap;
    OrientedBox oriented;
  };
  const std::vector<Captured>& captured() const { return captured_; }
  std::vector<Captured> take() { return std::move(captured_); }

 private:
  double rate_;
  std::size_t budget_;
  Rng rng_;
  std::vector<Captured> captured_;
};

// Vectorized rollout collection over independent environment instances.
// Environments advance in lockstep; the per-step parallel section touches
// only per-env state, and episode bookkeeping plus state capture run
// sequentially in env order, so results are independent of --jobs.
class EnvPool {
 public:
  EnvPool(const ScenarioConfig& scenario, const NoiseConfig& noise, int num_envs,
          std::uint64_t seed)
      : scenario_(scenario), noise_(noise), base_seed_(seed) {
    scenario_.validate();
    noise_.validate();
    envs_.resize(static_cast<std::size_t>(num_envs));
    for (int e = 0; e < num_envs; ++e) {
      EnvSlot& slot = envs_[static_cast<std::size_t>(e)];
      slot.rng = Rng(mix_seed(seed, 0xE0000 + static_cast<std::uint64_t>(e)));
      slot.episode_index = 0;
      slot.state = reset(scenario_, noise_, episode_seed(e, 0));
      if (!any_valid_action(slot.state))
        throw std::runtime_error("EnvPool: reset state has no valid action");
    }
  }

  struct CollectResult {
    std::vector<Trajectory> trajectories;  // one per env
    std::vector<EpisodeStats> finished;
    int fallback_events = 0;
    std::int64_t steps = 0;
  };

  CollectResult collect(PolicyNet& policy, const MaskProducer& producer,
                        int horizon, unsigned jobs,
                        StateSampler* sampler = nullptr) {
    const std::size_t n_envs = envs_.size();
    CollectResult result;
    result.trajectories.resize(n_envs);
    for (auto& t : result.trajectories) t.steps.reserve(static_cast<std::size_t>(horizon));

    for (int t = 0; t < horizon; ++t) {
      if (sampler != nullptr)
        for (const EnvSlot& slot : envs_) sampler->offer(slot.state);

      parallel_for(n_envs, jobs, [&](std::size_t e) {
        EnvSlot& slot = envs_[e];
        StepSample rec;
        build_policy_obs(slot.state, rec.obs);
        bool fell_back = false;
        const FullActionMask mask =
            assemble_with_fallback(slot.state, producer, 1, &fell_back);
        slot.fell_back = fell_back;
        policy.forward(rec.obs, slot.work);
        rec.value = slot.work.value;
        rec.action = masked_sample(slot.work.logits, mask, slot.rng, &rec.log_prob);
        const ActionSpace space(slot.state.buffer.capacity,
                                slot.state.heightmap.config);
        const Action action = space.decode(ActionIndex{rec.action});
        const StepOutcome out = step_inplace(slot.state, action, noise_);
        rec.reward = out.reward;
        rec.done = out.done;
        rec.mask = mask.bits;
        slot.pending = std::move(rec);
        slot.pending_outcome = out;
      });

      for (std::size_t e = 0; e < n_envs; ++e) {
        EnvSlot& slot = envs_[e];
        if (slot.fell_back) ++result.fallback_events;
        result.trajectories[e].steps.push_back(std::move(slot.pending));
        ++result.steps;
        if (slot.pending_outcome.done) {
          EpisodeStats stats;
          stats.utilization = space_utilization(slot.state);
          stats.steps = slot.state.step_count;
          stats.reason = slot.pending_outcome.reason;
          result.finished.push_back(stats);
          slot.episode_index += 1;
          slot.state = reset(scenario_, noise_,
                             episode_seed(static_cast<int>(e), slot.episode_index));
        }
      }
    }

    // Bootstrap values for unfinished episodes.
    parallel_for(n_envs, jobs, [&](std::size_t e) {
      EnvSlot& slot = envs_[e];
      if (result.trajectories[e].steps.back().done) {
        result.trajectories[e].bootstrap_value = 0.0;
        return;
      }
      PolicyObs obs;
      build_policy_obs(slot.state, obs);
      policy.forward(obs, slot.work);
      result.trajectories[e].bootstrap_value = slot.work.value;
    });
    return result;
  }

 private:
  struct EnvSlot {
    EnvState state;
    Rng rng;
    std::uint64_t episode_index = 0;
    PolicyNet::Work work;
    StepSample pending;
    StepOutcome pending_outcome;
    bool fell_back = false;
  };

  std::uint64_t episode_seed(int env, std::uint64_t episode) const {
    return mix_seed(mix_seed(base_seed_, 0xEP1SODE_BASE + static_cast<std::uint64_t>(env)),
                    episode);
  }

  ScenarioConfig scenario_;
  NoiseConfig noise_;
  std::uint64_t base_seed_;
  std::vector<EnvSlot> envs_;
};

// Generalized advantage estimation over dense rewards; done flags cut the
// recursion at episode boundaries.
inline void compute_gae(Trajectory& traj, double gamma, double lambda) {
  double next_value = traj.bootstrap_value;
  double gae = 0.0;
  for (std::size_t i = traj.steps.size(); i-- > 0;) {
    StepSample& s = traj.steps[i];
    if (s.done) {
      next_value = 0.0;
      gae = 0.0;
    }
    const double delta = s.reward + gamma * next_value - s.value;
    gae = delta + gamma * lambda * gae;
    s.advantage = gae;
    s.ret = s.advantage + s.value;
    next_value = s.value;
  }
}

struct UpdateReport {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  int minibatches = 0;
};

// Clipped-surrogate loss over a minibatch with component weights. Gradients
// accumulate into the net. Importance ratios are taken against the stored
// log-probabilities under the stored masks. Returns the weighted loss.
struct MinibatchStats {
  double policy_loss = 0.0, value_loss = 0.0, entropy = 0.0;
  double ratio_sum = 0.0, kl_sum = 0.0;
  int clipped = 0;
  int count = 0;
};

inline double ppo_minibatch_loss(PolicyNet& net,
                                 const std::vector<const StepSample*>& batch,
                                 double clip_epsilon, double policy_weight,
                                 double value_weight, double entropy_weight,
                                 PolicyNet::Work& work,
                                 MinibatchStats* stats = nullptr) {
  const double inv = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  std::vector<double> g_logits;
  for (const StepSample* s : batch) {
    net.forward(s->obs, work);
    const double lse = masked_logsumexp(work.logits, s->mask);
    const double logp_new = work.logits[static_cast<std::size_t>(s->action)] - lse;
    const double ratio = std::exp(logp_new - s->log_prob);
    const double a = s->advantage;
    const double surr1 = ratio * a;
    const double clipped_ratio =
        std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
    const double surr2 = clipped_ratio * a;
    const double policy_loss = -std::min(surr1, surr2);
    const double vdiff = work.value - s->ret;
    const double value_loss = vdiff * vdiff;
    const double entropy = masked_entropy(work.logits, s->mask, lse);

    total += (policy_weight * policy_loss + value_weight * value_loss -
              entropy_weight * entropy) *
             inv;

    // d(policy_loss)/d(logp_new): active only on the unclipped branch.
    const double g_logp =
        (surr1 <= surr2) ? policy_weight * (-a * ratio) * inv : 0.0;
    const double g_value = value_weight * 2.0 * vdiff * inv;

    g_logits.assign(work.logits.size(), 0.0);
    for (std::size_t i = 0; i < work.logits.size(); ++i) {
      if (s->mask[i] == 0) continue;
      const double lp = work.logits[i] - lse;
      const double p = std::exp(lp);
      double g = -g_logp * p;  // -lse path of logp_new
      g += entropy_weight * inv * p * (lp + entropy);  // -entropy bonus
      g_logits[i] = g;
    }
    g_logits[static_cast<std::size_t>(s->action)] += g_logp;

    net.backward(s->obs, work, g_logits, g_value);

    if (stats != nullptr) {
      stats->policy_loss += policy_loss;
      stats->value_loss += value_loss;
      stats->entropy += entropy;
      stats->ratio_sum += ratio;
      stats->kl_sum += s->log_prob - logp_new;
      stats->clipped += (std::abs(ratio - 1.0) > clip_epsilon) ? 1 : 0;
      stats->count += 1;
    }
  }
  if (!std::isfinite(total))
    throw std::runtime_error("ppo_update: non-finite loss (diverged)");
  return total;
}

// One PPO update over collected trajectories: GAE, optional advantage
// normalization, then minibatch Adam epochs with the clipped objective.
inline UpdateReport ppo_update(PolicyNet& policy, std::vector<Trajectory>& rollouts,
                               const TrainerConfig& cfg, nn::AdamState& adam,
                               Rng& rng, unsigned jobs = 1) {
  std::vector<StepSample*> samples;
  for (Trajectory& t : rollouts) {
    if (t.steps.empty()) continue;
    compute_gae(t, cfg.gamma, cfg.gae_lambda);
    for (StepSample& s : t.steps) samples.push_back(&s);
  }
  if (samples.empty()) throw std::invalid_argument("ppo_update: no trajectories");

  if (cfg.normalize_advantages && samples.size() > 1) {
    double mean = 0.0;
    for (const StepSample* s : samples) mean += s->advantage;
    mean /= static_cast<double>(samples.size());
    double var = 0.0;
    for (const StepSample* s : samples) {
      const double d = s->advantage - mean;
      var += d * d;
    }
    const double std = std::sqrt(var / static_cast<double>(samples.size()));
    if (std > 1e-8)
      for (StepSample* s : samples) s->advantage = (s->advantage - mean) / std;
    else
      for (StepSample* s : samples) s->advantage -= mean;
  }

  struct Bucket {
    PolicyNet net;
    MinibatchStats stats;
    PolicyNet::Work work;
    double loss = 0.0;
    bool used = false;
  };

  UpdateReport report;
  MinibatchStats agg;
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const std::vector<double> base_params_snapshot;  // (params fetched per batch)
  for (int epoch = 0; epoch < cfg.epochs_per_update; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.minibatch_size)) {
      const std::size_t end = std::min(
          order.size(), start + static_cast<std::size_t>(cfg.minibatch_size));
      const std::size_t count = end - start;

      const std::vector<double> params = nn::get_params(policy);
      std::vector<Bucket> buckets;
      parallel_reduce<Bucket>(
          count, jobs,
          [&](std::size_t i, Bucket& bucket) {
            if (!bucket.used) {
              bucket.net.configure(policy.arch, policy.buffer_capacity,
                                   PalletConfig{policy.lp, policy.wp, 1, 1.0});
              bucket.net.act = policy.act;
              bucket.net.action_count = policy.action_count;
              nn::set_params(bucket.net, params);
              nn::zero_grads(bucket.net);
              bucket.used = true;
            }
            const std::vector<const StepSample*> one{samples[order[start + i]]};
            bucket.loss += ppo_minibatch_loss(
                bucket.net, one, cfg.clip_epsilon, 1.0, cfg.value_coef,
                cfg.entropy_coef, bucket.work, &bucket.stats);
          },
          buckets);

      nn::zero_grads(policy);
      for (Bucket& bucket : buckets) {
        if (!bucket.used) continue;
        nn::add_grads(policy, bucket.net);
        agg.policy_loss += bucket.stats.policy_loss;
        agg.value_loss += bucket.stats.value_loss;
        agg.entropy += bucket.stats.entropy;
        agg.ratio_sum += bucket.stats.ratio_sum;
        agg.kl_sum += bucket.stats.kl_sum;
        agg.clipped += bucket.stats.clipped;
        agg.count += bucket.stats.count;
      }
      // Per-sample losses were scaled by 1/1 in the buckets; rescale to the
      // minibatch mean before stepping.
      nn::scale_grads(policy, 1.0 / static_cast<double>(count));
      nn::adam_step(policy, adam, cfg.learning_rate);
      ++report.minibatches;
    }
  }

  if (agg.count > 0) {
    const double inv = 1.0 / static_cast<double>(agg.count);
    report.policy_loss = agg.policy_loss * inv;
    report.value_loss = agg.value_loss * inv;
    report.entropy = agg.entropy * inv;
    report.mean_ratio = agg.ratio_sum * inv;
    report.approx_kl = agg.kl_sum * inv;
    report.clip_fraction = static_cast<double>(agg.clipped) * inv;
  }
  return report;
}

}  // namespace pallet
