#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "pallet/core.hpp"
#include "pallet/nn.hpp"
#include "pallet/parallel.hpp"
#include "pallet/rng.hpp"

namespace pallet {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One supervised record: pallet configuration, oriented box dimensions, and
// the feasibility bitmap to predict.
struct MaskSample {
  Grid<int> heightmap;
  int box[3] = {1, 1, 1};  // oriented (length, width, height)
  MaskBitmap mask;
  int pallet[3] = {25, 25, 25};  // l_p, w_p, h_p

  void validate() const {
    if (heightmap.rows() != pallet[0] || heightmap.cols() != pallet[1])
      throw std::invalid_argument("MaskSample: heightmap shape mismatch");
    if (!mask.same_shape(heightmap))
      throw std::invalid_argument("MaskSample: mask shape mismatch");
  }
};

// Encoder-decoder segmentation net: two full-resolution convs, one pooled
// conv, upsample with a skip concat, one decoding conv, 1x1 logit head.
struct MaskNet {
  nn::Conv2D enc1{4, 16, 3};
  nn::Conv2D enc2{16, 32, 3};
  nn::Conv2D mid{32, 32, 3};
  nn::Conv2D dec{64, 16, 3};
  nn::Conv2D head{16, 1, 1};
  nn::Activation act = nn::Activation::Tanh;

  void init(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xACEDULL));
    enc1.init(rng);
    enc2.init(rng);
    mid.init(rng);
    dec.init(rng);
    head.init(rng, /*zero_init=*/true);  // fresh model emits probability 0.5
  }

  template <typename Fn>
  void visit(Fn fn) {
    fn(enc1.w, enc1.gw);
    fn(enc1.b, enc1.gb);
    fn(enc2.w, enc2.gw);
    fn(enc2.b, enc2.gb);
    fn(mid.w, mid.gw);
    fn(mid.b, mid.gb);
    fn(dec.w, dec.gw);
    fn(dec.b, dec.gb);
    fn(head.w, head.gw);
    fn(head.b, head.gb);
  }

  struct Work {
    nn::Tensor a1, a2, pooled, a3, up, cat, a4, logits;
    nn::Tensor g_a4, g_cat, g_up, g_a3, g_pooled, g_a2, g_a2_pool, g_a1;
  };

  void forward(const nn::Tensor& x, Work& w) const {
    enc1.forward(x, w.a1);
    nn::activation_fwd(act, w.a1.v);
    enc2.forward(w.a1, w.a2);
    nn::activation_fwd(act, w.a2.v);
    nn::avgpool2_fwd(w.a2, w.pooled);
    mid.forward(w.pooled, w.a3);
    nn::activation_fwd(act, w.a3.v);
    nn::upsample2_fwd(w.a3, x.h, x.w, w.up);
    concat(w.a2, w.up, w.cat);
    dec.forward(w.cat, w.a4);
    nn::activation_fwd(act, w.a4.v);
    head.forward(w.a4, w.logits);
  }

  // Accumulates parameter gradients; pass gx to also get the input gradient.
  void backward(const nn::Tensor& x, Work& w, const nn::Tensor& g_logits,
                nn::Tensor* gx = nullptr) {
    head.backward(w.a4, g_logits, &w.g_a4);
    nn::activation_bwd(act, w.a4.v, w.g_a4.v);
    dec.backward(w.cat, w.g_a4, &w.g_cat);
    split(w.g_cat, w.a2.c, w.g_a2, w.g_up);
    nn::upsample2_bwd(w.a3, w.g_up, w.g_a3);
    nn::activation_bwd(act, w.a3.v, w.g_a3.v);
    mid.backward(w.pooled, w.g_a3, &w.g_pooled);
    nn::avgpool2_bwd(w.a2, w.g_pooled, w.g_a2_pool);
    for (std::size_t i = 0; i < w.g_a2.v.size(); ++i)
      w.g_a2.v[i] += w.g_a2_pool.v[i];
    nn::activation_bwd(act, w.a2.v, w.g_a2.v);
    enc2.backward(w.a1, w.g_a2, &w.g_a1);
    nn::activation_bwd(act, w.a1.v, w.g_a1.v);
    enc1.backward(x, w.g_a1, gx);
  }

 private:
  static void concat(const nn::Tensor& a, const nn::Tensor& b, nn::Tensor& out) {
    out.resize(a.c + b.c, a.h, a.w);
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(),
              out.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
  }
  static void split(const nn::Tensor& g, int c_first, nn::Tensor& ga,
                    nn::Tensor& gb) {
    ga.resize(c_first, g.h, g.w);
    gb.resize(g.c - c_first, g.h, g.w);
    std::copy(g.v.begin(), g.v.begin() + static_cast<std::ptrdiff_t>(ga.v.size()),
              ga.v.begin());
    std::copy(g.v.begin() + static_cast<std::ptrdiff_t>(ga.v.size()), g.v.end(),
              gb.v.begin());
  }
};

// Net plus the metadata inference must agree on.
struct MaskModel {
  MaskNet net;
  int pallet[3] = {25, 25, 25};
  double input_scale = 1.0 / 25.0;  // 1 / h_p; applied to all four channels
  double threshold = 0.5;
};

// 4-channel input: normalized heightmap plus three constant planes holding
// the oriented box dimensions.
inline nn::Tensor build_input(const Grid<int>& heightmap, const int box[3],
                              double input_scale) {
  nn::Tensor x(4, heightmap.rows(), heightmap.cols());
  const std::size_t plane = heightmap.size();
  for (std::size_t i = 0; i < plane; ++i)
    x.v[i] = static_cast<double>(heightmap.raw()[i]) * input_scale;
  for (int ch = 1; ch <= 3; ++ch) {
    const double val = static_cast<double>(box[ch - 1]) * input_scale;
    std::fill(x.v.begin() + static_cast<std::ptrdiff_t>(plane * ch),
              x.v.begin() + static_cast<std::ptrdiff_t>(plane * (ch + 1)), val);
  }
  return x;
}

inline nn::Tensor build_input(const MaskSample& sample, double input_scale) {
  return build_input(sample.heightmap, sample.box, input_scale);
}

inline nn::Tensor build_input(const MaskModel& model, const Grid<int>& heightmap,
                              const int box[3]) {
  return build_input(heightmap, box, model.input_scale);
}

// Per-cell probabilities via logistic squashing of the logits.
inline Grid<double> forward(const MaskModel& model, const nn::Tensor& input) {
  if (input.c != 4) throw ConfigError("forward: input must have 4 channels");
  MaskNet::Work work;
  model.net.forward(input, work);
  Grid<double> probs(input.h, input.w);
  for (int y = 0; y < input.h; ++y)
    for (int x = 0; x < input.w; ++x)
      probs.at(y, x) = nn::sigmoid(work.logits.at(0, y, x));
  return probs;
}

// Mean binary cross-entropy over cells, numerically stable form. pos_weight
// scales the positive-label term (1.0 = plain BCE). The gradient w.r.t. the
// logits is written to g_logits when non-null.
inline double bce_with_logits(const nn::Tensor& logits, const MaskBitmap& labels,
                              double pos_weight, nn::Tensor* g_logits) {
  const std::size_t n = logits.size();
  if (n != labels.size())
    throw std::invalid_argument("bce_with_logits: shape mismatch");
  if (g_logits != nullptr) g_logits->resize(logits.c, logits.h, logits.w);
  const double inv = 1.0 / static_cast<double>(n);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits.v[i];
    const bool y = labels.raw()[i] != 0;
    loss += y ? pos_weight * nn::softplus(-z) : nn::softplus(z);
    if (g_logits != nullptr) {
      const double s = nn::sigmoid(z);
      g_logits->v[i] = (y ? pos_weight * (s - 1.0) : s) * inv;
    }
  }
  return loss * inv;
}

struct TrainConfig {
  double learning_rate = 0.1;
  int batch_size = 16;
  int epochs = 40;
  double validation_split = 0.15;
  int patience = 10;  // epochs without val-loss improvement before stopping
  double momentum = 0.9;
  double pos_weight = 1.0;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (!(validation_split > 0.0) || validation_split >= 1.0)
      throw std::invalid_argument("TrainConfig: validation_split must be in (0, 1)");
    if (!(pos_weight > 0.0)) throw std::invalid_argument("TrainConfig: pos_weight must be > 0");
  }
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_iou = 0.0;
};

struct MaskTrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  std::size_t train_count = 0;
  std::size_t val_count = 0;
};

namespace detail {

// Geometric validity for a sample: in-bounds anchors whose resting height
// keeps the box under the cap.
inline MaskBitmap geometric_bits(const Grid<int>& heightmap, const int box[3],
                                 int max_height) {
  HeightMap hm;
  hm.config.length_cells = heightmap.rows();
  hm.config.width_cells = heightmap.cols();
  hm.config.max_height_cells = max_height;
  hm.heights = heightmap;
  MaskBitmap bits(heightmap.rows(), heightmap.cols(), 0);
  const Grid<int> rest = rest_height_map(hm, box[0], box[1]);
  for (int x = 0; x < heightmap.rows(); ++x)
    for (int y = 0; y < heightmap.cols(); ++y) {
      const int r = rest.at(x, y);
      bits.at(x, y) = (r >= 0 && r + box[2] <= max_height) ? 1 : 0;
    }
  return bits;
}

struct IoUCounts {
  std::int64_t intersection = 0;
  std::int64_t union_ = 0;

  void add(const MaskBitmap& pred, const MaskBitmap& truth) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred.raw()[i] != 0;
      const bool t = truth.raw()[i] != 0;
      intersection += (p && t) ? 1 : 0;
      union_ += (p || t) ? 1 : 0;
    }
  }
  double value() const {
    return union_ == 0 ? 1.0
                       : static_cast<double>(intersection) / static_cast<double>(union_);
  }
};

}  // namespace detail

// Thresholded prediction intersected with geometric validity, as used at
// inference time.
inline MaskBitmap predict_mask(const MaskModel& model, const Grid<int>& heightmap,
                               const int box[3]) {
  const Grid<double> probs = forward(model, build_input(model, heightmap, box));
  MaskBitmap bits =
      detail::geometric_bits(heightmap, box, model.pallet[2]);
  for (std::size_t i = 0; i < bits.raw().size(); ++i)
    if (probs.raw()[i] < model.threshold) bits.raw()[i] = 0;
  return bits;
}

// Aggregate IoU of the model over a sample set (sum of intersections over
// sum of unions; 1.0 when every mask pair is empty).
inline double dataset_iou(const MaskModel& model,
                          const std::vector<MaskSample>& samples) {
  detail::IoUCounts counts;
  for (const MaskSample& s : samples)
    counts.add(predict_mask(model, s.heightmap, s.box), s.mask);
  return counts.value();
}

// Minimizes mean per-cell BCE with momentum SGD. Deterministic given the
// seed; batch gradients reduce over fixed buckets so --jobs does not change
// the result. Early-stops on validation loss and restores the best epoch.
inline MaskModel train_mask_model(const std::vector<MaskSample>& dataset,
                                  const TrainConfig& config, unsigned jobs = 1,
                                  MaskTrainReport* report_out = nullptr) {
  config.validate();
  if (dataset.empty())
    throw std::invalid_argument("train_mask_model: dataset is empty");
  for (const auto& s : dataset) {
    s.validate();
    if (s.pallet[0] != dataset[0].pallet[0] || s.pallet[1] != dataset[0].pallet[1] ||
        s.pallet[2] != dataset[0].pallet[2])
      throw std::invalid_argument("train_mask_model: mixed pallet sizes");
  }

  MaskModel model;
  model.pallet[0] = dataset[0].pallet[0];
  model.pallet[1] = dataset[0].pallet[1];
  model.pallet[2] = dataset[0].pallet[2];
  model.input_scale = 1.0 / static_cast<double>(model.pallet[2]);
  model.net.init(config.rng_seed);

  Rng rng(mix_seed(config.rng_seed, 0x17A1ULL));
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::size_t val_count = static_cast<std::size_t>(
      std::floor(config.validation_split * static_cast<double>(dataset.size())));
  if (val_count == 0 && dataset.size() > 1) val_count = 1;
  const std::vector<std::size_t> val_idx(order.begin(),
                                         order.begin() + static_cast<std::ptrdiff_t>(val_count));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(val_count),
                                     order.end());

  MaskTrainReport report;
  report.train_count = train_idx.size();
  report.val_count = val_idx.size();

  std::vector<double> velocity;
  std::vector<double> best_params = nn::get_params(model.net);
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int since_best = 0;

  struct Bucket {
    MaskNet net;  // parameter copy whose grads accumulate this bucket's share
    double loss = 0.0;
    bool used = false;
  };

  auto evaluate = [&](const std::vector<std::size_t>& idx, double* loss_out,
                      double* iou_out) {
    if (idx.empty()) {
      *loss_out = 0.0;
      if (iou_out != nullptr) *iou_out = 1.0;
      return;
    }
    std::vector<double> losses(idx.size(), 0.0);
    std::vector<detail::IoUCounts> ious(idx.size());
    parallel_for(idx.size(), jobs, [&](std::size_t i) {
      const MaskSample& s = dataset[idx[i]];
      MaskNet::Work work;
      const nn::Tensor input = build_input(s, model.input_scale);
      model.net.forward(input, work);
      losses[i] = bce_with_logits(work.logits, s.mask, config.pos_weight, nullptr);
      if (iou_out != nullptr) {
        MaskBitmap pred = detail::geometric_bits(s.heightmap, s.box, model.pallet[2]);
        for (std::size_t c = 0; c < pred.raw().size(); ++c)
          if (nn::sigmoid(work.logits.v[c]) < model.threshold) pred.raw()[c] = 0;
        ious[i].add(pred, s.mask);
      }
    });
    double total = 0.0;
    for (const double l : losses) total += l;
    *loss_out = total / static_cast<double>(idx.size());
    if (iou_out != nullptr) {
      detail::IoUCounts agg;
      for (const auto& c : ious) {
        agg.intersection += c.intersection;
        agg.union_ += c.union_;
      }
      *iou_out = agg.value();
    }
  };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(train_idx);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < train_idx.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(
          train_idx.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::size_t count = end - start;

      std::vector<Bucket> buckets;
      parallel_reduce<Bucket>(
          count, jobs,
          [&](std::size_t i, Bucket& bucket) {
            if (!bucket.used) {
              bucket.net.act = model.net.act;
              nn::set_params(bucket.net, nn::get_params(model.net));
              nn::zero_grads(bucket.net);
              bucket.used = true;
            }
            const MaskSample& s = dataset[train_idx[start + i]];
            MaskNet::Work work;
            const nn::Tensor input = build_input(s, model.input_scale);
            bucket.net.forward(input, work);
            nn::Tensor g_logits;
            bucket.loss +=
                bce_with_logits(work.logits, s.mask, config.pos_weight, &g_logits);
            const double scale = 1.0 / static_cast<double>(count);
            for (double& g : g_logits.v) g *= scale;
            bucket.net.backward(input, work, g_logits);
          },
          buckets);

      nn::zero_grads(model.net);
      double batch_loss = 0.0;
      for (Bucket& bucket : buckets) {
        if (!bucket.used) continue;
        nn::add_grads(model.net, bucket.net);
        batch_loss += bucket.loss;
      }
      nn::sgd_momentum_step(model.net, velocity, config.learning_rate,
                            config.momentum);
      epoch_loss += batch_loss / static_cast<double>(count);
      ++batches;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = batches > 0 ? epoch_loss / static_cast<double>(batches) : 0.0;
    evaluate(val_idx, &stats.val_loss, &stats.val_iou);
    report.epochs.push_back(stats);

    const double monitored = val_idx.empty() ? stats.train_loss : stats.val_loss;
    if (monitored < best_val - 1e-12) {
      best_val = monitored;
      best_epoch = epoch;
      best_params = nn::get_params(model.net);
      since_best = 0;
    } else if (++since_best > config.patience) {
      break;
    }
  }

  nn::set_params(model.net, best_params);
  report.best_epoch = best_epoch;
  report.best_val_loss = best_val;
  if (report_out != nullptr) *report_out = report;
  return model;
}

// Central-difference check of the BCE gradient on one sample. Relative error
// per coordinate is |a - f| / max(1e-3, |a|, |f|); returns the maximum over a
// deterministic random subset of parameters.
inline double gradient_check(MaskModel& model, const MaskSample& sample,
                             double epsilon, std::size_t max_coords = 200,
                             std::uint64_t seed = 42) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("gradient_check: epsilon must be > 0");
  const nn::Tensor input = build_input(sample, model.input_scale);

  nn::zero_grads(model.net);
  MaskNet::Work work;
  model.net.forward(input, work);
  nn::Tensor g_logits;
  bce_with_logits(work.logits, sample.mask, 1.0, &g_logits);
  model.net.backward(input, work, g_logits);
  const std::vector<double> analytic = nn::get_grads(model.net);

  std::vector<double> params = nn::get_params(model.net);
  Rng rng(mix_seed(seed, 0x6AADULL));
  const std::size_t n = params.size();
  const std::size_t coords = std::min(max_coords, n);
  double max_rel = 0.0;
  for (std::size_t i = 0; i < coords; ++i) {
    const std::size_t j = rng.index(n);
    const double saved = params[j];
    params[j] = saved + epsilon;
    nn::set_params(model.net, params);
    model.net.forward(input, work);
    const double lp = bce_with_logits(work.logits, sample.mask, 1.0, nullptr);
    params[j] = saved - epsilon;
    nn::set_params(model.net, params);
    model.net.forward(input, work);
    const double lm = bce_with_logits(work.logits, sample.mask, 1.0, nullptr);
    params[j] = saved;
    const double fd = (lp - lm) / (2.0 * epsilon);
    const double a = analytic[j];
    const double rel = std::abs(a - fd) / std::max({1e-3, std::abs(a), std::abs(fd)});
    max_rel = std::max(max_rel, rel);
  }
  nn::set_params(model.net, params);
  return max_rel;
}

}  // namespace pallet
