#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "wealthmap/common.hpp"
#include "wealthmap/csv.hpp"
#include "wealthmap/model.hpp"

namespace wealthmap::model {

// Two-stage transfer schedule: stage 1 adapts only the affine head, stage 2
// fine-tunes every weight with an L2 penalty. Optimized with Adagrad
// (per-parameter accumulated squared gradients) against MSE on the
// ln(1 + nightlight) targets.
struct TrainSchedule {
  int stage1_epochs = 20;
  int stage2_epochs = 20;
  double stage1_lr = 0.01;
  double stage2_lr = 0.001;
  double l2 = 0.1;
  int batch_size = 100;
  double val_fraction = 0.1;
  // Tiles with label < dark_threshold (nightlight < 1) are subsampled each
  // epoch so they make up about dark_fraction of the epoch.
  bool dark_downsample = true;
  double dark_fraction = 0.58;
  double adagrad_eps = 1e-8;

  void validate() const {
    if (stage1_epochs < 0 || stage2_epochs < 0) throw std::invalid_argument("schedule: negative epochs");
    if (stage1_lr < 0 || stage2_lr < 0) throw std::invalid_argument("schedule: negative lr");
    if (batch_size < 1) throw std::invalid_argument("schedule: batch size < 1");
    if (val_fraction < 0 || val_fraction >= 1) throw std::invalid_argument("schedule: bad val fraction");
  }
};

struct LabeledTile {
  Image tile;
  double label = 0.0;
};

struct EpochStats {
  int stage = 1;
  int epoch = 1;  // 1-based within stage
  double train_mse = 0.0;
  double val_mse = 0.0;
  double dark_share = 0.0;  // fraction of epoch samples below the dark threshold
};

struct TrainHistory {
  std::vector<EpochStats> epochs;

  void write_csv(const std::string& path) const {
    io::CsvTable t;
    t.header = {"stage", "epoch", "train_mse", "val_mse", "dark_share"};
    for (const auto& e : epochs) {
      t.rows.push_back({std::to_string(e.stage), std::to_string(e.epoch), io::fmt(e.train_mse),
                        io::fmt(e.val_mse), io::fmt(e.dark_share)});
    }
    io::write_csv(path, t);
  }
};

namespace detail {

inline constexpr double kDarkLabelThreshold = 0.6931471805599453;  // ln(2) <=> nightlight 1

template <class T>
struct Adagrad {
  std::vector<std::vector<T>> gw, gb;  // accumulated squared gradients

  void match(const ConvNet<T>& net) {
    gw.assign(net.layers.size(), {});
    gb.assign(net.layers.size(), {});
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      gw[i].assign(net.layers[i].w.size(), T(0));
      gb[i].assign(net.layers[i].b.size(), T(0));
    }
  }

  void step(ConvNet<T>& net, const ParamGrads<T>& g, double lr, double eps, bool head_only,
            int dense_idx) {
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      if (head_only && static_cast<int>(i) != dense_idx) continue;
      auto& l = net.layers[i];
      for (std::size_t j = 0; j < l.w.size(); ++j) {
        const T gj = g.w[i][j];
        gw[i][j] += gj * gj;
        l.w[j] -= static_cast<T>(lr) * gj / (std::sqrt(gw[i][j]) + static_cast<T>(eps));
      }
      for (std::size_t j = 0; j < l.b.size(); ++j) {
        const T gj = g.b[i][j];
        gb[i][j] += gj * gj;
        l.b[j] -= static_cast<T>(lr) * gj / (std::sqrt(gb[i][j]) + static_cast<T>(eps));
      }
    }
  }
};

// Epoch sample: every bright tile plus a fresh random subset of dark tiles
// sized so darks make up ~dark_fraction of the epoch.
inline std::vector<std::size_t> sample_epoch(const std::vector<std::size_t>& bright,
                                             const std::vector<std::size_t>& dark,
                                             bool downsample, double dark_fraction, Rng& rng) {
  std::vector<std::size_t> idx = bright;
  if (!downsample || bright.empty()) {
    idx.insert(idx.end(), dark.begin(), dark.end());
  } else {
    const double want = dark_fraction / (1.0 - dark_fraction) * static_cast<double>(bright.size());
    const std::size_t n_dark = std::min(dark.size(), static_cast<std::size_t>(std::llround(want)));
    std::vector<std::size_t> pool = dark;
    rng.shuffle(pool);
    idx.insert(idx.end(), pool.begin(), pool.begin() + n_dark);
  }
  rng.shuffle(idx);
  return idx;
}

}  // namespace detail

// Trains the network in place; returns per-epoch loss history. Stage 1
// runs on cached features (only the head moves), stage 2 backpropagates
// through the whole network. Deterministic for a fixed seed: per-sample
// gradients are reduced in sample order regardless of thread count.
template <class T>
TrainHistory train_two_stage(ConvNet<T>& net, const std::vector<LabeledTile>& corpus,
                             const TrainSchedule& sched, std::uint64_t seed, int jobs = 0) {
  sched.validate();
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
  const int dense_idx = net.dense_index();

  // Split train/validation by site (one corpus entry per site).
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(seed, 1));
  split_rng.shuffle(order);
  const std::size_t n_val = static_cast<std::size_t>(sched.val_fraction * corpus.size());
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + n_val);
  std::vector<std::size_t> train_idx(order.begin() + n_val, order.end());
  if (train_idx.empty()) throw std::invalid_argument("train: no training rows after split");

  std::vector<std::size_t> bright, dark;
  for (std::size_t i : train_idx) {
    (corpus[i].label < detail::kDarkLabelThreshold ? dark : bright).push_back(i);
  }

  TrainHistory hist;
  detail::Adagrad<T> opt;
  opt.match(net);
  Rng epoch_rng(derive_seed(seed, 2));

  auto check_finite = [](double v, int stage, int epoch) {
    if (!std::isfinite(v)) {
      throw NumericError("train: non-finite loss at stage " + std::to_string(stage) +
                         " epoch " + std::to_string(epoch));
    }
  };

  // ---- Stage 1: head only, on cached features ----
  if (sched.stage1_epochs > 0) {
    std::vector<std::vector<T>> feats(corpus.size());
    parallel_for(static_cast<std::int64_t>(corpus.size()), jobs, [&](std::int64_t i) {
      feats[i] = forward(net, corpus[i].tile).features;
    });

    auto& head = net.layers[dense_idx];
    const int d = head.in_ch;
    for (int epoch = 1; epoch <= sched.stage1_epochs; ++epoch) {
      auto idx = detail::sample_epoch(bright, dark, sched.dark_downsample, sched.dark_fraction,
                                      epoch_rng);
      double loss_sum = 0.0;
      std::size_t n_dark_used = 0;
      for (std::size_t start = 0; start < idx.size(); start += sched.batch_size) {
        const std::size_t end = std::min(idx.size(), start + sched.batch_size);
        ParamGrads<T> g;
        g.match(net);
        for (std::size_t k = start; k < end; ++k) {
          const auto& f = feats[idx[k]];
          const double y = corpus[idx[k]].label;
          double out = head.b[0];
          for (int j = 0; j < d; ++j) out += head.w[j] * f[j];
          const double err = out - y;
          loss_sum += err * err;
          const T go = static_cast<T>(2.0 * err / static_cast<double>(end - start));
          for (int j = 0; j < d; ++j) g.w[dense_idx][j] += go * f[j];
          g.b[dense_idx][0] += go;
        }
        opt.step(net, g, sched.stage1_lr, sched.adagrad_eps, true, dense_idx);
      }
      for (std::size_t i : idx) n_dark_used += corpus[i].label < detail::kDarkLabelThreshold;

      double val_sum = 0.0;
      for (std::size_t i : val_idx) {
        double out = head.b[0];
        for (int j = 0; j < d; ++j) out += head.w[j] * feats[i][j];
        val_sum += (out - corpus[i].label) * (out - corpus[i].label);
      }
      EpochStats st;
      st.stage = 1;
      st.epoch = epoch;
      st.train_mse = loss_sum / static_cast<double>(idx.size());
      st.val_mse = val_idx.empty() ? 0.0 : val_sum / static_cast<double>(val_idx.size());
      st.dark_share = idx.empty() ? 0.0 : static_cast<double>(n_dark_used) / idx.size();
      check_finite(st.train_mse, 1, epoch);
      hist.epochs.push_back(st);
    }
  }

  // ---- Stage 2: fine-tune everything with L2 ----
  for (int epoch = 1; epoch <= sched.stage2_epochs; ++epoch) {
    auto idx = detail::sample_epoch(bright, dark, sched.dark_downsample, sched.dark_fraction,
                                    epoch_rng);
    double loss_sum = 0.0;
    std::size_t n_dark_used = 0;
    for (std::size_t i : idx) n_dark_used += corpus[i].label < detail::kDarkLabelThreshold;

    for (std::size_t start = 0; start < idx.size(); start += sched.batch_size) {
      const std::size_t end = std::min(idx.size(), start + sched.batch_size);
      const std::size_t bs = end - start;
      std::vector<ParamGrads<T>> slots(bs);
      std::vector<double> errs(bs);
      parallel_for(static_cast<std::int64_t>(bs), jobs, [&](std::int64_t k) {
        const auto& sample = corpus[idx[start + k]];
        Tape<T> tape;
        const auto fw = forward(net, sample.tile, &tape);
        const double err = static_cast<double>(fw.output) - sample.label;
        errs[k] = err;
        slots[k].match(net);
        TensorHWC<T> seed(1, 1, 1);
        seed.v[0] = static_cast<T>(2.0 * err / static_cast<double>(bs));
        backprop(net, sample.tile, tape, static_cast<int>(net.layers.size()) - 1, std::move(seed),
                 -1, ReluMode::Standard, &slots[k]);
      });
      ParamGrads<T> g = std::move(slots[0]);
      for (std::size_t k = 1; k < bs; ++k) g.add(slots[k]);
      for (double e : errs) loss_sum += e * e;
      if (sched.l2 > 0.0) {
        for (std::size_t li = 0; li < net.layers.size(); ++li) {
          for (std::size_t j = 0; j < net.layers[li].w.size(); ++j) {
            g.w[li][j] += static_cast<T>(sched.l2) * net.layers[li].w[j];
          }
        }
      }
      opt.step(net, g, sched.stage2_lr, sched.adagrad_eps, false, dense_idx);
    }

    std::vector<double> val_errs(val_idx.size());
    parallel_for(static_cast<std::int64_t>(val_idx.size()), jobs, [&](std::int64_t k) {
      const auto& sample = corpus[val_idx[k]];
      const double out = static_cast<double>(forward(net, sample.tile).output);
      val_errs[k] = (out - sample.label) * (out - sample.label);
    });

    EpochStats st;
    st.stage = 2;
    st.epoch = epoch;
    st.train_mse = loss_sum / static_cast<double>(idx.size());
    st.val_mse = val_idx.empty() ? 0.0
                                 : std::accumulate(val_errs.begin(), val_errs.end(), 0.0) /
                                       static_cast<double>(val_idx.size());
    st.dark_share = idx.empty() ? 0.0 : static_cast<double>(n_dark_used) / idx.size();
    check_finite(st.train_mse, 2, epoch);
    hist.epochs.push_back(st);
  }

  return hist;
}

}  // namespace wealthmap::model
