#pragma once

// Desk-scale training: batching of synthetic or ingested samples, SGD with
// momentum and global gradient-norm clipping, and held-out evaluation.

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "sciflow/data.hpp"
#include "sciflow/losses.hpp"
#include "sciflow/metrics.hpp"
#include "sciflow/model.hpp"
#include "sciflow/run_config.hpp"

namespace sciflow {

template <typename T>
struct Batch {
  Tensor<T> image1, image2;
  FlowField<T> flow_gt;
};

template <typename T>
Batch<T> make_batch(const std::vector<FlowSample>& samples,
                    const std::vector<int>& indices) {
  if (indices.empty()) throw ArgumentError("make_batch: empty index list");
  const FlowSample& first = samples[static_cast<std::size_t>(indices[0])];
  const int H = first.image1.height, W = first.image1.width;
  const int B = static_cast<int>(indices.size());
  const std::size_t plane = std::size_t(H) * W;

  std::vector<T> img1(std::size_t(B) * 3 * plane);
  std::vector<T> img2(std::size_t(B) * 3 * plane);
  std::vector<T> flow(std::size_t(B) * 2 * plane);
  bool any_mask = false;
  for (int idx : indices) {
    const auto& s = samples[static_cast<std::size_t>(idx)];
    if (!s.flow_gt) {
      throw ArgumentError("make_batch: sample '" + s.source +
                          "' has no ground truth");
    }
    if (s.image1.height != H || s.image1.width != W) {
      throw ShapeError("make_batch: sample '" + s.source +
                       "' dimensions differ from the batch");
    }
    any_mask = any_mask || !s.flow_gt->valid.empty();
  }
  std::vector<T> mask;
  if (any_mask) mask.assign(std::size_t(B) * plane, T(1));

  const T scale = T(1) / T(255);
  for (int b = 0; b < B; ++b) {
    const auto& s = samples[static_cast<std::size_t>(indices[static_cast<std::size_t>(b)])];
    for (int c = 0; c < 3; ++c) {
      const int src_c = s.image1.channels == 1 ? 0 : c;
      T* d1 = img1.data() + (std::size_t(b) * 3 + c) * plane;
      T* d2 = img2.data() + (std::size_t(b) * 3 + c) * plane;
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          d1[std::size_t(y) * W + x] = T(s.image1.at(y, x, src_c)) * scale;
          d2[std::size_t(y) * W + x] = T(s.image2.at(y, x, src_c)) * scale;
        }
      }
    }
    T* fu = flow.data() + (std::size_t(b) * 2) * plane;
    T* fv = fu + plane;
    for (std::size_t i = 0; i < plane; ++i) {
      fu[i] = static_cast<T>(s.flow_gt->u[i]);
      fv[i] = static_cast<T>(s.flow_gt->v[i]);
    }
    if (any_mask && !s.flow_gt->valid.empty()) {
      T* m = mask.data() + std::size_t(b) * plane;
      for (std::size_t i = 0; i < plane; ++i) m[i] = s.flow_gt->valid[i] ? T(1) : T(0);
    }
  }

  Batch<T> batch;
  batch.image1 = Tensor<T>::from_data({B, 3, H, W}, std::move(img1));
  batch.image2 = Tensor<T>::from_data({B, 3, H, W}, std::move(img2));
  Tensor<T> mask_t;
  if (any_mask) mask_t = Tensor<T>::from_data({B, 1, H, W}, std::move(mask));
  batch.flow_gt = FlowField<T>(Tensor<T>::from_data({B, 2, H, W}, std::move(flow)),
                               std::move(mask_t));
  return batch;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum, double clip)
      : lr_(lr), momentum_(momentum), clip_(clip) {}

  void step(std::vector<std::pair<std::string, Tensor<T>>>& params) {
    if (velocity_.empty()) {
      velocity_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        velocity_[i].assign(static_cast<std::size_t>(params[i].second.numel()), T(0));
      }
    }
    double norm2 = 0.0;
    for (auto& [name, p] : params) {
      if (!p.has_grad()) continue;
      for (T g : p.grad()) norm2 += double(g) * double(g);
    }
    const double norm = std::sqrt(norm2);
    const T scale = static_cast<T>(norm > clip_ ? clip_ / norm : 1.0);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i].second;
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto w = p.mutable_data();
      auto& v = velocity_[i];
      for (std::size_t j = 0; j < v.size(); ++j) {
        v[j] = static_cast<T>(momentum_) * v[j] + scale * g[j];
        w[j] -= static_cast<T>(lr_) * v[j];
      }
      p.zero_grad();
    }
  }

 private:
  double lr_, momentum_, clip_;
  std::vector<std::vector<T>> velocity_;
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

template <typename T>
EvalReport evaluate_model(const FlowModel<T>& model,
                          const std::vector<FlowSample>& samples,
                          int iterations = 0) {
  if (samples.empty()) throw ArgumentError("evaluate_model: no samples");
  const int iters = iterations > 0 ? iterations : model.config().iterations;
  double epe_sum = 0.0;
  std::int64_t outliers = 0;
  std::int64_t pixels = 0;
  std::vector<double> iter_epe_sum(static_cast<std::size_t>(iters), 0.0);

  for (const auto& s : samples) {
    if (!s.flow_gt) continue;
    Batch<T> one = make_batch<T>({s}, {0});
    IterationTrace<T> trace = model.estimate_flow(one.image1, one.image2, iters);
    const FlowField<T>& gt = one.flow_gt;
    const FlowField<T>& final_flow = trace.flows.back();

    const int H = gt.height(), W = gt.width();
    const std::int64_t plane = std::int64_t(H) * W;
    const T* gu = gt.flow.data().data();
    const T* gv = gu + plane;
    const T* pu = final_flow.flow.data().data();
    const T* pv = pu + plane;
    for (std::int64_t i = 0; i < plane; ++i) {
      if (gt.valid.defined() && gt.valid.data()[static_cast<std::size_t>(i)] == T(0))
        continue;
      const double du = double(pu[i]) - double(gu[i]);
      const double dv = double(pv[i]) - double(gv[i]);
      const double err = std::sqrt(du * du + dv * dv);
      const double mag =
          std::sqrt(double(gu[i]) * double(gu[i]) + double(gv[i]) * double(gv[i]));
      epe_sum += err;
      if (err > 3.0 && err > 0.05 * mag) ++outliers;
      ++pixels;
    }
    for (int it = 0; it < iters; ++it) {
      const T* iu = trace.flows[static_cast<std::size_t>(it)].flow.data().data();
      const T* iv = iu + plane;
      double acc = 0.0;
      std::int64_t cnt = 0;
      for (std::int64_t i = 0; i < plane; ++i) {
        if (gt.valid.defined() &&
            gt.valid.data()[static_cast<std::size_t>(i)] == T(0))
          continue;
        const double du = double(iu[i]) - double(gu[i]);
        const double dv = double(iv[i]) - double(gv[i]);
        acc += std::sqrt(du * du + dv * dv);
        ++cnt;
      }
      if (cnt > 0) iter_epe_sum[static_cast<std::size_t>(it)] += acc;
    }
  }
  if (pixels == 0) throw NoValidPixelsError("evaluate_model: no valid pixels");

  EvalReport report;
  report.epe_mean = epe_sum / double(pixels);
  report.fl_all = 100.0 * double(outliers) / double(pixels);
  report.pixel_count = pixels;
  report.per_iteration_epe.resize(static_cast<std::size_t>(iters));
  for (int it = 0; it < iters; ++it) {
    report.per_iteration_epe[static_cast<std::size_t>(it)] =
        iter_epe_sum[static_cast<std::size_t>(it)] / double(pixels);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

inline std::vector<FlowSample> build_synth_set(const SynthConfig& config,
                                               int first, int count) {
  std::vector<FlowSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(synth_pair(config, first + i));
  return out;
}

struct TrainOutcome {
  bool diverged = false;
  int steps_run = 0;
  EvalReport report;
};

template <typename T>
TrainOutcome train_model(FlowModel<T>& model, const RunConfig& cfg,
                         const std::vector<FlowSample>& train_set,
                         const std::vector<FlowSample>& heldout_set,
                         std::ostream& metrics_log) {
  const LossConfig loss_cfg = cfg.loss_config();
  SgdMomentum<T> opt(cfg.lr, cfg.momentum, cfg.clip);
  const int train_count = static_cast<int>(train_set.size());
  char line[128];

  TrainOutcome outcome;
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<int> indices(static_cast<std::size_t>(cfg.batch));
    for (int j = 0; j < cfg.batch; ++j) {
      indices[static_cast<std::size_t>(j)] =
          ((step - 1) * cfg.batch + j) % train_count;
    }
    Batch<T> batch = make_batch<T>(train_set, indices);
    IterationTrace<T> trace = model.estimate_flow(batch.image1, batch.image2);
    Tensor<T> loss = apply_confidence_schedule(trace.flows, batch.flow_gt, loss_cfg);
    const double loss_value = double(loss.item());
    if (!std::isfinite(loss_value)) {
      std::snprintf(line, sizeof(line), "step=%06d loss=non-finite\n", step);
      metrics_log << line;
      outcome.diverged = true;
      outcome.steps_run = step;
      return outcome;
    }
    backward(loss);
    opt.step(model.parameters());

    if (step == 1 || step == cfg.steps ||
        (cfg.log_every > 0 && step % cfg.log_every == 0)) {
      std::snprintf(line, sizeof(line), "step=%06d loss=%.9e\n", step, loss_value);
      metrics_log << line;
    }
    if (cfg.eval_every > 0 && step % cfg.eval_every == 0 && step != cfg.steps) {
      EvalReport r = evaluate_model(model, heldout_set);
      std::snprintf(line, sizeof(line), "step=%06d heldout_epe=%.9e\n", step,
                    r.epe_mean);
      metrics_log << line;
    }
  }
  outcome.steps_run = cfg.steps;
  outcome.report = evaluate_model(model, heldout_set);
  std::snprintf(line, sizeof(line), "final heldout_epe=%.9e heldout_fl_all=%.9e\n",
                outcome.report.epe_mean, outcome.report.fl_all);
  metrics_log << line;
  return outcome;
}

}  // namespace sciflow
