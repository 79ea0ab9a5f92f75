#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "rt/backbone.hpp"
#include "rt/tasks.hpp"

namespace rt {

enum class OptimizerKind { kAdam, kAdamW };
enum class ScheduleKind { kConstant, kCosine };
enum class LossKind { kCrossEntropy, kMse };
enum class Precision { kF32, kF64 };  // recorded in reports; math runs in f64

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 64;
  double learning_rate = 5e-3;
  OptimizerKind optimizer = OptimizerKind::kAdamW;
  double weight_decay = 0.01;
  ScheduleKind schedule = ScheduleKind::kConstant;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  LossKind loss = LossKind::kCrossEntropy;
  Precision precision = Precision::kF64;
  std::size_t eval_every = 500;
  std::size_t audit_every = 100;
  std::size_t eval_n = 64;        // periodic evaluations
  std::size_t final_eval_n = 256; // completion evaluation
  double divergence_threshold = 1e6;
  // Restrict updates to parameters whose name starts with one of these
  // prefixes (empty = train everything). Used for frozen-transition runs.
  std::vector<std::string> trainable_prefixes;
};

/// Sampling recipe for one experiment's task.
struct TaskSpec {
  TaskKind kind = TaskKind::kModCount;
  std::size_t modulus = 5;
  std::size_t train_length = 50;           // mod_count / parity / base2
  std::size_t min_len = 10, max_len = 40;  // addition curriculum
  std::vector<std::size_t> eval_lengths = {50, 100, 200, 300, 400, 500};
  // base2 trains over a fixed dataset (epochs), everything else online.
  std::size_t fixed_dataset_size = 0;
};

inline TaskBatch sample_task(const TaskSpec& spec, std::size_t n, std::uint64_t seed,
                             std::size_t length_override = 0) {
  switch (spec.kind) {
    case TaskKind::kModCount:
    case TaskKind::kParity:
      return gen_mod_count(spec.modulus,
                           length_override ? length_override : spec.train_length, n,
                           seed);
    case TaskKind::kAddition:
      if (length_override) return gen_addition(length_override, length_override, n, seed);
      return gen_addition(spec.min_len, spec.max_len, n, seed);
    case TaskKind::kBase2:
      return gen_base2(length_override ? length_override : spec.train_length, n, seed);
  }
  throw ConfigError("sample_task: unknown kind");
}

inline double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
  if (step > total_steps) throw InputError("cosine_lr: step > total");
  if (total_steps == 0) return base_lr;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * (1.0 + std::cos(M_PI * frac)) / 2.0;
}

inline double schedule_lr(const TrainConfig& cfg, std::size_t step) {
  return cfg.schedule == ScheduleKind::kCosine
             ? cosine_lr(step, cfg.steps, cfg.learning_rate)
             : cfg.learning_rate;
}

/// Scales all gradients by max_norm/norm when the global l2 norm exceeds
/// max_norm; returns the pre-clip norm.
inline double clip_gradients(GradStore& grads, double max_norm) {
  if (max_norm <= 0.0) throw InputError("clip_gradients: max_norm must be positive");
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads) g *= s;
  }
  return norm;
}

struct AdamState {
  std::map<std::string, Matrix> m, v;
  std::size_t t = 0;
};

namespace detail {

inline bool prefix_trainable(const std::string& name,
                             const std::vector<std::string>& prefixes) {
  if (prefixes.empty()) return true;
  for (const std::string& p : prefixes)
    if (name.rfind(p, 0) == 0) return true;
  return false;
}

}  // namespace detail

/// One Adam/AdamW update (beta1 0.9, beta2 0.999, eps 1e-8) over every tensor
/// the model exposes. Missing gradients count as zero; AdamW applies
/// decoupled weight decay to trainable tensors.
inline void optimizer_step(Model& model, const GradStore& grads, AdamState& state,
                           const TrainConfig& cfg, double lr) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  ++state.t;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.t));
  for (auto& [name, tensor] : model.named_tensors()) {
    if (!detail::prefix_trainable(name, cfg.trainable_prefixes)) continue;
    auto git = grads.find(name);
    const Matrix* g = git == grads.end() ? nullptr : &git->second;
    if (g && !is_finite(*g))
      throw NumericError("optimizer_step: NaN gradient for " + name);
    Matrix& m = state.m.try_emplace(name, tensor->rows(), tensor->cols()).first->second;
    Matrix& v = state.v.try_emplace(name, tensor->rows(), tensor->cols()).first->second;
    for (std::size_t i = 0; i < tensor->size(); ++i) {
      const double gi = g ? g->data()[i] : 0.0;
      m.data()[i] = kBeta1 * m.data()[i] + (1.0 - kBeta1) * gi;
      v.data()[i] = kBeta2 * v.data()[i] + (1.0 - kBeta2) * gi * gi;
      const double mhat = m.data()[i] / bc1;
      const double vhat = v.data()[i] / bc2;
      double upd = lr * mhat / (std::sqrt(vhat) + kEps);
      if (cfg.optimizer == OptimizerKind::kAdamW)
        upd += lr * cfg.weight_decay * tensor->data()[i];
      tensor->data()[i] -= upd;
    }
  }
}

/// Mean batch loss + summed-then-averaged gradients for one TaskBatch.
inline double batch_grads(const Model& model, const TaskBatch& batch, LossKind loss,
                          GradStore& out) {
  out.clear();
  double total = 0.0;
  for (std::size_t e = 0; e < batch.size(); ++e) {
    Tape tape;
    ForwardNodes fwd = model_forward(model, batch.tokens[e], tape);
    NodeId l = loss == LossKind::kMse
                   ? regress_loss(tape, fwd.output, batch.scalar_targets[e])
                   : classify_loss(tape, fwd.output, batch.labels[e]);
    total += tape.value(l)(0, 0);
    GradStore g = model_backward(model, batch.tokens[e], fwd, l, tape);
    for (auto& [name, grad] : g) grad_accumulate(out, name, grad);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto& [name, grad] : out) grad *= inv;
  return total * inv;
}

/// One optimization step on a prepared batch; returns the batch loss.
inline double train_step(Model& model, const TaskBatch& batch, AdamState& state,
                         const TrainConfig& cfg, double lr) {
  GradStore grads;
  const double loss = batch_grads(model, batch, cfg.loss, grads);
  if (cfg.clip_norm > 0.0) clip_gradients(grads, cfg.clip_norm);
  optimizer_step(model, grads, state, cfg, lr);
  return loss;
}

struct EvalMetrics {
  std::size_t length = 0;
  double token_accuracy = 0.0;
  double final_accuracy = 0.0;
  double sequence_accuracy = 0.0;  // exact match of every position
  double mse = 0.0;                // regression tasks
  bool clamped_positions = false;
};

/// Frozen-model evaluation over a length grid. Classification reports token,
/// final-token and exact-match accuracy; regression reports final-scalar MSE.
inline std::vector<EvalMetrics> evaluate(const Model& model, const TaskSpec& spec,
                                         const std::vector<std::size_t>& lengths,
                                         std::size_t n_per_length, std::uint64_t seed) {
  std::vector<EvalMetrics> out;
  for (std::size_t li = 0; li < lengths.size(); ++li) {
    const std::size_t len = lengths[li];
    TaskBatch batch = sample_task(spec, n_per_length, seed + 7919 * (li + 1), len);
    EvalMetrics m;
    m.length = len;
    std::size_t tok_hits = 0, tok_total = 0, fin_hits = 0, seq_hits = 0;
    double sq = 0.0;
    for (std::size_t e = 0; e < batch.size(); ++e) {
      bool clamped = false;
      Matrix outp = model_forward_nograd(model, batch.tokens[e], &clamped);
      m.clamped_positions = m.clamped_positions || clamped;
      if (spec.kind == TaskKind::kBase2) {
        const double d = outp(outp.rows() - 1, 0) - batch.scalar_targets[e];
        sq += d * d;
        continue;
      }
      bool all = true;
      for (std::size_t t = 0; t < outp.rows(); ++t) {
        std::size_t arg = 0;
        for (std::size_t c = 1; c < outp.cols(); ++c)
          if (outp(t, c) > outp(t, arg)) arg = c;
        const bool hit = static_cast<int>(arg) == batch.labels[e][t];
        tok_hits += hit;
        ++tok_total;
        all = all && hit;
        if (t + 1 == outp.rows()) fin_hits += hit;
      }
      seq_hits += all;
    }
    if (spec.kind == TaskKind::kBase2) {
      m.mse = sq / static_cast<double>(batch.size());
    } else {
      m.token_accuracy = static_cast<double>(tok_hits) / static_cast<double>(tok_total);
      m.final_accuracy =
          static_cast<double>(fin_hits) / static_cast<double>(batch.size());
      m.sequence_accuracy =
          static_cast<double>(seq_hits) / static_cast<double>(batch.size());
    }
    out.push_back(m);
  }
  return out;
}

struct SeedResult {
  std::uint64_t seed = 0;
  bool diverged = false;
  bool audits_ok = true;
  std::string audit_error;
  std::vector<double> loss_trace;
  std::vector<std::pair<std::size_t, std::vector<EvalMetrics>>> periodic_evals;
  std::vector<EvalMetrics> final_eval;
  double wall_seconds = 0.0;
};

struct TrainReport {
  std::vector<SeedResult> per_seed;

  /// Mean and standard deviation of a final-eval metric across non-diverged
  /// seeds at one length index.
  std::pair<double, double> aggregate(std::size_t length_index,
                                      double EvalMetrics::* field) const {
    std::vector<double> vals;
    for (const SeedResult& r : per_seed)
      if (!r.diverged && length_index < r.final_eval.size())
        vals.push_back(r.final_eval[length_index].*field);
    if (vals.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= static_cast<double>(vals.size());
    return {mean, std::sqrt(var)};
  }
};

using ProgressFn =
    std::function<void(std::uint64_t seed, std::size_t step, double loss)>;

/// Called with the trained model when a seed finishes (checkpointing hook).
using SeedDoneFn = std::function<void(std::uint64_t seed, Model& model)>;

/// Full multi-seed training run. Fresh i.i.d. batches per step, except base-2
/// which epochs over a fixed dataset. Evaluates every eval_every steps and at
/// completion; audits head structural invariants every audit_every steps;
/// aborts a seed whose loss crosses the divergence threshold.
inline TrainReport train(const ModelConfig& model_cfg, const TrainConfig& cfg,
                         const TaskSpec& spec, const ProgressFn& progress = {},
                         const SeedDoneFn& on_seed_done = {}) {
  TrainReport report;
  for (std::uint64_t seed : cfg.seeds) {
    const auto start = std::chrono::steady_clock::now();
    SeedResult res;
    res.seed = seed;
    Model model(model_cfg);
    model.init(seed);
    AdamState state;
    TaskBatch fixed;
    if (spec.fixed_dataset_size > 0)
      fixed = sample_task(spec, spec.fixed_dataset_size, seed * 1000003 + 17);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
      TaskBatch batch;
      if (spec.fixed_dataset_size > 0) {
        const std::size_t per_epoch = fixed.size() / cfg.batch_size;
        const std::size_t at = (step % per_epoch) * cfg.batch_size;
        batch.kind = fixed.kind;
        batch.modulus = fixed.modulus;
        for (std::size_t i = 0; i < cfg.batch_size; ++i) {
          batch.tokens.push_back(fixed.tokens[at + i]);
          if (!fixed.labels.empty()) batch.labels.push_back(fixed.labels[at + i]);
          if (!fixed.scalar_targets.empty())
            batch.scalar_targets.push_back(fixed.scalar_targets[at + i]);
          batch.lengths.push_back(fixed.lengths[at + i]);
        }
      } else {
        batch = sample_task(spec, cfg.batch_size, seed * 1000003 + step);
      }
      const double lr = schedule_lr(cfg, step);
      const double loss = train_step(model, batch, state, cfg, lr);
      res.loss_trace.push_back(loss);
      if (progress) progress(seed, step, loss);
      if (!(loss < cfg.divergence_threshold)) {
        res.diverged = true;
        break;
      }
      if (model.has_head() && cfg.audit_every > 0 && (step + 1) % cfg.audit_every == 0) {
        try {
          model.head().check_invariants();
        } catch (const NumericError& e) {
          res.audits_ok = false;
          res.audit_error = e.what();
        }
      }
      if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 &&
          step + 1 < cfg.steps)
        res.periodic_evals.emplace_back(
            step + 1,
            evaluate(model, spec, spec.eval_lengths, cfg.eval_n, seed + 31337));
    }
    if (!res.diverged)
      res.final_eval =
          evaluate(model, spec, spec.eval_lengths, cfg.final_eval_n, seed + 65537);
    res.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (on_seed_done) on_seed_done(seed, model);
    report.per_seed.push_back(std::move(res));
  }
  return report;
}

}  // namespace rt
