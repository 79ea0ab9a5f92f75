#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rt/backbone.hpp"
#include "rt/trainer.hpp"

// Named experiment registry plus flat-table report emission. Each named
// experiment pins the full model/training configuration for one synthetic
// task, training the recurrent-head transductor against a matched plain
// transformer baseline on the same data.

namespace rt {

struct ExperimentSpec {
  std::string name;
  ModelConfig transductor;
  std::optional<ModelConfig> baseline;
  TrainConfig train;
  TaskSpec task;
  std::string out_dir = "out";
  std::vector<std::string> overrides;  // echoed verbatim in the output
};

namespace detail {

inline ModelConfig mod_count_backbone() {
  ModelConfig m;
  m.num_layers = 2;
  m.d_model = 32;
  m.num_heads = 4;
  m.vocab_size = 2;
  m.readout = ReadoutKind::kClassify;
  m.num_classes = 5;
  m.positional = PositionalMode::kLearnedAbsolute;
  m.max_positions = 512;
  return m;
}

}  // namespace detail

/// Experiment names understood by make_experiment / the CLI.
inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"mod5", "lengen", "addition",
                                                 "base2"};
  return names;
}

/// Build the pinned configuration for a named experiment.
///
///   mod5      running count mod 5, trained at L=50, evaluated to L=500
///   lengen    same task, trained at L=40, evaluated to L=1000; the
///             transductor runs without positional encodings
///   addition  long-integer addition with digit-pair tokens, curriculum
///             L ~ U[10,40], column-stochastic head of dimension 4
///   base2     binary fraction evaluation at L=64, affine head, regression
///             over a fixed 1,920-example dataset (60 epochs of 60 steps)
inline ExperimentSpec make_experiment(const std::string& name) {
  ExperimentSpec s;
  s.name = name;
  if (name == "mod5" || name == "lengen") {
    s.transductor = detail::mod_count_backbone();
    s.transductor.d_rat = 8;
    HeadConfig h{HeadKind::kScaledCayley, 8, 2};
    h.conservation = true;
    s.transductor.head = h;
    s.baseline = detail::mod_count_backbone();
    s.train.steps = 3000;
    s.train.batch_size = 64;
    s.train.learning_rate = 5e-3;
    s.train.optimizer = OptimizerKind::kAdamW;
    s.train.clip_norm = 1.0;
    s.train.loss = LossKind::kCrossEntropy;
    s.task.kind = TaskKind::kModCount;
    s.task.modulus = 5;
    if (name == "mod5") {
      // The transductor carries the count in its rational state and needs no
      // positional table; the baseline keeps one and is evaluated past the
      // lengths it trained on.
      s.transductor.positional = PositionalMode::kNone;
      s.task.train_length = 50;
      s.task.eval_lengths = {50, 100, 200, 300, 400, 500};
    } else {
      // Length generalization: no positional table in the transductor; the
      // baseline keeps a learned table sized to the training length and
      // clamps beyond it.
      s.transductor.positional = PositionalMode::kNone;
      s.baseline->max_positions = 40;
      s.train.schedule = ScheduleKind::kCosine;
      s.task.train_length = 40;
      s.task.eval_lengths = {40, 100, 200, 400, 700, 1000};
    }
  } else if (name == "addition") {
    ModelConfig m;
    m.num_layers = 2;
    m.d_model = 32;
    m.num_heads = 4;
    m.vocab_size = 100;  // digit pairs 10*a + b
    m.readout = ReadoutKind::kClassify;
    m.num_classes = 10;
    s.transductor = m;
    s.transductor.positional = PositionalMode::kNone;
    s.transductor.d_rat = 4;
    HeadConfig h{HeadKind::kStochastic, 4, 100};
    s.transductor.head = h;
    s.baseline = m;
    s.baseline->positional = PositionalMode::kLearnedAbsolute;
    s.baseline->max_positions = 5000;
    s.train.steps = 4000;
    s.train.batch_size = 64;
    s.train.learning_rate = 5e-3;
    s.train.optimizer = OptimizerKind::kAdamW;
    s.train.loss = LossKind::kCrossEntropy;
    s.task.kind = TaskKind::kAddition;
    s.task.min_len = 10;
    s.task.max_len = 40;
    s.task.eval_lengths = {20, 40, 100, 200, 500, 1000};
  } else if (name == "base2") {
    ModelConfig rt;
    rt.num_layers = 1;
    rt.d_model = 12;
    rt.num_heads = 4;
    rt.vocab_size = 2;
    rt.readout = ReadoutKind::kRegress;
    rt.positional = PositionalMode::kLearnedAbsolute;
    rt.max_positions = 64;
    rt.d_rat = 12;
    HeadConfig h{HeadKind::kAffine, 12, 2};
    rt.head = h;
    s.transductor = rt;
    ModelConfig tf;
    tf.num_layers = 3;
    tf.d_model = 32;
    tf.num_heads = 4;
    tf.vocab_size = 2;
    tf.readout = ReadoutKind::kRegress;
    tf.positional = PositionalMode::kLearnedAbsolute;
    tf.max_positions = 64;
    s.baseline = tf;
    s.train.steps = 3600;  // 60 epochs of 60 steps
    s.train.batch_size = 32;
    s.train.learning_rate = 1e-2;
    s.train.optimizer = OptimizerKind::kAdam;
    s.train.schedule = ScheduleKind::kCosine;
    s.train.loss = LossKind::kMse;
    s.task.kind = TaskKind::kBase2;
    s.task.train_length = 64;
    s.task.fixed_dataset_size = 1920;
    s.task.eval_lengths = {64};
  } else {
    std::ostringstream msg;
    msg << "unknown experiment '" << name << "'; valid names:";
    for (const std::string& n : experiment_names()) msg << " " << n;
    throw ConfigError(msg.str());
  }
  return s;
}

struct ExperimentReport {
  ExperimentSpec spec;
  TrainReport transductor;
  std::optional<TrainReport> baseline;
};

/// Train the transductor and (when defined) the matched baseline. The
/// optional hooks receive each trained model, e.g. for checkpointing.
inline ExperimentReport run_experiment(const ExperimentSpec& spec,
                                       const ProgressFn& progress = {},
                                       const SeedDoneFn& on_transductor = {},
                                       const SeedDoneFn& on_baseline = {}) {
  ExperimentReport rep;
  rep.spec = spec;
  rep.transductor =
      train(spec.transductor, spec.train, spec.task, progress, on_transductor);
  if (spec.baseline)
    rep.baseline =
        train(*spec.baseline, spec.train, spec.task, progress, on_baseline);
  return rep;
}

namespace detail {

inline void append_metric_rows(std::ostream& os, const std::string& model,
                               const TrainReport& rep) {
  auto row = [&](std::uint64_t seed, std::size_t length, const char* metric,
                 double value) {
    os << model << "\t" << seed << "\t" << length << "\t" << metric << "\t"
       << value << "\n";
  };
  for (const SeedResult& sr : rep.per_seed) {
    for (const EvalMetrics& m : sr.final_eval) {
      row(sr.seed, m.length, "token_accuracy", m.token_accuracy);
      row(sr.seed, m.length, "final_accuracy", m.final_accuracy);
      row(sr.seed, m.length, "sequence_accuracy", m.sequence_accuracy);
      row(sr.seed, m.length, "mse", m.mse);
      row(sr.seed, m.length, "clamped", m.clamped_positions ? 1.0 : 0.0);
    }
  }
}

inline void write_atomic(const std::filesystem::path& path,
                         const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os << content;
    if (!os.flush()) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline const char* head_kind_name(HeadKind k) {
  switch (k) {
    case HeadKind::kScaledCayley: return "scaled_cayley";
    case HeadKind::kStochastic: return "stochastic";
    case HeadKind::kDplr: return "dplr";
    case HeadKind::kAffine: return "affine";
    case HeadKind::kSharedBasis: return "shared_basis";
    case HeadKind::kMixture: return "mixture";
  }
  return "?";
}

inline void describe_model(std::ostream& os, const std::string& label,
                           const ModelConfig& m, int indent) {
  const std::string pad(indent, ' ');
  os << pad << label << ":\n";
  os << pad << "  num_layers: " << m.num_layers << "\n";
  os << pad << "  d_model: " << m.d_model << "\n";
  os << pad << "  num_heads: " << m.num_heads << "\n";
  os << pad << "  vocab_size: " << m.vocab_size << "\n";
  os << pad << "  d_rat: " << m.d_rat << "\n";
  if (m.head) {
    os << pad << "  head_kind: " << head_kind_name(m.head->kind) << "\n";
    os << pad << "  head_gamma: " << m.head->gamma << "\n";
    os << pad << "  head_conservation: " << (m.head->conservation ? 1 : 0)
       << "\n";
  }
  os << pad << "  positional: "
     << (m.positional == PositionalMode::kLearnedAbsolute ? "learned_absolute"
                                                          : "none")
     << "\n";
  os << pad << "  max_positions: " << m.max_positions << "\n";
  os << pad << "  readout: "
     << (m.readout == ReadoutKind::kClassify ? "classify" : "regress") << "\n";
  os << pad << "  num_classes: " << m.num_classes << "\n";
}

}  // namespace detail

/// One row per model x seed x length x metric, tab-delimited with a header.
inline std::string metrics_table(const ExperimentReport& rep) {
  std::ostringstream os;
  os << "model\tseed\tlength\tmetric\tvalue\n";
  detail::append_metric_rows(os, "transductor", rep.transductor);
  if (rep.baseline) detail::append_metric_rows(os, "baseline", *rep.baseline);
  return os.str();
}

/// The fully resolved configuration, echoed as nested key/value text.
inline std::string resolved_config(const ExperimentSpec& spec) {
  std::ostringstream os;
  os << "experiment: " << spec.name << "\n";
  os << "version: " << kVersionTag << "\n";
  detail::describe_model(os, "transductor", spec.transductor, 0);
  if (spec.baseline) detail::describe_model(os, "baseline", *spec.baseline, 0);
  os << "train:\n";
  os << "  steps: " << spec.train.steps << "\n";
  os << "  batch_size: " << spec.train.batch_size << "\n";
  os << "  learning_rate: " << spec.train.learning_rate << "\n";
  os << "  optimizer: "
     << (spec.train.optimizer == OptimizerKind::kAdamW ? "adamw" : "adam")
     << "\n";
  if (spec.train.optimizer == OptimizerKind::kAdamW)
    os << "  weight_decay: " << spec.train.weight_decay << "\n";
  os << "  schedule: "
     << (spec.train.schedule == ScheduleKind::kCosine ? "cosine" : "constant")
     << "\n";
  os << "  clip_norm: " << spec.train.clip_norm << "\n";
  os << "  loss: "
     << (spec.train.loss == LossKind::kCrossEntropy ? "cross_entropy" : "mse")
     << "\n";
  os << "  seeds:";
  for (std::uint64_t s : spec.train.seeds) os << " " << s;
  os << "\n";
  os << "task:\n";
  switch (spec.task.kind) {
    case TaskKind::kModCount:
      os << "  kind: mod_count\n  modulus: " << spec.task.modulus
         << "\n  train_length: " << spec.task.train_length << "\n";
      break;
    case TaskKind::kParity:
      os << "  kind: parity\n  train_length: " << spec.task.train_length
         << "\n";
      break;
    case TaskKind::kAddition:
      os << "  kind: addition\n  min_len: " << spec.task.min_len
         << "\n  max_len: " << spec.task.max_len << "\n";
      break;
    case TaskKind::kBase2:
      os << "  kind: base2\n  train_length: " << spec.task.train_length
         << "\n  fixed_dataset_size: " << spec.task.fixed_dataset_size << "\n";
      break;
  }
  os << "  eval_lengths:";
  for (std::size_t l : spec.task.eval_lengths) os << " " << l;
  os << "\n";
  for (const std::string& ov : spec.overrides) os << "override: " << ov << "\n";
  return os.str();
}

/// Per-seed training narrative: loss trace summary, audits, wall time.
inline std::string report_text(const ExperimentReport& rep) {
  std::ostringstream os;
  os << resolved_config(rep.spec);
  auto describe = [&](const std::string& label, const TrainReport& tr) {
    for (const SeedResult& sr : tr.per_seed) {
      os << label << " seed " << sr.seed << ": final_loss "
         << (sr.loss_trace.empty() ? 0.0 : sr.loss_trace.back())
         << " diverged " << (sr.diverged ? 1 : 0) << " audits_ok "
         << (sr.audits_ok ? 1 : 0) << " wall_seconds " << sr.wall_seconds
         << "\n";
      if (!sr.audits_ok) os << "  audit_error: " << sr.audit_error << "\n";
    }
  };
  describe("transductor", rep.transductor);
  if (rep.baseline) describe("baseline", *rep.baseline);
  return os.str();
}

/// Write metrics.tsv, report.txt, and config.txt under out_dir (atomic
/// write-temp-then-rename for each file).
inline void write_experiment(const ExperimentReport& rep) {
  const std::filesystem::path dir(rep.spec.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string());
  detail::write_atomic(dir / (rep.spec.name + "_metrics.tsv"),
                       metrics_table(rep));
  detail::write_atomic(dir / (rep.spec.name + "_report.txt"), report_text(rep));
  detail::write_atomic(dir / (rep.spec.name + "_config.txt"),
                       resolved_config(rep.spec));
}

/// Figure-style flat tables: accuracy-vs-length for classification tasks,
/// an MSE bar table for regression. Pure function of the report, so
/// re-emission is bit-identical.
inline std::string plot_table(const ExperimentReport& rep) {
  std::ostringstream os;
  const bool regress =
      rep.spec.transductor.readout == ReadoutKind::kRegress;
  const char* metric = regress ? "mse" : "token_accuracy";
  os << "model\tseed\tlength\tmetric\tvalue\n";
  auto rows = [&](const std::string& model, const TrainReport& tr) {
    for (const SeedResult& sr : tr.per_seed)
      for (const EvalMetrics& m : sr.final_eval)
        os << model << "\t" << sr.seed << "\t" << m.length << "\t" << metric
           << "\t" << (regress ? m.mse : m.token_accuracy) << "\n";
  };
  rows("transductor", rep.transductor);
  if (rep.baseline) rows("baseline", *rep.baseline);
  return os.str();
}

inline void emit_plot_data(const ExperimentReport& rep) {
  const std::filesystem::path dir(rep.spec.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string());
  detail::write_atomic(dir / (rep.spec.name + "_plot.tsv"), plot_table(rep));
}

}  // namespace rt
