#pragma once

#include <string>

#include <json.hpp>

#include "rt/experiments.hpp"

// JSON (de)serialization for configuration structs. Used by the CLI to apply
// config-file overrides on top of the named-experiment defaults and to embed
// the model description in checkpoints.

namespace rt {

using json = nlohmann::json;

inline std::string head_kind_to_string(HeadKind k) {
  return detail::head_kind_name(k);
}

inline HeadKind head_kind_from_string(const std::string& s) {
  if (s == "scaled_cayley") return HeadKind::kScaledCayley;
  if (s == "stochastic") return HeadKind::kStochastic;
  if (s == "dplr") return HeadKind::kDplr;
  if (s == "affine") return HeadKind::kAffine;
  if (s == "shared_basis") return HeadKind::kSharedBasis;
  if (s == "mixture") return HeadKind::kMixture;
  throw ConfigError("unknown head kind '" + s + "'");
}

inline json head_to_json(const HeadConfig& h) {
  json j;
  j["kind"] = head_kind_to_string(h.kind);
  j["dim"] = h.dim;
  j["alphabet_size"] = h.alphabet_size;
  j["conservation"] = h.conservation;
  j["rank"] = h.rank;
  j["gamma"] = h.gamma;
  j["num_basis"] = h.num_basis;
  if (h.kind == HeadKind::kMixture) {
    j["subs"] = json::array();
    for (const HeadConfig& s : h.subs) j["subs"].push_back(head_to_json(s));
  }
  return j;
}

inline HeadConfig head_from_json(const json& j) {
  HeadConfig h;
  if (j.contains("kind")) h.kind = head_kind_from_string(j.at("kind"));
  h.dim = j.value("dim", h.dim);
  h.alphabet_size = j.value("alphabet_size", h.alphabet_size);
  h.conservation = j.value("conservation", h.conservation);
  h.rank = j.value("rank", h.rank);
  h.gamma = j.value("gamma", h.gamma);
  h.num_basis = j.value("num_basis", h.num_basis);
  if (j.contains("subs"))
    for (const json& s : j.at("subs")) h.subs.push_back(head_from_json(s));
  return h;
}

inline json model_to_json(const ModelConfig& m) {
  json j;
  j["num_layers"] = m.num_layers;
  j["d_model"] = m.d_model;
  j["num_heads"] = m.num_heads;
  j["vocab_size"] = m.vocab_size;
  j["d_rat"] = m.d_rat;
  if (m.head) j["head"] = head_to_json(*m.head);
  j["positional"] = m.positional == PositionalMode::kLearnedAbsolute
                        ? "learned_absolute"
                        : "none";
  j["readout"] = m.readout == ReadoutKind::kClassify ? "classify" : "regress";
  j["num_classes"] = m.num_classes;
  j["max_positions"] = m.max_positions;
  j["alpha"] = m.alpha;
  j["head_init_eps"] = m.head_init_eps;
  j["head_init_nu"] = m.head_init_nu;
  return j;
}

/// Apply the fields present in `j` on top of `m` (partial override).
inline void model_merge_json(ModelConfig& m, const json& j) {
  m.num_layers = j.value("num_layers", m.num_layers);
  m.d_model = j.value("d_model", m.d_model);
  m.num_heads = j.value("num_heads", m.num_heads);
  m.vocab_size = j.value("vocab_size", m.vocab_size);
  m.d_rat = j.value("d_rat", m.d_rat);
  if (j.contains("head")) {
    if (j.at("head").is_null())
      m.head.reset();
    else
      m.head = head_from_json(j.at("head"));
  }
  if (j.contains("positional")) {
    const std::string p = j.at("positional");
    if (p == "learned_absolute")
      m.positional = PositionalMode::kLearnedAbsolute;
    else if (p == "none")
      m.positional = PositionalMode::kNone;
    else
      throw ConfigError("model.positional: unknown value '" + p + "'");
  }
  if (j.contains("readout")) {
    const std::string r = j.at("readout");
    if (r == "classify")
      m.readout = ReadoutKind::kClassify;
    else if (r == "regress")
      m.readout = ReadoutKind::kRegress;
    else
      throw ConfigError("model.readout: unknown value '" + r + "'");
  }
  m.num_classes = j.value("num_classes", m.num_classes);
  m.max_positions = j.value("max_positions", m.max_positions);
  if (j.contains("alpha")) m.alpha = j.at("alpha").get<std::vector<double>>();
  m.head_init_eps = j.value("head_init_eps", m.head_init_eps);
  m.head_init_nu = j.value("head_init_nu", m.head_init_nu);
}

inline ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  model_merge_json(m, j);
  return m;
}

inline void train_merge_json(TrainConfig& t, const json& j) {
  t.steps = j.value("steps", t.steps);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  if (j.contains("optimizer")) {
    const std::string o = j.at("optimizer");
    if (o == "adam")
      t.optimizer = OptimizerKind::kAdam;
    else if (o == "adamw")
      t.optimizer = OptimizerKind::kAdamW;
    else
      throw ConfigError("train.optimizer: unknown value '" + o + "'");
  }
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  if (j.contains("schedule")) {
    const std::string s = j.at("schedule");
    if (s == "constant")
      t.schedule = ScheduleKind::kConstant;
    else if (s == "cosine")
      t.schedule = ScheduleKind::kCosine;
    else
      throw ConfigError("train.schedule: unknown value '" + s + "'");
  }
  t.clip_norm = j.value("clip_norm", t.clip_norm);
  if (j.contains("seeds"))
    t.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("loss")) {
    const std::string l = j.at("loss");
    if (l == "cross_entropy")
      t.loss = LossKind::kCrossEntropy;
    else if (l == "mse")
      t.loss = LossKind::kMse;
    else
      throw ConfigError("train.loss: unknown value '" + l + "'");
  }
  t.eval_every = j.value("eval_every", t.eval_every);
  t.audit_every = j.value("audit_every", t.audit_every);
  t.eval_n = j.value("eval_n", t.eval_n);
  t.final_eval_n = j.value("final_eval_n", t.final_eval_n);
}

inline void task_merge_json(TaskSpec& t, const json& j) {
  if (j.contains("kind")) {
    const std::string k = j.at("kind");
    if (k == "mod_count")
      t.kind = TaskKind::kModCount;
    else if (k == "parity")
      t.kind = TaskKind::kParity;
    else if (k == "addition")
      t.kind = TaskKind::kAddition;
    else if (k == "base2")
      t.kind = TaskKind::kBase2;
    else
      throw ConfigError("task.kind: unknown value '" + k + "'");
  }
  t.modulus = j.value("modulus", t.modulus);
  t.train_length = j.value("train_length", t.train_length);
  t.min_len = j.value("min_len", t.min_len);
  t.max_len = j.value("max_len", t.max_len);
  if (j.contains("eval_lengths"))
    t.eval_lengths = j.at("eval_lengths").get<std::vector<std::size_t>>();
  t.fixed_dataset_size = j.value("fixed_dataset_size", t.fixed_dataset_size);
}

inline std::string task_kind_to_string(TaskKind k) {
  switch (k) {
    case TaskKind::kModCount: return "mod_count";
    case TaskKind::kParity: return "parity";
    case TaskKind::kAddition: return "addition";
    case TaskKind::kBase2: return "base2";
  }
  return "?";
}

/// Apply a config document on top of a named experiment's defaults. The raw
/// text of every section applied is recorded in spec.overrides.
inline void apply_config(ExperimentSpec& spec, const json& j) {
  if (j.contains("model")) {
    model_merge_json(spec.transductor, j.at("model"));
    spec.overrides.push_back("model: " + j.at("model").dump());
  }
  if (j.contains("baseline")) {
    if (j.at("baseline").is_null()) {
      spec.baseline.reset();
    } else {
      if (!spec.baseline) spec.baseline.emplace();
      model_merge_json(*spec.baseline, j.at("baseline"));
    }
    spec.overrides.push_back("baseline: " + j.at("baseline").dump());
  }
  if (j.contains("train")) {
    train_merge_json(spec.train, j.at("train"));
    spec.overrides.push_back("train: " + j.at("train").dump());
  }
  if (j.contains("task")) {
    task_merge_json(spec.task, j.at("task"));
    spec.overrides.push_back("task: " + j.at("task").dump());
  }
}

}  // namespace rt
