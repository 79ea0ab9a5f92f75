// Command-line driver: named training experiments, the kernel latency
// benchmark, the verification suite, and checkpoint evaluation.
//
//   rt train <name> [--config path] [--seed n] [--out dir]
//   rt bench [--tmin n] [--tmax n] [--trials n] [--out dir]
//   rt verify [--seed n]
//   rt eval <checkpoint> <task> [--lengths l1,l2,...]
//
// The output root defaults to --out, else $RT_OUT_DIR, else ./out.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "rt/bench.hpp"
#include "rt/checkpoint.hpp"
#include "rt/config_json.hpp"
#include "rt/experiments.hpp"
#include "rt/verify.hpp"

namespace {

std::string output_root(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("RT_OUT_DIR"); env && *env) return env;
  return "out";
}

int cmd_train(const std::string& name, const std::string& config_path,
              std::int64_t seed, const std::string& out_flag) {
  rt::ExperimentSpec spec = rt::make_experiment(name);
  if (!config_path.empty()) {
    std::ifstream is(config_path);
    if (!is) throw rt::IoError("cannot read config " + config_path);
    rt::json doc = rt::json::parse(is);
    rt::apply_config(spec, doc);
  }
  if (seed >= 0) {
    spec.train.seeds = {static_cast<std::uint64_t>(seed)};
    spec.overrides.push_back("seed: " + std::to_string(seed));
  }
  spec.out_dir = output_root(out_flag);
  std::filesystem::create_directories(spec.out_dir);

  auto progress = [](std::uint64_t s, std::size_t step, double loss) {
    if ((step + 1) % 100 == 0)
      std::cout << "seed " << s << " step " << step + 1 << " loss " << loss
                << "\n"
                << std::flush;
  };
  auto saver = [&spec, &name](const std::string& model_label) {
    return [&spec, &name, model_label](std::uint64_t s, rt::Model& model) {
      rt::json meta;
      meta["model"] = rt::model_to_json(model.config());
      meta["experiment"] = name;
      meta["role"] = model_label;
      meta["seed"] = s;
      meta["task"] = rt::task_kind_to_string(spec.task.kind);
      meta["modulus"] = spec.task.modulus;
      meta["version"] = rt::kVersionTag;
      std::vector<std::pair<std::string, const rt::Matrix*>> tensors;
      for (auto& [n, m] : model.named_tensors()) tensors.emplace_back(n, m);
      const std::string path = spec.out_dir + "/" + name + "_" + model_label +
                               "_seed" + std::to_string(s) + ".ckpt";
      rt::checkpoint::save(path, meta.dump(), tensors);
      std::cout << "wrote " << path << "\n";
    };
  };
  rt::ExperimentReport rep = rt::run_experiment(
      spec, progress, saver("transductor"), saver("baseline"));
  rt::write_experiment(rep);
  rt::emit_plot_data(rep);
  std::cout << rt::metrics_table(rep);
  return 0;
}

int cmd_bench(std::size_t tmin, std::size_t tmax, std::size_t trials,
              const std::string& out_flag) {
  rt::BenchReport rep =
      rt::bench_latency(rt::default_bench_grid(tmin, tmax), trials);
  const std::string table = rt::bench_table(rep);
  std::cout << table;
  const std::string dir = output_root(out_flag);
  std::filesystem::create_directories(dir);
  rt::detail::write_atomic(std::filesystem::path(dir) / "bench.tsv", table);
  return 0;
}

int cmd_verify(std::uint64_t seed) {
  std::vector<rt::VerificationResult> results = rt::run_all_checks(seed);
  bool all_ok = true;
  for (const rt::VerificationResult& r : results) {
    std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name
              << "  measured=" << r.measured << " bound=" << r.bound
              << " tol=" << r.tolerance << "  [" << r.instance << "]\n";
    all_ok = all_ok && r.pass;
  }
  return all_ok ? 0 : 1;
}

int cmd_eval(const std::string& ckpt_path, const std::string& task_name,
             const std::string& lengths_csv) {
  rt::checkpoint::Loaded loaded = rt::checkpoint::load(ckpt_path);
  rt::json meta = rt::json::parse(loaded.meta);
  rt::ModelConfig cfg = rt::model_from_json(meta.at("model"));
  rt::Model model(cfg);
  for (auto& [n, m] : model.named_tensors()) {
    auto it = loaded.tensors.find(n);
    if (it == loaded.tensors.end())
      throw rt::InputError("checkpoint missing tensor " + n);
    if (it->second.rows() != m->rows() || it->second.cols() != m->cols())
      throw rt::InputError("checkpoint tensor shape mismatch for " + n);
    *m = it->second;
  }
  rt::TaskSpec task;
  rt::json tj;
  tj["kind"] = task_name;
  rt::task_merge_json(task, tj);
  if (meta.contains("modulus")) task.modulus = meta.at("modulus");
  if (!lengths_csv.empty()) {
    task.eval_lengths.clear();
    std::stringstream ss(lengths_csv);
    std::string item;
    while (std::getline(ss, item, ','))
      task.eval_lengths.push_back(std::stoul(item));
  }
  std::vector<rt::EvalMetrics> metrics =
      rt::evaluate(model, task, task.eval_lengths, 256, 97);
  std::cout << "length\ttoken_accuracy\tfinal_accuracy\tsequence_accuracy\t"
               "mse\tclamped\n";
  for (const rt::EvalMetrics& m : metrics)
    std::cout << m.length << "\t" << m.token_accuracy << "\t"
              << m.final_accuracy << "\t" << m.sequence_accuracy << "\t"
              << m.mse << "\t" << (m.clamped_positions ? 1 : 0) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rational-feature transductor toolkit"};
  app.require_subcommand(1);

  std::string name, config_path, out_flag, ckpt_path, task_name, lengths_csv;
  std::int64_t seed_flag = -1;
  std::uint64_t verify_seed = 11;
  std::size_t tmin = 128, tmax = 32768, trials = 20;

  CLI::App* train = app.add_subcommand("train", "run a named experiment");
  train->add_option("name", name, "experiment name (mod5|lengen|addition|base2)")
      ->required();
  train->add_option("--config", config_path, "JSON config overrides");
  train->add_option("--seed", seed_flag, "train a single seed");
  train->add_option("--out", out_flag, "output directory");

  CLI::App* bench = app.add_subcommand("bench", "kernel latency benchmark");
  bench->add_option("--tmin", tmin, "smallest sequence length");
  bench->add_option("--tmax", tmax, "largest sequence length");
  bench->add_option("--trials", trials, "timed trials per kernel (>= 20)");
  bench->add_option("--out", out_flag, "output directory");

  CLI::App* verify = app.add_subcommand("verify", "run the verification suite");
  verify->add_option("--seed", verify_seed, "suite seed");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_option("task", task_name, "task (mod_count|parity|addition|base2)")
      ->required();
  eval->add_option("--lengths", lengths_csv, "comma-separated eval lengths");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(name, config_path, seed_flag, out_flag);
    if (bench->parsed()) return cmd_bench(tmin, tmax, trials, out_flag);
    if (verify->parsed()) return cmd_verify(verify_seed);
    if (eval->parsed()) return cmd_eval(ckpt_path, task_name, lengths_csv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
