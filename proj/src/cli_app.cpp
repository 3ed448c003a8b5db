#include "riser/cli_app.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "riser/checkpoint.hpp"
#include "riser/config.hpp"
#include "riser/dataset_io.hpp"
#include "riser/errors.hpp"
#include "riser/trainer.hpp"

namespace riser {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kCodeVersion = "riser 0.1.0";

/// One experiment process per workdir.
class WorkdirLock {
 public:
  explicit WorkdirLock(const fs::path& workdir) : path_(workdir / ".lock") {
    fs::create_directories(workdir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw DataError("workdir is locked by another process (remove " + path_.string() +
                      " if stale)");
    }
  }
  ~WorkdirLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      ::unlink(path_.c_str());
    }
  }
  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;

 private:
  fs::path path_;
  int fd_{-1};
};

struct CommonArgs {
  std::string config_path;
  std::string workdir;
  std::optional<int64_t> seed;
  std::vector<std::string> overrides;  // key=value
};

ExperimentConfig resolve_config(const CommonArgs& args) {
  ExperimentConfig cfg;
  if (!args.config_path.empty()) cfg = parse_config_file(args.config_path);
  for (const auto& kv : args.overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (args.seed.has_value()) cfg.seed = static_cast<uint64_t>(*args.seed);
  cfg.validate();
  return cfg;
}

fs::path resolve_workdir(const CommonArgs& args) {
  if (!args.workdir.empty()) return args.workdir;
  if (const char* env = std::getenv("RISER_WORKDIR"); env != nullptr && *env != '\0') {
    return env;
  }
  throw ConfigError("no workdir: pass --workdir or set RISER_WORKDIR");
}

void write_run_manifest(const fs::path& workdir, const std::string& command,
                        const ExperimentConfig& cfg, const json& extra = json::object()) {
  json j;
  j["command"] = command;
  j["code_version"] = kCodeVersion;
  j["seed"] = cfg.seed;
  j["config_hash"] = config_hash(cfg);
  for (auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream out(workdir / (command + "_manifest.json"), std::ios::trunc);
  if (!out) throw DataError("cannot write manifest");
  out << j.dump(2) << '\n';
}

struct Workspace {
  ItemCatalog catalog;
  PrefixTree trie{kTerminalToken};
  DatasetSplits splits;
};

Workspace load_workspace(const fs::path& workdir, const ExperimentConfig& cfg) {
  Workspace ws;
  const auto catalog_path = workdir / "catalog.txt";
  if (!fs::exists(catalog_path)) {
    throw DataError("no dataset in workdir (run gen-data first): " + workdir.string());
  }
  ws.catalog = load_catalog(catalog_path.string(), cfg.gen.vocab_size());
  ws.trie = PrefixTree::build(ws.catalog.items, ws.catalog.terminal);
  ws.splits.d_sft = load_interactions((workdir / "d_sft.tsv").string());
  ws.splits.d_rl = load_interactions((workdir / "d_rl.tsv").string());
  ws.splits.d_val = load_interactions((workdir / "d_val.tsv").string());
  ws.splits.d_test = load_interactions((workdir / "d_test.tsv").string());
  assert_disjoint(ws.splits.d_sft, ws.splits.d_rl, "d_sft vs d_rl");
  assert_disjoint(ws.splits.d_rl, ws.splits.d_val, "d_rl vs d_val");
  return ws;
}

int run_gen_data(const CommonArgs& common, bool force) {
  const ExperimentConfig cfg = resolve_config(common);
  const fs::path workdir = resolve_workdir(common);
  fs::create_directories(workdir);
  WorkdirLock lock(workdir);

  const bool has_data = fs::exists(workdir / "manifest.json") ||
                        fs::exists(workdir / "catalog.txt");
  if (has_data && !force) {
    throw DataError("workdir already holds a dataset; pass --force to overwrite");
  }

  const ItemCatalog catalog = make_catalog(cfg.gen);
  const DatasetSplits splits = generate_interactions(cfg.gen, catalog);

  save_catalog((workdir / "catalog.txt").string(), catalog);
  save_interactions((workdir / "d_sft.tsv").string(), splits.d_sft);
  save_interactions((workdir / "d_rl.tsv").string(), splits.d_rl);
  save_interactions((workdir / "d_val.tsv").string(), splits.d_val);
  save_interactions((workdir / "d_test.tsv").string(), splits.d_test);

  json manifest;
  manifest["seed"] = cfg.seed;
  manifest["config_hash"] = config_hash(cfg);
  manifest["code_version"] = kCodeVersion;
  manifest["vocab_size"] = cfg.gen.vocab_size();
  manifest["terminal_token"] = kTerminalToken;
  manifest["special_tokens"] = {{"instr", kInstrToken},
                                {"sep", kSepToken},
                                {"resp", kRespToken},
                                {"terminal", kTerminalToken}};
  json hashes;
  for (const char* name : {"catalog.txt", "d_sft.tsv", "d_rl.tsv", "d_val.tsv", "d_test.tsv"}) {
    hashes[name] = file_hash_hex((workdir / name).string());
  }
  manifest["files"] = hashes;
  manifest["config"] = serialize_config(cfg);
  std::ofstream out(workdir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';

  std::cout << "dataset written to " << workdir.string() << " ("
            << splits.d_sft.size() << "/" << splits.d_rl.size() << "/"
            << splits.d_val.size() << "/" << splits.d_test.size()
            << " sft/rl/val/test records)\n";
  return kExitOk;
}

PolicyDims dims_for(const ExperimentConfig& cfg) {
  return PolicyDims{cfg.gen.vocab_size(), 32, 64};
}

std::string mode_label(const std::string& mode) {
  return mode == "grpo-vanilla" ? "grpo_vanilla" : mode;
}

int run_train(const CommonArgs& common, const std::string& stage, const std::string& mode_flag,
              bool resume) {
  ExperimentConfig cfg = resolve_config(common);
  if (!mode_flag.empty()) apply_override(cfg, "mode", mode_flag);
  const fs::path workdir = resolve_workdir(common);
  WorkdirLock lock(workdir);
  Workspace ws = load_workspace(workdir, cfg);
  const TrainConfig train_cfg = cfg.to_train_config();

  if (stage == "sft") {
    PolicyState init(dims_for(cfg), cfg.seed);
    MetricsSink sink((workdir / "sft_metrics.jsonl").string());
    PolicyState trained =
        train_sft(init, ws.splits.d_sft, ws.splits.d_val, ws.catalog, train_cfg, &sink);
    save_checkpoint((workdir / "sft.ckpt").string(), trained);
    write_run_manifest(workdir, "train_sft", cfg,
                       {{"checkpoint", "sft.ckpt"}, {"epochs", sink.records().size()}});
    std::cout << "SFT checkpoint written (" << sink.records().size() << " epochs)\n";
    return kExitOk;
  }
  if (stage != "rl") throw ConfigError("--stage must be sft or rl");

  const auto sft_path = workdir / "sft.ckpt";
  if (!fs::exists(sft_path)) {
    throw DataError("RL stage needs an SFT checkpoint; run `train --stage sft` first");
  }
  PolicyState sft_policy = load_checkpoint(sft_path.string(), dims_for(cfg));

  const std::string label = mode_label(cfg.mode);
  RlRunOptions options;
  options.mode = cfg.mode == "grpo-vanilla" ? RlMode::kGrpoVanilla : RlMode::kRiser;
  options.checkpoint_dir = workdir.string();

  AdamW optimizer(sft_policy, cfg.adam);
  PolicyState start = sft_policy;
  const auto resume_path = workdir / (label + "_last.ckpt");
  if (resume) {
    if (!fs::exists(resume_path)) {
      throw DataError("cannot resume: " + resume_path.string() + " does not exist");
    }
    start = load_checkpoint(resume_path.string(), dims_for(cfg), &optimizer);
    options.start_step = optimizer.steps_taken();
    options.optimizer = &optimizer;
  }

  options.optimizer = &optimizer;
  MetricsSink sink((workdir / (label + "_metrics.jsonl")).string());
  RlResult result = train_rl(start, ws.splits.d_rl, ws.splits.d_val, ws.catalog, ws.trie,
                             train_cfg, options, &sink);
  save_checkpoint((workdir / (label + ".ckpt")).string(), result.best);
  // The live end-of-run state plus optimizer moments is the --resume source.
  save_checkpoint(resume_path.string(), result.final_state, &optimizer);
  write_run_manifest(workdir, "train_rl_" + label, cfg, {{"checkpoint", label + ".ckpt"}});
  std::cout << "RL (" << label << ") best checkpoint written (val HR@1 " << result.best_hr1
            << ")\n";
  return kExitOk;
}

void append_summary_row(const fs::path& workdir, const std::string& label,
                        const std::string& split, const EvalResult& result,
                        const std::vector<int>& cutoffs) {
  const auto path = workdir / "summary.csv";
  const bool fresh = !fs::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot append to summary.csv");
  if (fresh) {
    out << "label,split,instances";
    for (int n : cutoffs) out << ",hr@" << n;
    for (int n : cutoffs) out << ",ndcg@" << n;
    out << '\n';
  }
  out << label << ',' << split << ',' << result.instances;
  char buf[32];
  for (int n : cutoffs) {
    std::snprintf(buf, sizeof(buf), "%.6f", result.hr.at(n));
    out << ',' << buf;
  }
  for (int n : cutoffs) {
    std::snprintf(buf, sizeof(buf), "%.6f", result.ndcg.at(n));
    out << ',' << buf;
  }
  out << '\n';
}

EvalResult eval_checkpoint(const ExperimentConfig& cfg, const Workspace& ws,
                           const std::string& ckpt_path, const std::string& split) {
  PolicyState policy = load_checkpoint(ckpt_path, dims_for(cfg));
  std::vector<Interaction> subset;
  if (split == "all") {
    subset = ws.splits.d_test;
  } else {
    const auto pop = popularity_split(ws.catalog, ws.splits.d_sft, ws.splits.d_rl);
    const auto& keep = split == "popular" ? pop.popular : pop.unpopular;
    for (const auto& r : ws.splits.d_test) {
      if (keep.count(r.target) != 0) subset.push_back(r);
    }
  }
  EvalOptions options = cfg.eval;
  options.threads = cfg.threads;
  return evaluate_ranking(policy, subset, ws.catalog, ws.trie, options);
}

int run_eval(const CommonArgs& common, const std::string& checkpoint,
             const std::string& split) {
  const ExperimentConfig cfg = resolve_config(common);
  const fs::path workdir = resolve_workdir(common);
  Workspace ws = load_workspace(workdir, cfg);

  fs::path ckpt = checkpoint;
  if (!fs::exists(ckpt)) ckpt = workdir / checkpoint;
  if (!fs::exists(ckpt)) throw DataError("checkpoint not found: " + checkpoint);

  const auto result = eval_checkpoint(cfg, ws, ckpt.string(), split);
  const std::string label = fs::path(checkpoint).stem().string();
  append_summary_row(workdir, label, split, result, cfg.eval.cutoffs);
  write_run_manifest(workdir, "eval_" + label, cfg, {{"split", split}});

  std::cout << "label=" << label << " split=" << split
            << " instances=" << result.instances;
  for (int n : cfg.eval.cutoffs) {
    std::cout << " hr@" << n << "=" << result.hr.at(n) << " ndcg@" << n << "="
              << result.ndcg.at(n);
  }
  std::cout << '\n';
  return kExitOk;
}

// Incremental component ladder. Every stage starts from the same SFT
// checkpoint; only the RL recipe changes.
struct AblationStage {
  const char* label;
  void (*tweak)(ExperimentConfig&);
};

const AblationStage kAblationStages[] = {
    {"grpo",
     [](ExperimentConfig& c) {
       c.mode = "grpo-vanilla";
       c.rl.oversample_m = c.rl.group_n;  // plain sampling, duplicates kept
     }},
    {"dedup", [](ExperimentConfig& c) { c.mode = "grpo-vanilla"; }},
    {"klcov",
     [](ExperimentConfig& c) {
       c.mode = "riser";
       c.loss.mask_decay = 1.0;  // mask off
       c.loss.simpo_weight = 0.0;
     }},
    {"mask",
     [](ExperimentConfig& c) {
       c.mode = "riser";
       c.loss.simpo_weight = 0.0;
     }},
    {"riser", [](ExperimentConfig& c) { c.mode = "riser"; }},
};

int run_ablate(const CommonArgs& common) {
  const ExperimentConfig base = resolve_config(common);
  const fs::path workdir = resolve_workdir(common);
  WorkdirLock lock(workdir);
  Workspace ws = load_workspace(workdir, base);

  const auto sft_path = workdir / "sft.ckpt";
  if (!fs::exists(sft_path)) {
    PolicyState init(dims_for(base), base.seed);
    MetricsSink sink((workdir / "sft_metrics.jsonl").string());
    PolicyState trained = train_sft(init, ws.splits.d_sft, ws.splits.d_val, ws.catalog,
                                    base.to_train_config(), &sink);
    save_checkpoint(sft_path.string(), trained);
  }
  PolicyState sft_policy = load_checkpoint(sft_path.string(), dims_for(base));

  const auto sft_result = eval_checkpoint(base, ws, sft_path.string(), "all");
  append_summary_row(workdir, "sft", "all", sft_result, base.eval.cutoffs);
  std::cout << "stage sft: hr@5=" << sft_result.hr.at(base.eval.cutoffs.front()) << '\n';

  for (const auto& stage : kAblationStages) {
    ExperimentConfig cfg = base;
    stage.tweak(cfg);
    cfg.validate();
    RlRunOptions options;
    options.mode = cfg.mode == "grpo-vanilla" ? RlMode::kGrpoVanilla : RlMode::kRiser;
    MetricsSink sink((workdir / (std::string("ablate_") + stage.label + "_metrics.jsonl")).string());
    RlResult result = train_rl(sft_policy, ws.splits.d_rl, ws.splits.d_val, ws.catalog,
                               ws.trie, cfg.to_train_config(), options, &sink);
    const auto ckpt = workdir / (std::string("ablate_") + stage.label + ".ckpt");
    save_checkpoint(ckpt.string(), result.best);
    const auto result = eval_checkpoint(cfg, ws, ckpt.string(), "all");
    append_summary_row(workdir, stage.label, "all", result, cfg.eval.cutoffs);
    std::cout << "stage " << stage.label << ": hr@" << cfg.eval.cutoffs.front() << "="
              << result.hr.at(cfg.eval.cutoffs.front()) << '\n';
  }
  write_run_manifest(workdir, "ablate", base);
  return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Item-space RL lab: synthetic data, SFT warm-up, group-relative RL, ranking eval"};
  app.require_subcommand(1);

  CommonArgs common;
  bool force = false;
  std::string stage = "sft";
  std::string mode_flag;
  std::string checkpoint = "sft.ckpt";
  std::string split = "all";
  bool resume = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", common.config_path, "key = value config file");
    cmd->add_option("--workdir", common.workdir, "working directory (or $RISER_WORKDIR)");
    cmd->add_option("--seed", common.seed, "override the global seed");
    cmd->add_option("--set", common.overrides, "override a config key (key=value)");
  };

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic world");
  add_common(gen);
  gen->add_flag("--force", force, "overwrite an existing dataset");

  auto* train = app.add_subcommand("train", "run a training stage");
  add_common(train);
  train->add_option("--stage", stage, "sft | rl")->required();
  train->add_option("--mode", mode_flag, "riser | grpo-vanilla");
  train->add_flag("--resume", resume, "continue RL from <mode>_last.ckpt");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file (name or path)");
  eval->add_option("--split", split, "all | popular | unpopular")
      ->check(CLI::IsMember({"all", "popular", "unpopular"}));

  auto* ablate = app.add_subcommand("ablate", "run the incremental component ladder");
  add_common(ablate);

  try {
    app.parse(argc, const_cast<char**>(argv));
    if (gen->parsed()) return run_gen_data(common, force);
    if (train->parsed()) return run_train(common, stage, mode_flag, resume);
    if (eval->parsed()) return run_eval(common, checkpoint, split);
    if (ablate->parsed()) return run_ablate(common);
    return kExitOther;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitOther;
  }
}

}  // namespace riser
