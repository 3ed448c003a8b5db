#pragma once

#include <string>
#include <vector>

#include "riser/losses.hpp"
#include "riser/metrics.hpp"
#include "riser/synth_world.hpp"
#include "riser/trainer.hpp"

namespace riser {

/// One auditable record for an experiment: generator, SFT/RL training, loss
/// and decoding knobs. Plain-text `key = value` file; unknown keys are
/// rejected; flags override file values. Serialization is canonical, so
/// parse-then-serialize is idempotent.
struct ExperimentConfig {
  uint64_t seed{7};
  int threads{0};
  std::string mode{"riser"};  // riser | grpo-vanilla
  GenConfig gen;
  SftConfig sft;
  RlConfig rl;
  LossConfig loss;
  AdamConfig adam;
  EvalOptions eval;

  TrainConfig to_train_config() const;
  void validate() const;
};

/// All known keys in canonical order.
std::vector<std::string> config_keys();

/// Parse a `key = value` file ('#' starts a comment). Unknown keys or
/// malformed values raise ConfigError.
ExperimentConfig parse_config_file(const std::string& path);

/// Apply one `key=value` override.
void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Canonical serialization (fixed key order, round-trip number formatting).
std::string serialize_config(const ExperimentConfig& cfg);

/// FNV-1a hash of the canonical serialization, hex-encoded.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace riser
