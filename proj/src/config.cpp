#include "riser/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "riser/errors.hpp"
#include "riser/rng.hpp"

namespace riser {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int64_t parse_i64(const std::string& key, const std::string& v) {
  int64_t out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError("bad integer for " + key + ": '" + v + "'");
  }
  return out;
}

double parse_f64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

std::vector<int32_t> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int32_t> out;
  std::istringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(static_cast<int32_t>(parse_i64(key, tok)));
  }
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

std::string fmt_i64(int64_t v) { return std::to_string(v); }

std::string fmt_f64(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

std::string fmt_int_list(const std::vector<int32_t>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<int> parse_cutoffs(const std::string& key, const std::string& v) {
  auto raw = parse_int_list(key, v);
  return std::vector<int>(raw.begin(), raw.end());
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"seed",
       [](ExperimentConfig& c, const std::string& v) {
         c.seed = static_cast<uint64_t>(parse_i64("seed", v));
       },
       [](const ExperimentConfig& c) { return fmt_i64(static_cast<int64_t>(c.seed)); }},
      {"threads",
       [](ExperimentConfig& c, const std::string& v) {
         c.threads = static_cast<int>(parse_i64("threads", v));
       },
       [](const ExperimentConfig& c) { return fmt_i64(c.threads); }},
      {"mode",
       [](ExperimentConfig& c, const std::string& v) {
         if (v != "riser" && v != "grpo-vanilla") {
           throw ConfigError("mode must be riser or grpo-vanilla");
         }
         c.mode = v;
       },
       [](const ExperimentConfig& c) { return c.mode; }},
      {"gen.num_users",
       [](ExperimentConfig& c, const std::string& v) {
         c.gen.num_users = static_cast<int32_t>(parse_i64("gen.num_users", v));
       },
       [](const ExperimentConfig& c) { return fmt_i64(c.gen.num_users); }},
      {"gen.num_items",
       [](ExperimentConfig& c, const std::string& v) {
         c.gen.num_items = static_cast<int32_t>(parse_i64("gen.num_items", v));
       },
       [](const ExperimentConfig& c) { return fmt_i64(c.gen.num_items); }},
      {"gen.latent_dim",
       [](ExperimentConfig& c, const std::string& v) {
         c.gen.latent_dim = static_cast<int32_t>(parse_i64("gen.latent_dim", v));
       },
       [](const ExperimentConfig& c) { return fmt_i64(c.gen.latent_dim); }},
      {"gen.tokens_per_level",
       [](ExperimentConfig& c, const std::string& v) {
         c.gen.tokens_per_level = parse_int_list("gen.tokens_per_level", v);
       },
       [](const ExperimentConfig& c) { return fmt_int_list(c.gen.tokens_per_level); }},
      {"gen.sequence_length",
       [](ExperimentConfig& c, const std::string& v) {
         c.gen.sequence_length = static_cast<int32_t>(parse_i64("gen.sequence_length", v));
       },
       [](const ExperimentConfig& c) { return fmt_i64(c.gen.sequence_length); }},
      {"gen.num_interactions",
       [](ExperimentConfig& c, const std::string& v) {
         c.gen.num_interactions = static_cast<int32_t>(parse_i64("gen.num_interactions", v));
       },
       [](const ExperimentConfig& c) { return fmt_i64(c.gen.num_interactions); }},
      {"gen.noise_temperature",
       [](ExperimentConfig& c, const std::string& v) {
         c.gen.noise_temperature = parse_f64("gen.noise_temperature", v);
       },
       [](const ExperimentConfig& c) { return fmt_f64(c.gen.noise_temperature); }},
      {"gen.popularity_spread",
       [](ExperimentConfig& c, const std::string& v) {
         c.gen.popularity_spread = parse_f64("gen.popularity_spread", v);
       },
       [](const ExperimentConfig& c) { return fmt_f64(c.gen.popularity_spread); }},
      {"gen.drift_rate",
       [](ExperimentConfig& c, const std::string& v) {
         c.gen.drift_rate = parse_f64("gen.drift_rate", v);
       },
       [](const ExperimentConfig& c) { return fmt_f64(c.gen.drift_rate); }},
      {"gen.drift_noise",
       [](ExperimentConfig& c, const std::string& v) {
         c.gen.drift_noise = parse_f64("gen.drift_noise", v);
       },
       [](const ExperimentConfig& c) { return fmt_f64(c.gen.drift_noise); }},
      {"gen.rl_sample_size",
       [](ExperimentConfig& c, const std::string& v) {
         c.gen.rl_sample_size = static_cast<int32_t>(parse_i64("gen.rl_sample_size", v));
       },
       [](const ExperimentConfig& c) { return fmt_i64(c.gen.rl_sample_size); }},
      {"gen.val_sample_size",
       [](ExperimentConfig& c, const std::string& v) {
         c.gen.val_sample_size = static_cast<int32_t>(parse_i64("gen.val_sample_size", v));
       },
       [](const ExperimentConfig& c) { return fmt_i64(c.gen.val_sample_size); }},
      {"sft.learning_rate",
       [](ExperimentConfig& c, const std::string& v) {
         c.sft.learning_rate = parse_f64("sft.learning_rate", v);
       },
       [](const ExperimentConfig& c) { return fmt_f64(c.sft.learning_rate); }},
      {"sft.batch_size",
       [](ExperimentConfig& c, const std::string& v) {
         c.sft.batch_size = static_cast<int>(parse_i64("sft.batch_size", v));
       },
       [](const ExperimentConfig& c) { return fmt_i64(c.sft.batch_size); }},
      {"sft.max_epochs",
       [](ExperimentConfig& c, const std::string& v) {
         c.sft.max_epochs = static_cast<int>(parse_i64("sft.max_epochs", v));
       },
       [](const ExperimentConfig& c) { return fmt_i64(c.sft.max_epochs); }},
      {"sft.patience",
       [](ExperimentConfig& c, const std::string& v) {
         c.sft.patience = static_cast<int>(parse_i64("sft.patience", v));
       },
       [](const ExperimentConfig& c) { return fmt_i64(c.sft.patience); }},
      {"rl.learning_rate",
       [](ExperimentConfig& c, const std::string& v) {
         c.rl.learning_rate = parse_f64("rl.learning_rate", v);
       },
       [](const ExperimentConfig& c) { return fmt_f64(c.rl.learning_rate); }},
      {"rl.steps",
       [](ExperimentConfig& c, const std::string& v) {
         c.rl.steps = static_cast<int>(parse_i64("rl.steps", v));
       },
       [](const ExperimentConfig& c) { return fmt_i64(c.rl.steps); }},
      {"rl.batch_prompts",
       [](ExperimentConfig& c, const std::string& v) {
         c.rl.batch_prompts = static_cast<int>(parse_i64("rl.batch_prompts", v));
       },
       [](const ExperimentConfig& c) { return fmt_i64(c.rl.batch_prompts); }},
      {"rl.oversample_m",
       [](ExperimentConfig& c, const std::string& v) {
         c.rl.oversample_m = static_cast<int>(parse_i64("rl.oversample_m", v));
       },
       [](const ExperimentConfig& c) { return fmt_i64(c.rl.oversample_m); }},
      {"rl.group_n",
       [](ExperimentConfig& c, const std::string& v) {
         c.rl.group_n = static_cast<int>(parse_i64("rl.group_n", v));
       },
       [](const ExperimentConfig& c) { return fmt_i64(c.rl.group_n); }},
      {"rl.temperature",
       [](ExperimentConfig& c, const std::string& v) {
         c.rl.temperature = parse_f64("rl.temperature", v);
       },
       [](const ExperimentConfig& c) { return fmt_f64(c.rl.temperature); }},
      {"rl.eval_every",
       [](ExperimentConfig& c, const std::string& v) {
         c.rl.eval_every = static_cast<int>(parse_i64("rl.eval_every", v));
       },
       [](const ExperimentConfig& c) { return fmt_i64(c.rl.eval_every); }},
      {"rl.val_prompts",
       [](ExperimentConfig& c, const std::string& v) {
         c.rl.val_prompts = static_cast<int>(parse_i64("rl.val_prompts", v));
       },
       [](const ExperimentConfig& c) { return fmt_i64(c.rl.val_prompts); }},
      {"rl.entropy_probe_prompts",
       [](ExperimentConfig& c, const std::string& v) {
         c.rl.entropy_probe_prompts = static_cast<int>(parse_i64("rl.entropy_probe_prompts", v));
       },
       [](const ExperimentConfig& c) { return fmt_i64(c.rl.entropy_probe_prompts); }},
      {"rl.checkpoint_every",
       [](ExperimentConfig& c, const std::string& v) {
         c.rl.checkpoint_every = static_cast<int>(parse_i64("rl.checkpoint_every", v));
       },
       [](const ExperimentConfig& c) { return fmt_i64(c.rl.checkpoint_every); }},
      {"rl.grad_clip",
       [](ExperimentConfig& c, const std::string& v) {
         c.rl.grad_clip = parse_f64("rl.grad_clip", v);
       },
       [](const ExperimentConfig& c) { return fmt_f64(c.rl.grad_clip); }},
      {"adam.beta1",
       [](ExperimentConfig& c, const std::string& v) {
         c.adam.beta1 = parse_f64("adam.beta1", v);
       },
       [](const ExperimentConfig& c) { return fmt_f64(c.adam.beta1); }},
      {"adam.beta2",
       [](ExperimentConfig& c, const std::string& v) {
         c.adam.beta2 = parse_f64("adam.beta2", v);
       },
       [](const ExperimentConfig& c) { return fmt_f64(c.adam.beta2); }},
      {"adam.eps",
       [](ExperimentConfig& c, const std::string& v) { c.adam.eps = parse_f64("adam.eps", v); },
       [](const ExperimentConfig& c) { return fmt_f64(c.adam.eps); }},
      {"adam.weight_decay",
       [](ExperimentConfig& c, const std::string& v) {
         c.adam.weight_decay = parse_f64("adam.weight_decay", v);
       },
       [](const ExperimentConfig& c) { return fmt_f64(c.adam.weight_decay); }},
      {"loss.beta_kl",
       [](ExperimentConfig& c, const std::string& v) {
         c.loss.beta_kl = parse_f64("loss.beta_kl", v);
       },
       [](const ExperimentConfig& c) { return fmt_f64(c.loss.beta_kl); }},
      {"loss.k_outlier",
       [](ExperimentConfig& c, const std::string& v) {
         c.loss.k_outlier = parse_f64("loss.k_outlier", v);
       },
       [](const ExperimentConfig& c) { return fmt_f64(c.loss.k_outlier); }},
      {"loss.epsilon_clip",
       [](ExperimentConfig& c, const std::string& v) {
         c.loss.epsilon_clip = parse_f64("loss.epsilon_clip", v);
       },
       [](const ExperimentConfig& c) { return fmt_f64(c.loss.epsilon_clip); }},
      {"loss.beta_simpo",
       [](ExperimentConfig& c, const std::string& v) {
         c.loss.beta_simpo = parse_f64("loss.beta_simpo", v);
       },
       [](const ExperimentConfig& c) { return fmt_f64(c.loss.beta_simpo); }},
      {"loss.gamma",
       [](ExperimentConfig& c, const std::string& v) {
         c.loss.gamma = parse_f64("loss.gamma", v);
       },
       [](const ExperimentConfig& c) { return fmt_f64(c.loss.gamma); }},
      {"loss.mask_decay",
       [](ExperimentConfig& c, const std::string& v) {
         c.loss.mask_decay = parse_f64("loss.mask_decay", v);
       },
       [](const ExperimentConfig& c) { return fmt_f64(c.loss.mask_decay); }},
      {"loss.simpo_weight",
       [](ExperimentConfig& c, const std::string& v) {
         c.loss.simpo_weight = parse_f64("loss.simpo_weight", v);
       },
       [](const ExperimentConfig& c) { return fmt_f64(c.loss.simpo_weight); }},
      {"loss.clip_in_modified",
       [](ExperimentConfig& c, const std::string& v) {
         c.loss.clip_in_modified = parse_bool("loss.clip_in_modified", v);
       },
       [](const ExperimentConfig& c) { return fmt_bool(c.loss.clip_in_modified); }},
      {"loss.beta_kl_vanilla",
       [](ExperimentConfig& c, const std::string& v) {
         c.loss.beta_kl_vanilla = parse_f64("loss.beta_kl_vanilla", v);
       },
       [](const ExperimentConfig& c) { return fmt_f64(c.loss.beta_kl_vanilla); }},
      {"eval.beam_width",
       [](ExperimentConfig& c, const std::string& v) {
         c.eval.beam_width = static_cast<int>(parse_i64("eval.beam_width", v));
       },
       [](const ExperimentConfig& c) { return fmt_i64(c.eval.beam_width); }},
      {"eval.cutoffs",
       [](ExperimentConfig& c, const std::string& v) {
         c.eval.cutoffs = parse_cutoffs("eval.cutoffs", v);
       },
       [](const ExperimentConfig& c) {
         std::vector<int32_t> v(c.eval.cutoffs.begin(), c.eval.cutoffs.end());
         return fmt_int_list(v);
       }},
  };
  return table;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown config key: '" + key + "'");
}

}  // namespace

TrainConfig ExperimentConfig::to_train_config() const {
  TrainConfig t;
  t.seed = seed;
  t.threads = threads;
  t.sft = sft;
  t.rl = rl;
  t.loss = loss;
  t.adam = adam;
  return t;
}

void ExperimentConfig::validate() const {
  gen.validate();
  to_train_config().validate();
  if (eval.beam_width < 1) throw ConfigError("eval.beam_width must be >= 1");
  for (int n : eval.cutoffs) {
    if (n < 1) throw ConfigError("eval cutoffs must be >= 1");
  }
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  ExperimentConfig cfg;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("missing '=' at " + path + ":" + std::to_string(line_no));
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    find_field(key).set(cfg, value);
  }
  return cfg;
}

void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  find_field(key).set(cfg, value);
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) {
    out += f.key;
    out += " = ";
    out += f.get(cfg);
    out += '\n';
  }
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string s = serialize_config(cfg);
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return std::string(hex);
}

}  // namespace riser
