#include "dropbp/run_config.hpp"

#include <cctype>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "dropbp/error.hpp"

namespace dropbp {

using nlohmann::json;

namespace {

json model_json(const ModelConfig& m) {
  return {{"n_units", m.n_units},       {"d_model", m.d_model},
          {"d_ff", m.d_ff},             {"n_heads", m.n_heads},
          {"vocab_size", m.vocab_size}, {"seq_len", m.seq_len},
          {"mode", to_string(m.mode)},  {"adapter_rank", m.adapter_rank},
          {"adapter_alpha", m.adapter_alpha}, {"init_std", m.init_std}};
}

json dataset_json(const DatasetSpec& d) {
  return {{"kind", to_string(d.kind)},
          {"seq_len", d.seq_len},
          {"val_fraction", d.val_fraction},
          {"seed", d.seed},
          {"copy_symbols", d.copy_symbols},
          {"copy_examples", d.copy_examples},
          {"corpus_path", d.corpus_path},
          {"window_stride", d.window_stride}};
}

json to_tree(const RunConfig& c) {
  return {{"model", model_json(c.model)},
          {"dataset", dataset_json(c.dataset)},
          {"method", to_string(c.method)},
          {"p_avg", c.p_avg},
          {"skip_rate", c.skip_rate},
          {"relative_flops", c.relative_flops},
          {"pld_decay", c.pld_decay},
          {"warmup_fraction", c.warmup_fraction},
          {"warmup_rate", c.warmup_rate ? json(*c.warmup_rate) : json(nullptr)},
          {"fixed_rates", c.fixed_rates},
          {"iters", c.iters},
          {"batch_size", c.batch_size},
          {"micro_batch_size", c.micro_batch_size},
          {"lr", c.lr},
          {"lr_min", c.lr_min},
          {"adamw",
           {{"beta1", c.adamw.beta1},
            {"beta2", c.adamw.beta2},
            {"eps", c.adamw.eps},
            {"weight_decay", c.adamw.weight_decay}}},
          {"seed", c.seed},
          {"val_every", c.val_every},
          {"val_examples", c.val_examples},
          {"log_path", c.log_path},
          {"init_checkpoint", c.init_checkpoint},
          {"save_checkpoint", c.save_checkpoint}};
}

template <class T>
void get(const json& j, const char* key, T& out) {
  try {
    j.at(key).get_to(out);
  } catch (const json::exception& e) {
    throw InputError(std::string("config field '") + key + "': " + e.what());
  }
}

RunConfig from_tree(const json& t) {
  RunConfig c;
  const json& m = t.at("model");
  get(m, "n_units", c.model.n_units);
  get(m, "d_model", c.model.d_model);
  get(m, "d_ff", c.model.d_ff);
  get(m, "n_heads", c.model.n_heads);
  get(m, "vocab_size", c.model.vocab_size);
  get(m, "seq_len", c.model.seq_len);
  std::string s;
  get(m, "mode", s);
  c.model.mode = parse_training_mode(s);
  get(m, "adapter_rank", c.model.adapter_rank);
  get(m, "adapter_alpha", c.model.adapter_alpha);
  get(m, "init_std", c.model.init_std);

  const json& d = t.at("dataset");
  get(d, "kind", s);
  c.dataset.kind = parse_dataset_kind(s);
  get(d, "seq_len", c.dataset.seq_len);
  get(d, "val_fraction", c.dataset.val_fraction);
  get(d, "seed", c.dataset.seed);
  get(d, "copy_symbols", c.dataset.copy_symbols);
  get(d, "copy_examples", c.dataset.copy_examples);
  get(d, "corpus_path", c.dataset.corpus_path);
  get(d, "window_stride", c.dataset.window_stride);

  get(t, "method", s);
  c.method = parse_method(s);
  get(t, "p_avg", c.p_avg);
  get(t, "skip_rate", c.skip_rate);
  get(t, "relative_flops", c.relative_flops);
  get(t, "pld_decay", c.pld_decay);
  get(t, "warmup_fraction", c.warmup_fraction);
  if (!t.at("warmup_rate").is_null()) {
    double r = 0;
    get(t, "warmup_rate", r);
    c.warmup_rate = r;
  }
  get(t, "fixed_rates", c.fixed_rates);
  get(t, "iters", c.iters);
  get(t, "batch_size", c.batch_size);
  get(t, "micro_batch_size", c.micro_batch_size);
  get(t, "lr", c.lr);
  get(t, "lr_min", c.lr_min);
  const json& a = t.at("adamw");
  get(a, "beta1", c.adamw.beta1);
  get(a, "beta2", c.adamw.beta2);
  get(a, "eps", c.adamw.eps);
  get(a, "weight_decay", c.adamw.weight_decay);
  get(t, "seed", c.seed);
  get(t, "val_every", c.val_every);
  get(t, "val_examples", c.val_examples);
  get(t, "log_path", c.log_path);
  get(t, "init_checkpoint", c.init_checkpoint);
  get(t, "save_checkpoint", c.save_checkpoint);
  return c;
}

void collect_keys(const json& node, const std::string& prefix, std::vector<std::string>& out) {
  for (auto it = node.begin(); it != node.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      collect_keys(*it, key, out);
    } else {
      out.push_back(key);
    }
  }
}

json::json_pointer pointer_for(const std::string& key) {
  std::string p = "/";
  for (char ch : key) p += ch == '.' ? '/' : ch;
  return json::json_pointer(p);
}

// Overlays `patch` onto the defaults, rejecting keys the config does not have.
void merge_known(json& base, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw InputError("config must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw InputError("unknown config key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_known(slot, *it, key);
    } else {
      slot = *it;
    }
  }
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  auto unit = [](double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError(std::string(what) + " must lie in [0, 1]");
  };
  unit(p_avg, "p_avg");
  unit(skip_rate, "skip_rate");
  unit(relative_flops, "relative_flops");
  unit(warmup_fraction, "warmup_fraction");
  if (warmup_rate) unit(*warmup_rate, "warmup_rate");
  for (double r : fixed_rates) unit(r, "fixed_rates entries");
  if (!fixed_rates.empty() && fixed_rates.size() != model.n_layers()) {
    throw ArgumentError("fixed_rates needs one entry per layer");
  }
  if (iters == 0) throw ArgumentError("iters must be positive");
  if (batch_size == 0) throw ArgumentError("batch_size must be positive");
  if (micro_batch_size && batch_size % micro_batch_size != 0) {
    throw ArgumentError("batch_size must be a multiple of micro_batch_size");
  }
  if (!(lr > 0.0) || lr_min < 0.0 || lr_min > lr) throw ArgumentError("need 0 <= lr_min <= lr, lr > 0");
  if (val_every == 0) throw ArgumentError("val_every must be positive");
  if (dataset.seq_len > model.seq_len) {
    throw ArgumentError("dataset seq_len exceeds the model's position table");
  }
}

std::string RunConfig::to_json() const { return to_tree(*this).dump(2); }

RunConfig RunConfig::from_json(const std::string& text) {
  json patch;
  try {
    patch = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("config is not valid JSON: ") + e.what());
  }
  json base = to_tree(RunConfig{});
  merge_known(base, patch, "");
  return from_tree(base);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  collect_keys(to_tree(RunConfig{}), "", keys);
  return keys;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path + "'");
  return RunConfig::from_json({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()});
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  json tree = to_tree(cfg);
  const auto ptr = pointer_for(key);
  if (!tree.contains(ptr) || tree.at(ptr).is_object()) {
    throw InputError("unknown config key '" + key + "'");
  }
  json parsed = json::parse(value, nullptr, /*allow_exceptions=*/false);
  if (parsed.is_discarded()) parsed = value;
  tree[ptr] = parsed;
  cfg = from_tree(tree);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw InputError("override '" + assignment + "' is not key=value");
  }
  apply_override(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

std::string env_name(const std::string& key) {
  std::string out = "DROPBP_";
  for (char ch : key) {
    out += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  }
  return out;
}

std::vector<std::string> apply_env_overrides(
    RunConfig& cfg, const std::function<const char*(const char*)>& getenv) {
  std::vector<std::string> applied;
  for (const auto& key : config_keys()) {
    if (const char* v = getenv(env_name(key).c_str())) {
      apply_override(cfg, key, v);
      applied.push_back(key);
    }
  }
  return applied;
}

}  // namespace dropbp
