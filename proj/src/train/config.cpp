#include "train/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "util/error.hpp"

namespace depthforge {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t parse_count(const std::string& text, const std::string& what) {
  const double v = parse_number(text, what);
  if (v < 0.0 || v != std::floor(v) || v > 1e15) throw ConfigError(what + ": expected a nonnegative integer");
  return static_cast<std::size_t>(v);
}

bool parse_bool(const std::string& text, const std::string& what) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError(what + ": expected true or false, got '" + text + "'");
}

}  // namespace

double parse_number(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  const auto slash = t.find('/');
  try {
    std::size_t used = 0;
    if (slash != std::string::npos) {
      const std::string a = trim(t.substr(0, slash)), b = trim(t.substr(slash + 1));
      std::size_t ua = 0, ub = 0;
      const double num = std::stod(a, &ua);
      const double den = std::stod(b, &ub);
      if (ua != a.size() || ub != b.size() || den == 0.0) throw std::invalid_argument("fraction");
      return num / den;
    }
    const double v = std::stod(t, &used);
    if (used != t.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(what + ": '" + text + "' is not a number");
  }
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(momentum >= 0.0) || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (!(beta >= 0.0) || !(gamma >= 0.0) || !(regularizer_weight >= 0.0)) {
    throw ConfigError("beta, gamma and regularizer_weight must be nonnegative");
  }
  if (!(sigma >= 0.0)) throw ConfigError("sigma must be nonnegative");
  if (!(eta >= 0.0)) throw ConfigError("eta must be nonnegative");
  if (early_stop_patience == 0) throw ConfigError("early_stop_patience must be positive");
  if (!(grad_clip_norm >= 0.0)) throw ConfigError("grad_clip_norm must be nonnegative");
}

LossOptions TrainConfig::loss_options() const {
  LossOptions o;
  o.sigma = sigma;
  o.eta = eta;
  o.normalize_terms = normalize_terms;
  o.unsup_excludes_gt = unsup_excludes_gt;
  o.supervised_norm = supervised_norm;
  return o;
}

LossWeights TrainConfig::loss_weights(std::int64_t t) const {
  LossWeights w = LossWeights::make(beta, gamma, t);
  w.regularizer = regularizer_weight;
  return w;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "net.base_width",    "net.blocks_per_stage", "net.width_multiplier", "net.use_long_skips",
      "net.dropout_p",     "net.init_rho",         "lr",                   "momentum",
      "weight_decay",      "batch_size",           "max_epochs",           "beta",
      "gamma",             "regularizer_weight", "sigma",                "eta",                  "seed",
      "unsup_excludes_gt", "normalize_terms",      "early_stop_patience",  "augment",
      "grad_clip_norm",    "supervised_norm",
  };
  return keys;
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    bool known = false;
    for (const auto& k : config_keys()) known = known || k == key;
    if (!known) throw ConfigError(where + ": unknown config key '" + key + "'");
    if (!kv.emplace(key, value).second) throw ConfigError(where + ": duplicate config key '" + key + "'");
  }
  for (const auto& k : config_keys()) {
    if (!kv.count(k)) throw ConfigError(source + ": missing config key '" + k + "'");
  }

  RunConfig c;
  auto num = [&](const char* k) { return parse_number(kv.at(k), std::string(k)); };
  auto count = [&](const char* k) { return parse_count(kv.at(k), std::string(k)); };
  auto flag = [&](const char* k) { return parse_bool(kv.at(k), std::string(k)); };

  c.net.base_width = count("net.base_width");
  c.net.blocks_per_stage.clear();
  std::stringstream blocks(kv.at("net.blocks_per_stage"));
  std::string item;
  while (std::getline(blocks, item, ',')) c.net.blocks_per_stage.push_back(parse_count(item, "net.blocks_per_stage"));
  c.net.width_multiplier = num("net.width_multiplier");
  c.net.use_long_skips = flag("net.use_long_skips");
  c.net.dropout_p = num("net.dropout_p");
  c.net.init_rho = num("net.init_rho");

  TrainConfig& t = c.train;
  t.lr = num("lr");
  t.momentum = num("momentum");
  t.weight_decay = num("weight_decay");
  t.batch_size = count("batch_size");
  t.max_epochs = count("max_epochs");
  t.beta = num("beta");
  t.gamma = num("gamma");
  t.regularizer_weight = num("regularizer_weight");
  t.sigma = num("sigma");
  t.eta = num("eta");
  t.seed = count("seed");
  t.unsup_excludes_gt = flag("unsup_excludes_gt");
  t.normalize_terms = flag("normalize_terms");
  t.early_stop_patience = count("early_stop_patience");
  t.augment = flag("augment");
  t.grad_clip_norm = num("grad_clip_norm");
  const std::string norm = kv.at("supervised_norm");
  if (norm == "berhu") {
    t.supervised_norm = SupervisedNorm::kBerhu;
  } else if (norm == "l2") {
    t.supervised_norm = SupervisedNorm::kL2;
  } else {
    throw ConfigError("supervised_norm: expected berhu or l2, got '" + norm + "'");
  }
  c.net.validate();
  t.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path);
}

std::string format_run_config(const RunConfig& c) {
  std::ostringstream o;
  std::string blocks;
  for (std::size_t i = 0; i < c.net.blocks_per_stage.size(); ++i) {
    blocks += (i ? "," : "") + std::to_string(c.net.blocks_per_stage[i]);
  }
  const TrainConfig& t = c.train;
  auto b = [](bool v) { return v ? "true" : "false"; };
  o << "net.base_width = " << c.net.base_width << '\n'
    << "net.blocks_per_stage = " << blocks << '\n'
    << "net.width_multiplier = " << fmt(c.net.width_multiplier) << '\n'
    << "net.use_long_skips = " << b(c.net.use_long_skips) << '\n'
    << "net.dropout_p = " << fmt(c.net.dropout_p) << '\n'
    << "net.init_rho = " << fmt(c.net.init_rho) << '\n'
    << "lr = " << fmt(t.lr) << '\n'
    << "momentum = " << fmt(t.momentum) << '\n'
    << "weight_decay = " << fmt(t.weight_decay) << '\n'
    << "batch_size = " << t.batch_size << '\n'
    << "max_epochs = " << t.max_epochs << '\n'
    << "beta = " << fmt(t.beta) << '\n'
    << "gamma = " << fmt(t.gamma) << '\n'
    << "regularizer_weight = " << fmt(t.regularizer_weight) << '\n'
    << "sigma = " << fmt(t.sigma) << '\n'
    << "eta = " << fmt(t.eta) << '\n'
    << "seed = " << t.seed << '\n'
    << "unsup_excludes_gt = " << b(t.unsup_excludes_gt) << '\n'
    << "normalize_terms = " << b(t.normalize_terms) << '\n'
    << "early_stop_patience = " << t.early_stop_patience << '\n'
    << "augment = " << b(t.augment) << '\n'
    << "grad_clip_norm = " << fmt(t.grad_clip_norm) << '\n'
    << "supervised_norm = " << (t.supervised_norm == SupervisedNorm::kL2 ? "l2" : "berhu") << '\n';
  return o.str();
}

}  // namespace depthforge
