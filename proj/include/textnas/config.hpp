#pragma once

// Flat `key = value` run configuration. Every knob the CLI forwards to the
// pipeline lives in one table; unknown keys are an error.

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "textnas/error.hpp"
#include "textnas/pipeline.hpp"

namespace textnas {

struct ConfigEntry {
  const char* key;
  const char* value;
  const char* help;
};

// Defaults follow the full-scale setup; toy runs override them.
inline constexpr ConfigEntry kConfigTable[] = {
    {"seed", "1", "root seed for every random stream"},
    {"workers", "1", "threads for candidate rewards and grid points"},

    {"data.train", "", "training CSV (label,text or label,text_a,text_b)"},
    {"data.valid", "", "validation CSV; empty holds out data.valid_fraction of train"},
    {"data.test", "", "test CSV; may be empty"},
    {"data.paired", "false", "sentence-pair rows (NLI head)"},
    {"data.num_classes", "0", "0 infers max label + 1 from the training split"},
    {"data.valid_fraction", "0.05", "held-out share when data.valid is empty"},
    {"data.min_freq", "1", "vocabulary frequency threshold"},
    {"data.embeddings", "", "comma-separated embedding files, concatenated along the width"},

    {"model.emb_dim", "300", "embedding width when no files are given"},
    {"model.heads", "8", "self-attention heads (capped at the layer dim)"},

    {"space.layers", "24", "N, layers per architecture"},
    {"space.lookback", "5", "k, input window; 0 means unbounded"},

    {"search.epochs", "150", "shared-weight epochs"},
    {"search.candidates", "10", "children rewarded per controller update"},
    {"search.eval_batch", "128", "validation batch per reward"},
    {"search.batch_size", "128", ""},
    {"search.max_len", "64", ""},
    {"search.dim", "32", "supernet layer width"},
    {"search.dropout", "0.5", ""},
    {"search.l2", "2e-6", ""},
    {"search.lr_max", "0.005", "cosine schedule peak"},
    {"search.lr_min", "0.0001", "cosine schedule floor"},
    {"search.cycle", "10", "cosine cycle length in epochs"},

    {"controller.hidden", "64", "LSTM width"},
    {"controller.lr", "0.00035", "Adam step size"},
    {"controller.temperature", "5", ""},
    {"controller.tanh_constant", "2.5", ""},
    {"controller.entropy_weight", "0.0001", ""},
    {"controller.baseline_decay", "0.999", ""},

    {"train.schedule", "auto_decay", "auto_decay (SGD momentum) or cosine (Adam)"},
    {"train.lr", "0.02", "single-point value, also cosine peak"},
    {"train.batch_size", "128", ""},
    {"train.max_len", "64", ""},
    {"train.l2", "2e-6", ""},
    {"train.dropout", "0.5", ""},
    {"train.dim", "32", ""},
    {"train.epochs", "30", "cosine schedule length"},
    {"train.max_epochs", "200", "auto-decay hard cap"},
    {"train.lr_min", "0.0001", "cosine floor"},
    {"train.finish", "true", "auto-decay finish phase on train + valid"},
    {"train.warm_start", "", "supernet.ckpt to copy child weights from; empty retrains from scratch"},

    {"decay.warmup_epochs", "5", ""},
    {"decay.warmup_factor", "0.1", ""},
    {"decay.factor", "0.2", ""},
    {"decay.window", "7", "moving-average length"},
    {"decay.max_decays", "4", ""},
    {"decay.finish_epochs", "6", ""},

    {"grid.lr", "", "comma list; any non-empty grid axis turns the grid on"},
    {"grid.batch_size", "", ""},
    {"grid.max_len", "", ""},
    {"grid.l2", "", ""},
    {"grid.dropout", "", ""},
    {"grid.dim", "", ""},
    {"grid.budget", "15", "epochs per grid point"},

    {"nli.penalty", "0", "attention-pooling penalty coefficient"},
    {"nli.pool_queries", "4", ""},
    {"nli.fc_dim", "2400", ""},
    {"nli.fc_layers", "3", ""},
    {"nli.lr_min", "0.00001", ""},
};

class RunConfig {
 public:
  RunConfig() {
    for (const auto& e : kConfigTable) values_[e.key] = e.value;
  }

  static bool known(const std::string& key) {
    for (const auto& e : kConfigTable)
      if (key == e.key) return true;
    return false;
  }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw UsageError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
    return it->second;
  }

  /// `key = value` lines; `#` starts a comment line.
  void parse(std::istream& in, const std::string& source = "config") {
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      const auto t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw UsageError(source + ":" + std::to_string(n) + ": expected key = value");
      }
      const auto key = trim(t.substr(0, eq));
      if (!known(key)) throw UsageError(source + ":" + std::to_string(n) + ": unknown config key '" + key + "'");
      values_[key] = trim(t.substr(eq + 1));
    }
  }

  void load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config " + path);
    parse(in, path);
  }

  /// Every key in table order. With `comments`, each help text precedes its key.
  std::string dump(bool comments = false) const {
    std::ostringstream os;
    for (const auto& e : kConfigTable) {
      if (comments && *e.help) os << "# " << e.help << '\n';
      os << e.key << " = " << values_.at(e.key) << '\n';
    }
    return os.str();
  }

  double real(const std::string& key) const { return parse_real(key, str(key)); }
  std::size_t count(const std::string& key) const { return parse_count(key, str(key)); }
  std::uint64_t u64(const std::string& key) const { return parse_u64(key, str(key)); }

  bool flag(const std::string& key) const {
    const auto& v = str(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw UsageError("config key " + key + ": expected true or false, got '" + v + "'");
  }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    std::istringstream is(str(key));
    std::string item;
    while (std::getline(is, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : list(key)) out.push_back(parse_real(key, s));
    return out;
  }

  std::vector<std::size_t> counts(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& s : list(key)) out.push_back(parse_count(key, s));
    return out;
  }

  // -- typed views ----------------------------------------------------------

  SpaceConfig space() const {
    SpaceConfig s;
    s.num_layers = count("space.layers");
    const auto k = count("space.lookback");
    s.lookback = k == 0 ? std::nullopt : std::optional<std::size_t>(k);
    return s;
  }

  ModelSpec model() const { return {count("model.emb_dim"), count("model.heads")}; }

  SearchConfig search() const {
    SearchConfig c;
    c.space = space();
    c.hp = {real("search.lr_max"), count("search.batch_size"), count("search.max_len"), real("search.l2"),
            real("search.dropout"), count("search.dim")};
    c.model = model();
    c.epochs = count("search.epochs");
    c.candidates = count("search.candidates");
    c.eval_batch = count("search.eval_batch");
    c.cosine = {real("search.lr_max"), real("search.lr_min"), real("search.cycle")};
    c.controller.hidden = count("controller.hidden");
    c.controller.lr = real("controller.lr");
    c.controller.temperature = real("controller.temperature");
    c.controller.tanh_constant = real("controller.tanh_constant");
    c.controller.entropy_weight = real("controller.entropy_weight");
    c.controller.baseline_decay = real("controller.baseline_decay");
    c.workers = count("workers");
    c.seed = u64("seed");
    return c;
  }

  TrainHyper train_hyper() const {
    return {real("train.lr"), count("train.batch_size"), count("train.max_len"), real("train.l2"),
            real("train.dropout"), count("train.dim")};
  }

  bool grid_enabled() const {
    for (const char* k : {"grid.lr", "grid.batch_size", "grid.max_len", "grid.l2", "grid.dropout", "grid.dim"})
      if (!list(k).empty()) return true;
    return false;
  }

  /// Axes left empty fall back to the single train.* value.
  GridSpec grid() const {
    GridSpec g = GridSpec::single(train_hyper());
    if (auto v = reals("grid.lr"); !v.empty()) g.lr = v;
    if (auto v = counts("grid.batch_size"); !v.empty()) g.batch_size = v;
    if (auto v = counts("grid.max_len"); !v.empty()) g.max_len = v;
    if (auto v = reals("grid.l2"); !v.empty()) g.l2 = v;
    if (auto v = reals("grid.dropout"); !v.empty()) g.dropout = v;
    if (auto v = counts("grid.dim"); !v.empty()) g.dim = v;
    return g;
  }

  FinalConfig final_config() const {
    FinalConfig f;
    const auto& s = str("train.schedule");
    if (s == "auto_decay") f.schedule = ScheduleKind::kAutoDecay;
    else if (s == "cosine") f.schedule = ScheduleKind::kCosine;
    else throw UsageError("train.schedule must be auto_decay or cosine, got '" + s + "'");
    f.auto_decay.init_rate = real("train.lr");
    f.auto_decay.warmup_epochs = count("decay.warmup_epochs");
    f.auto_decay.warmup_factor = real("decay.warmup_factor");
    f.auto_decay.decay_factor = real("decay.factor");
    f.auto_decay.window = count("decay.window");
    f.auto_decay.max_decays = count("decay.max_decays");
    f.auto_decay.finish_epochs = count("decay.finish_epochs");
    f.cosine_lr_min = real("train.lr_min");
    f.epochs = count("train.epochs");
    f.max_epochs = count("train.max_epochs");
    f.finish_phase = flag("train.finish");
    f.model = model();
    f.seed = u64("seed");
    return f;
  }

  GridConfig grid_config() const {
    GridConfig g;
    g.budget = count("grid.budget");
    g.final = final_config();
    g.workers = count("workers");
    return g;
  }

  NliConfig nli() const {
    NliConfig n;
    n.hp = train_hyper();
    n.penalty = real("nli.penalty");
    n.epochs = count("train.epochs");
    n.lr_min = real("nli.lr_min");
    n.pool_queries = count("nli.pool_queries");
    n.fc_dim = count("nli.fc_dim");
    n.fc_layers = count("nli.fc_layers");
    n.model = model();
    n.seed = u64("seed");
    return n;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static double parse_real(const std::string& key, const std::string& v) {
    double x = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
    if (v.empty() || r.ec != std::errc{} || r.ptr != v.data() + v.size()) {
      throw UsageError("config key " + key + ": expected a number, got '" + v + "'");
    }
    return x;
  }

  static std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t x = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
    if (v.empty() || r.ec != std::errc{} || r.ptr != v.data() + v.size()) {
      throw UsageError("config key " + key + ": expected a non-negative integer, got '" + v + "'");
    }
    return x;
  }

  static std::size_t parse_count(const std::string& key, const std::string& v) {
    return static_cast<std::size_t>(parse_u64(key, v));
  }

  std::map<std::string, std::string> values_;
};

}  // namespace textnas
