// textnas command-line driver. Exit codes: 0 success, 2 usage or data error,
// 3 resource cap, 1 anything unexpected.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "textnas/canonical.hpp"
#include "textnas/checkpoint.hpp"
#include "textnas/config.hpp"
#include "textnas/pipeline.hpp"

namespace fs = std::filesystem;
using namespace textnas;

namespace {

constexpr const char* kDoneMarker = "DONE";

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string general(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw DataError(what + " not found: " + path);
}

// ---------------------------------------------------------------------------
// Common flags

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string out;
};

void add_common(CLI::App* sub, CommonFlags& f, bool needs_out) {
  sub->add_option("--config", f.config, "flat key = value config file");
  sub->add_option("--seed", f.seed, "overrides the config seed");
  sub->add_option("--workers", f.workers, "overrides the config worker count");
  auto* o = sub->add_option("--out", f.out, "run directory");
  if (needs_out) o->required();
}

RunConfig load_config(const CommonFlags& f) {
  RunConfig cfg;
  if (!f.config.empty()) cfg.load(f.config);
  if (f.seed) cfg.set("seed", std::to_string(*f.seed));
  if (f.workers) cfg.set("workers", std::to_string(*f.workers));
  if (cfg.count("workers") == 0) throw UsageError("workers must be >= 1");
  return cfg;
}

/// Refuses a completed run directory, then creates it and records the config.
fs::path open_run_dir(const std::string& out, const RunConfig& cfg) {
  const fs::path dir(out);
  if (fs::exists(dir / kDoneMarker)) {
    throw UsageError("run directory " + out + " is complete; choose a new --out");
  }
  fs::create_directories(dir);
  write_file(dir / "config.txt", cfg.dump());
  return dir;
}

void mark_done(const fs::path& dir) { write_file(dir / kDoneMarker, "ok\n"); }

// ---------------------------------------------------------------------------
// Data

struct Task {
  PreparedTask prepared;
  std::optional<EmbeddingMatrix> embeddings;
  TaskData& data() { return prepared.data; }
};

/// Loads every split named by the config. Checks all paths before reading.
std::unique_ptr<Task> load_task(const RunConfig& cfg) {
  const auto train_path = cfg.str("data.train");
  if (train_path.empty()) throw UsageError("data.train is not set");
  const auto valid_path = cfg.str("data.valid"), test_path = cfg.str("data.test");
  require_file(train_path, "training data");
  if (!valid_path.empty()) require_file(valid_path, "validation data");
  if (!test_path.empty()) require_file(test_path, "test data");
  const auto emb_paths = cfg.list("data.embeddings");
  for (const auto& p : emb_paths) require_file(p, "embedding file");

  DatasetOptions opt;
  opt.paired = cfg.flag("data.paired");
  Corpus train = load_dataset(train_path, opt);
  if (train.empty()) throw DataError("training data " + train_path + " has no rows");
  Corpus valid, test;
  valid.paired = test.paired = opt.paired;
  if (valid_path.empty()) {
    auto [tr, va] = split_validation(train, cfg.real("data.valid_fraction"), cfg.u64("seed") ^ 0x5A11D);
    train = std::move(tr);
    valid = std::move(va);
  } else {
    valid = load_dataset(valid_path, opt);
  }
  if (!test_path.empty()) test = load_dataset(test_path, opt);

  std::size_t classes = cfg.count("data.num_classes");
  if (opt.paired) classes = 3;
  if (classes == 0) classes = static_cast<std::size_t>(train.max_label() + 1);
  if (classes < 2) throw DataError("training data has fewer than 2 classes");

  auto task = std::make_unique<Task>();
  task->prepared = prepare_task(train, valid, test, classes, cfg.count("data.min_freq"));
  if (!emb_paths.empty()) {
    Rng rng = Rng(cfg.u64("seed")).substream("embeddings");
    task->embeddings = load_embeddings(emb_paths, task->prepared.vocab, rng);
    task->data().embeddings = &*task->embeddings;
  }
  return task;
}

// ---------------------------------------------------------------------------
// Checkpoint metadata

std::string join_lines(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "\n" : "") + v[i];
  return s;
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string line;
  while (std::getline(is, line)) out.push_back(line);
  return out;
}

void put_net_meta(Checkpoint& ck, const SuperNetConfig& c) {
  auto& m = ck.meta;
  m["net.layers"] = std::to_string(c.encoder.num_layers);
  m["net.dim"] = std::to_string(c.encoder.dim);
  m["net.emb_dim"] = std::to_string(c.encoder.emb_dim);
  m["net.max_len"] = std::to_string(c.encoder.max_len);
  m["net.batch_size"] = std::to_string(c.encoder.batch_size);
  m["net.dropout"] = general(c.encoder.dropout_ratio);
  m["net.heads"] = std::to_string(c.encoder.attention.num_heads);
  m["net.vocab_size"] = std::to_string(c.vocab_size);
  m["net.num_classes"] = std::to_string(c.num_classes);
  m["net.head"] = c.head == HeadKind::kNli ? "nli" : "classification";
  m["net.pool_queries"] = std::to_string(c.pool_queries);
  m["net.fc_dim"] = std::to_string(c.fc_dim);
  m["net.fc_layers"] = std::to_string(c.fc_layers);
}

const std::string& meta_at(const Checkpoint& ck, const std::string& key) {
  auto it = ck.meta.find(key);
  if (it == ck.meta.end()) throw FormatError("checkpoint metadata lacks " + key);
  return it->second;
}

std::size_t meta_count(const Checkpoint& ck, const std::string& key) {
  const auto& v = meta_at(ck, key);
  try {
    return std::stoul(v);
  } catch (const std::logic_error&) {
    throw FormatError("checkpoint metadata " + key + " is not a count: '" + v + "'");
  }
}

SuperNetConfig net_from_meta(const Checkpoint& ck) {
  SuperNetConfig c;
  c.encoder.num_layers = meta_count(ck, "net.layers");
  c.encoder.dim = meta_count(ck, "net.dim");
  c.encoder.emb_dim = meta_count(ck, "net.emb_dim");
  c.encoder.max_len = meta_count(ck, "net.max_len");
  c.encoder.batch_size = meta_count(ck, "net.batch_size");
  c.encoder.dropout_ratio = std::stod(meta_at(ck, "net.dropout"));
  c.encoder.attention.num_heads = meta_count(ck, "net.heads");
  c.vocab_size = meta_count(ck, "net.vocab_size");
  c.num_classes = meta_count(ck, "net.num_classes");
  const auto& head = meta_at(ck, "net.head");
  if (head != "nli" && head != "classification") throw FormatError("unknown head kind '" + head + "'");
  c.head = head == "nli" ? HeadKind::kNli : HeadKind::kClassification;
  c.pool_queries = meta_count(ck, "net.pool_queries");
  c.fc_dim = meta_count(ck, "net.fc_dim");
  c.fc_layers = meta_count(ck, "net.fc_layers");
  return c;
}

// ---------------------------------------------------------------------------
// Reports

std::string confusion_report(const EvalResult& r) {
  std::ostringstream os;
  os << "accuracy=" << fixed6(r.accuracy()) << " correct=" << r.correct << " total=" << r.total << '\n';
  os << "confusion (rows: true class, columns: predicted)\n";
  os << "true\\pred";
  for (std::size_t c = 0; c < r.confusion.size(); ++c) os << ' ' << c;
  os << '\n';
  for (std::size_t y = 0; y < r.confusion.size(); ++y) {
    os << y;
    for (auto n : r.confusion[y]) os << ' ' << n;
    os << '\n';
  }
  return os.str();
}

std::string metrics_csv(const std::vector<EpochMetrics>& ms) {
  std::ostringstream os;
  os << "epoch,phase,lr,train_loss,valid_acc\n";
  for (const auto& m : ms)
    os << m.epoch << ',' << m.phase << ',' << general(m.lr) << ',' << general(m.train_loss) << ','
       << fixed6(m.valid_acc) << '\n';
  return os.str();
}

std::string grid_row(std::size_t idx, const TrainHyper& hp, double acc) {
  std::ostringstream os;
  os << idx << ',' << general(hp.lr) << ',' << hp.batch_size << ',' << hp.max_len << ',' << general(hp.l2) << ','
     << general(hp.dropout) << ',' << hp.dim << ',' << fixed6(acc) << '\n';
  return os.str();
}

constexpr const char* kGridHeader = "point,lr,batch_size,max_len,l2,dropout,dim,valid_acc\n";

// ---------------------------------------------------------------------------
// Verbs

int cmd_search(const CommonFlags& f) {
  auto cfg = load_config(f);
  const auto sc = cfg.search();
  sc.validate();
  auto task = load_task(cfg);
  auto& data = task->data();
  if (data.train.paired) throw UsageError("search runs on single-sentence classification data");
  const auto dir = open_run_dir(f.out, cfg);

  const auto net_cfg = search_net_config(sc, data);
  SuperNet<float> net(net_cfg, Rng(sc.seed).substream("supernet").next_u64());
  if (data.embeddings) net.set_embeddings(*data.embeddings);
  Controller<double> ctrl(search_controller_config(sc), Rng(sc.seed).substream("controller-init").next_u64());

  std::ofstream history(dir / "history.csv", std::ios::binary);
  history << "epoch,candidate_idx,encoding,reward\n";
  double best = -1;
  SearchHooks hooks;
  hooks.on_epoch = [&](std::size_t epoch, const std::vector<SearchRecord>& recs) {
    double mean = 0;
    for (const auto& r : recs) {
      history << r.epoch << ',' << r.candidate << ',' << to_compact(r.encoding) << ',' << fixed6(r.reward) << '\n';
      mean += r.reward;
      best = std::max(best, r.reward);
    }
    history.flush();
    mean /= static_cast<double>(recs.size());
    std::cout << "epoch " << epoch << "/" << sc.epochs << " mean_reward=" << fixed6(mean)
              << " best_reward=" << fixed6(best) << std::endl;
  };
  const auto res = search(net, ctrl, data, sc, hooks);
  history.close();

  std::ostringstream loss;
  loss << "epoch,train_loss\n";
  for (std::size_t e = 0; e < res.train_loss.size(); ++e) loss << e + 1 << ',' << general(res.train_loss[e]) << '\n';
  write_file(dir / "search_loss.csv", loss.str());

  std::string arch = "# best reward " + fixed6(res.best_reward) + "\n" + serialize(res.best);
  write_file(dir / "best.arch", arch);

  Checkpoint sn;
  sn.meta["kind"] = "supernet";
  sn.meta["vocab"] = join_lines(task->prepared.vocab.tokens());
  put_net_meta(sn, net_cfg);
  sn.add_store(net.store());
  write_checkpoint((dir / "supernet.ckpt").string(), sn);

  Checkpoint cc;
  cc.meta["kind"] = "controller";
  cc.meta["baseline"] = general(ctrl.baseline().value);
  cc.meta["space.layers"] = std::to_string(sc.space.num_layers);
  cc.meta["space.lookback"] = std::to_string(sc.space.lookback.value_or(0));
  cc.add_store(ctrl.store());
  write_checkpoint((dir / "controller.ckpt").string(), cc, true);

  mark_done(dir);
  std::cout << "best reward " << fixed6(res.best_reward) << "\n" << serialize(res.best);
  return 0;
}

int cmd_train(const CommonFlags& f, const std::string& arch_path) {
  auto cfg = load_config(f);
  const auto enc = deserialize(read_file(arch_path));
  const auto space = cfg.space();
  if (auto vs = validate(enc, space); !vs.empty()) {
    std::cerr << "error: " << arch_path << " violates the search space:\n" << describe(vs);
    return 2;
  }
  auto task = load_task(cfg);
  auto& data = task->data();
  const bool paired = data.train.paired;
  if (paired && cfg.grid_enabled()) throw UsageError("grid search is only available for classification data");
  auto final_cfg = cfg.final_config();
  std::unique_ptr<SuperNet<float>> warm;
  if (const auto& path = cfg.str("train.warm_start"); !path.empty()) {
    if (paired) throw UsageError("train.warm_start applies to classification training");
    const auto ck = read_checkpoint(path);
    if (meta_at(ck, "kind") != "supernet") throw FormatError(path + " is not a supernet checkpoint");
    if (split_lines(meta_at(ck, "vocab")) != task->prepared.vocab.tokens()) {
      throw DataError("warm-start supernet was trained with a different vocabulary");
    }
    warm = std::make_unique<SuperNet<float>>(net_from_meta(ck), 0);
    ck.apply_to(warm->store());
    final_cfg.warm_start = warm.get();
  }
  const auto dir = open_run_dir(f.out, cfg);
  write_file(dir / "arch.txt", serialize(enc));

  std::string grid = kGridHeader;
  std::vector<EpochMetrics> metrics;
  EvalResult test;
  std::unique_ptr<SuperNet<float>> model;
  if (paired) {
    const auto nc = cfg.nli();
    auto r = nli_train(enc, data, nc);
    grid += grid_row(0, nc.hp, r.metrics.empty() ? 0.0 : r.metrics.back().valid_acc);
    metrics = std::move(r.metrics);
    test = r.test;
    model = std::move(r.model);
  } else {
    TrainHyper hp = cfg.train_hyper();
    if (cfg.grid_enabled()) {
      const auto g = grid_search(enc, cfg.grid(), data, cfg.grid_config());
      for (std::size_t i = 0; i < g.points.size(); ++i) grid += grid_row(i, g.points[i].hp, g.points[i].valid_acc);
      hp = g.points[g.best].hp;
      std::cout << "grid: " << g.points.size() << " points, best " << g.best << " valid_acc="
                << fixed6(g.points[g.best].valid_acc) << std::endl;
    }
    auto r = train_final(enc, hp, data, final_cfg);
    if (!cfg.grid_enabled()) grid += grid_row(0, hp, r.valid_acc);
    metrics = std::move(r.metrics);
    test = r.test;
    model = std::move(r.model);
  }
  write_file(dir / "grid.csv", grid);
  write_file(dir / "metrics.csv", metrics_csv(metrics));
  for (const auto& m : metrics)
    std::cout << "epoch " << m.epoch << " " << m.phase << " lr=" << general(m.lr) << " loss=" << general(m.train_loss)
              << " valid_acc=" << fixed6(m.valid_acc) << '\n';

  Checkpoint ck;
  ck.meta["kind"] = "model";
  ck.meta["arch"] = serialize(enc);
  ck.meta["vocab"] = join_lines(task->prepared.vocab.tokens());
  ck.meta["paired"] = paired ? "true" : "false";
  put_net_meta(ck, model->config());
  ck.add_store(model->store());
  write_checkpoint((dir / "model.ckpt").string(), ck);

  const std::string report = data.test.empty() ? std::string("no test split\n") : confusion_report(test);
  write_file(dir / "result.txt", report);
  std::cout << report;
  mark_done(dir);
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path) {
  const auto ck = read_checkpoint(ckpt_path);
  if (meta_at(ck, "kind") != "model") throw FormatError(ckpt_path + " is not a trained-model checkpoint");
  const auto enc = deserialize(meta_at(ck, "arch"));
  const auto vocab = Vocabulary::from_tokens(split_lines(meta_at(ck, "vocab")));
  const auto net_cfg = net_from_meta(ck);
  if (net_cfg.vocab_size != vocab.size()) throw FormatError("checkpoint vocabulary size disagrees with its metadata");
  SuperNet<float> net(net_cfg, 0, &enc);
  ck.apply_to(net.store());

  DatasetOptions opt;
  opt.paired = meta_at(ck, "paired") == "true";
  opt.num_classes = net_cfg.head == HeadKind::kNli ? 3 : net_cfg.num_classes;
  require_file(data_path, "dataset");
  const auto corpus = load_dataset(data_path, opt);
  if (corpus.empty()) throw DataError("dataset " + data_path + " has no rows");
  const auto encoded = EncodedCorpus::from(corpus, vocab);
  const auto r = evaluate(net, enc, make_batches(encoded, net_cfg.encoder.batch_size, net_cfg.encoder.max_len));
  std::cout << confusion_report(r);
  return 0;
}

struct SpaceFlags {
  std::string config;
  std::optional<std::size_t> layers;
  std::optional<std::size_t> lookback;
  std::uint64_t cap = 1000000;
  std::size_t count = 1;
  std::uint64_t seed = 1;
  std::string arch;
};

SpaceConfig space_from(const SpaceFlags& f) {
  RunConfig cfg;
  if (!f.config.empty()) cfg.load(f.config);
  if (f.layers) cfg.set("space.layers", std::to_string(*f.layers));
  if (f.lookback) cfg.set("space.lookback", std::to_string(*f.lookback));
  auto s = cfg.space();
  s.validate();
  return s;
}

int cmd_space(const std::string& verb, const SpaceFlags& f) {
  if (verb == "dot") {
    const auto enc = deserialize(read_file(f.arch));
    if (auto vs = validate(enc, SpaceConfig{enc.num_layers(), std::nullopt}); !vs.empty()) {
      std::cerr << "error: " << f.arch << " is not a valid architecture:\n" << describe(vs);
      return 2;
    }
    std::cout << export_dot(enc);
    return 0;
  }
  const auto s = space_from(f);
  if (verb == "count") {
    std::cout << count_encodings(s).str() << '\n';
  } else if (verb == "enumerate") {
    for_each_encoding(s, kAllLayerOps, f.cap, [](const ArchitectureEncoding& e) { std::cout << to_compact(e) << '\n'; });
  } else if (verb == "sample") {
    Rng rng = Rng(f.seed).substream("space-sample");
    for (std::size_t i = 0; i < f.count; ++i) std::cout << to_compact(sample_uniform(s, rng)) << '\n';
  } else if (verb == "canon-stats") {
    const auto st = duplication_stats(s, kAllLayerOps, f.cap);
    std::cout << "encodings=" << st.encodings << "\ndistinct=" << st.distinct
              << "\nduplicates=" << st.encodings - st.distinct << '\n';
  }
  return 0;
}

/// Writes toy splits plus a small-scale config that points at them.
int cmd_toy(const CommonFlags& f, const std::string& kind, std::size_t size) {
  ToySpec spec;
  if (kind == "nli") spec.kind = ToyKind::kNli;
  else if (kind != "classification") throw UsageError("--kind must be classification or nli");
  spec.size = size;
  spec.seed = f.seed.value_or(1);
  const auto splits = toy_splits(spec);
  const fs::path dir(f.out);
  fs::create_directories(dir);
  write_dataset((dir / "train.csv").string(), splits.train);
  write_dataset((dir / "valid.csv").string(), splits.valid);
  write_dataset((dir / "test.csv").string(), splits.test);

  RunConfig cfg;
  const auto abs = fs::absolute(dir);
  cfg.set("seed", std::to_string(spec.seed));
  cfg.set("data.train", (abs / "train.csv").string());
  cfg.set("data.valid", (abs / "valid.csv").string());
  cfg.set("data.test", (abs / "test.csv").string());
  cfg.set("model.emb_dim", "16");
  cfg.set("model.heads", "4");
  cfg.set("space.layers", "4");
  cfg.set("search.epochs", "20");
  cfg.set("search.candidates", "10");
  cfg.set("search.eval_batch", "64");
  cfg.set("search.batch_size", "32");
  cfg.set("search.max_len", "24");
  cfg.set("search.dim", "16");
  cfg.set("controller.hidden", "32");
  cfg.set("train.schedule", "cosine");
  cfg.set("train.lr", "0.005");
  cfg.set("train.batch_size", "32");
  cfg.set("train.max_len", "24");
  cfg.set("train.dim", "16");
  cfg.set("train.epochs", "10");
  if (spec.kind == ToyKind::kNli) {
    cfg.set("data.paired", "true");
    cfg.set("train.lr", "0.003");
    cfg.set("train.l2", "1e-6");
    cfg.set("train.dropout", "0.1");
    cfg.set("nli.penalty", "0.01");
    cfg.set("nli.pool_queries", "2");
    cfg.set("nli.fc_dim", "64");
    cfg.set("nli.fc_layers", "1");
  }
  write_file(dir / "toy.cfg", cfg.dump());
  std::cout << "wrote " << splits.train.size() << "/" << splits.valid.size() << "/" << splits.test.size()
            << " rows and " << (dir / "toy.cfg").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TextNAS: architecture search for text representation"};
  bool dump_defaults = false;
  app.add_flag("--dump-defaults", dump_defaults, "print every config key with its default");
  app.require_subcommand(0, 1);

  CommonFlags search_f, train_f, toy_f;
  auto* search_cmd = app.add_subcommand("search", "run the weight-shared architecture search");
  add_common(search_cmd, search_f, true);

  std::string arch_path;
  auto* train_cmd = app.add_subcommand("train", "grid search and retrain one architecture from scratch");
  add_common(train_cmd, train_f, true);
  train_cmd->add_option("--arch", arch_path, "architecture file")->required();

  std::string ckpt_path, eval_data;
  auto* eval_cmd = app.add_subcommand("eval", "accuracy and confusion counts of a trained model");
  eval_cmd->add_option("--checkpoint", ckpt_path, "model.ckpt from a train run")->required();
  eval_cmd->add_option("--data", eval_data, "CSV dataset")->required();

  SpaceFlags sf;
  auto* space_cmd = app.add_subcommand("space", "inspect the search space");
  space_cmd->require_subcommand(1);
  for (const char* verb : {"count", "enumerate", "sample", "canon-stats"}) {
    auto* v = space_cmd->add_subcommand(verb);
    v->add_option("--config", sf.config, "config providing space.layers and space.lookback");
    v->add_option("--layers", sf.layers, "N");
    v->add_option("--lookback", sf.lookback, "k; 0 means unbounded");
    if (std::string(verb) == "enumerate" || std::string(verb) == "canon-stats")
      v->add_option("--cap", sf.cap, "refuse spaces with more encodings than this");
    if (std::string(verb) == "sample") {
      v->add_option("--count", sf.count, "encodings to draw");
      v->add_option("--seed", sf.seed, "sampling seed");
    }
  }
  auto* dot_cmd = space_cmd->add_subcommand("dot", "Graphviz export of an architecture file");
  dot_cmd->add_option("arch", sf.arch, "architecture file")->required();

  std::string toy_kind = "classification";
  std::size_t toy_size = 2000;
  auto* toy_cmd = app.add_subcommand("toy", "write a synthetic dataset and a matching config");
  add_common(toy_cmd, toy_f, true);
  toy_cmd->add_option("--kind", toy_kind, "classification or nli");
  toy_cmd->add_option("--size", toy_size, "rows before splitting");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (dump_defaults) {
      std::cout << RunConfig().dump(true);
      return 0;
    }
    if (*search_cmd) return cmd_search(search_f);
    if (*train_cmd) return cmd_train(train_f, arch_path);
    if (*eval_cmd) return cmd_eval(ckpt_path, eval_data);
    if (*toy_cmd) return cmd_toy(toy_f, toy_kind, toy_size);
    if (*space_cmd) {
      for (auto* sub : space_cmd->get_subcommands()) return cmd_space(sub->get_name(), sf);
    }
    std::cerr << app.help();
    return 2;
  } catch (const ResourceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
