// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// fails. Usage: acceptance <textnas-cli> [AC...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "arch_oracles.hpp"
#include "gradcheck.hpp"
#include "textnas/canonical.hpp"
#include "textnas/controller.hpp"
#include "textnas/layers.hpp"
#include "textnas/pipeline.hpp"
#include "textnas/schedule.hpp"

using namespace textnas;
using textnas::testing::grad_check;
using textnas::testing::project;
using textnas::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string cli_path;

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string fixture(const std::string& name) { return read_file(fs::path(TEXTNAS_TEST_DATA) / name); }

// ---------------------------------------------------------------------------
// AC1

struct GradTally {
  double f32 = 0, f64 = 0;
  std::string worst32, worst64;

  void add(const std::string& name, double e32, double e64) {
    if (e32 > f32) f32 = e32, worst32 = name;
    if (e64 > f64) f64 = e64, worst64 = name;
  }
};

template <typename F>
void check_op(GradTally& t, const std::string& name, F f, const std::vector<Tensor<double>>& in) {
  t.add(name, grad_check<float>(f, in), grad_check<double>(f, in));
}

TextBatch random_batch_of(std::size_t batch, std::size_t len, std::size_t vocab, Rng& rng, bool paired,
                          int classes) {
  TextBatch b;
  b.batch = batch;
  b.max_len = len;
  auto fill = [&](std::vector<std::int32_t>& ids, std::vector<std::size_t>& lengths) {
    for (std::size_t r = 0; r < batch; ++r) {
      const std::size_t n = 2 + rng.below(len - 1);
      for (std::size_t t = 0; t < len; ++t)
        ids.push_back(t < n ? static_cast<std::int32_t>(2 + rng.below(vocab - 2)) : 0);
      lengths.push_back(n);
    }
  };
  fill(b.ids, b.lengths);
  if (paired) fill(b.ids_b, b.lengths_b);
  for (std::size_t r = 0; r < batch; ++r) b.labels.push_back(static_cast<int>(rng.below(classes)));
  return b;
}

template <typename T>
void scramble(SuperNet<T>& net, std::uint64_t seed, double bound = 0.5) {
  Rng rng(seed);
  for (auto& [name, t] : net.store().all()) {
    const bool var = name.size() > 7 && name.substr(name.size() - 7) == ".bn_var";
    for (auto& v : t.data()) v = static_cast<T>(var ? rng.uniform(0.5, 2.0) : rng.uniform(-bound, bound));
  }
}

template <typename T, typename U>
void copy_weights(SuperNet<T>& dst, const SuperNet<U>& src) {
  for (auto& [name, t] : dst.store().all()) {
    const auto from = src.store().at(name);
    auto d = t.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(from[i]);
  }
}

template <typename T>
Tensor<T> head_loss(SuperNet<T>& net, Tape<T>& tape, const ArchitectureEncoding& enc, const TextBatch& b) {
  nn::Context<T> ctx{tape, false, ops::NormMode::kBatchStats};
  if (net.config().head == HeadKind::kNli) {
    auto out = net.pair_logits(ctx, enc, b);
    return ops::add(tape, ops::cross_entropy(tape, out.logits, b.labels), out.penalty);
  }
  return ops::cross_entropy(tape, net.logits(ctx, enc, b), b.labels);
}

// Whole child network through a head: analytic gradient in T against
// central differences of a double copy, over sampled parameter coordinates.
template <typename T>
double head_grad_error(const SuperNet<double>& ref_in, const ArchitectureEncoding& enc, const TextBatch& b) {
  SuperNet<double> ref(ref_in.config(), 0, &enc);
  copy_weights(ref, ref_in);
  SuperNet<T> net(ref_in.config(), 0, &enc);
  copy_weights(net, ref);
  {
    Tape<T> tape;
    tape.backward(head_loss(net, tape, enc, b));
  }
  auto pt = net.child_parameters(enc);
  auto pd = ref.child_parameters(enc);
  Rng pick(5);
  const double h = 1e-3;
  double diff2 = 0, a2 = 0, n2 = 0;
  for (std::size_t k = 0; k < pd.size(); ++k) {
    for (int s = 0; s < 6; ++s) {
      const std::size_t c = pick.below(pd[k].numel());
      auto eval = [&](double delta) {
        auto d = pd[k].data();
        const double keep = d[c];
        d[c] = keep + delta;
        Tape<double> off(false);
        const double v = head_loss(ref, off, enc, b).item();
        d[c] = keep;
        return v;
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      const double analytic = pt[k].has_grad() ? static_cast<double>(pt[k].grad()[c]) : 0.0;
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
  }
  return std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
}

Outcome ac1() {
  const auto t0 = std::chrono::steady_clock::now();
  GradTally t;
  Rng rng(101);
  for (std::size_t w : {1u, 3u, 5u, 7u}) {
    auto f = [](auto& tape, auto& x) { return project(tape, ops::conv1d(tape, x[0], x[1], x[2])); };
    check_op(t, "conv" + std::to_string(w), f,
             {random_tensor({2, 3, 8}, rng), random_tensor({3, 3, w}, rng), random_tensor({3}, rng)});
  }
  for (auto kind : {ops::PoolKind::kMax, ops::PoolKind::kAvg}) {
    auto f = [kind](auto& tape, auto& x) { return project(tape, ops::pool1d(tape, x[0], kind)); };
    check_op(t, kind == ops::PoolKind::kMax ? "maxpool" : "avgpool", f, {random_tensor({2, 3, 7}, rng)});
  }
  {
    ParameterStore<double> store;
    auto g = nn::BiGru<double>::create(store, "g", 3, rng);
    std::vector<Tensor<double>> in = {random_tensor({2, 3, 4}, rng)};
    for (auto& p : g.parameters()) in.push_back(p.clone());
    auto f = [](auto& tape, auto& x) {
      using T = typename std::decay_t<decltype(x[0])>::value_type;
      nn::BiGru<T> m;
      m.fwd = {x[1], x[2], x[3], x[4]};
      m.bwd = {x[5], x[6], x[7], x[8]};
      nn::Context<T> ctx{tape};
      return project(tape, m.forward(ctx, x[0]));
    };
    check_op(t, "gru", f, in);
  }
  {
    ParameterStore<double> store;
    auto a = nn::SelfAttention<double>::create(store, "a", 4, {.num_heads = 2}, rng);
    std::vector<Tensor<double>> in = {random_tensor({2, 4, 3}, rng)};
    for (auto& p : a.parameters()) in.push_back(random_tensor(p.shape(), rng, -0.8, 0.8));
    const std::vector<std::uint8_t> valid = {1, 1, 0, 1, 1, 1};
    auto f = [&valid](auto& tape, auto& x) {
      using T = typename std::decay_t<decltype(x[0])>::value_type;
      nn::SelfAttention<T> m;
      m.heads = 2;
      m.q = {x[1], x[2]};
      m.k = {x[3], x[4]};
      m.v = {x[5], x[6]};
      m.o = {x[7], x[8]};
      m.ln_scale = x[9];
      m.ln_shift = x[10];
      nn::Context<T> ctx{tape};
      return project(tape, m.forward(ctx, x[0], valid));
    };
    check_op(t, "attention", f, in);
  }
  for (auto mode : {ops::NormMode::kTrain, ops::NormMode::kBatchStats, ops::NormMode::kEval}) {
    auto f = [mode](auto& tape, auto& x) {
      using T = typename std::decay_t<decltype(x[0])>::value_type;
      auto st = ops::BatchNormState<T>::create(2);
      st.scale = x[1];
      st.shift = x[2];
      st.running_mean[0] = T(0.3);
      st.running_var[1] = T(2.0);
      return project(tape, ops::batchnorm1d(tape, x[0], st, mode));
    };
    check_op(t, "batchnorm", f, {random_tensor({3, 2, 4}, rng), random_tensor({2}, rng), random_tensor({2}, rng)});
  }
  {
    auto f = [](auto& tape, auto& x) { return project(tape, ops::layernorm(tape, x[0], x[1], x[2])); };
    check_op(t, "layernorm", f, {random_tensor({3, 5}, rng), random_tensor({5}, rng), random_tensor({5}, rng)});
  }
  {
    ParameterStore<double> store;
    auto pool = nn::AttentionPooling<double>::create(store, "p", 3, 2, rng);
    const std::vector<std::uint8_t> valid = {1, 1, 1, 0, 1, 1, 1, 1};
    auto f = [&valid](auto& tape, auto& x) {
      using T = typename std::decay_t<decltype(x[0])>::value_type;
      nn::AttentionPooling<T> p;
      p.key = {x[1], x[2]};
      p.queries = x[3];
      auto out = p.forward(tape, x[0], valid);
      return ops::add(tape, project(tape, out.pooled), nn::AttentionPooling<T>::penalty(tape, out.attention));
    };
    check_op(t, "attention-pooling", f,
             {random_tensor({2, 3, 4}, rng), pool.key.weight.clone(), pool.key.bias.clone(), pool.queries.clone()});
  }
  {
    const std::vector<int> labels = {0, 3, 1};
    auto f = [&labels](auto& tape, auto& x) { return ops::cross_entropy(tape, x[0], labels); };
    check_op(t, "cross-entropy", f, {random_tensor({3, 4}, rng, -2, 2)});
  }
  {
    SuperNetConfig c;
    c.encoder.num_layers = 3;
    c.encoder.dim = 4;
    c.encoder.emb_dim = 3;
    c.encoder.max_len = 5;
    c.encoder.attention.num_heads = 2;
    c.vocab_size = 12;
    c.num_classes = 3;
    ArchitectureEncoding enc;
    enc.layers = {{LayerOpKind::kConv3, 0, {}}, {LayerOpKind::kGru, 1, {0}}, {LayerOpKind::kSelfAttention, 2, {1}}};
    SuperNet<double> cls(c, 7, &enc);
    scramble(cls, 8);
    const auto b = random_batch_of(3, 5, 12, rng, false, 3);
    t.add("classification-head", head_grad_error<float>(cls, enc, b), head_grad_error<double>(cls, enc, b));
    c.head = HeadKind::kNli;
    c.pool_queries = 2;
    c.fc_dim = 6;
    c.fc_layers = 2;
    SuperNet<double> nli(c, 9, &enc);
    scramble(nli, 10);
    const auto pb = random_batch_of(3, 5, 12, rng, true, 3);
    t.add("nli-head", head_grad_error<float>(nli, enc, pb), head_grad_error<double>(nli, enc, pb));
  }
  {
    ControllerConfig cc;
    cc.space = {3, 2};
    cc.hidden = 5;
    Controller<double> base(cc, 2);
    Rng w(3);
    for (auto& p : base.parameters())
      for (auto& v : p.data()) v = w.uniform(-0.8, 0.8);
    const auto enc = base.sample(rng).encoding;
    std::vector<Tensor<double>> in;
    for (const auto& p : base.parameters()) in.push_back(p.clone());
    auto f = [&](auto& tape, auto& xs) {
      using U = typename std::decay_t<decltype(xs[0])>::value_type;
      Controller<U> c(cc, 2);
      c.bind(xs);
      auto g = c.log_prob_graph(tape, enc);
      return ops::add(tape, g.log_prob, ops::scale(tape, g.entropy, U(0.3)));
    };
    check_op(t, "controller-log-prob", f, in);
  }
  const double secs = seconds_since(t0);
  return {t.f32 <= 1e-3 && t.f64 <= 1e-5 && secs < 120,
          fmt("worst f32 rel err %.2e (%s), f64 %.2e (%s), %.1fs", t.f32, t.worst32.c_str(), t.f64,
              t.worst64.c_str(), secs)};
}

// ---------------------------------------------------------------------------

Outcome ac2() {
  const CosineSchedule s{0.005, 0.0001, 10};
  const double pi = std::acos(-1.0);
  double worst = 0;
  Rng rng(202);
  for (int i = 0; i < 1000; ++i) {
    CosineSchedule r{rng.uniform(1e-3, 1.0), 0, rng.uniform(1.0, 50.0)};
    r.lr_min = r.lr_max * rng.uniform(0.0, 0.5);
    const double t = rng.uniform(0.0, r.period);
    const double want = r.lr_min + 0.5 * (r.lr_max - r.lr_min) * (1 + std::cos(t / r.period * pi));
    worst = std::max(worst, std::abs(cosine_lr(r, t) - want));
  }
  const double a = cosine_lr(s, 0), b = cosine_lr(s, 5), c = cosine_lr(s, 10);
  const bool consts = std::abs(a - 0.005) < 1e-12 && std::abs(b - 0.00255) < 1e-12 && std::abs(c - 0.0001) < 1e-12;
  return {worst <= 1e-12 && consts, fmt("max |diff| %.1e over 1000 points; T_cur 0/5/10 -> %.6g / %.6g / %.6g", worst,
                                       a, b, c)};
}

Outcome ac3() {
  bool ok = true;
  std::string detail;
  for (std::size_t n = 1; n <= 3; ++n)
    for (auto k : {std::optional<std::size_t>(1), std::optional<std::size_t>(2), std::optional<std::size_t>()}) {
      const SpaceConfig cfg{n, k};
      std::vector<std::string> enumerated;
      ArchitectureEncoding scratch;
      textnas::testing::generate(cfg, kNumLayerOps, 1, scratch, enumerated);
      const auto closed = count_encodings(cfg);
      if (closed != enumerated.size()) {
        ok = false;
        detail += fmt("N=%zu k=%s mismatch; ", n, k ? std::to_string(*k).c_str() : "inf");
      }
    }
  const auto n1 = count_encodings({1, 5}), n2 = count_encodings({2, 5});
  ok = ok && n1 == 16 && n2 == 1024;
  return {ok, detail + "closed form equals enumeration for N<=3, k in {1,2,inf}; N=1 -> " + n1.str() + ", N=2 -> " +
                  n2.str()};
}

Outcome ac4() {
  const auto a = deserialize(fixture("fig2a.arch")), b = deserialize(fixture("fig2b.arch"));
  const bool pair = canonicalize(a) == canonicalize(b) &&
                    textnas::testing::brute_canonical(a) == textnas::testing::brute_canonical(b);
  // frozen from the brute-force isomorphism oracle
  const std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> frozen = {{"2", {131072, 106752}},
                                                                                 {"inf", {196608, 140592}}};
  bool ok = pair;
  std::string detail = pair ? "duplicate construction pair shares one canonical DAG" : "duplicate construction pair differs";
  for (auto k : {std::optional<std::size_t>(2), std::optional<std::size_t>()}) {
    const std::string key = k ? std::to_string(*k) : "inf";
    std::set<std::string> slow;
    for_each_encoding(SpaceConfig{3, k}, kAllLayerOps, 1u << 20,
                      [&](const ArchitectureEncoding& e) { slow.insert(textnas::testing::brute_canonical(e)); });
    const auto st = duplication_stats(SpaceConfig{3, k}, kAllLayerOps, 1u << 20);
    ok = ok && st.distinct < st.encodings && st.distinct == slow.size() && st.encodings == frozen.at(key).first &&
         st.distinct == frozen.at(key).second;
    detail += fmt("; N=3 k=%s: %llu encodings, %llu distinct (oracle %zu)", key.c_str(),
                  static_cast<unsigned long long>(st.encodings), static_cast<unsigned long long>(st.distinct),
                  slow.size());
  }
  return {ok, detail};
}

Outcome ac5() {
  double worst_norm = 0, worst_trace = 0;
  for (std::size_t n : {1, 2})
    for (auto k : {std::optional<std::size_t>(1), std::optional<std::size_t>(2), std::optional<std::size_t>()}) {
      ControllerConfig cc;
      cc.space = {n, k};
      cc.hidden = 8;
      Controller<double> c(cc, 30 + n);
      Rng w(40 + n);
      for (auto& p : c.parameters())
        for (auto& v : p.data()) v = w.uniform(-1.5, 1.5);
      double total = 0;
      for_each_encoding(cc.space, kAllLayerOps, 1u << 20,
                        [&](const ArchitectureEncoding& e) { total += std::exp(c.log_prob(e)); });
      worst_norm = std::max(worst_norm, std::abs(total - 1.0));
    }
  ControllerConfig cc;
  cc.space = {5, 2};
  Controller<double> c(cc, 50);
  Rng rng(51);
  for (int s = 0; s < 50; ++s) {
    const auto tr = c.sample(rng);
    worst_trace = std::max(worst_trace, std::abs(tr.log_prob - c.log_prob(tr.encoding)));
  }
  return {worst_norm <= 1e-5 && worst_trace <= 1e-6,
          fmt("max |sum p - 1| %.2e (N<=2), max sampled vs teacher-forced log-prob gap %.2e", worst_norm,
              worst_trace)};
}

Outcome ac6() {
  const auto t0 = std::chrono::steady_clock::now();
  ControllerConfig cc;
  cc.space = {1, 5};
  Controller<double> c(cc, 17);
  Rng rng(18);
  auto p_target = [&] {
    double p = 0;
    for (std::vector<std::size_t> skips : {std::vector<std::size_t>{}, std::vector<std::size_t>{0}}) {
      ArchitectureEncoding e;
      e.layers = {{LayerOpKind::kGru, 0, skips}};
      p += std::exp(c.log_prob(e));
    }
    return p;
  };
  int reached = -1;
  for (int u = 1; u <= 500 && reached < 0; ++u) {
    std::vector<SampleTrace> tr;
    std::vector<double> rw;
    for (int s = 0; s < 10; ++s) {
      tr.push_back(c.sample(rng));
      rw.push_back(tr.back().encoding.layer(1).op == LayerOpKind::kGru ? 1.0 : 0.0);
    }
    c.reinforce_update(tr, rw);
    if (p_target() > 0.9) reached = u;
  }
  const double secs = seconds_since(t0);
  return {reached > 0 && secs < 60, fmt("P(gru) > 0.9 after %d updates (limit 500), %.2fs", reached, secs)};
}

Outcome ac7() {
  SuperNetConfig cfg;
  cfg.encoder.num_layers = 4;
  cfg.encoder.dim = 8;
  cfg.encoder.emb_dim = 5;
  cfg.encoder.max_len = 6;
  cfg.encoder.attention.num_heads = 2;
  cfg.vocab_size = 20;
  cfg.num_classes = 3;
  SuperNet<float> full(cfg, 71);
  scramble(full, 72);
  Rng rng(73);
  const auto b = random_batch_of(4, 6, 20, rng, false, 3);
  double worst = 0;
  for (int k = 0; k < 50; ++k) {
    const auto enc = sample_uniform(SpaceConfig{4, 5}, rng);
    SuperNet<float> alone(cfg, 999, &enc);
    copy_weights(alone, full);
    Tape<float> tape(false);
    nn::Context<float> ctx{tape, false, ops::NormMode::kEval};
    const auto x = full.logits(ctx, enc, b), y = alone.logits(ctx, enc, b);
    for (std::size_t i = 0; i < x.numel(); ++i) worst = std::max(worst, std::abs(double(x[i]) - double(y[i])));
  }
  return {worst <= 1e-5, fmt("max |supernet child - extracted network| %.2e over 50 encodings at N=4", worst)};
}

Outcome ac8() {
  const auto t0 = std::chrono::steady_clock::now();
  ToySpec toy;
  toy.vocab_size = 200;
  toy.num_classes = 4;
  toy.seed = 8;
  const auto task = toy_task(toy);
  SearchConfig sc;
  sc.space = {4, 5};
  sc.hp = {0.005, 32, 24, 2e-6, 0.5, 16};
  sc.model = {16, 4};
  sc.epochs = 20;
  sc.candidates = 10;
  sc.eval_batch = 64;
  sc.controller.hidden = 32;
  sc.seed = 8;
  SuperNet<float> net(search_net_config(sc, task.data), Rng(sc.seed).substream("supernet").next_u64());
  Controller<double> ctrl(search_controller_config(sc), Rng(sc.seed).substream("controller-init").next_u64());
  const auto found = search(net, ctrl, task.data, sc);

  FinalConfig fc;
  fc.schedule = ScheduleKind::kCosine;
  fc.epochs = 10;
  fc.model = sc.model;
  fc.seed = 8;
  const TrainHyper hp = sc.hp;
  const double winner = train_final(found.best, hp, task.data, fc).test.accuracy();
  Rng rng(88);
  double mean = 0;
  for (int i = 0; i < 20; ++i) mean += train_final(sample_uniform(sc.space, rng), hp, task.data, fc).test.accuracy();
  mean /= 20;
  const double secs = seconds_since(t0);
  return {winner >= 0.95 && winner >= mean && secs < 900,
          fmt("winner test acc %.4f, mean of 20 uniform architectures %.4f, %.0fs", winner, mean, secs)};
}

Outcome ac9() {
  AutoDecayConfig c;
  c.init_rate = 0.05;
  std::vector<double> trace = {0.1, 0.2, 0.3, 0.4, 0.45};
  const std::map<std::size_t, double> dips = {{8, 0.40}, {12, 0.30}, {16, 0.20}, {20, 0.10}};
  for (std::size_t n = 0; n < 40; ++n) trace.push_back(dips.count(n) ? dips.at(n) : 0.5 + 0.01 * double(n));
  auto expected = [](std::size_t e) {
    if (e <= 5) return 0.1;
    if (e <= 14) return 1.0;
    if (e <= 18) return 0.2;
    if (e <= 22) return 0.04;
    if (e <= 26) return 0.008;
    return 0.0016;
  };
  std::vector<double> h;
  std::size_t epochs = 0, finish = 0, wrong = 0;
  for (std::size_t e = 1; e < 100; ++e) {
    const auto s = auto_decay_lr(c, e, h);
    if (s.phase == DecayPhase::kDone) break;
    ++epochs;
    if (std::abs(s.lr - expected(e) * c.init_rate) > 1e-15) ++wrong;
    if (s.phase == DecayPhase::kFinish) ++finish;
    h.push_back(trace.at(e - 1));
  }
  return {wrong == 0 && epochs == 32 && finish == 6,
          fmt("%zu epochs, %zu lr mismatches, finish phase %zu epochs", epochs, wrong, finish)};
}

Outcome ac10() {
  SuperNetConfig cfg;
  cfg.encoder.num_layers = 3;
  cfg.encoder.dim = 8;
  cfg.encoder.emb_dim = 6;
  cfg.encoder.max_len = 64;
  cfg.encoder.attention.num_heads = 2;
  cfg.vocab_size = 50;
  SuperNet<float> net(cfg, 3);
  scramble(net, 4);
  ArchitectureEncoding enc;
  enc.layers = {{LayerOpKind::kConv3, 0, {}}, {LayerOpKind::kGru, 1, {0}}, {LayerOpKind::kSelfAttention, 2, {1}}};
  Rng rng(5);
  auto text = [&](std::size_t n) {
    std::vector<std::int32_t> t(n);
    for (auto& v : t) v = static_cast<std::int32_t>(2 + rng.below(48));
    return t;
  };
  std::size_t mismatched = 0;
  for (std::size_t n : {1, 7, 32, 63, 64}) {
    const auto t = text(n);
    const auto s = encode_sliding(net, enc, t, {});
    std::vector<std::int32_t> ids(64, 0);
    std::copy(t.begin(), t.end(), ids.begin());
    Tape<float> tape(false);
    nn::Context<float> ctx{tape, false, ops::NormMode::kEval};
    const std::vector<std::size_t> lengths{n};
    if (s.windows != 1 || s.vector.to_vector() != net.encode(ctx, enc, ids, 1, 64, lengths).to_vector()) ++mismatched;
  }
  const auto w96 = encode_sliding(net, enc, text(96), {}).windows;
  return {mismatched == 0 && w96 == 2,
          fmt("%zu of 5 short inputs differ from plain encoding; 96 tokens -> %zu windows", mismatched, w96)};
}

Outcome ac11() {
  const auto e = deserialize(fixture("fig4.arch"));
  const auto vs = validate(e, SpaceConfig{24, 5});
  auto h = op_histogram(e);
  const std::size_t conv = h["conv1"] + h["conv3"] + h["conv5"] + h["conv7"];
  const bool ok = vs.empty() && e.num_layers() == 24 && conv == 13 && h["maxpool"] == 4 && h["avgpool"] == 2 &&
                  h["gru"] == 2 && h["attention"] == 3;
  return {ok, fmt("%zu layers, %zu violations; conv %zu, maxpool %zu, avgpool %zu, gru %zu, attention %zu",
                  e.num_layers(), vs.size(), conv, h["maxpool"], h["avgpool"], h["gru"], h["attention"])};
}

int run(const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); }

Outcome ac12() {
  const fs::path root = fs::temp_directory_path() / fmt("textnas_ac12_%d", static_cast<int>(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string cli = "'" + cli_path + "'";
  const std::string r = root.string();
  if (run(cli + " toy --out " + r + "/data --seed 5 --size 1000") != 0) return {false, "toy data generation failed"};
  {
    std::ofstream cfg(root / "data" / "toy.cfg", std::ios::app);
    cfg << "search.epochs = 4\ntrain.epochs = 3\n";
  }
  bool ran = true;
  for (const char* run_id : {"a", "b"}) {
    ran = ran && run(cli + " search --config " + r + "/data/toy.cfg --out " + r + "/search_" + run_id) == 0;
    ran = ran && run(cli + " train --config " + r + "/data/toy.cfg --arch " + r + "/search_a/best.arch --out " + r +
                     "/train_" + run_id) == 0;
  }
  if (!ran) return {false, "a CLI run exited non-zero"};
  const auto ha = read_file(root / "search_a" / "history.csv"), hb = read_file(root / "search_b" / "history.csv");
  const auto ma = read_file(root / "train_a" / "metrics.csv"), mb = read_file(root / "train_b" / "metrics.csv");
  const bool ok = !ha.empty() && !ma.empty() && ha == hb && ma == mb &&
                  read_file(root / "search_a" / "best.arch") == read_file(root / "search_b" / "best.arch");
  fs::remove_all(root);
  return {ok, fmt("history.csv %zu bytes %s, metrics.csv %zu bytes %s", ha.size(), ha == hb ? "identical" : "DIFFER",
                  ma.size(), ma == mb ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <textnas-cli> [AC...]\n", argv[0]);
    return 2;
  }
  cli_path = fs::absolute(argv[1]).string();
  const std::set<std::string> only(argv + 2, argv + argc);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"AC1", ac1}, {"AC2", ac2},   {"AC3", ac3},   {"AC4", ac4}, {"AC5", ac5},   {"AC6", ac6},
      {"AC7", ac7}, {"AC8", ac8},   {"AC9", ac9},   {"AC10", ac10}, {"AC11", ac11}, {"AC12", ac12},
  };
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%-4s %s  %s\n", id.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
