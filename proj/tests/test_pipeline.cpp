#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "textnas/pipeline.hpp"

using namespace textnas;

namespace {

const ModelSpec kSmallModel{8, 2};

PreparedTask small_toy(std::size_t size = 400, ToyKind kind = ToyKind::kClassification) {
  ToySpec s;
  s.kind = kind;
  s.size = size;
  s.seed = 11;
  return toy_task(s);
}

SearchConfig small_search() {
  SearchConfig c;
  c.space = {3, 2};
  c.hp = {0.005, 32, 24, 2e-6, 0.5, 8};
  c.model = kSmallModel;
  c.epochs = 2;
  c.candidates = 4;
  c.eval_batch = 32;
  c.controller.hidden = 16;
  c.seed = 3;
  return c;
}

SearchResult run_search(const TaskData& d, const SearchConfig& c, const SearchHooks& hooks = {}) {
  SuperNet<float> net(search_net_config(c, d), 1);
  Controller<double> ctrl(search_controller_config(c), 2);
  return search(net, ctrl, d, c, hooks);
}

// Exact distribution over all encodings of a small space.
std::vector<double> policy(const Controller<double>& c) {
  std::vector<double> p;
  for_each_encoding(c.config().space, kAllLayerOps, 1u << 16,
                    [&](const ArchitectureEncoding& e) { p.push_back(std::exp(c.log_prob(e))); });
  return p;
}

}  // namespace

TEST(Cosine, DefaultConstants) {
  const CosineSchedule s;  // 0.005, 0.0001, T = 10
  EXPECT_NEAR(cosine_lr(s, 0), 0.005, 1e-15);
  EXPECT_NEAR(cosine_lr(s, 5), 0.00255, 1e-15);
  EXPECT_NEAR(cosine_lr(s, 10), 0.0001, 1e-15);
  EXPECT_NEAR(cosine_lr(s, 20), 0.005, 1e-15);  // restart
  EXPECT_THROW(cosine_lr({0.005, 0.0001, 0}, 1), ParameterError);
}

TEST(Cosine, ClosedFormAtRandomPoints) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double T = 1 + rng.below(50);
    const double t = rng.uniform(0, T);
    const double hi = rng.uniform(0.01, 1), lo = rng.uniform(0, hi);
    const double want = lo + 0.5 * (hi - lo) * (1 + std::cos(M_PI * t / T));
    const double got = cosine_lr({hi, lo, T}, t);
    EXPECT_NEAR(got, want, 1e-12);
    EXPECT_GE(got, lo - 1e-15);
    EXPECT_LE(got, hi + 1e-15);
  }
}

TEST(AutoDecay, WarmupRate) {
  AutoDecayConfig c;
  c.init_rate = 0.02;
  const auto s = auto_decay_lr(c, 3, std::vector<double>{0.1, 0.2});
  EXPECT_NEAR(s.lr, 0.002, 1e-15);
  EXPECT_EQ(s.phase, DecayPhase::kWarmup);
}

TEST(AutoDecay, RisingAccuracyNeverDecays) {
  AutoDecayConfig c;
  c.init_rate = 0.05;
  std::vector<double> h;
  for (std::size_t e = 1; e <= 60; ++e) {
    const auto s = auto_decay_lr(c, e, h);
    EXPECT_DOUBLE_EQ(s.lr, e <= 5 ? 0.005 : 0.05);
    h.push_back(0.01 * double(e));
  }
}

// Post-warm-up accuracies rise by 0.01 per epoch except four engineered dips,
// each below the value seven epochs earlier.
TEST(AutoDecay, EngineeredTraceWithFourDrops) {
  AutoDecayConfig c;
  c.init_rate = 0.05;
  std::vector<double> trace = {0.1, 0.2, 0.3, 0.4, 0.45};
  const std::map<std::size_t, double> dips = {{8, 0.40}, {12, 0.30}, {16, 0.20}, {20, 0.10}};
  for (std::size_t n = 0; n < 40; ++n) trace.push_back(dips.count(n) ? dips.at(n) : 0.5 + 0.01 * double(n));
  // expected rate by epoch, as multiples of init
  auto expected = [](std::size_t e) {
    if (e <= 5) return 0.1;
    if (e <= 14) return 1.0;
    if (e <= 18) return 0.2;
    if (e <= 22) return 0.04;
    if (e <= 26) return 0.008;
    return 0.0016;
  };
  std::vector<double> h;
  std::size_t finish = 0, epochs = 0;
  for (std::size_t e = 1;; ++e) {
    const auto s = auto_decay_lr(c, e, h);
    if (s.phase == DecayPhase::kDone) break;
    ++epochs;
    EXPECT_NEAR(s.lr, expected(e) * 0.05, 1e-15) << "epoch " << e;
    if (s.phase == DecayPhase::kFinish) {
      ++finish;
      EXPECT_GE(e, 27u);
    }
    h.push_back(trace.at(e - 1));
  }
  EXPECT_EQ(finish, 6u);
  EXPECT_EQ(epochs, 32u);
}

TEST(AutoDecay, NonIncreasingWithAtMostFourDecays) {
  AutoDecayConfig c;
  Rng rng(4);
  std::vector<double> h;
  std::set<double> rates;
  double prev = INFINITY;
  for (std::size_t e = 1; e <= 300; ++e) {
    const auto s = auto_decay_lr(c, e, h);
    if (s.phase == DecayPhase::kDone) break;
    if (e > c.warmup_epochs) {
      EXPECT_LE(s.lr, prev);
      prev = s.lr;
      rates.insert(s.lr);
    }
    h.push_back(rng.uniform());
  }
  EXPECT_LE(rates.size(), 5u);  // init plus at most four decayed values
}

TEST(Search, HistoryBookkeepingAndDeterminism) {
  auto task = small_toy();
  auto c = small_search();
  std::size_t epochs_seen = 0;
  auto a = run_search(task.data, c, {.reward = {}, .on_epoch = [&](std::size_t, const std::vector<SearchRecord>& r) {
    ++epochs_seen;
    EXPECT_EQ(r.size(), 4u);
  }});
  EXPECT_EQ(a.history.size(), c.epochs * c.candidates);
  EXPECT_EQ(epochs_seen, c.epochs);
  auto b = run_search(task.data, c);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].encoding, b.history[i].encoding);
    EXPECT_EQ(a.history[i].reward, b.history[i].reward);
    EXPECT_TRUE(is_valid(a.history[i].encoding, c.space));
  }
  // best = highest reward, earliest on ties
  std::size_t best = 0;
  for (std::size_t i = 1; i < a.history.size(); ++i)
    if (a.history[i].reward > a.history[best].reward) best = i;
  EXPECT_EQ(a.best, a.history[best].encoding);
  EXPECT_EQ(a.best_reward, a.history[best].reward);
}

TEST(Search, WorkerCountDoesNotChangeResults) {
  auto task = small_toy();
  auto c = small_search();
  c.epochs = 1;
  auto a = run_search(task.data, c);
  c.workers = 3;
  auto b = run_search(task.data, c);
  for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].reward, b.history[i].reward);
}

TEST(Search, EmptySplitsRejected) {
  auto task = small_toy();
  task.data.valid = {};
  EXPECT_THROW(run_search(task.data, small_search()), DataError);
}

TEST(Search, ConstantRewardLeavesPolicyUnchanged) {
  auto task = small_toy();
  auto c = small_search();
  c.space = {1, 5};
  c.epochs = 20;
  SuperNet<float> net(search_net_config(c, task.data), 1);
  Controller<double> ctrl(search_controller_config(c), 2);
  const auto before = policy(ctrl);
  search(net, ctrl, task.data, c, {.reward = [](const ArchitectureEncoding&) { return 0.7; }, .on_epoch = {}});
  const auto after = policy(ctrl);
  double kl = 0, total = 0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    kl += before[i] * std::log(before[i] / after[i]);
    total += after[i];
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
  EXPECT_LT(kl, 1e-2);
  EXPECT_NEAR(ctrl.baseline().value, 0.7, 1e-12);
}

TEST(TrainFinal, MetricsInitLossAndAccuracy) {
  auto task = small_toy(1000);
  ArchitectureEncoding enc;
  enc.layers = {{LayerOpKind::kConv3, 0, {}}, {LayerOpKind::kMaxPool3, 1, {0}}};
  FinalConfig fc;
  fc.schedule = ScheduleKind::kCosine;
  fc.epochs = 8;
  fc.model = {16, 4};
  auto r = train_final(enc, {0.005, 32, 24, 2e-6, 0.5, 16}, task.data, fc);
  EXPECT_EQ(r.metrics.size(), 8u);
  EXPECT_NEAR(r.init_loss, std::log(4.0), 0.15);
  EXPECT_GE(r.test.accuracy(), 0.95);
  std::size_t rows = 0;
  for (std::size_t y = 0; y < 4; ++y) {
    std::size_t s = 0;
    for (auto n : r.test.confusion[y]) s += n;
    EXPECT_EQ(s, std::count(task.data.test.labels.begin(), task.data.test.labels.end(), int(y)));
    rows += s;
  }
  EXPECT_EQ(rows, task.data.test.size());
}

TEST(TrainFinal, AutoDecayRespectsCapAndPhases) {
  auto task = small_toy();
  ArchitectureEncoding enc;
  enc.layers = {{LayerOpKind::kConv1, 0, {}}};
  FinalConfig fc;
  fc.max_epochs = 7;
  fc.model = kSmallModel;
  auto r = train_final(enc, {0.05, 64, 24, 2e-6, 0.0, 8}, task.data, fc);
  ASSERT_EQ(r.metrics.size(), 7u);
  EXPECT_EQ(r.metrics[0].phase, "warmup");
  EXPECT_NEAR(r.metrics[0].lr, 0.005, 1e-15);
  EXPECT_EQ(r.metrics[6].phase, "main");
  EXPECT_NEAR(r.metrics[6].lr, 0.05, 1e-15);
}

TEST(TrainFinal, DoesNotReuseSupernetWeights) {
  auto task = small_toy();
  auto c = small_search();
  SuperNet<float> net(search_net_config(c, task.data), c.seed);
  ArchitectureEncoding enc;
  enc.layers = {{LayerOpKind::kConv3, 0, {}}, {LayerOpKind::kGru, 1, {}}, {LayerOpKind::kConv5, 2, {0}}};
  FinalConfig fc;
  fc.schedule = ScheduleKind::kCosine;
  fc.epochs = 1;
  fc.model = c.model;
  fc.seed = c.seed;
  auto r = train_final(enc, c.hp, task.data, fc);
  std::size_t compared = 0;
  SuperNet<float> init_copy(search_net_config(c, task.data), Rng(fc.seed).substream("final").substream("init").next_u64(), &enc);
  EXPECT_EQ(init_copy.store().checksum(), r.init_checksum);
  for (const auto& [name, t] : init_copy.store().parameters()) {
    const auto s = net.store().at(name);
    const auto v = t.to_vector();
    const bool random_init = std::any_of(v.begin(), v.end(), [&](float x) { return x != v[0]; });
    if (random_init) {
      EXPECT_NE(t.to_vector(), s.to_vector()) << name;
      ++compared;
    }
  }
  EXPECT_GT(compared, 5u);
}

TEST(TrainFinal, WarmStartCopiesChildWeights) {
  auto task = small_toy();
  auto c = small_search();
  SuperNet<float> net(search_net_config(c, task.data), 21);
  ArchitectureEncoding enc;
  enc.layers = {{LayerOpKind::kConv3, 0, {}}, {LayerOpKind::kSelfAttention, 1, {}}, {LayerOpKind::kConv5, 2, {0}}};
  SuperNet<float> expect(search_net_config(c, task.data), 0, &enc);
  for (auto& [name, t] : expect.store().all()) {
    auto d = Tensor<float>(t).data();
    const auto from = net.store().at(name).to_vector();
    std::copy(from.begin(), from.end(), d.begin());
  }
  FinalConfig fc;
  fc.schedule = ScheduleKind::kCosine;
  fc.epochs = 1;
  fc.model = c.model;
  fc.warm_start = &net;
  EXPECT_EQ(train_final(enc, c.hp, task.data, fc).init_checksum, expect.store().checksum());
  auto wider = c.hp;
  wider.dim = 16;
  EXPECT_THROW(train_final(enc, wider, task.data, fc), DimensionError);
}

TEST(Grid, OrderSizeAndErrors) {
  GridSpec g;
  EXPECT_EQ(g.size(), 864u);
  const auto p0 = g.point(0), p1 = g.point(1), last = g.point(863);
  EXPECT_EQ(p0.lr, 0.08);
  EXPECT_EQ(p0.dim, 32u);
  EXPECT_EQ(p1.dim, 64u);
  EXPECT_EQ(p1.lr, 0.08);
  EXPECT_EQ(g.point(4).dropout, 0.2);
  EXPECT_EQ(g.point(288).lr, 0.05);
  EXPECT_EQ(last.lr, 0.02);
  EXPECT_EQ(last.dim, 256u);
  EXPECT_EQ(last.max_len, 512u);
  std::set<std::tuple<double, std::size_t, std::size_t, double, double, std::size_t>> seen;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto p = g.point(i);
    seen.insert({p.lr, p.batch_size, p.max_len, p.l2, p.dropout, p.dim});
  }
  EXPECT_EQ(seen.size(), 864u);
  auto task = small_toy();
  ArchitectureEncoding enc;
  enc.layers = {{LayerOpKind::kConv1, 0, {}}};
  GridConfig gc;
  gc.budget = 0;
  EXPECT_THROW(grid_search(enc, GridSpec::single({}), task.data, gc), ParameterError);
  GridSpec empty = GridSpec::single({});
  empty.l2.clear();
  gc.budget = 1;
  EXPECT_THROW(grid_search(enc, empty, task.data, gc), ParameterError);
}

TEST(Grid, SinglePointAndPlantedLearningRate) {
  auto task = small_toy(600);
  ArchitectureEncoding enc;
  enc.layers = {{LayerOpKind::kConv3, 0, {}}, {LayerOpKind::kMaxPool3, 1, {}}};
  GridConfig gc;
  gc.budget = 3;
  gc.final.schedule = ScheduleKind::kCosine;
  gc.final.model = {16, 4};
  const TrainHyper hp{0.005, 32, 24, 2e-6, 0.1, 16};
  auto one = grid_search(enc, GridSpec::single(hp), task.data, gc);
  ASSERT_EQ(one.points.size(), 1u);
  EXPECT_EQ(one.best, 0u);
  EXPECT_EQ(one.points[0].hp.lr, hp.lr);
  auto g = GridSpec::single(hp);
  g.lr = {1e-7, 0.005, 1e-6};
  gc.workers = 2;
  auto r = grid_search(enc, g, task.data, gc);
  EXPECT_EQ(r.points[r.best].hp.lr, 0.005);
  EXPECT_GT(r.points[1].valid_acc, r.points[0].valid_acc);
}

TEST(Sliding, WindowCounts) {
  const SlidingWindowConfig c;
  EXPECT_EQ(window_count(1, c), 1u);
  EXPECT_EQ(window_count(64, c), 1u);
  EXPECT_EQ(window_count(65, c), 2u);
  EXPECT_EQ(window_count(96, c), 2u);
  EXPECT_EQ(window_count(97, c), 3u);
  EXPECT_EQ(window_count(128, c), 3u);
  EXPECT_THROW(window_count(10, {64, 65}), ParameterError);
  EXPECT_THROW(window_count(10, {64, 0}), ParameterError);
}

TEST(Sliding, ShortTextsMatchPlainEncodingAndMaxIsIdempotent) {
  SuperNetConfig cfg;
  cfg.encoder.num_layers = 2;
  cfg.encoder.dim = 8;
  cfg.encoder.emb_dim = 6;
  cfg.encoder.max_len = 64;
  cfg.encoder.attention.num_heads = 2;
  cfg.vocab_size = 50;
  SuperNet<float> net(cfg, 3);
  ArchitectureEncoding enc;
  enc.layers = {{LayerOpKind::kConv3, 0, {}}, {LayerOpKind::kSelfAttention, 1, {0}}};
  Rng rng(4);
  auto text = [&](std::size_t n) {
    std::vector<std::int32_t> t(n);
    for (auto& x : t) x = static_cast<std::int32_t>(2 + rng.below(48));
    return t;
  };
  for (std::size_t n : {1, 17, 64}) {
    auto t = text(n);
    auto s = encode_sliding(net, enc, t, {});
    EXPECT_EQ(s.windows, 1u);
    std::vector<std::int32_t> ids(64, 0);
    std::copy(t.begin(), t.end(), ids.begin());
    Tape<float> tape(false);
    nn::Context<float> ctx{tape, false, ops::NormMode::kEval};
    const std::vector<std::size_t> lengths{n};
    EXPECT_EQ(s.vector.to_vector(), net.encode(ctx, enc, ids, 1, 64, lengths).to_vector());
  }
  EXPECT_EQ(encode_sliding(net, enc, text(96), {}).windows, 2u);
  // a 32-token block repeated three times: both windows see the same 64 tokens
  auto block = text(32);
  std::vector<std::int32_t> twice = block, thrice;
  twice.insert(twice.end(), block.begin(), block.end());
  for (int k = 0; k < 3; ++k) thrice.insert(thrice.end(), block.begin(), block.end());
  auto a = encode_sliding(net, enc, twice, {});
  auto b = encode_sliding(net, enc, thrice, {});
  EXPECT_EQ(b.windows, 2u);
  EXPECT_EQ(a.vector.to_vector(), b.vector.to_vector());
  EXPECT_THROW(encode_sliding(net, enc, {}, {}), DataError);
  EXPECT_THROW(encode_sliding(net, enc, text(10), {32, 16}), DimensionError);
}

TEST(Nli, ZeroPenaltyLossIsCrossEntropyPlusL2) {
  auto task = small_toy(200, ToyKind::kNli);
  NliConfig c;
  c.hp = {1e-3, 8, 24, 1e-3, 0.0, 8};
  c.pool_queries = 2;
  c.fc_dim = 12;
  c.model = kSmallModel;
  ArchitectureEncoding enc;
  enc.layers = {{LayerOpKind::kConv1, 0, {}}};
  SuperNet<double> net(nli_config(1, c, task.data), 5, &enc);
  const auto b = make_batches(task.data.train, 8, 24).front();
  Tape<double> tape(false);
  nn::Context<double> ctx{tape, false, ops::NormMode::kEval};
  auto out = net.pair_logits(ctx, enc, b);
  const auto params = net.child_parameters(enc);
  const double ce = ops::cross_entropy(tape, out.logits, b.labels).item();
  double sq = 0;
  for (const auto& p : params)
    for (double v : p.data()) sq += v * v;
  EXPECT_NEAR(nli_loss(tape, out, b.labels, params, 1e-3, 0.0).item(), ce + 0.5e-3 * sq, 1e-12);
  EXPECT_NEAR(nli_loss(tape, out, b.labels, params, 0.0, 0.0).item(), ce, 1e-15);
  EXPECT_NEAR(nli_loss(tape, out, b.labels, params, 0.0, 0.5).item(), ce + 0.5 * out.penalty.item(), 1e-12);
}

TEST(Nli, ToyTaskLearned) {
  ToySpec s;
  s.kind = ToyKind::kNli;
  s.seed = 3;
  auto task = toy_task(s);
  NliConfig c;
  c.hp = {0.003, 32, 24, 1e-6, 0.1, 16};
  c.epochs = 10;
  c.pool_queries = 2;
  c.fc_dim = 64;
  c.penalty = 0.01;
  c.model = {16, 4};
  ArchitectureEncoding enc;
  enc.layers = {{LayerOpKind::kConv3, 0, {}}, {LayerOpKind::kMaxPool3, 1, {0}}};
  auto r = nli_train(enc, task.data, c);
  EXPECT_EQ(r.metrics.size(), 10u);
  EXPECT_GE(r.test.accuracy(), 0.9);
  Corpus plain;
  plain.samples = {{0, "a", ""}};
  auto p = prepare_task(plain, plain, plain, 2);
  EXPECT_THROW(nli_train(enc, p.data, c), DataError);
}
