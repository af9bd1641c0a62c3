#include <cmath>

#include "doctest.h"
#include "longfoley/adapters.hpp"
#include "longfoley/checkpoint.hpp"
#include "longfoley/errors.hpp"
#include "test_util.hpp"

using namespace lf;
using lf::testing::random_tensor;

namespace {

ConditioningConfig toy_config() {
  ConditioningConfig cfg;
  cfg.hidden_dim = 8;
  cfg.timestamp_dim = 8;
  cfg.dims = DimProfile{12, 10, 6, 4, 5};
  return cfg;
}

ParameterStore base_params(const ConditioningConfig& cfg, std::uint64_t seed) {
  ParameterStore store;
  Philox rng(seed, "test/base");
  init_conditioning_params(store, cfg, rng);
  return store;
}

GlobalFeatureBundle random_bundle(const ConditioningConfig& cfg, double duration, Philox& rng) {
  return GlobalFeatureBundle{
      make_stream(StreamKind::visual, random_tensor({frame_count(kVisualFps, duration), cfg.dims.visual}, rng)),
      make_stream(StreamKind::text, random_tensor({cfg.dims.text_tokens, cfg.dims.text}, rng)),
      make_stream(StreamKind::sync, random_tensor({frame_count(kSyncFps, duration), cfg.dims.sync}, rng))};
}

// Two plain matmuls with the tanh GELU between them.
Tensor adapter_oracle(const Tensor& x, const ParameterStore& p, const std::string& prefix) {
  const Tensor& dw = p.value(prefix + ".down.w");
  const Tensor& db = p.value(prefix + ".down.b");
  const Tensor& uw = p.value(prefix + ".up.w");
  const Tensor& ub = p.value(prefix + ".up.b");
  Tensor out({x.rows(), uw.cols()});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::vector<double> hidden(dw.cols());
    for (std::size_t j = 0; j < dw.cols(); ++j) {
      double a = db[j];
      for (std::size_t i = 0; i < x.cols(); ++i) a += x.at(r, i) * dw.at(i, j);
      hidden[j] = 0.5 * a * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (a + 0.044715 * a * a * a)));
    }
    for (std::size_t k = 0; k < uw.cols(); ++k) {
      double a = ub[k];
      for (std::size_t j = 0; j < hidden.size(); ++j) a += hidden[j] * uw.at(j, k);
      out.at(r, k) = a;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("zero_out adapter outputs exact zeros for any input") {
  ParameterStore p;
  Philox rng(1, "a");
  init_adapter(p, "h", AdapterConfig{10, 3, 7, AdapterInit::zero_out}, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const Var y = adapter_forward(constant(random_tensor({5, 10}, rng, 10.0)), p, "h");
    CHECK(y.shape() == Shape{5, 7});
    for (double v : y.value().data()) CHECK(v == 0.0);
  }
}

TEST_CASE("zero input with zero biases gives zero output") {
  ParameterStore p;
  Philox rng(2, "a");
  init_adapter(p, "h", AdapterConfig{10, 3, 7, AdapterInit::random}, rng);
  const Var y = adapter_forward(constant(Tensor({4, 10})), p, "h");
  for (double v : y.value().data()) CHECK(v == 0.0);
}

TEST_CASE("adapter matches a two-matmul oracle") {
  Philox rng(3, "a");
  for (int seed = 0; seed < 20; ++seed) {
    ParameterStore p;
    init_adapter(p, "h", AdapterConfig{9, 4, 6, AdapterInit::random}, rng);
    for (auto& [_, param] : p) {
      if (param.value.rows() == 1) param.value = random_tensor(param.value.shape(), rng, 0.3);
    }
    const Tensor x = random_tensor({7, 9}, rng);
    const Tensor y = adapter_forward(constant(x), p, "h").value();
    const Tensor expected = adapter_oracle(x, p, "h");
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y[i] - expected[i]) < 1e-6);
  }
}

TEST_CASE("adapter rejects mismatched input width and non-bottleneck configs") {
  ParameterStore p;
  Philox rng(4, "a");
  init_adapter(p, "h", AdapterConfig{10, 3, 7, AdapterInit::random}, rng);
  CHECK_THROWS_AS(adapter_forward(constant(Tensor({2, 9})), p, "h"), ShapeError);
  ParameterStore q;
  CHECK_THROWS_AS(init_adapter(q, "h", AdapterConfig{8, 8, 8, AdapterInit::random}, rng), ConfigError);
}

TEST_CASE("zero_out fusion leaves both conditions bitwise unchanged") {
  const auto cfg = toy_config();
  ParameterStore base = base_params(cfg, 5);
  ParameterStore adapters;
  init_dual_adapters(adapters, cfg, 4, AdapterInit::zero_out, 5);
  Philox rng(5, "a");
  for (int trial = 0; trial < 10; ++trial) {
    const GlobalFeatureBundle bundle = random_bundle(cfg, 8.0, rng);
    const GlobalCondition c_g{constant(random_tensor({1, cfg.global_dim()}, rng))};
    const GlobalCondition g = fuse_global(c_g, bundle, adapters, base);
    CHECK(bitwise_equal(g.vector.value(), c_g.vector.value()));
    const ClipWindow w{2.0, 4.0};
    const FrameCondition c_f{constant(random_tensor({w.frame_count(), cfg.hidden_dim}, rng))};
    const FrameCondition f = fuse_frame(c_f, bundle, adapters, base, w);
    CHECK(bitwise_equal(f.tokens.value(), c_f.tokens.value()));
  }
}

TEST_CASE("fuse_global on a zero condition returns the adapter output") {
  const auto cfg = toy_config();
  ParameterStore base = base_params(cfg, 6);
  ParameterStore adapters;
  init_dual_adapters(adapters, cfg, 4, AdapterInit::random, 6);
  Philox rng(6, "a");
  const GlobalFeatureBundle bundle = random_bundle(cfg, 6.0, rng);
  const GlobalCondition zero{constant(Tensor({1, cfg.global_dim()}))};
  const Tensor fused = fuse_global(zero, bundle, adapters, base).vector.value();
  const Tensor pooled = pooled_visual(bundle.visual, base).value();
  const Tensor expected = adapter_oracle(pooled, adapters, kGlobalAdapter);
  for (std::size_t i = 0; i < fused.numel(); ++i) CHECK(std::abs(fused[i] - expected[i]) < 1e-12);
}

TEST_CASE("fuse_global is additive in c_g") {
  const auto cfg = toy_config();
  ParameterStore base = base_params(cfg, 7);
  ParameterStore adapters;
  init_dual_adapters(adapters, cfg, 4, AdapterInit::random, 7);
  Philox rng(7, "a");
  for (int trial = 0; trial < 10; ++trial) {
    const GlobalFeatureBundle bundle = random_bundle(cfg, 4.0, rng);
    const Tensor c = random_tensor({1, cfg.global_dim()}, rng);
    const Tensor with_c = fuse_global(GlobalCondition{constant(c)}, bundle, adapters, base).vector.value();
    const Tensor with_zero =
        fuse_global(GlobalCondition{constant(Tensor(c.shape()))}, bundle, adapters, base).vector.value();
    for (std::size_t i = 0; i < c.numel(); ++i) CHECK(std::abs(with_c[i] - with_zero[i] - c[i]) < 1e-6);
  }
}

TEST_CASE("fuse_global rejects a c_g of the wrong length") {
  const auto cfg = toy_config();
  ParameterStore base = base_params(cfg, 8);
  ParameterStore adapters;
  init_dual_adapters(adapters, cfg, 4, AdapterInit::random, 8);
  Philox rng(8, "a");
  const GlobalFeatureBundle bundle = random_bundle(cfg, 4.0, rng);
  CHECK_THROWS_AS(fuse_global(GlobalCondition{constant(Tensor({1, 5}))}, bundle, adapters, base), ShapeError);
}

TEST_CASE("full-video window matches the frame condition token count") {
  const auto cfg = toy_config();
  ParameterStore base = base_params(cfg, 9);
  ParameterStore adapters;
  init_dual_adapters(adapters, cfg, 4, AdapterInit::random, 9);
  Philox rng(9, "a");
  for (double d : {1.0, 2.0, 7.68, 8.0}) {
    const GlobalFeatureBundle bundle = random_bundle(cfg, d, rng);
    const FrameCondition whole = build_frame_condition(bundle.sync, base, cfg);
    const FrameCondition fused = fuse_frame(whole, bundle, adapters, base, ClipWindow{0.0, bundle.duration_s()});
    CHECK(fused.length() == whole.length());
  }
}

TEST_CASE("per-clip slices of the global sync correction tile the full-video stream") {
  const auto cfg = toy_config();
  ParameterStore base = base_params(cfg, 10);
  ParameterStore adapters;
  init_dual_adapters(adapters, cfg, 4, AdapterInit::random, 10);
  Philox rng(10, "a");
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n_clips = 1 + rng.next_u32() % 5;
    std::vector<double> bounds{0.0};
    for (std::size_t i = 0; i < n_clips; ++i) bounds.push_back(bounds.back() + 0.5 + 2.5 * rng.uniform());
    const double total = bounds.back();
    GlobalFeatureBundle bundle = random_bundle(cfg, total, rng);
    // Make the bundle end exactly at the last boundary.
    bounds.back() = bundle.duration_s();
    const std::size_t full_len = frame_count(kLatentFps, bundle.duration_s());
    const Tensor zeros_full({full_len, cfg.hidden_dim});
    const Tensor full =
        fuse_frame(FrameCondition{constant(zeros_full)}, bundle, adapters, base, ClipWindow{0.0, bounds.back()})
            .tokens.value();
    std::size_t row = 0;
    for (std::size_t i = 0; i < n_clips; ++i) {
      const ClipWindow w{bounds[i], bounds[i + 1]};
      const Tensor part =
          fuse_frame(FrameCondition{constant(Tensor({w.frame_count(), cfg.hidden_dim}))}, bundle, adapters, base, w)
              .tokens.value();
      for (std::size_t r = 0; r < part.rows(); ++r, ++row) {
        for (std::size_t j = 0; j < part.cols(); ++j) CHECK(part.at(r, j) == full.at(row, j));
      }
    }
    CHECK(row == full_len);
  }
}

TEST_CASE("fuse_frame rejects windows outside the video") {
  const auto cfg = toy_config();
  ParameterStore base = base_params(cfg, 11);
  ParameterStore adapters;
  init_dual_adapters(adapters, cfg, 4, AdapterInit::random, 11);
  Philox rng(11, "a");
  const GlobalFeatureBundle bundle = random_bundle(cfg, 4.0, rng);
  const FrameCondition c_f{constant(Tensor({63, cfg.hidden_dim}))};
  CHECK_THROWS_AS(fuse_frame(c_f, bundle, adapters, base, ClipWindow{3.0, 5.0}), ContractError);
  CHECK_THROWS_AS(fuse_frame(c_f, bundle, adapters, base, ClipWindow{-1.0, 1.0}), ContractError);
  CHECK_THROWS_AS(fuse_frame(c_f, bundle, adapters, base, ClipWindow{0.0, 1.0}), ShapeError);
}

TEST_CASE("bundle check flags visual and sync duration disagreement") {
  const auto cfg = toy_config();
  Philox rng(12, "a");
  GlobalFeatureBundle bundle = random_bundle(cfg, 4.0, rng);
  CHECK(bundle.check(cfg.dims).empty());
  bundle.visual = make_stream(StreamKind::visual, random_tensor({40, cfg.dims.visual}, rng));
  CHECK_FALSE(bundle.check(cfg.dims).empty());
}

TEST_CASE("param_budget reproduces the published ratio") {
  constexpr double kBase = 1.03e9;
  constexpr double kAdapters = 0.04e9;
  CHECK(kAdapters / kBase == doctest::Approx(0.0388).epsilon(1e-3));
  ParameterStore base, adapters;
  base.add("w", Tensor({103, 100}));
  adapters.add("a", Tensor({4, 100}));
  CHECK(param_budget(base, adapters) == doctest::Approx(0.0388).epsilon(1e-3));
}

TEST_CASE("param_budget is zero without adapters and rejects an empty base") {
  ParameterStore base, adapters;
  CHECK_THROWS_AS(param_budget(base, adapters), ContractError);
  base.add("w", Tensor({3, 3}));
  CHECK(param_budget(base, adapters) == 0.0);
}

TEST_CASE("adapter scalar count equals the enumerated shapes") {
  const auto cfg = toy_config();
  ParameterStore adapters;
  init_dual_adapters(adapters, cfg, 4, AdapterInit::zero_out, 13);
  const std::size_t h = cfg.hidden_dim;
  const std::size_t by_hand = (h * 4 + 4 + 4 * 2 * h + 2 * h) + (h * 4 + 4 + 4 * h + h);
  CHECK(adapters.num_scalars() == by_hand);
  CHECK(global_adapter_config(cfg, 4, AdapterInit::zero_out).num_scalars() +
            sync_adapter_config(cfg, 4, AdapterInit::zero_out).num_scalars() ==
        by_hand);
}

TEST_CASE("adapter stores round-trip through a checkpoint directory") {
  const auto cfg = toy_config();
  ParameterStore adapters;
  init_dual_adapters(adapters, cfg, 4, AdapterInit::random, 14);
  lf::testing::TempDir dir("ckpt");
  save_store(dir.path(), adapters);
  const ParameterStore loaded = load_store(dir.path());
  CHECK(loaded.names() == adapters.names());
  for (const auto& [name, p] : adapters) CHECK(bitwise_equal(loaded.value(name), p.value));

  ParameterStore target;
  init_dual_adapters(target, cfg, 4, AdapterInit::zero_out, 99);
  load_store_into(dir.path(), target);
  for (const auto& [name, p] : adapters) CHECK(bitwise_equal(target.value(name), p.value));

  ParameterStore wrong;
  init_dual_adapters(wrong, cfg, 3, AdapterInit::zero_out, 99);
  CHECK_THROWS_WITH_AS(load_store_into(dir.path(), wrong), doctest::Contains("h_global.down.b"), FormatError);
}
