// SPDX-License-Identifier: Apache-2.0
#include "unitar/selftest.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <sstream>

#include "unitar/dmd.hpp"
#include "unitar/errors.hpp"
#include "unitar/generator.hpp"
#include "unitar/mask.hpp"
#include "unitar/streaming.hpp"
#include "unitar/units.hpp"

namespace unitar::selftest {

namespace {

bool bits_equal(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() &&
         (a.empty() ||
          std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

uint32_t pick(Rng& rng, std::initializer_list<uint32_t> opts) {
  return *(opts.begin() +
           static_cast<size_t>(rng.uniform() * opts.size()) % opts.size());
}

std::vector<uint32_t> divisors_ge(uint32_t n, uint32_t lo) {
  std::vector<uint32_t> out;
  for (uint32_t d = lo; d <= n; ++d)
    if (n % d == 0) out.push_back(d);
  return out;
}

UnitScheme random_voxel_scheme(Rng& rng, uint32_t t, uint32_t h, uint32_t w) {
  switch (pick(rng, {0, 1, 2})) {
    case 0:
      return FrameScheme{};
    case 1: {
      const auto ks = divisors_ge(t, 2);
      if (ks.empty()) return FrameScheme{};
      return KeyDetailScheme{
          ks[static_cast<size_t>(rng.uniform() * ks.size()) % ks.size()]};
    }
    default: {
      auto pick_div = [&rng](uint32_t n) {
        const auto divs = divisors_ge(n, 1);
        return divs[static_cast<size_t>(rng.uniform() * divs.size()) %
                    divs.size()];
      };
      return CubeScheme{pick_div(t), pick_div(h), pick_div(w)};
    }
  }
}

// ---- criterion 1: round-trip exactness ------------------------------------
CheckResult check_round_trip(bool full) {
  CheckResult res{"round-trip exactness", true, "", 0.0};
  const int cases = full ? 200 : 40;
  Rng rng(1001);
  int done = 0;
  for (int i = 0; i < cases; ++i) {
    const uint32_t t = pick(rng, {2, 4, 6, 8});
    const uint32_t h = pick(rng, {2, 3, 4, 6});
    const uint32_t w = pick(rng, {2, 4, 5});
    const uint32_t c = pick(rng, {1, 2, 3});
    const UnitScheme scheme = random_voxel_scheme(rng, t, h, w);
    const LatentVolume z = gaussian_volume(t, h, w, c, rng);
    const LatentVolume back = reconstruct(partition(z, scheme));
    if (!bits_equal(z.data, back.data)) {
      res.pass = false;
      res.detail = "case " + std::to_string(i) + " (" +
                   scheme_to_string(scheme) + ") not bit-identical";
      return res;
    }
    ++done;
  }
  res.detail = std::to_string(done) + " randomized cases bit-identical";
  return res;
}

// ---- criterion 2: step-count formulas --------------------------------------
CheckResult check_step_counts(bool) {
  CheckResult res{"step-count formulas", true, "", 0.0};
  Rng rng(1002);
  int done = 0;
  for (int i = 0; i < 50; ++i) {
    const uint32_t t = pick(rng, {2, 4, 6, 8, 12, 16});
    const uint32_t h = pick(rng, {2, 4, 8});
    const uint32_t w = pick(rng, {2, 4, 8});
    // frame: N = T
    if (step_count(FrameScheme{}, t, h, w) != t) {
      res.pass = false;
      res.detail = "frame count != T";
      return res;
    }
    // keydetail: N = k
    for (uint32_t k : divisors_ge(t, 2))
      if (step_count(KeyDetailScheme{k}, t, h, w) != k) {
        res.pass = false;
        res.detail = "keydetail count != k";
        return res;
      }
    // cube: N = (T/kt)(H/kh)(W/kw); half-size cubes give 8 units
    if (t % 2 == 0 && h % 2 == 0 && w % 2 == 0) {
      if (step_count(CubeScheme{t / 2, h / 2, w / 2}, t, h, w) != 8) {
        res.pass = false;
        res.detail = "half-size cube count != 8";
        return res;
      }
    }
    const CubeScheme cu{pick(rng, {1, 2}), pick(rng, {1, 2}), pick(rng, {1, 2})};
    if (t % cu.k_t == 0 && h % cu.k_h == 0 && w % cu.k_w == 0) {
      const uint32_t expect = (t / cu.k_t) * (h / cu.k_h) * (w / cu.k_w);
      if (step_count(cu, t, h, w) != expect) {
        res.pass = false;
        res.detail = "cube count mismatch";
        return res;
      }
    }
    // multiscale: N = L
    MultiscaleScheme ms;
    if (t >= 2 && h >= 2 && w >= 2) ms.scales.push_back({t / 2, h / 2, w / 2});
    ms.scales.push_back({t, h, w});
    if (step_count(ms, t, h, w) != ms.scales.size()) {
      res.pass = false;
      res.detail = "multiscale count != L";
      return res;
    }
    if (step_count(MultiscaleScheme{{{t, h, w}}}, t, h, w) != 1) {
      res.pass = false;
      res.detail = "single-scale multiscale count != 1";
      return res;
    }
    ++done;
  }
  res.detail = std::to_string(done) + " sweep cases exact";
  return res;
}

// ---- criterion 3: mask causality and symmetry ------------------------------
CheckResult check_masks(bool full) {
  CheckResult res{"mask causality and symmetry", true, "", 0.0};
  const uint32_t token_cap = full ? 4096 : 1024;

  std::vector<std::pair<std::array<uint32_t, 3>, UnitScheme>> cases = {
      {{16, 16, 16}, FrameScheme{}},          // 4096 tokens at full strength
      {{8, 8, 8}, KeyDetailScheme{4}},        // 512 tokens
      {{8, 8, 8}, CubeScheme{4, 4, 4}},       // 8 units of 64
      {{4, 4, 4}, CubeScheme{1, 2, 2}},
      {{4, 4, 4},
       MultiscaleScheme{{{1, 1, 1}, {2, 2, 2}, {4, 4, 4}}}},
      {{8, 4, 4}, FrameScheme{}},
  };
  size_t verified = 0;
  for (const auto& [dims, scheme] : cases) {
    const UnitLayout layout = layout_for(scheme, dims[0], dims[1], dims[2], 1);
    if (layout.total_tokens > token_cap) continue;
    const AttentionMask fwd = build_mask(layout, MaskDirection::Forward);
    const AttentionMask bwd = build_mask(layout, MaskDirection::Backward);
    const AttentionMask both = build_mask(layout, MaskDirection::Full);
    if (!verify_causality(fwd, MaskDirection::Forward).clean ||
        !verify_causality(bwd, MaskDirection::Backward).clean ||
        !verify_causality(both, MaskDirection::Full).clean) {
      res.pass = false;
      res.detail = "direction invariant violated for " +
                   scheme_to_string(scheme);
      return res;
    }
    if (reverse_mask(fwd).allowed != bwd.allowed ||
        reverse_mask(bwd).allowed != fwd.allowed) {
      res.pass = false;
      res.detail = "unit-order reversal does not exchange forward/backward";
      return res;
    }
    for (uint32_t q = 0; q < fwd.n_tokens; ++q) {
      if (!fwd.at(q, q) || !bwd.at(q, q)) {
        res.pass = false;
        res.detail = "a query lost its own unit";
        return res;
      }
    }
    verified += layout.total_tokens;
  }
  // reversal exchange across unit counts up to 64
  Rng rng(1003);
  for (int trial = 0; trial < (full ? 64 : 16); ++trial) {
    const uint32_t n_units = 1 + static_cast<uint32_t>(rng.uniform() * 64);
    UnitLayout lay;
    lay.offsets.push_back(0);
    for (uint32_t u = 0; u < n_units; ++u) {
      const uint32_t tokens = 1 + static_cast<uint32_t>(rng.uniform() * 3);
      lay.tokens_per_unit.push_back(tokens);
      lay.offsets.push_back(lay.offsets.back() + tokens);
    }
    lay.total_tokens = lay.offsets.back();
    const AttentionMask fwd = build_mask(lay, MaskDirection::Forward);
    const AttentionMask bwd = build_mask(lay, MaskDirection::Backward);
    if (reverse_mask(fwd).allowed != bwd.allowed) {
      res.pass = false;
      res.detail = "reversal exchange failed at N=" + std::to_string(n_units);
      return res;
    }
  }
  res.detail = "exhaustive over " + std::to_string(verified) +
               " tokens of masks, reversal exchange up to 64 units";
  return res;
}

// ---- criteria 4 and 5: generator causality and gradients --------------------
GenConfig probe_config() {
  GenConfig cfg;
  cfg.scheme = CubeScheme{1, 2, 2};
  cfg.channels = 1;
  cfg.d_model = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.max_unit_tokens = 16;
  cfg.param_seed = 3;
  return cfg;
}

CheckResult check_generator_causality(bool full) {
  CheckResult res{"generator causality fuzz", true, "", 0.0};
  GenConfig cfg = probe_config();
  const NetParams params = init_params(cfg);
  const TokenPlan plan = token_plan(cfg.scheme, 4, 2, 2, 1);
  const AttentionMask mask = build_mask(plan.layout, MaskDirection::Forward);
  Rng rng(1004);
  std::vector<float> slab(plan.layout.total_tokens);
  for (auto& v : slab) v = rng.normal_f32();

  const uint32_t target = 1;
  const std::vector<float> base =
      forward_step(cfg, params, plan, slab, mask, target);

  const int future_trials = full ? 100 : 20;
  for (int i = 0; i < future_trials; ++i) {
    std::vector<float> poked = slab;
    const uint32_t lo = plan.layout.offsets[target + 1];
    const size_t idx =
        lo + static_cast<size_t>(rng.uniform() *
                                 (plan.layout.total_tokens - lo));
    poked[idx] += static_cast<float>(rng.normal() * 8.0);
    if (!bits_equal(base,
                    forward_step(cfg, params, plan, poked, mask, target))) {
      res.pass = false;
      res.detail = "future-unit perturbation leaked into unit " +
                   std::to_string(target);
      return res;
    }
  }
  const uint32_t past_target = 2;
  const std::vector<float> past_base =
      forward_step(cfg, params, plan, slab, mask, past_target);
  const int past_trials = full ? 20 : 5;
  for (int i = 0; i < past_trials; ++i) {
    std::vector<float> poked = slab;
    const size_t idx = static_cast<size_t>(
        rng.uniform() * plan.layout.offsets[past_target]);
    poked[idx] += 0.5f + static_cast<float>(std::abs(rng.normal()));
    if (bits_equal(past_base,
                   forward_step(cfg, params, plan, poked, mask, past_target))) {
      res.pass = false;
      res.detail = "past-unit perturbation ignored at index " +
                   std::to_string(idx);
      return res;
    }
  }
  res.detail = std::to_string(future_trials) + " future + " +
               std::to_string(past_trials) + " past perturbations behaved";
  return res;
}

CheckResult check_gradients(bool full) {
  CheckResult res{"gradient exactness", true, "", 0.0};
  const GenConfig cfg = probe_config();
  const NetParams params = init_params(cfg);
  const NetConfig net = generator_net_config(cfg);
  const TokenPlan plan = token_plan(cfg.scheme, 2, 2, 2, 1);
  const AttentionMask mask = build_mask(plan.layout, MaskDirection::Forward);
  Rng rng(1005);
  std::vector<float> slab(plan.layout.total_tokens);
  for (auto& v : slab) v = rng.normal_f32();
  std::vector<double> inputs(slab.begin(), slab.end());

  const uint32_t target = 1;
  NetTape tape;
  net_forward(net, params, inputs, plan.meta, mask, &tape);
  const uint32_t begin = plan.layout.offsets[target];
  const uint32_t end = plan.layout.offsets[target + 1];
  std::vector<double> upstream(plan.layout.total_tokens, 0.0);
  for (uint32_t tok = begin; tok < end; ++tok) upstream[tok] = rng.normal();
  const std::vector<double> analytic =
      net_backward(net, params, inputs, plan.meta, mask, tape, upstream);

  auto objective = [&](const NetParams& p) {
    const auto y = net_forward(net, p, inputs, plan.meta, mask, nullptr);
    double acc = 0.0;
    for (size_t i = 0; i < upstream.size(); ++i) acc += upstream[i] * y[i];
    return acc;
  };

  const double step = 1e-3;
  const size_t per_block = full ? 50 : 10;
  double worst = 0.0;
  size_t checked = 0;
  for (const ParamBlock& block : params.blocks) {
    const size_t n_coords = std::min(block.count, per_block);
    for (size_t probe = 0; probe < n_coords; ++probe) {
      const size_t idx = block.offset + (probe * 2654435761u) % block.count;
      NetParams plus = params, minus = params;
      plus.theta[idx] = static_cast<float>(plus.theta[idx] + step);
      minus.theta[idx] = static_cast<float>(minus.theta[idx] - step);
      const double realized = static_cast<double>(plus.theta[idx]) -
                              static_cast<double>(minus.theta[idx]);
      const double fd = (objective(plus) - objective(minus)) / realized;
      const double a = analytic[idx];
      const double scale = std::max({std::abs(a), std::abs(fd), 1e-8});
      const double rel = std::abs(a - fd) / scale;
      worst = std::max(worst, rel);
      if (rel >= 1e-4) {
        res.pass = false;
        res.detail = "block " + block.name + " coord " + std::to_string(idx) +
                     ": rel err " + std::to_string(rel);
        return res;
      }
      ++checked;
    }
  }
  std::ostringstream detail;
  detail << checked << " coordinates across " << params.blocks.size()
         << " blocks, worst rel err " << worst;
  res.detail = detail.str();
  return res;
}

// ---- criterion 6: symmetric distribution matching ---------------------------
CheckResult check_dmd(bool full) {
  CheckResult res{"distribution-matching training", true, "", 0.0};
  // (a) matched scorers give an exactly zero bracket
  {
    const AnalyticGaussian g{{0.8}, 1.5};
    const Scorer real = make_analytic_scorer(ScorerRole::Real, g);
    Scorer gen = make_analytic_scorer(ScorerRole::GeneratedFull, g);
    GeneratedScorerSet gens{&gen, nullptr, nullptr};
    NoiseKernel kernel;
    Rng rng(1006);
    for (int i = 0; i < 25; ++i) {
      std::vector<double> x{rng.normal() * 2.0};
      const DmdDraw draw =
          dmd_gradient(x, real, gens, kernel, SymmetricMode::Full, rng);
      if (draw.bracket[0] != 0.0 || draw.grad_x[0] != 0.0) {
        res.pass = false;
        res.detail = "matched scorers produced a nonzero bracket";
        return res;
      }
    }
  }
  // (b) 1-D mean shift
  {
    TrainConfig cfg;
    cfg.lr = 1e-2;
    cfg.steps = full ? 5000 : 2000;
    cfg.batch = 32;
    cfg.scorer_ratio = 5;
    cfg.seed = 0;
    cfg.mode = SymmetricMode::ForwardPlusBackward;
    const TrainResult toy = train_affine_toy(cfg, 3.0, 1.0);
    const double tol = full ? 0.05 : 0.1;
    if (std::abs(toy.final_mean - 3.0) >= tol) {
      res.pass = false;
      res.detail = "mean-shift run landed at " +
                   std::to_string(toy.final_mean) + " (target 3 +- " +
                   std::to_string(tol) + ")";
      return res;
    }
    res.detail = "mean-shift " + std::to_string(cfg.steps) +
                 " steps -> mean " + std::to_string(toy.final_mean);
  }
  // (b') direction property across repetitions
  {
    NoiseKernel kernel;
    const int reps = full ? 100 : 20;
    int correct = 0;
    Rng rng(1007);
    for (int rep = 0; rep < reps; ++rep) {
      const double mu_g = rng.normal();
      const double gap = (rep % 2 == 0 ? 1.0 : -1.0) *
                         (0.5 + std::abs(rng.normal()));
      const Scorer real = make_analytic_scorer(
          ScorerRole::Real, AnalyticGaussian{{mu_g + gap}, 1.0});
      Scorer gen = make_analytic_scorer(ScorerRole::GeneratedFull,
                                        AnalyticGaussian{{mu_g}, 1.0});
      GeneratedScorerSet gens{&gen, nullptr, nullptr};
      double grad_sum = 0.0;
      const int draws = full ? 10000 : 2000;
      for (int i = 0; i < draws; ++i) {
        std::vector<double> x{mu_g + rng.normal()};
        grad_sum +=
            dmd_gradient(x, real, gens, kernel, SymmetricMode::Full, rng)
                .grad_x[0];
      }
      if (std::signbit(-grad_sum) == std::signbit(gap)) ++correct;
    }
    if (correct * 100 < reps * 99) {
      res.pass = false;
      res.detail = "mean-update direction wrong in " +
                   std::to_string(reps - correct) + "/" +
                   std::to_string(reps) + " repetitions";
      return res;
    }
  }
  // (c) the four scorer configurations run and emit uniform traces
  {
    GenConfig gcfg;
    gcfg.scheme = CubeScheme{1, 2, 2};
    gcfg.channels = 1;
    gcfg.d_model = 8;
    gcfg.n_layers = 1;
    gcfg.n_heads = 2;
    gcfg.max_unit_tokens = 8;
    gcfg.param_seed = 11;
    const uint32_t steps = full ? 120 : 30;
    std::string header;
    for (auto mode : {SymmetricMode::Full, SymmetricMode::ForwardOnly,
                      SymmetricMode::BackwardOnly,
                      SymmetricMode::ForwardPlusBackward}) {
      TrainConfig cfg;
      cfg.lr = 5e-3;
      cfg.steps = steps;
      cfg.batch = 8;
      cfg.scorer_ratio = 5;
      cfg.seed = 42;
      cfg.mode = mode;
      const TrainResult sweep =
          train_unit_toy(cfg, gcfg, 2, 2, 2, AnalyticGaussian{{0.6}, 1.0});
      if (sweep.trace.size() != steps || !std::isfinite(sweep.final_mean)) {
        res.pass = false;
        res.detail = "mode " + mode_name(mode) + " did not complete";
        return res;
      }
      std::ostringstream out;
      write_trace_csv(sweep.trace, out);
      const std::string first_line = out.str().substr(0, out.str().find('\n'));
      if (header.empty()) header = first_line;
      if (first_line != header) {
        res.pass = false;
        res.detail = "trace schema differs across modes";
        return res;
      }
    }
    res.detail += "; zero-bracket, direction, and 4-mode sweep held";
  }
  return res;
}

// ---- criterion 7: streaming equivalence and boundedness ---------------------
CheckResult check_streaming(bool full) {
  CheckResult res{"streaming equivalence and boundedness", true, "", 0.0};
  Rng case_rng(1008);
  const int cases = full ? 50 : 10;
  for (int i = 0; i < cases; ++i) {
    const uint32_t t = pick(case_rng, {2, 4});
    const uint32_t h = pick(case_rng, {2, 4});
    const uint32_t w = pick(case_rng, {2, 4});
    const uint32_t c = pick(case_rng, {1, 2});
    UnitScheme scheme = random_voxel_scheme(case_rng, t, h, w);
    if (i % 5 == 4)
      scheme = MultiscaleScheme{{{1, 1, 1}, {t, h, w}}};

    GenConfig cfg;
    cfg.scheme = scheme;
    cfg.channels = c;
    cfg.d_model = 8;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.max_unit_tokens = 64;
    cfg.param_seed = 500 + static_cast<uint64_t>(i);
    const NetParams params = init_params(cfg);

    const uint64_t seed = 9000 + static_cast<uint64_t>(i);
    Rng direct_rng(seed), stream_rng(seed);
    const UnitSequence direct =
        generate_sequence(cfg, params, t, h, w, c, direct_rng);
    StreamOptions opts;
    opts.window = static_cast<uint32_t>(direct.units.size());
    const StreamResult stream =
        stream_generate(cfg, params, t, h, w, c, opts, stream_rng);
    if (stream.segments.size() != 1 ||
        stream.segments[0].units.size() != direct.units.size()) {
      res.pass = false;
      res.detail = "stream produced a different unit count";
      return res;
    }
    for (size_t u = 0; u < direct.units.size(); ++u) {
      if (!bits_equal(direct.units[u].payload,
                      stream.segments[0].units[u].payload)) {
        res.pass = false;
        res.detail = "case " + std::to_string(i) + " (" +
                     scheme_to_string(scheme) + "): unit " +
                     std::to_string(u) + " differs from the direct rollout";
        return res;
      }
    }
  }

  // fixed window: peak KV bytes independent of horizon, bounded residency
  GenConfig cfg;
  cfg.scheme = FrameScheme{};
  cfg.channels = 1;
  cfg.d_model = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.max_unit_tokens = 16;
  cfg.param_seed = 77;
  const NetParams params = init_params(cfg);
  auto peak_of = [&](uint32_t segments) {
    StreamOptions opts;
    opts.window = 3;
    opts.n_segments = segments;
    Rng rng(31);
    const StreamResult stream =
        stream_generate(cfg, params, 2, 2, 2, 1, opts, rng);
    for (const auto& m : stream.metrics.per_unit)
      if (m.context_units > 3)
        throw IntegrityError("window exceeded during streaming");
    return stream.metrics.peak_kv_bytes;
  };
  const size_t peak_short = peak_of(full ? 10 : 5);
  const size_t peak_long = peak_of(full ? 100 : 20);
  const double rel = std::abs(static_cast<double>(peak_long) -
                              static_cast<double>(peak_short)) /
                     static_cast<double>(peak_short);
  if (rel >= 0.01) {
    res.pass = false;
    res.detail = "peak KV bytes drifted " + std::to_string(rel * 100) +
                 "% with a longer horizon";
    return res;
  }

  // latency drift and exact attention-cost accounting; units are sized so
  // the medians sit well above timer noise, with retries against exogenous
  // load spikes
  GenConfig bench_cfg = cfg;
  bench_cfg.d_model = 16;
  bench_cfg.n_heads = 4;
  bench_cfg.max_unit_tokens = 64;
  const NetParams bench_params = init_params(bench_cfg);
  bool flat = false;
  std::string drift_detail;
  for (int attempt = 0; attempt < 3 && !flat; ++attempt) {
    const BenchReport bench = bench_throughput(
        bench_cfg, bench_params, 2, 8, 8, 1, /*window=*/3, full ? 200u : 60u,
        /*warmup=*/10, /*seed=*/5);
    if (!bench.macs_match_analytic) {
      res.pass = false;
      res.detail = "instrumented attention cost disagrees with the closed form";
      return res;
    }
    flat = !bench.latency_drift;
    drift_detail = "leading median " +
                   std::to_string(bench.leading_median_ns) + "ns, trailing " +
                   std::to_string(bench.trailing_median_ns) + "ns";
  }
  if (!flat) {
    res.pass = false;
    res.detail = "per-unit latency drifted beyond 20% (" + drift_detail + ")";
    return res;
  }
  res.detail = std::to_string(cases) +
               " window>=N cases bit-identical; peak KV bytes horizon-stable; "
               "latency flat; MACs exact";
  return res;
}

// ---- remaining per-module invariants not exercised above --------------------
CheckResult check_module_invariants(bool full) {
  CheckResult res{"module invariants", true, "", 0.0};

  // serialization round trips are bit-exact
  {
    Rng rng(2001);
    const int volumes = full ? 100 : 20;
    for (int i = 0; i < volumes; ++i) {
      const LatentVolume z =
          gaussian_volume(pick(rng, {1, 2, 4}), pick(rng, {1, 3}),
                          pick(rng, {2, 4}), pick(rng, {1, 2}), rng);
      const LatentVolume back = latent_from_bytes(latent_to_bytes(z));
      if (!bits_equal(z.data, back.data)) {
        res.pass = false;
        res.detail = "latent serialization round trip not bit-exact";
        return res;
      }
    }
  }
  // resize: identity is bit-exact, constants stay constant
  {
    Rng rng(2002);
    const LatentVolume z = gaussian_volume(3, 4, 2, 2, rng);
    if (!bits_equal(z.data, resize_volume(z, 3, 4, 2).data)) {
      res.pass = false;
      res.detail = "identity resize not bit-exact";
      return res;
    }
    LatentVolume c(2, 2, 2, 1);
    for (auto& v : c.data) v = 4.25f;
    for (float v : resize_volume(c, 5, 3, 4).data) {
      if (std::abs(v - 4.25f) > 1e-6f) {
        res.pass = false;
        res.detail = "constant volume drifted under resize";
        return res;
      }
    }
  }
  // equal seeds give equal draw sequences
  {
    Rng a(77), b(77);
    const int draws = full ? 10000 : 1000;
    for (int i = 0; i < draws; ++i) {
      if (a.next_u64() != b.next_u64()) {
        res.pass = false;
        res.detail = "generator state diverged under an equal seed";
        return res;
      }
    }
  }
  // partition and generation are pure functions of their inputs
  {
    Rng rng(2003);
    const LatentVolume z = gaussian_volume(4, 2, 2, 2, rng);
    const UnitSequence s1 = partition(z, KeyDetailScheme{2});
    const UnitSequence s2 = partition(z, KeyDetailScheme{2});
    for (size_t i = 0; i < s1.units.size(); ++i) {
      if (!bits_equal(s1.units[i].payload, s2.units[i].payload)) {
        res.pass = false;
        res.detail = "partition is not deterministic";
        return res;
      }
    }
    const GenConfig cfg = probe_config();
    const NetParams params = init_params(cfg);
    Rng g1(5), g2(5);
    const UnitSequence r1 = generate_sequence(cfg, params, 2, 2, 2, 1, g1);
    const UnitSequence r2 = generate_sequence(cfg, params, 2, 2, 2, 1, g2);
    for (size_t i = 0; i < r1.units.size(); ++i) {
      if (!bits_equal(r1.units[i].payload, r2.units[i].payload)) {
        res.pass = false;
        res.detail = "generation is not deterministic";
        return res;
      }
    }
  }
  // mode semantics: the unused scorer cannot influence the gradient
  {
    const Scorer real =
        make_analytic_scorer(ScorerRole::Real, AnalyticGaussian{{1.0}, 1.0});
    Scorer fwd = make_affine_scorer(ScorerRole::GeneratedForward,
                                    FrameScheme{}, 1, 1, 1, 1);
    Scorer bwd_a = make_affine_scorer(ScorerRole::GeneratedBackward,
                                      FrameScheme{}, 1, 1, 1, 1);
    Scorer bwd_b = bwd_a;
    bwd_b.learned->aff_w[0] = -55.0;
    NoiseKernel kernel;
    const std::vector<double> x{0.4};
    Rng r1(8), r2(8);
    const DmdDraw a = dmd_gradient(x, real, {nullptr, &fwd, &bwd_a}, kernel,
                                   SymmetricMode::ForwardOnly, r1);
    const DmdDraw b = dmd_gradient(x, real, {nullptr, &fwd, &bwd_b}, kernel,
                                   SymmetricMode::ForwardOnly, r2);
    if (std::memcmp(a.grad_x.data(), b.grad_x.data(), sizeof(double)) != 0) {
      res.pass = false;
      res.detail = "an unused scorer leaked into the gradient";
      return res;
    }
  }
  // causal scorers cannot see across their mask
  {
    NoiseKernel kernel;
    Scorer fwd = make_tiny_net_scorer(ScorerRole::GeneratedForward,
                                      FrameScheme{}, 4, 1, 1, 1, 8, 1, 2, 4, 3);
    std::vector<double> x{0.3, -0.1, 0.8, 0.4};
    const auto base = score(fwd, kernel, x, 0.5);
    std::vector<double> poked = x;
    poked[3] += 10.0;
    const auto after = score(fwd, kernel, poked, 0.5);
    for (int i = 0; i < 3; ++i) {
      if (base[i] != after[i]) {
        res.pass = false;
        res.detail = "forward scorer reacted to a future unit";
        return res;
      }
    }
  }
  // score matching recovers the unit-variance slope
  {
    NoiseKernel kernel;
    Rng rng(2004);
    std::vector<std::vector<double>> samples(512);
    for (auto& s : samples) s = {rng.normal()};
    Scorer sc = make_affine_scorer(ScorerRole::GeneratedForward,
                                   FrameScheme{}, 1, 1, 1, 1);
    Rng fit_rng(7);
    const DsmOptions opts{full ? 2000u : 800u, full ? 0.02 : 0.05,
                          full ? 64u : 32u};
    fit_generated_scorer(sc, samples, kernel, opts, fit_rng);
    if (std::abs(sc.learned->aff_w[0] + 1.0) >= 0.1) {
      res.pass = false;
      res.detail = "fitted score slope " +
                   std::to_string(sc.learned->aff_w[0]) +
                   " outside 10% of -1";
      return res;
    }
  }
  // out-of-order cache appends always rejected
  {
    KVCache cache(1, 4, 4);
    std::vector<std::pair<std::vector<double>, std::vector<double>>> kv(1);
    kv[0].first.assign(4, 0.0);
    kv[0].second.assign(4, 0.0);
    cache.append_unit(3, 1, kv);
    bool rejected = false;
    try {
      kv[0].first.assign(4, 0.0);
      kv[0].second.assign(4, 0.0);
      cache.append_unit(2, 1, kv);
    } catch (const ProtocolError&) {
      rejected = true;
    }
    if (!rejected) {
      res.pass = false;
      res.detail = "out-of-order cache append was accepted";
      return res;
    }
  }
  res.detail =
      "serialization, resize, seeding, purity, mode isolation, scorer "
      "causality, score-matching slope, cache protocol";
  return res;
}

}  // namespace

std::vector<CheckResult> run_checks(const Options& opts, std::ostream& out) {
  using Clock = std::chrono::steady_clock;
  std::vector<std::pair<std::string, std::function<CheckResult(bool)>>> checks =
      {
          {"round-trip exactness", check_round_trip},
          {"step-count formulas", check_step_counts},
          {"mask causality and symmetry", check_masks},
          {"generator causality fuzz", check_generator_causality},
          {"gradient exactness", check_gradients},
          {"distribution-matching training", check_dmd},
          {"streaming equivalence and boundedness", check_streaming},
          {"module invariants", check_module_invariants},
      };
  std::vector<CheckResult> results;
  for (size_t i = 0; i < checks.size(); ++i) {
    const auto t0 = Clock::now();
    CheckResult res;
    try {
      res = checks[i].second(opts.full);
    } catch (const std::exception& err) {
      res.name = checks[i].first;
      res.pass = false;
      res.detail = std::string("exception: ") + err.what();
    }
    res.seconds =
        std::chrono::duration<double>(Clock::now() - t0).count();
    out << "[" << (i + 1) << "/" << checks.size() << "] "
        << (res.pass ? "PASS" : "FAIL") << "  " << res.name;
    if (!res.detail.empty()) out << " -- " << res.detail;
    out << "  (" << res.seconds << "s)\n";
    out.flush();
    results.push_back(std::move(res));
  }
  return results;
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return !results.empty();
}

}  // namespace unitar::selftest
