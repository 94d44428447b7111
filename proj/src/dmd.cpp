// SPDX-License-Identifier: Apache-2.0
#include "unitar/dmd.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "unitar/errors.hpp"

namespace unitar {

double NoiseKernel::alpha(double tau) const {
  return std::cos(0.5 * std::numbers::pi * tau);
}

double NoiseKernel::beta(double tau) const {
  return std::sin(0.5 * std::numbers::pi * tau);
}

double NoiseKernel::sample_tau(Rng& rng) const {
  return rng.uniform(tau_min, tau_max);
}

MaskDirection role_direction(ScorerRole role) {
  switch (role) {
    case ScorerRole::Real:
    case ScorerRole::GeneratedFull:
      return MaskDirection::Full;
    case ScorerRole::GeneratedForward:
      return MaskDirection::Forward;
    case ScorerRole::GeneratedBackward:
      return MaskDirection::Backward;
  }
  return MaskDirection::Full;
}

std::string role_name(ScorerRole role) {
  switch (role) {
    case ScorerRole::Real:
      return "real";
    case ScorerRole::GeneratedFull:
      return "generated-full";
    case ScorerRole::GeneratedForward:
      return "generated-forward";
    case ScorerRole::GeneratedBackward:
      return "generated-backward";
  }
  return "?";
}

std::string mode_name(SymmetricMode mode) {
  switch (mode) {
    case SymmetricMode::Full:
      return "full";
    case SymmetricMode::ForwardOnly:
      return "forward";
    case SymmetricMode::BackwardOnly:
      return "backward";
    case SymmetricMode::ForwardPlusBackward:
      return "forward+backward";
  }
  return "?";
}

Scorer make_analytic_scorer(ScorerRole role, AnalyticGaussian params) {
  if (params.mu.empty())
    throw std::invalid_argument("analytic scorer needs a mean vector");
  if (!(params.sigma2 > 0.0))
    throw std::invalid_argument("analytic scorer needs sigma2 > 0");
  Scorer s;
  s.role = role;
  s.dir = role_direction(role);
  s.analytic = std::move(params);
  return s;
}

namespace {

LearnedScorer make_learned_base(ScorerRole role, const UnitScheme& scheme,
                                uint32_t t, uint32_t h, uint32_t w,
                                uint32_t c) {
  // a learned Real scorer is allowed (full attention, frozen in training)
  LearnedScorer ls;
  (void)role;
  ls.plan = token_plan(scheme, t, h, w, c);
  ls.mask = build_mask(ls.plan.layout, role_direction(role));
  ls.channels = c;
  ls.dim = static_cast<size_t>(ls.plan.layout.total_tokens) * c;
  return ls;
}

}  // namespace

Scorer make_affine_scorer(ScorerRole role, const UnitScheme& scheme,
                          uint32_t t, uint32_t h, uint32_t w, uint32_t c) {
  Scorer s;
  s.role = role;
  s.dir = role_direction(role);
  s.learned = make_learned_base(role, scheme, t, h, w, c);
  LearnedScorer& ls = *s.learned;
  ls.arch = LearnedScorer::Arch::Affine;
  ls.aff_w.assign(ls.dim * ls.dim, 0.0);
  ls.aff_u.assign(ls.dim, 0.0);
  ls.aff_v.assign(ls.dim, 0.0);
  return s;
}

Scorer make_tiny_net_scorer(ScorerRole role, const UnitScheme& scheme,
                            uint32_t t, uint32_t h, uint32_t w, uint32_t c,
                            uint32_t d_model, uint32_t n_layers,
                            uint32_t n_heads, uint32_t max_unit_tokens,
                            uint64_t param_seed) {
  Scorer s;
  s.role = role;
  s.dir = role_direction(role);
  s.learned = make_learned_base(role, scheme, t, h, w, c);
  LearnedScorer& ls = *s.learned;
  ls.arch = LearnedScorer::Arch::TinyNet;
  ls.net.in_dim = c + 1;  // payload channels plus the signal level
  ls.net.out_dim = c;
  ls.net.d_model = d_model;
  ls.net.n_layers = n_layers;
  ls.net.n_heads = n_heads;
  ls.net.max_unit_tokens = max_unit_tokens;
  ls.net.param_seed = param_seed;
  ls.params = net_init(ls.net);
  return s;
}

namespace {

std::vector<double> learned_score(const LearnedScorer& ls,
                                  const NoiseKernel& kernel,
                                  std::span<const double> x, double tau) {
  const double a = kernel.alpha(tau);
  if (ls.arch == LearnedScorer::Arch::Affine) {
    const size_t dim = ls.dim;
    const uint32_t c = ls.channels;
    std::vector<double> s(dim, 0.0);
    for (size_t i = 0; i < dim; ++i) {
      const uint32_t qi = static_cast<uint32_t>(i / c);
      double acc = ls.aff_v[i] + ls.aff_u[i] * a;
      const double* wrow = ls.aff_w.data() + i * dim;
      for (size_t j = 0; j < dim; ++j) {
        if (!ls.mask.at(qi, static_cast<uint32_t>(j / c))) continue;
        acc += wrow[j] * x[j];
      }
      s[i] = acc;
    }
    return s;
  }
  // tiny net: one row per token, channels then alpha
  const size_t n = ls.plan.layout.total_tokens;
  const uint32_t c = ls.channels;
  std::vector<double> inputs(n * (c + 1));
  for (size_t tok = 0; tok < n; ++tok) {
    for (uint32_t ci = 0; ci < c; ++ci) inputs[tok * (c + 1) + ci] = x[tok * c + ci];
    inputs[tok * (c + 1) + c] = a;
  }
  return net_forward(ls.net, ls.params, inputs, ls.plan.meta, ls.mask, nullptr);
}

}  // namespace

std::vector<double> score(const Scorer& scorer, const NoiseKernel& kernel,
                          std::span<const double> x_noisy, double tau,
                          MaskDirection expect_dir) {
  if (expect_dir != scorer.dir)
    throw ConfigError("scorer configured for " + direction_name(scorer.dir) +
                      " mask evaluated with " + direction_name(expect_dir) +
                      " mask");
  if (scorer.analytic) {
    const auto& g = *scorer.analytic;
    const double a = kernel.alpha(tau);
    const double b = kernel.beta(tau);
    const double denom = a * a * g.sigma2 + b * b;
    std::vector<double> s(x_noisy.size());
    for (size_t i = 0; i < x_noisy.size(); ++i) {
      const double mu = g.mu.size() == 1 ? g.mu[0] : g.mu.at(i);
      s[i] = -(x_noisy[i] - a * mu) / denom;
    }
    return s;
  }
  if (!scorer.learned) throw ConfigError("scorer has no backing model");
  if (x_noisy.size() != scorer.learned->dim)
    throw std::invalid_argument("sample length " +
                                std::to_string(x_noisy.size()) +
                                " != scorer dim " +
                                std::to_string(scorer.learned->dim));
  return learned_score(*scorer.learned, kernel, x_noisy, tau);
}

std::vector<double> score(const Scorer& scorer, const NoiseKernel& kernel,
                          std::span<const double> x_noisy, double tau) {
  return score(scorer, kernel, x_noisy, tau, scorer.dir);
}

namespace {

const Scorer* pick_scorer(const GeneratedScorerSet& gens, SymmetricMode mode,
                          bool second) {
  switch (mode) {
    case SymmetricMode::Full:
      return second ? nullptr : gens.full;
    case SymmetricMode::ForwardOnly:
      return second ? nullptr : gens.fwd;
    case SymmetricMode::BackwardOnly:
      return second ? nullptr : gens.bwd;
    case SymmetricMode::ForwardPlusBackward:
      return second ? gens.bwd : gens.fwd;
  }
  return nullptr;
}

void check_generated_role(const Scorer& s, ScorerRole want) {
  if (s.role != want)
    throw ConfigError("expected a " + role_name(want) + " scorer, got " +
                      role_name(s.role));
}

}  // namespace

DmdDraw dmd_gradient(std::span<const double> x, const Scorer& real,
                     const GeneratedScorerSet& gens, const NoiseKernel& kernel,
                     SymmetricMode mode, Rng& rng) {
  if (real.role != ScorerRole::Real)
    throw ConfigError("real-scorer slot holds a " + role_name(real.role) +
                      " scorer");
  const Scorer* first = pick_scorer(gens, mode, false);
  const Scorer* second = pick_scorer(gens, mode, true);
  if (!first || (mode == SymmetricMode::ForwardPlusBackward && !second))
    throw ConfigError("mode " + mode_name(mode) +
                      " needs a generated scorer that was not supplied");
  switch (mode) {
    case SymmetricMode::Full:
      check_generated_role(*first, ScorerRole::GeneratedFull);
      break;
    case SymmetricMode::ForwardOnly:
      check_generated_role(*first, ScorerRole::GeneratedForward);
      break;
    case SymmetricMode::BackwardOnly:
      check_generated_role(*first, ScorerRole::GeneratedBackward);
      break;
    case SymmetricMode::ForwardPlusBackward:
      check_generated_role(*first, ScorerRole::GeneratedForward);
      check_generated_role(*second, ScorerRole::GeneratedBackward);
      break;
  }

  DmdDraw draw;
  draw.tau = kernel.sample_tau(rng);
  const double a = kernel.alpha(draw.tau);
  const double b = kernel.beta(draw.tau);

  std::vector<double> x_noisy(x.size());
  for (size_t i = 0; i < x.size(); ++i)
    x_noisy[i] = a * x[i] + b * rng.normal();

  const std::vector<double> s_real =
      score(real, kernel, x_noisy, draw.tau, real.dir);
  std::vector<double> s_gen = score(*first, kernel, x_noisy, draw.tau);
  if (second) {
    const std::vector<double> s_bwd =
        score(*second, kernel, x_noisy, draw.tau);
    for (size_t i = 0; i < s_gen.size(); ++i)
      s_gen[i] = 0.5 * (s_gen[i] + s_bwd[i]);
  }

  draw.bracket.resize(x.size());
  draw.grad_x.resize(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double diff = s_real[i] - s_gen[i];
    if (!std::isfinite(diff))
      throw NumericError("non-finite score difference at tau=" +
                         std::to_string(draw.tau));
    draw.bracket[i] = diff;
    draw.grad_x[i] = -a * diff;
  }
  return draw;
}

namespace {

// One DSM mini-batch step; returns the (weighted) batch loss and updates the
// scorer in place.
double dsm_step(LearnedScorer& ls, const NoiseKernel& kernel,
                const std::vector<std::vector<double>>& samples, double lr,
                uint32_t batch, Rng& rng) {
  const size_t dim = ls.dim;
  double loss = 0.0;

  if (ls.arch == LearnedScorer::Arch::Affine) {
    std::vector<double> dw(dim * dim, 0.0), du(dim, 0.0), dv(dim, 0.0);
    const uint32_t c = ls.channels;
    for (uint32_t bi = 0; bi < batch; ++bi) {
      const auto& x =
          samples[static_cast<size_t>(rng.uniform() * samples.size()) %
                  samples.size()];
      const double tau = kernel.sample_tau(rng);
      const double a = kernel.alpha(tau);
      const double b = kernel.beta(tau);
      std::vector<double> eps(dim), x_noisy(dim);
      for (size_t i = 0; i < dim; ++i) {
        eps[i] = rng.normal();
        x_noisy[i] = a * x[i] + b * eps[i];
      }
      const std::vector<double> s = learned_score(ls, kernel, x_noisy, tau);
      for (size_t i = 0; i < dim; ++i) {
        const double r = b * s[i] + eps[i];
        loss += r * r / static_cast<double>(dim);
        const double ds = 2.0 * b * r /
                          (static_cast<double>(dim) * batch);
        const uint32_t qi = static_cast<uint32_t>(i / c);
        for (size_t j = 0; j < dim; ++j) {
          if (!ls.mask.at(qi, static_cast<uint32_t>(j / c))) continue;
          dw[i * dim + j] += ds * x_noisy[j];
        }
        du[i] += ds * a;
        dv[i] += ds;
      }
    }
    for (size_t i = 0; i < dim * dim; ++i) ls.aff_w[i] -= lr * dw[i];
    for (size_t i = 0; i < dim; ++i) {
      ls.aff_u[i] -= lr * du[i];
      ls.aff_v[i] -= lr * dv[i];
    }
    return loss / batch;
  }

  // tiny net
  std::vector<double> dtheta(ls.params.size(), 0.0);
  const size_t n = ls.plan.layout.total_tokens;
  const uint32_t c = ls.channels;
  for (uint32_t bi = 0; bi < batch; ++bi) {
    const auto& x =
        samples[static_cast<size_t>(rng.uniform() * samples.size()) %
                samples.size()];
    const double tau = kernel.sample_tau(rng);
    const double a = kernel.alpha(tau);
    const double b = kernel.beta(tau);
    std::vector<double> eps(dim), x_noisy(dim);
    for (size_t i = 0; i < dim; ++i) {
      eps[i] = rng.normal();
      x_noisy[i] = a * x[i] + b * eps[i];
    }
    std::vector<double> inputs(n * (c + 1));
    for (size_t tok = 0; tok < n; ++tok) {
      for (uint32_t ci = 0; ci < c; ++ci)
        inputs[tok * (c + 1) + ci] = x_noisy[tok * c + ci];
      inputs[tok * (c + 1) + c] = a;
    }
    NetTape tape;
    const std::vector<double> s = net_forward(ls.net, ls.params, inputs,
                                              ls.plan.meta, ls.mask, &tape);
    std::vector<double> upstream(dim);
    for (size_t i = 0; i < dim; ++i) {
      const double r = b * s[i] + eps[i];
      loss += r * r / static_cast<double>(dim);
      upstream[i] = 2.0 * b * r / (static_cast<double>(dim) * batch);
    }
    const std::vector<double> grad = net_backward(
        ls.net, ls.params, inputs, ls.plan.meta, ls.mask, tape, upstream);
    for (size_t i = 0; i < dtheta.size(); ++i) dtheta[i] += grad[i];
  }
  for (size_t i = 0; i < ls.params.theta.size(); ++i)
    ls.params.theta[i] =
        static_cast<float>(ls.params.theta[i] - lr * dtheta[i]);
  return loss / batch;
}

}  // namespace

std::vector<double> fit_generated_scorer(
    Scorer& scorer, const std::vector<std::vector<double>>& samples,
    const NoiseKernel& kernel, const DsmOptions& opts, Rng& rng) {
  if (scorer.role == ScorerRole::Real)
    throw ConfigError("the real scorer is frozen; only generated scorers are "
                      "fitted");
  if (!scorer.is_learned())
    throw ConfigError("analytic scorers have no trainable parameters");
  if (opts.steps == 0) return {};
  if (samples.empty())
    throw std::invalid_argument("need at least one generator sample");
  for (const auto& x : samples)
    if (x.size() != scorer.learned->dim)
      throw std::invalid_argument("sample length does not match scorer dim");

  // per-step losses swing with the tau draws, so the divergence guard
  // compares 50-step windowed averages against the first window
  constexpr size_t kWindow = 50;
  std::vector<double> trace;
  trace.reserve(opts.steps);
  double window_sum = 0.0;
  double baseline = 0.0;
  for (uint32_t step = 0; step < opts.steps; ++step) {
    const double loss =
        dsm_step(*scorer.learned, kernel, samples, opts.lr, opts.batch, rng);
    if (!std::isfinite(loss))
      throw TrainingError("score-matching diverged (non-finite loss) at step " +
                          std::to_string(step));
    trace.push_back(loss);
    window_sum += loss;
    if (trace.size() > kWindow) window_sum -= trace[trace.size() - kWindow - 1];
    if (trace.size() == kWindow)
      baseline = std::max(window_sum / kWindow, 1e-12);
    if (trace.size() > kWindow && window_sum / kWindow > 10.0 * baseline)
      throw TrainingError("score-matching diverged at step " +
                          std::to_string(step) + ": smoothed loss " +
                          std::to_string(window_sum / kWindow) +
                          " vs initial " + std::to_string(baseline));
  }
  return trace;
}

// ---------------------------------------------------------------------------
// generators

AffineGenerator::AffineGenerator(size_t dim, double w0, double b0)
    : weight_(dim, w0), bias_(dim, b0) {
  if (dim == 0) throw std::invalid_argument("generator dim must be >= 1");
}

std::vector<double> AffineGenerator::sample(Rng& rng,
                                            std::vector<double>* z_out) {
  std::vector<double> z(weight_.size());
  for (auto& v : z) v = rng.normal();
  std::vector<double> x(weight_.size());
  for (size_t i = 0; i < x.size(); ++i) x[i] = weight_[i] * z[i] + bias_[i];
  if (z_out) *z_out = std::move(z);
  return x;
}

void AffineGenerator::apply_gradient(
    const std::vector<std::vector<double>>& zs,
    const std::vector<std::vector<double>>& grads, double lr) {
  if (zs.size() != grads.size() || zs.empty())
    throw std::invalid_argument("batch noise/gradient mismatch");
  const double inv_batch = 1.0 / static_cast<double>(zs.size());
  for (size_t s = 0; s < zs.size(); ++s) {
    for (size_t i = 0; i < weight_.size(); ++i) {
      weight_[i] -= lr * inv_batch * grads[s][i] * zs[s][i];
      bias_[i] -= lr * inv_batch * grads[s][i];
    }
  }
}

SequenceGenerator::SequenceGenerator(GenConfig cfg, uint32_t t, uint32_t h,
                                     uint32_t w)
    : cfg_(std::move(cfg)),
      t_(t),
      h_(h),
      w_(w),
      plan_(token_plan(cfg_.scheme, t, h, w, cfg_.channels)),
      mask_(build_mask(plan_.layout, MaskDirection::Forward)),
      params_(init_params(cfg_)) {}

size_t SequenceGenerator::dim() const {
  return static_cast<size_t>(plan_.layout.total_tokens) * cfg_.channels;
}

std::vector<float> SequenceGenerator::rollout(std::span<const double> z,
                                              std::vector<NetTape>* tapes) const {
  const uint32_t n_units =
      static_cast<uint32_t>(plan_.layout.tokens_per_unit.size());
  std::vector<float> slab(dim(), 0.0f);
  if (tapes) tapes->assign(n_units, {});
  for (uint32_t i = 0; i < n_units; ++i) {
    const size_t begin = static_cast<size_t>(plan_.layout.offsets[i]) *
                         cfg_.channels;
    const size_t end = static_cast<size_t>(plan_.layout.offsets[i + 1]) *
                       cfg_.channels;
    for (size_t p = begin; p < end; ++p) slab[p] = static_cast<float>(z[p]);
    const std::vector<float> payload = forward_step(
        cfg_, params_, plan_, slab, mask_, i, tapes ? &(*tapes)[i] : nullptr);
    std::copy(payload.begin(), payload.end(), slab.begin() + begin);
  }
  return slab;
}

std::vector<double> SequenceGenerator::sample(Rng& rng,
                                              std::vector<double>* z_out) {
  std::vector<double> z(dim());
  for (auto& v : z) v = rng.normal();
  const std::vector<float> slab = rollout(z, nullptr);
  if (z_out) *z_out = std::move(z);
  std::vector<double> x(slab.size());
  for (size_t i = 0; i < slab.size(); ++i) x[i] = slab[i];
  return x;
}

void SequenceGenerator::apply_gradient(
    const std::vector<std::vector<double>>& zs,
    const std::vector<std::vector<double>>& grads, double lr) {
  if (zs.size() != grads.size() || zs.empty())
    throw std::invalid_argument("batch noise/gradient mismatch");
  const uint32_t n_units =
      static_cast<uint32_t>(plan_.layout.tokens_per_unit.size());
  std::vector<double> dtheta(params_.size(), 0.0);
  std::vector<NetTape> tapes;
  for (size_t s = 0; s < zs.size(); ++s) {
    // replay the rollout this sample came from, then push each unit's
    // gradient through that unit's own pass
    std::vector<float> slab = rollout(zs[s], &tapes);
    std::vector<float> step_slab(slab.size());
    for (uint32_t i = 0; i < n_units; ++i) {
      const size_t begin = static_cast<size_t>(plan_.layout.offsets[i]) *
                           cfg_.channels;
      const size_t end = static_cast<size_t>(plan_.layout.offsets[i + 1]) *
                         cfg_.channels;
      // the slab as it looked at step i: prefix payloads, own noise,
      // zeros after
      std::fill(step_slab.begin(), step_slab.end(), 0.0f);
      std::copy(slab.begin(), slab.begin() + begin, step_slab.begin());
      for (size_t p = begin; p < end; ++p)
        step_slab[p] = static_cast<float>(zs[s][p]);

      std::span<const double> upstream(grads[s].data() + begin, end - begin);
      const std::vector<double> grad = backward_step(
          cfg_, params_, plan_, step_slab, mask_, i, tapes[i], upstream);
      for (size_t p = 0; p < dtheta.size(); ++p) dtheta[p] += grad[p];
    }
  }
  const double inv_batch = 1.0 / static_cast<double>(zs.size());
  for (size_t p = 0; p < params_.theta.size(); ++p)
    params_.theta[p] = static_cast<float>(params_.theta[p] -
                                          lr * inv_batch * dtheta[p]);
}

// ---------------------------------------------------------------------------
// training loop

TrainResult train_generator(const TrainConfig& cfg, const Scorer& real,
                            GeneratedScorerSet gens, DmdGenerator& gen,
                            const NoiseKernel& kernel) {
  if (cfg.lr <= 0.0 || cfg.steps == 0 || cfg.batch == 0)
    throw std::invalid_argument("train config values must be positive");
  Rng rng(cfg.seed);

  struct ActiveScorer {
    Scorer* scorer;
    double TraceRow::* loss_slot;
  };
  std::vector<ActiveScorer> active;
  switch (cfg.mode) {
    case SymmetricMode::Full:
      active.push_back({gens.full, &TraceRow::loss_full});
      break;
    case SymmetricMode::ForwardOnly:
      active.push_back({gens.fwd, &TraceRow::loss_fwd});
      break;
    case SymmetricMode::BackwardOnly:
      active.push_back({gens.bwd, &TraceRow::loss_bwd});
      break;
    case SymmetricMode::ForwardPlusBackward:
      active.push_back({gens.fwd, &TraceRow::loss_fwd});
      active.push_back({gens.bwd, &TraceRow::loss_bwd});
      break;
  }
  for (const auto& a : active)
    if (!a.scorer)
      throw ConfigError("mode " + mode_name(cfg.mode) +
                        " needs a generated scorer that was not supplied");

  TrainResult result;
  result.trace.reserve(cfg.steps);
  for (uint32_t step = 1; step <= cfg.steps; ++step) {
    TraceRow row;
    row.step = step;
    try {
      // generated-scorer updates on fresh generator samples
      bool any_learned = false;
      for (const auto& a : active) any_learned |= a.scorer->is_learned();
      if (any_learned && cfg.scorer_ratio > 0) {
        std::vector<std::vector<double>> pool(cfg.batch);
        for (auto& x : pool) x = gen.sample(rng, nullptr);
        DsmOptions opts{cfg.scorer_ratio, cfg.lr, cfg.batch};
        for (const auto& a : active) {
          if (!a.scorer->is_learned()) continue;
          const std::vector<double> losses =
              fit_generated_scorer(*a.scorer, pool, kernel, opts, rng);
          double sum = 0.0;
          for (double l : losses) sum += l;
          row.*(a.loss_slot) = sum / losses.size();
        }
      }

      // generator update
      std::vector<std::vector<double>> zs(cfg.batch), grads(cfg.batch);
      double mean_acc = 0.0, bracket_acc = 0.0;
      for (uint32_t bi = 0; bi < cfg.batch; ++bi) {
        std::vector<double> z;
        const std::vector<double> x = gen.sample(rng, &z);
        const DmdDraw draw =
            dmd_gradient(x, real, gens, kernel, cfg.mode, rng);
        double m = 0.0;
        for (double v : x) m += v;
        mean_acc += m / static_cast<double>(x.size());
        double b2 = 0.0;
        for (double v : draw.bracket) b2 += v * v;
        bracket_acc += std::sqrt(b2);
        zs[bi] = std::move(z);
        grads[bi] = draw.grad_x;
      }
      gen.apply_gradient(zs, grads, cfg.lr);
      row.sample_mean = mean_acc / cfg.batch;
      row.bracket_norm = bracket_acc / cfg.batch;
    } catch (const NumericError& err) {
      throw TrainingError("aborted at step " + std::to_string(step) + ": " +
                          err.what());
    }
    result.trace.push_back(row);
  }

  // held-out estimate of the generator's final distribution
  const uint32_t eval_draws = 10000;
  double sum = 0.0, sum2 = 0.0;
  size_t count = 0;
  for (uint32_t i = 0; i < eval_draws; ++i) {
    const std::vector<double> x = gen.sample(rng, nullptr);
    for (double v : x) {
      sum += v;
      sum2 += v * v;
      ++count;
    }
  }
  result.final_mean = sum / static_cast<double>(count);
  result.final_std = std::sqrt(
      std::max(0.0, sum2 / static_cast<double>(count) -
                        result.final_mean * result.final_mean));
  return result;
}

TrainResult train_affine_toy(const TrainConfig& cfg, double target_mean,
                             double target_var) {
  const NoiseKernel kernel;
  const Scorer real = make_analytic_scorer(
      ScorerRole::Real, AnalyticGaussian{{target_mean}, target_var});
  const UnitScheme scheme = FrameScheme{};
  Scorer full = make_affine_scorer(ScorerRole::GeneratedFull, scheme, 1, 1, 1, 1);
  Scorer fwd =
      make_affine_scorer(ScorerRole::GeneratedForward, scheme, 1, 1, 1, 1);
  Scorer bwd =
      make_affine_scorer(ScorerRole::GeneratedBackward, scheme, 1, 1, 1, 1);
  GeneratedScorerSet gens{&full, &fwd, &bwd};
  AffineGenerator gen(1, 1.0, 0.0);
  return train_generator(cfg, real, gens, gen, kernel);
}

TrainResult train_unit_toy(const TrainConfig& cfg, const GenConfig& gen_cfg,
                           uint32_t t, uint32_t h, uint32_t w,
                           const AnalyticGaussian& target) {
  const NoiseKernel kernel;
  const Scorer real = make_analytic_scorer(ScorerRole::Real, target);
  auto replica = [&](ScorerRole role, uint64_t seed_offset) {
    return make_tiny_net_scorer(role, gen_cfg.scheme, t, h, w,
                                gen_cfg.channels, gen_cfg.d_model,
                                gen_cfg.n_layers, gen_cfg.n_heads,
                                gen_cfg.max_unit_tokens,
                                gen_cfg.param_seed + seed_offset);
  };
  Scorer full = replica(ScorerRole::GeneratedFull, 101);
  Scorer fwd = replica(ScorerRole::GeneratedForward, 202);
  Scorer bwd = replica(ScorerRole::GeneratedBackward, 303);
  GeneratedScorerSet gens{&full, &fwd, &bwd};
  SequenceGenerator gen(gen_cfg, t, h, w);
  return train_generator(cfg, real, gens, gen, kernel);
}

// ---------------------------------------------------------------------------
// trace output

namespace {

std::string format_metric(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_trace_csv(const std::vector<TraceRow>& rows, std::ostream& out) {
  out << "step,sample_mean,bracket_norm,loss_full,loss_fwd,loss_bwd\n";
  for (const auto& r : rows) {
    out << r.step << "," << format_metric(r.sample_mean) << ","
        << format_metric(r.bracket_norm) << "," << format_metric(r.loss_full)
        << "," << format_metric(r.loss_fwd) << ","
        << format_metric(r.loss_bwd) << "\n";
  }
}

void write_trace_jsonl(const std::vector<TraceRow>& rows, std::ostream& out) {
  auto field = [](double v) {
    return std::isnan(v) ? std::string("null") : format_metric(v);
  };
  for (const auto& r : rows) {
    out << "{\"step\":" << r.step
        << ",\"sample_mean\":" << field(r.sample_mean)
        << ",\"bracket_norm\":" << field(r.bracket_norm)
        << ",\"loss_full\":" << field(r.loss_full)
        << ",\"loss_fwd\":" << field(r.loss_fwd)
        << ",\"loss_bwd\":" << field(r.loss_bwd) << "}\n";
  }
}

}  // namespace unitar
