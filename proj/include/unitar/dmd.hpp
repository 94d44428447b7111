// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "unitar/generator.hpp"

namespace unitar {

/// Variance-preserving forward-noising rule: x~ = alpha(tau) x + beta(tau) e
/// with alpha = cos(pi tau / 2), beta = sin(pi tau / 2), tau uniform on
/// [tau_min, tau_max]. alpha^2 + beta^2 = 1 at every level.
struct NoiseKernel {
  double tau_min = 0.02;
  double tau_max = 0.98;

  double alpha(double tau) const;
  double beta(double tau) const;
  double sample_tau(Rng& rng) const;
};

enum class ScorerRole : uint8_t {
  Real,               // frozen, full attention
  GeneratedFull,      // generated-data scorer, full attention
  GeneratedForward,   // generated-data scorer, forward causal
  GeneratedBackward,  // generated-data scorer, backward causal
};

MaskDirection role_direction(ScorerRole role);
std::string role_name(ScorerRole role);

/// Closed-form Gaussian score target: mu broadcast over the sample when it
/// holds a single entry, sigma2 isotropic.
struct AnalyticGaussian {
  std::vector<double> mu{0.0};
  double sigma2 = 1.0;
};

/// Trainable scorer over one token structure. Two architectures:
/// a mask-respecting affine map (exactly solvable; the replica of an affine
/// generator) and a tiny transformer replica conditioned on the signal
/// level alpha(tau) through an extra input channel.
struct LearnedScorer {
  enum class Arch : uint8_t { Affine, TinyNet };
  Arch arch = Arch::Affine;

  TokenPlan plan;
  AttentionMask mask;
  uint32_t channels = 1;
  size_t dim = 0;  // total_tokens * channels

  // Affine: s = W x~ + u alpha + v, W restricted to mask-allowed entries.
  std::vector<double> aff_w;  // dim x dim
  std::vector<double> aff_u, aff_v;

  // TinyNet: in_dim = channels + 1 (payload channels plus alpha).
  NetConfig net;
  NetParams params;
};

struct Scorer {
  ScorerRole role = ScorerRole::Real;
  MaskDirection dir = MaskDirection::Full;
  std::optional<AnalyticGaussian> analytic;
  std::optional<LearnedScorer> learned;

  bool is_learned() const { return learned.has_value(); }
};

Scorer make_analytic_scorer(ScorerRole role, AnalyticGaussian params);
Scorer make_affine_scorer(ScorerRole role, const UnitScheme& scheme,
                          uint32_t t, uint32_t h, uint32_t w, uint32_t c);
Scorer make_tiny_net_scorer(ScorerRole role, const UnitScheme& scheme,
                            uint32_t t, uint32_t h, uint32_t w, uint32_t c,
                            uint32_t d_model, uint32_t n_layers,
                            uint32_t n_heads, uint32_t max_unit_tokens,
                            uint64_t param_seed);

/// Evaluate the scorer at one noised sample. `expect_dir` must match the
/// scorer's configured mask direction (ConfigError otherwise).
std::vector<double> score(const Scorer& scorer, const NoiseKernel& kernel,
                          std::span<const double> x_noisy, double tau,
                          MaskDirection expect_dir);
std::vector<double> score(const Scorer& scorer, const NoiseKernel& kernel,
                          std::span<const double> x_noisy, double tau);

enum class SymmetricMode : uint8_t {
  Full,
  ForwardOnly,
  BackwardOnly,
  ForwardPlusBackward,
};
std::string mode_name(SymmetricMode mode);

struct GeneratedScorerSet {
  Scorer* full = nullptr;
  Scorer* fwd = nullptr;
  Scorer* bwd = nullptr;
};

/// One stochastic draw of the score-difference gradient on a generator
/// sample: pick tau and e, noise the sample, evaluate real and generated
/// scores, and push the difference back through the mixing rule.
/// grad_x = alpha(tau) * (s_gen - s_real).
struct DmdDraw {
  double tau = 0.0;
  std::vector<double> bracket;  // s_real - s_gen
  std::vector<double> grad_x;
};
DmdDraw dmd_gradient(std::span<const double> x, const Scorer& real,
                     const GeneratedScorerSet& gens, const NoiseKernel& kernel,
                     SymmetricMode mode, Rng& rng);

/// Denoising score matching on generator samples; returns the per-step
/// loss trace. steps == 0 leaves the scorer bit-identical.
struct DsmOptions {
  uint32_t steps = 100;
  double lr = 1e-2;
  uint32_t batch = 32;
};
std::vector<double> fit_generated_scorer(
    Scorer& scorer, const std::vector<std::vector<double>>& samples,
    const NoiseKernel& kernel, const DsmOptions& opts, Rng& rng);

// ---------------------------------------------------------------------------
// training loop

struct TrainConfig {
  double lr = 1e-2;
  uint32_t steps = 5000;
  uint32_t batch = 32;
  uint32_t scorer_ratio = 5;  // generated-scorer updates per generator update
  uint64_t seed = 0;
  SymmetricMode mode = SymmetricMode::ForwardPlusBackward;
};

struct TraceRow {
  uint32_t step = 0;
  double sample_mean = 0.0;
  double bracket_norm = 0.0;
  double loss_full = std::numeric_limits<double>::quiet_NaN();
  double loss_fwd = std::numeric_limits<double>::quiet_NaN();
  double loss_bwd = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  std::vector<TraceRow> trace;
  double final_mean = 0.0;
  double final_std = 0.0;
};

/// Anything trainable by the score-difference signal.
class DmdGenerator {
 public:
  virtual ~DmdGenerator() = default;
  virtual size_t dim() const = 0;
  /// Draw noise, produce a sample; z_out records the noise for the
  /// gradient pass.
  virtual std::vector<double> sample(Rng& rng, std::vector<double>* z_out) = 0;
  /// One SGD step from a batch of (noise, output-gradient) pairs.
  virtual void apply_gradient(const std::vector<std::vector<double>>& zs,
                              const std::vector<std::vector<double>>& grads,
                              double lr) = 0;
};

/// x = w (.) z + b, elementwise.
class AffineGenerator : public DmdGenerator {
 public:
  AffineGenerator(size_t dim, double w0 = 1.0, double b0 = 0.0);
  size_t dim() const override { return weight_.size(); }
  std::vector<double> sample(Rng& rng, std::vector<double>* z_out) override;
  void apply_gradient(const std::vector<std::vector<double>>& zs,
                      const std::vector<std::vector<double>>& grads,
                      double lr) override;
  std::span<const double> weight() const { return weight_; }
  std::span<const double> bias() const { return bias_; }

 private:
  std::vector<double> weight_, bias_;
};

/// Transformer rollout generator. Gradients flow through each unit's own
/// forward pass; the generated prefix is treated as fixed context.
class SequenceGenerator : public DmdGenerator {
 public:
  SequenceGenerator(GenConfig cfg, uint32_t t, uint32_t h, uint32_t w);
  size_t dim() const override;
  std::vector<double> sample(Rng& rng, std::vector<double>* z_out) override;
  void apply_gradient(const std::vector<std::vector<double>>& zs,
                      const std::vector<std::vector<double>>& grads,
                      double lr) override;
  const NetParams& params() const { return params_; }
  const TokenPlan& plan() const { return plan_; }

 private:
  std::vector<float> rollout(std::span<const double> z,
                             std::vector<NetTape>* tapes) const;
  GenConfig cfg_;
  uint32_t t_, h_, w_;
  TokenPlan plan_;
  AttentionMask mask_;
  NetParams params_;
};

/// Alternate generated-scorer DSM updates with generator updates driven by
/// dmd_gradient. Scorers unused by the mode are never touched.
TrainResult train_generator(const TrainConfig& cfg, const Scorer& real,
                            GeneratedScorerSet gens, DmdGenerator& gen,
                            const NoiseKernel& kernel);

/// 1-D mean-shift toy: affine generator against an analytic Gaussian
/// target, affine generated scorers fitted by DSM.
TrainResult train_affine_toy(const TrainConfig& cfg, double target_mean,
                             double target_var);

/// Unit-structured toy: transformer generator, analytic real scorer,
/// tiny-net generated scorers over the scheme's token structure.
TrainResult train_unit_toy(const TrainConfig& cfg, const GenConfig& gen_cfg,
                           uint32_t t, uint32_t h, uint32_t w,
                           const AnalyticGaussian& target);

void write_trace_csv(const std::vector<TraceRow>& rows, std::ostream& out);
void write_trace_jsonl(const std::vector<TraceRow>& rows, std::ostream& out);

}  // namespace unitar
