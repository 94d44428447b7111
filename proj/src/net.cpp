// SPDX-License-Identifier: Apache-2.0
#include "unitar/net.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "unitar/errors.hpp"

namespace unitar {

namespace {

constexpr double kLnEps = 1e-5;

double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf =
      std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

// Sinusoidal code for the (unbounded) unit index.
void unit_position_code(uint64_t unit, uint32_t d, double* out) {
  for (uint32_t j = 0; 2 * j < d; ++j) {
    const double freq = std::pow(10000.0, -2.0 * j / static_cast<double>(d));
    const double angle = static_cast<double>(unit) * freq;
    out[2 * j] = std::sin(angle);
    if (2 * j + 1 < d) out[2 * j + 1] = std::cos(angle);
  }
}

struct BlockSpec {
  std::string name;
  size_t count;
};

std::vector<BlockSpec> block_specs(const NetConfig& cfg) {
  const size_t d = cfg.d_model, f = 4 * static_cast<size_t>(cfg.d_model);
  std::vector<BlockSpec> specs;
  specs.push_back({"embed.w_in", d * cfg.in_dim});
  specs.push_back({"embed.b_in", d});
  specs.push_back({"embed.pos", static_cast<size_t>(cfg.max_unit_tokens) * d});
  for (uint32_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    specs.push_back({p + "ln1.g", d});
    specs.push_back({p + "ln1.b", d});
    specs.push_back({p + "attn.wq", d * d});
    specs.push_back({p + "attn.bq", d});
    specs.push_back({p + "attn.wk", d * d});
    specs.push_back({p + "attn.bk", d});
    specs.push_back({p + "attn.wv", d * d});
    specs.push_back({p + "attn.bv", d});
    specs.push_back({p + "attn.wo", d * d});
    specs.push_back({p + "attn.bo", d});
    specs.push_back({p + "ln2.g", d});
    specs.push_back({p + "ln2.b", d});
    specs.push_back({p + "mlp.w1", f * d});
    specs.push_back({p + "mlp.b1", f});
    specs.push_back({p + "mlp.w2", d * f});
    specs.push_back({p + "mlp.b2", d});
  }
  specs.push_back({"final_ln.g", d});
  specs.push_back({"final_ln.b", d});
  specs.push_back({"head.w", static_cast<size_t>(cfg.out_dim) * d});
  specs.push_back({"head.b", cfg.out_dim});
  return specs;
}

bool is_gain_block(std::string_view name) {
  return name.ends_with("ln1.g") || name.ends_with("ln2.g") ||
         name.ends_with("final_ln.g");
}

bool is_bias_block(std::string_view name) {
  return name.ends_with(".b") || name.ends_with(".b_in") ||
         name.ends_with(".bq") || name.ends_with(".bk") ||
         name.ends_with(".bv") || name.ends_with(".bo") ||
         name.ends_with(".b1") || name.ends_with(".b2");
}

void validate_net_config(const NetConfig& cfg) {
  if (cfg.in_dim == 0 || cfg.out_dim == 0 || cfg.d_model == 0 ||
      cfg.n_heads == 0 || cfg.max_unit_tokens == 0)
    throw std::invalid_argument("net config fields must be >= 1");
  if (cfg.d_model % cfg.n_heads != 0)
    throw std::invalid_argument(
        "d_model=" + std::to_string(cfg.d_model) +
        " is not divisible by n_heads=" + std::to_string(cfg.n_heads));
}

}  // namespace

std::span<const float> NetParams::block(std::string_view name) const {
  for (const auto& b : blocks)
    if (b.name == name) return {theta.data() + b.offset, b.count};
  throw std::out_of_range("no parameter block named '" + std::string(name) +
                          "'");
}

std::span<float> NetParams::block_mut(std::string_view name) {
  for (const auto& b : blocks)
    if (b.name == name) return {theta.data() + b.offset, b.count};
  throw std::out_of_range("no parameter block named '" + std::string(name) +
                          "'");
}

size_t net_param_count(const NetConfig& cfg) {
  validate_net_config(cfg);
  size_t total = 0;
  for (const auto& s : block_specs(cfg)) total += s.count;
  return total;
}

NetParams net_init(const NetConfig& cfg) {
  validate_net_config(cfg);
  NetParams params;
  Rng rng(cfg.param_seed);
  size_t offset = 0;
  for (const auto& spec : block_specs(cfg)) {
    params.blocks.push_back({spec.name, offset, spec.count});
    offset += spec.count;
    if (is_gain_block(spec.name)) {
      for (size_t i = 0; i < spec.count; ++i) params.theta.push_back(1.0f);
    } else if (is_bias_block(spec.name)) {
      for (size_t i = 0; i < spec.count; ++i) params.theta.push_back(0.0f);
    } else {
      for (size_t i = 0; i < spec.count; ++i)
        params.theta.push_back(static_cast<float>(0.02 * rng.normal()));
    }
  }
  return params;
}

NetCounters& net_counters() {
  thread_local NetCounters counters;
  return counters;
}

namespace {

// Resolved double-free views over one layer's parameter blocks.
struct LayerView {
  std::span<const float> ln1_g, ln1_b, ln2_g, ln2_b;
  std::span<const float> wq, bq, wk, bk, wv, bv, wo, bo;
  std::span<const float> w1, b1, w2, b2;
};

LayerView layer_view(const NetParams& params, uint32_t l) {
  const std::string p = "layer" + std::to_string(l) + ".";
  LayerView v;
  v.ln1_g = params.block(p + "ln1.g");
  v.ln1_b = params.block(p + "ln1.b");
  v.wq = params.block(p + "attn.wq");
  v.bq = params.block(p + "attn.bq");
  v.wk = params.block(p + "attn.wk");
  v.bk = params.block(p + "attn.bk");
  v.wv = params.block(p + "attn.wv");
  v.bv = params.block(p + "attn.bv");
  v.wo = params.block(p + "attn.wo");
  v.bo = params.block(p + "attn.bo");
  v.ln2_g = params.block(p + "ln2.g");
  v.ln2_b = params.block(p + "ln2.b");
  v.w1 = params.block(p + "mlp.w1");
  v.b1 = params.block(p + "mlp.b1");
  v.w2 = params.block(p + "mlp.w2");
  v.b2 = params.block(p + "mlp.b2");
  return v;
}

// y[t, :out] = W[out, in] * x[t, :in] + b
void linear(std::span<const float> w, std::span<const float> b,
            const std::vector<double>& x, size_t n, size_t in, size_t out,
            std::vector<double>& y) {
  y.assign(n * out, 0.0);
  for (size_t t = 0; t < n; ++t) {
    const double* xt = x.data() + t * in;
    double* yt = y.data() + t * out;
    for (size_t o = 0; o < out; ++o) {
      double acc = b.empty() ? 0.0 : static_cast<double>(b[o]);
      const float* wo = w.data() + o * in;
      for (size_t i = 0; i < in; ++i) acc += static_cast<double>(wo[i]) * xt[i];
      yt[o] = acc;
    }
  }
}

void layer_norm(std::span<const float> gain, std::span<const float> bias,
                const std::vector<double>& x, size_t n, size_t d,
                std::vector<double>& out, std::vector<double>& xhat,
                std::vector<double>& inv_std) {
  out.assign(n * d, 0.0);
  xhat.assign(n * d, 0.0);
  inv_std.assign(n, 0.0);
  for (size_t t = 0; t < n; ++t) {
    const double* xt = x.data() + t * d;
    double mean = 0.0;
    for (size_t i = 0; i < d; ++i) mean += xt[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (size_t i = 0; i < d; ++i) var += (xt[i] - mean) * (xt[i] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLnEps);
    inv_std[t] = inv;
    for (size_t i = 0; i < d; ++i) {
      const double xh = (xt[i] - mean) * inv;
      xhat[t * d + i] = xh;
      out[t * d + i] = static_cast<double>(gain[i]) * xh +
                       static_cast<double>(bias[i]);
    }
  }
}

// dx from d(out), given xhat and inv_std; accumulates dgain/dbias.
void layer_norm_backward(std::span<const float> gain,
                         const std::vector<double>& dout,
                         const std::vector<double>& xhat,
                         const std::vector<double>& inv_std, size_t n, size_t d,
                         std::vector<double>& dx, double* dgain,
                         double* dbias) {
  dx.assign(n * d, 0.0);
  for (size_t t = 0; t < n; ++t) {
    const double* dot = dout.data() + t * d;
    const double* xh = xhat.data() + t * d;
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (size_t i = 0; i < d; ++i) {
      const double dxh = dot[i] * static_cast<double>(gain[i]);
      sum_dxhat += dxh;
      sum_dxhat_xhat += dxh * xh[i];
      dgain[i] += dot[i] * xh[i];
      dbias[i] += dot[i];
    }
    const double inv = inv_std[t];
    const double inv_d = 1.0 / static_cast<double>(d);
    for (size_t i = 0; i < d; ++i) {
      const double dxh = dot[i] * static_cast<double>(gain[i]);
      dx[t * d + i] =
          inv * (dxh - sum_dxhat * inv_d - xh[i] * sum_dxhat_xhat * inv_d);
    }
  }
}

void check_forward_args(const NetConfig& cfg, const NetParams& params,
                        std::span<const double> inputs, const TokenMeta& meta,
                        const AttentionMask& mask) {
  const size_t n = meta.unit.size();
  if (n == 0) throw std::invalid_argument("forward over zero tokens");
  if (meta.offset.size() != n)
    throw std::invalid_argument("token meta arrays disagree on length");
  if (inputs.size() != n * cfg.in_dim)
    throw std::invalid_argument("input buffer length " +
                                std::to_string(inputs.size()) +
                                " != n_tokens * in_dim = " +
                                std::to_string(n * cfg.in_dim));
  if (mask.n_tokens != n)
    throw std::invalid_argument("mask covers " + std::to_string(mask.n_tokens) +
                                " tokens, buffer has " + std::to_string(n));
  if (params.size() != net_param_count(cfg))
    throw std::invalid_argument("parameter vector does not match config");
  for (uint32_t off : meta.offset)
    if (off >= cfg.max_unit_tokens)
      throw std::invalid_argument("intra-unit offset " + std::to_string(off) +
                                  " exceeds position table size " +
                                  std::to_string(cfg.max_unit_tokens));
}

void embed_tokens(const NetConfig& cfg, const NetParams& params,
                  std::span<const double> inputs, const TokenMeta& meta,
                  std::vector<double>& h) {
  const size_t n = meta.unit.size(), d = cfg.d_model;
  const auto w_in = params.block("embed.w_in");
  const auto b_in = params.block("embed.b_in");
  const auto pos = params.block("embed.pos");
  h.assign(n * d, 0.0);
  std::vector<double> pe(d);
  for (size_t t = 0; t < n; ++t) {
    unit_position_code(meta.unit[t], cfg.d_model, pe.data());
    const double* xt = inputs.data() + t * cfg.in_dim;
    const float* post = pos.data() + static_cast<size_t>(meta.offset[t]) * d;
    for (size_t o = 0; o < d; ++o) {
      double acc = static_cast<double>(b_in[o]);
      const float* wo = w_in.data() + o * cfg.in_dim;
      for (size_t i = 0; i < cfg.in_dim; ++i)
        acc += static_cast<double>(wo[i]) * xt[i];
      h[t * d + o] = acc + static_cast<double>(post[o]) + pe[o];
    }
  }
}

}  // namespace

std::vector<double> net_forward(const NetConfig& cfg, const NetParams& params,
                                std::span<const double> inputs,
                                const TokenMeta& meta,
                                const AttentionMask& mask, NetTape* tape) {
  validate_net_config(cfg);
  check_forward_args(cfg, params, inputs, meta, mask);
  net_counters().full_forwards += 1;

  const size_t n = meta.unit.size();
  const size_t d = cfg.d_model;
  const size_t heads = cfg.n_heads;
  const size_t hd = d / heads;
  const size_t f = 4 * d;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<double> h;
  embed_tokens(cfg, params, inputs, meta, h);
  if (tape) {
    tape->n_tokens = static_cast<uint32_t>(n);
    tape->embed = h;
    tape->layers.assign(cfg.n_layers, {});
  }

  std::vector<double> a, q, k, v, ctx, attn_out, b_ln, mlp_pre, mlp_act, mlp_out;
  std::vector<double> xhat, inv_std, xhat2, inv_std2;
  std::vector<double> scores(n), probs_row(n);

  for (uint32_t l = 0; l < cfg.n_layers; ++l) {
    const LayerView lv = layer_view(params, l);
    layer_norm(lv.ln1_g, lv.ln1_b, h, n, d, a, xhat, inv_std);
    linear(lv.wq, lv.bq, a, n, d, d, q);
    linear(lv.wk, lv.bk, a, n, d, d, k);
    linear(lv.wv, lv.bv, a, n, d, d, v);

    ctx.assign(n * d, 0.0);
    NetTape::Layer* lt = tape ? &tape->layers[l] : nullptr;
    if (lt) lt->probs.assign(heads * n * n, 0.0);
    for (size_t head = 0; head < heads; ++head) {
      const size_t hoff = head * hd;
      for (size_t t = 0; t < n; ++t) {
        const uint8_t* allowed =
            mask.allowed.data() + t * n;
        const double* qt = q.data() + t * d + hoff;
        // pass 1: raw scores and running max, keys ascending
        double max_score = -std::numeric_limits<double>::infinity();
        for (size_t s = 0; s < n; ++s) {
          if (!allowed[s]) continue;
          const double* ks = k.data() + s * d + hoff;
          double e = 0.0;
          for (size_t i = 0; i < hd; ++i) e += qt[i] * ks[i];
          e *= scale;
          scores[s] = e;
          if (e > max_score) max_score = e;
        }
        // pass 2: exp / normalizer
        double denom = 0.0;
        for (size_t s = 0; s < n; ++s) {
          if (!allowed[s]) continue;
          probs_row[s] = std::exp(scores[s] - max_score);
          denom += probs_row[s];
        }
        // pass 3: weighted values
        double* out = ctx.data() + t * d + hoff;
        size_t n_allowed = 0;
        for (size_t s = 0; s < n; ++s) {
          if (!allowed[s]) continue;
          const double p = probs_row[s] / denom;
          if (lt) lt->probs[(head * n + t) * n + s] = p;
          const double* vs = v.data() + s * d + hoff;
          for (size_t i = 0; i < hd; ++i) out[i] += p * vs[i];
          ++n_allowed;
        }
        net_counters().attn_macs += 2 * n_allowed * hd;
      }
    }

    linear(lv.wo, lv.bo, ctx, n, d, d, attn_out);
    for (size_t i = 0; i < n * d; ++i) h[i] += attn_out[i];

    if (lt) {
      lt->ln1_xhat = xhat;
      lt->ln1_inv = inv_std;
      lt->q = q;
      lt->k = k;
      lt->v = v;
      lt->ctx = ctx;
      lt->h_mid = h;
    }

    layer_norm(lv.ln2_g, lv.ln2_b, h, n, d, b_ln, xhat2, inv_std2);
    linear(lv.w1, lv.b1, b_ln, n, d, f, mlp_pre);
    mlp_act.assign(n * f, 0.0);
    for (size_t i = 0; i < n * f; ++i) mlp_act[i] = gelu(mlp_pre[i]);
    linear(lv.w2, lv.b2, mlp_act, n, f, d, mlp_out);
    for (size_t i = 0; i < n * d; ++i) h[i] += mlp_out[i];

    if (lt) {
      lt->ln2_xhat = xhat2;
      lt->ln2_inv = inv_std2;
      lt->mlp_pre = mlp_pre;
      lt->mlp_act = mlp_act;
    }
  }

  std::vector<double> lnf_out, lnf_xhat, lnf_inv;
  layer_norm(params.block("final_ln.g"), params.block("final_ln.b"), h, n, d,
             lnf_out, lnf_xhat, lnf_inv);
  std::vector<double> y;
  linear(params.block("head.w"), params.block("head.b"), lnf_out, n, d,
         cfg.out_dim, y);

  if (tape) {
    tape->h_final = h;
    tape->lnf_xhat = lnf_xhat;
    tape->lnf_inv = lnf_inv;
    tape->lnf_out = lnf_out;
  }
  for (double val : y)
    if (!std::isfinite(val)) throw NumericError("non-finite network output");
  return y;
}

std::vector<double> net_backward(const NetConfig& cfg, const NetParams& params,
                                 std::span<const double> inputs,
                                 const TokenMeta& meta,
                                 const AttentionMask& mask, const NetTape& tape,
                                 std::span<const double> upstream) {
  validate_net_config(cfg);
  check_forward_args(cfg, params, inputs, meta, mask);
  const size_t n = meta.unit.size();
  if (tape.n_tokens != n)
    throw std::invalid_argument("tape does not match this input buffer");
  if (upstream.size() != n * cfg.out_dim)
    throw std::invalid_argument("upstream gradient length mismatch");

  const size_t d = cfg.d_model;
  const size_t heads = cfg.n_heads;
  const size_t hd = d / heads;
  const size_t f = 4 * d;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<double> dtheta(params.size(), 0.0);
  auto grad_block = [&](std::string_view name) -> double* {
    for (const auto& b : params.blocks)
      if (b.name == name) return dtheta.data() + b.offset;
    throw std::out_of_range("no block " + std::string(name));
  };

  // head
  const auto head_w = params.block("head.w");
  std::vector<double> d_lnf(n * d, 0.0);
  {
    double* dwh = grad_block("head.w");
    double* dbh = grad_block("head.b");
    for (size_t t = 0; t < n; ++t) {
      const double* up = upstream.data() + t * cfg.out_dim;
      const double* fout = tape.lnf_out.data() + t * d;
      for (size_t o = 0; o < cfg.out_dim; ++o) {
        const double g = up[o];
        if (g == 0.0) continue;
        dbh[o] += g;
        for (size_t i = 0; i < d; ++i) {
          dwh[o * d + i] += g * fout[i];
          d_lnf[t * d + i] += g * static_cast<double>(head_w[o * d + i]);
        }
      }
    }
  }

  // final norm
  std::vector<double> dh;
  layer_norm_backward(params.block("final_ln.g"), d_lnf, tape.lnf_xhat,
                      tape.lnf_inv, n, d, dh, grad_block("final_ln.g"),
                      grad_block("final_ln.b"));

  std::vector<double> d_bln(n * d), d_mid(n * d), d_ctx(n * d);
  std::vector<double> dq(n * d), dk(n * d), dv(n * d), d_a(n * d), dx_ln;
  std::vector<double> du(n * f), dg_act(n * f);

  for (int li = static_cast<int>(cfg.n_layers) - 1; li >= 0; --li) {
    const uint32_t l = static_cast<uint32_t>(li);
    const LayerView lv = layer_view(params, l);
    const NetTape::Layer& lt = tape.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";

    // ---- MLP branch (h_out = h_mid + W2 gelu(W1 LN2(h_mid) + b1) + b2)
    {
      double* dw2 = grad_block(p + "mlp.w2");
      double* db2 = grad_block(p + "mlp.b2");
      dg_act.assign(n * f, 0.0);
      for (size_t t = 0; t < n; ++t) {
        const double* dht = dh.data() + t * d;
        const double* act = lt.mlp_act.data() + t * f;
        for (size_t o = 0; o < d; ++o) {
          const double g = dht[o];
          if (g == 0.0) continue;
          db2[o] += g;
          const float* w2o = lv.w2.data() + o * f;
          for (size_t j = 0; j < f; ++j) {
            dw2[o * f + j] += g * act[j];
            dg_act[t * f + j] += g * static_cast<double>(w2o[j]);
          }
        }
      }
      for (size_t i = 0; i < n * f; ++i)
        du[i] = dg_act[i] * gelu_grad(lt.mlp_pre[i]);

      double* dw1 = grad_block(p + "mlp.w1");
      double* db1 = grad_block(p + "mlp.b1");
      d_bln.assign(n * d, 0.0);
      for (size_t t = 0; t < n; ++t) {
        // recompute LN2 output from its tape
        const double* xh = lt.ln2_xhat.data() + t * d;
        for (size_t j = 0; j < f; ++j) {
          const double g = du[t * f + j];
          if (g == 0.0) continue;
          db1[j] += g;
          const float* w1j = lv.w1.data() + j * d;
          for (size_t i = 0; i < d; ++i) {
            const double bval = static_cast<double>(lv.ln2_g[i]) * xh[i] +
                                static_cast<double>(lv.ln2_b[i]);
            dw1[j * d + i] += g * bval;
            d_bln[t * d + i] += g * static_cast<double>(w1j[i]);
          }
        }
      }
      layer_norm_backward(lv.ln2_g, d_bln, lt.ln2_xhat, lt.ln2_inv, n, d,
                          dx_ln, grad_block(p + "ln2.g"),
                          grad_block(p + "ln2.b"));
      d_mid.assign(n * d, 0.0);
      for (size_t i = 0; i < n * d; ++i) d_mid[i] = dh[i] + dx_ln[i];
    }

    // ---- attention branch (h_mid = x + Wo ctx + bo)
    {
      double* dwo = grad_block(p + "attn.wo");
      double* dbo = grad_block(p + "attn.bo");
      d_ctx.assign(n * d, 0.0);
      for (size_t t = 0; t < n; ++t) {
        const double* dmt = d_mid.data() + t * d;
        const double* ctx_t = lt.ctx.data() + t * d;
        for (size_t o = 0; o < d; ++o) {
          const double g = dmt[o];
          if (g == 0.0) continue;
          dbo[o] += g;
          const float* woo = lv.wo.data() + o * d;
          for (size_t i = 0; i < d; ++i) {
            dwo[o * d + i] += g * ctx_t[i];
            d_ctx[t * d + i] += g * static_cast<double>(woo[i]);
          }
        }
      }

      dq.assign(n * d, 0.0);
      dk.assign(n * d, 0.0);
      dv.assign(n * d, 0.0);
      std::vector<double> dp(n);
      for (size_t head = 0; head < heads; ++head) {
        const size_t hoff = head * hd;
        for (size_t t = 0; t < n; ++t) {
          const uint8_t* allowed = mask.allowed.data() + t * n;
          const double* dct = d_ctx.data() + t * d + hoff;
          const double* probs = lt.probs.data() + (head * n + t) * n;
          double sum_p_dp = 0.0;
          for (size_t s = 0; s < n; ++s) {
            if (!allowed[s]) continue;
            const double* vs = lt.v.data() + s * d + hoff;
            double acc = 0.0;
            for (size_t i = 0; i < hd; ++i) {
              dv[s * d + hoff + i] += probs[s] * dct[i];
              acc += dct[i] * vs[i];
            }
            dp[s] = acc;
            sum_p_dp += probs[s] * acc;
          }
          const double* qt = lt.q.data() + t * d + hoff;
          for (size_t s = 0; s < n; ++s) {
            if (!allowed[s]) continue;
            const double de = probs[s] * (dp[s] - sum_p_dp) * scale;
            const double* ks = lt.k.data() + s * d + hoff;
            for (size_t i = 0; i < hd; ++i) {
              dq[t * d + hoff + i] += de * ks[i];
              dk[s * d + hoff + i] += de * qt[i];
            }
          }
        }
      }

      // back through the three projections into the LN1 output
      d_a.assign(n * d, 0.0);
      double* dwq = grad_block(p + "attn.wq");
      double* dbq = grad_block(p + "attn.bq");
      double* dwk = grad_block(p + "attn.wk");
      double* dbk = grad_block(p + "attn.bk");
      double* dwv = grad_block(p + "attn.wv");
      double* dbv = grad_block(p + "attn.bv");
      for (size_t t = 0; t < n; ++t) {
        const double* xh = lt.ln1_xhat.data() + t * d;
        for (size_t o = 0; o < d; ++o) {
          const double gq = dq[t * d + o];
          const double gk = dk[t * d + o];
          const double gv = dv[t * d + o];
          dbq[o] += gq;
          dbk[o] += gk;
          dbv[o] += gv;
          const float* wq_row = lv.wq.data() + o * d;
          const float* wk_row = lv.wk.data() + o * d;
          const float* wv_row = lv.wv.data() + o * d;
          for (size_t i = 0; i < d; ++i) {
            const double aval = static_cast<double>(lv.ln1_g[i]) * xh[i] +
                                static_cast<double>(lv.ln1_b[i]);
            dwq[o * d + i] += gq * aval;
            dwk[o * d + i] += gk * aval;
            dwv[o * d + i] += gv * aval;
            d_a[t * d + i] += gq * static_cast<double>(wq_row[i]) +
                              gk * static_cast<double>(wk_row[i]) +
                              gv * static_cast<double>(wv_row[i]);
          }
        }
      }
      layer_norm_backward(lv.ln1_g, d_a, lt.ln1_xhat, lt.ln1_inv, n, d, dx_ln,
                          grad_block(p + "ln1.g"), grad_block(p + "ln1.b"));
      for (size_t i = 0; i < n * d; ++i) dh[i] = d_mid[i] + dx_ln[i];
    }
  }

  // embedding
  {
    double* dw_in = grad_block("embed.w_in");
    double* db_in = grad_block("embed.b_in");
    double* dpos = grad_block("embed.pos");
    for (size_t t = 0; t < n; ++t) {
      const double* dht = dh.data() + t * d;
      const double* xt = inputs.data() + t * cfg.in_dim;
      double* dpos_t = dpos + static_cast<size_t>(meta.offset[t]) * d;
      for (size_t o = 0; o < d; ++o) {
        const double g = dht[o];
        if (g == 0.0) continue;
        db_in[o] += g;
        dpos_t[o] += g;
        for (size_t i = 0; i < cfg.in_dim; ++i) dw_in[o * cfg.in_dim + i] += g * xt[i];
      }
    }
  }

  for (double g : dtheta)
    if (!std::isfinite(g)) throw NumericError("non-finite parameter gradient");
  return dtheta;
}

std::vector<double> net_incremental(const NetConfig& cfg,
                                    const NetParams& params,
                                    std::span<const double> unit_inputs,
                                    uint64_t unit_index,
                                    std::span<const uint32_t> offsets,
                                    KVCache& cache, bool append) {
  validate_net_config(cfg);
  const size_t m = offsets.size();
  if (m == 0) throw std::invalid_argument("incremental pass over zero tokens");
  if (unit_inputs.size() != m * cfg.in_dim)
    throw std::invalid_argument("unit input length mismatch");
  if (cache.n_layers() != cfg.n_layers || cache.d_model() != cfg.d_model)
    throw std::invalid_argument("cache shape does not match net config");
  net_counters().incremental_passes += 1;

  const size_t d = cfg.d_model;
  const size_t heads = cfg.n_heads;
  const size_t hd = d / heads;
  const size_t f = 4 * d;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  TokenMeta meta;
  meta.unit.assign(m, unit_index);
  meta.offset.assign(offsets.begin(), offsets.end());
  for (uint32_t off : meta.offset)
    if (off >= cfg.max_unit_tokens)
      throw std::invalid_argument("intra-unit offset exceeds position table");

  std::vector<double> h;
  embed_tokens(cfg, params, unit_inputs, meta, h);

  std::vector<std::pair<std::vector<double>, std::vector<double>>> collected;
  if (append) collected.reserve(cfg.n_layers);

  std::vector<double> a, q, k, v, ctx, attn_out, b_ln, mlp_pre, mlp_act,
      mlp_out, xhat, inv_std;

  for (uint32_t l = 0; l < cfg.n_layers; ++l) {
    const LayerView lv = layer_view(params, l);
    layer_norm(lv.ln1_g, lv.ln1_b, h, m, d, a, xhat, inv_std);
    linear(lv.wq, lv.bq, a, m, d, d, q);
    linear(lv.wk, lv.bk, a, m, d, d, k);
    linear(lv.wv, lv.bv, a, m, d, d, v);
    if (append) collected.emplace_back(k, v);

    const auto& blocks = cache.layer_blocks(l);
    const size_t n_ctx = cache.resident_tokens();
    const size_t n_keys = n_ctx + m;
    std::vector<double> scores(n_keys), probs(n_keys);

    ctx.assign(m * d, 0.0);
    for (size_t head = 0; head < heads; ++head) {
      const size_t hoff = head * hd;
      for (size_t t = 0; t < m; ++t) {
        const double* qt = q.data() + t * d + hoff;
        // keys ascending: resident cache blocks, then this unit's own tokens
        size_t idx = 0;
        double max_score = -std::numeric_limits<double>::infinity();
        auto score_key = [&](const double* key_row) {
          double e = 0.0;
          for (size_t i = 0; i < hd; ++i) e += qt[i] * key_row[i];
          e *= scale;
          scores[idx] = e;
          if (e > max_score) max_score = e;
          ++idx;
        };
        for (const auto& blk : blocks)
          for (size_t s = 0; s < blk.n_tokens; ++s)
            score_key(blk.k.data() + s * d + hoff);
        for (size_t s = 0; s < m; ++s) score_key(k.data() + s * d + hoff);

        double denom = 0.0;
        for (size_t s = 0; s < n_keys; ++s) {
          probs[s] = std::exp(scores[s] - max_score);
          denom += probs[s];
        }
        double* out = ctx.data() + t * d + hoff;
        idx = 0;
        auto add_value = [&](const double* val_row) {
          const double p = probs[idx] / denom;
          for (size_t i = 0; i < hd; ++i) out[i] += p * val_row[i];
          ++idx;
        };
        for (const auto& blk : blocks)
          for (size_t s = 0; s < blk.n_tokens; ++s)
            add_value(blk.v.data() + s * d + hoff);
        for (size_t s = 0; s < m; ++s) add_value(v.data() + s * d + hoff);
        net_counters().attn_macs += 2 * n_keys * hd;
      }
    }

    linear(lv.wo, lv.bo, ctx, m, d, d, attn_out);
    for (size_t i = 0; i < m * d; ++i) h[i] += attn_out[i];

    layer_norm(lv.ln2_g, lv.ln2_b, h, m, d, b_ln, xhat, inv_std);
    linear(lv.w1, lv.b1, b_ln, m, d, f, mlp_pre);
    mlp_act.assign(m * f, 0.0);
    for (size_t i = 0; i < m * f; ++i) mlp_act[i] = gelu(mlp_pre[i]);
    linear(lv.w2, lv.b2, mlp_act, m, f, d, mlp_out);
    for (size_t i = 0; i < m * d; ++i) h[i] += mlp_out[i];
  }

  std::vector<double> lnf_out, lnf_xhat, lnf_inv;
  layer_norm(params.block("final_ln.g"), params.block("final_ln.b"), h, m, d,
             lnf_out, lnf_xhat, lnf_inv);
  std::vector<double> y;
  linear(params.block("head.w"), params.block("head.b"), lnf_out, m, d,
         cfg.out_dim, y);
  for (double val : y)
    if (!std::isfinite(val)) throw NumericError("non-finite network output");

  if (append) cache.append_unit(unit_index, static_cast<uint32_t>(m),
                                std::move(collected));
  return y;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr char kCkptMagic[4] = {'U', 'C', 'K', 'P'};
constexpr uint16_t kCkptVersion = 1;

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}
void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

}  // namespace

std::vector<uint8_t> checkpoint_to_bytes(const NetParams& params) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kCkptMagic, kCkptMagic + 4);
  put_u16(out, kCkptVersion);
  put_u32(out, static_cast<uint32_t>(params.blocks.size()));
  for (const auto& b : params.blocks) {
    put_u16(out, static_cast<uint16_t>(b.name.size()));
    out.insert(out.end(), b.name.begin(), b.name.end());
    put_u64(out, b.count);
    for (size_t i = 0; i < b.count; ++i) {
      uint32_t bits;
      std::memcpy(&bits, &params.theta[b.offset + i], 4);
      put_u32(out, bits);
    }
  }
  return out;
}

NetParams checkpoint_from_bytes(std::span<const uint8_t> bytes) {
  size_t pos = 0;
  auto need = [&](size_t count, const char* what) {
    if (pos + count > bytes.size())
      throw FormatError(std::string("truncated checkpoint while reading ") +
                            what,
                        pos);
  };
  need(4, "magic");
  if (std::memcmp(bytes.data(), kCkptMagic, 4) != 0)
    throw FormatError("bad magic, expected \"UCKP\"", 0);
  pos = 4;
  auto get_u16 = [&](const char* what) {
    need(2, what);
    uint16_t v = static_cast<uint16_t>(bytes[pos]) |
                 static_cast<uint16_t>(bytes[pos + 1]) << 8;
    pos += 2;
    return v;
  };
  auto get_u32 = [&](const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  };
  auto get_u64 = [&](const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    return v;
  };
  if (get_u16("version") != kCkptVersion)
    throw FormatError("unsupported checkpoint version", pos - 2);
  const uint32_t n_blocks = get_u32("block count");
  NetParams params;
  for (uint32_t bi = 0; bi < n_blocks; ++bi) {
    const uint16_t name_len = get_u16("name length");
    need(name_len, "block name");
    std::string name(reinterpret_cast<const char*>(bytes.data() + pos),
                     name_len);
    pos += name_len;
    const uint64_t count = get_u64("element count");
    ParamBlock block{name, params.theta.size(), count};
    need(count * 4, "block data");
    for (uint64_t i = 0; i < count; ++i) {
      const uint32_t bits = get_u32("f32");
      float v;
      std::memcpy(&v, &bits, 4);
      params.theta.push_back(v);
    }
    params.blocks.push_back(std::move(block));
  }
  if (pos != bytes.size())
    throw FormatError("trailing bytes after last block", pos);
  return params;
}

void save_checkpoint(const NetParams& params, const std::string& path) {
  const auto bytes = checkpoint_to_bytes(params);
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open for write: " + path);
  file.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  if (!file) throw IoError("write failed: " + path);
}

NetParams load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open for read: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(file)),
                             std::istreambuf_iterator<char>());
  return checkpoint_from_bytes(bytes);
}

}  // namespace unitar
