// SPDX-License-Identifier: Apache-2.0
// Command-line front end: partitioning, mask inspection, toy training,
// generation, and streaming benchmarks.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "unitar/dmd.hpp"
#include "unitar/errors.hpp"
#include "unitar/generator.hpp"
#include "unitar/mask.hpp"
#include "unitar/parse.hpp"
#include "unitar/selftest.hpp"
#include "unitar/streaming.hpp"

namespace {

using namespace unitar;

constexpr int kExitOk = 0;
constexpr int kExitUserError = 1;
constexpr int kExitInternalError = 2;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for write: " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for write: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

MaskDirection parse_direction(const std::string& name) {
  if (name == "forward") return MaskDirection::Forward;
  if (name == "backward") return MaskDirection::Backward;
  if (name == "full") return MaskDirection::Full;
  throw std::invalid_argument("unknown direction '" + name +
                              "' (forward|backward|full)");
}

SymmetricMode parse_mode(const std::string& name) {
  if (name == "full") return SymmetricMode::Full;
  if (name == "forward") return SymmetricMode::ForwardOnly;
  if (name == "backward") return SymmetricMode::BackwardOnly;
  if (name == "forward+backward") return SymmetricMode::ForwardPlusBackward;
  throw std::invalid_argument(
      "unknown mode '" + name + "' (full|forward|backward|forward+backward)");
}

struct SharedGenFlags {
  std::string scheme_spec;
  std::string dims_spec;
  uint32_t d_model = 16;
  uint32_t n_layers = 2;
  uint32_t n_heads = 4;
  uint32_t max_unit_tokens = 64;
  uint64_t param_seed = 0;

  GenConfig to_config() const {
    const auto dims = parse_dims(dims_spec);
    GenConfig cfg;
    cfg.scheme = parse_scheme(scheme_spec);
    cfg.channels = dims[3];
    cfg.d_model = d_model;
    cfg.n_layers = n_layers;
    cfg.n_heads = n_heads;
    cfg.max_unit_tokens = max_unit_tokens;
    cfg.param_seed = param_seed;
    return cfg;
  }
};

void add_net_flags(CLI::App* cmd, SharedGenFlags& flags) {
  cmd->add_option("--d-model", flags.d_model, "embedding width");
  cmd->add_option("--layers", flags.n_layers, "transformer layer count");
  cmd->add_option("--heads", flags.n_heads, "attention head count");
  cmd->add_option("--max-unit-tokens", flags.max_unit_tokens,
                  "intra-unit position table capacity");
  cmd->add_option("--param-seed", flags.param_seed,
                  "parameter initialization seed");
}

int run_cli(int argc, char** argv) {
  CLI::App app{
      "unitar - autoregressive prediction-unit engine for spatiotemporal "
      "latent volumes"};
  app.require_subcommand(1);

  // ---- partition -----------------------------------------------------------
  auto* partition_cmd = app.add_subcommand(
      "partition", "split a latent volume into an ordered unit sequence");
  std::string pt_dims, pt_scheme, pt_out, pt_in;
  uint64_t pt_seed = 0;
  bool pt_seed_set = false;
  partition_cmd->add_option("--dims", pt_dims, "t,h,w,c of the volume");
  partition_cmd->add_option("--scheme", pt_scheme, "unit scheme spec")
      ->required();
  partition_cmd->add_option("--out", pt_out, "unit-sequence output path")
      ->required();
  partition_cmd->add_option("--in", pt_in, "latent input path (VLAT)");
  partition_cmd
      ->add_option_function<uint64_t>(
          "--seed",
          [&](uint64_t v) {
            pt_seed = v;
            pt_seed_set = true;
          },
          "seed for the synthesized standard-normal volume")
      ->type_name("UINT");
  partition_cmd->callback([&] {
    LatentVolume z;
    if (!pt_in.empty()) {
      z = read_latent(pt_in);
    } else {
      if (!pt_seed_set || pt_dims.empty())
        throw std::invalid_argument(
            "without --in, both --dims and --seed are required");
      const auto dims = parse_dims(pt_dims);
      Rng rng(pt_seed);
      z = gaussian_volume(dims[0], dims[1], dims[2], dims[3], rng);
    }
    const UnitSequence seq = partition(z, parse_scheme(pt_scheme));
    write_units(seq, pt_out);
    std::cout << "partitioned (" << z.t << "," << z.h << "," << z.w << ","
              << z.c << ") into " << seq.units.size() << " units ("
              << scheme_to_string(seq.scheme) << ") -> " << pt_out << "\n";
  });

  // ---- reconstruct ---------------------------------------------------------
  auto* reconstruct_cmd = app.add_subcommand(
      "reconstruct", "rebuild a latent volume from a unit sequence");
  std::string rc_in, rc_out;
  reconstruct_cmd->add_option("--in", rc_in, "unit-sequence input path")
      ->required();
  reconstruct_cmd->add_option("--out", rc_out, "latent output path (VLAT)")
      ->required();
  reconstruct_cmd->callback([&] {
    const UnitSequence seq = read_units(rc_in);
    const LatentVolume z = reconstruct(seq);
    write_latent(z, rc_out);
    std::cout << "reconstructed (" << z.t << "," << z.h << "," << z.w << ","
              << z.c << ") from " << seq.units.size() << " units -> " << rc_out
              << "\n";
  });

  // ---- masks ---------------------------------------------------------------
  auto* masks_cmd = app.add_subcommand(
      "masks", "dump the token-level attention mask for a scheme");
  std::string mk_dims, mk_scheme, mk_dir = "forward", mk_out, mk_pgm;
  uint32_t mk_tpv = 1;
  masks_cmd->add_option("--dims", mk_dims, "t,h,w,c")->required();
  masks_cmd->add_option("--scheme", mk_scheme, "unit scheme spec")->required();
  masks_cmd->add_option("--dir", mk_dir, "forward|backward|full");
  masks_cmd->add_option("--tokens-per-voxel", mk_tpv, "tokens per voxel");
  masks_cmd->add_option("--out", mk_out, "0/1 text grid output path")
      ->required();
  masks_cmd->add_option("--pgm", mk_pgm, "optional PGM image output path");
  masks_cmd->callback([&] {
    const auto dims = parse_dims(mk_dims);
    const UnitLayout layout =
        layout_for(parse_scheme(mk_scheme), dims[0], dims[1], dims[2], mk_tpv);
    const AttentionMask mask = build_mask(layout, parse_direction(mk_dir));
    write_file(mk_out, mask_to_text(mask));
    if (!mk_pgm.empty()) write_file(mk_pgm, mask_to_pgm(mask));
    std::cout << "mask " << mask.n_tokens << "x" << mask.n_tokens << " ("
              << mk_dir << ", " << layout.tokens_per_unit.size()
              << " units) -> " << mk_out << "\n";
  });

  // ---- train-toy -----------------------------------------------------------
  auto* train_cmd = app.add_subcommand(
      "train-toy",
      "distribution-matching toy run: affine generator vs a Gaussian target");
  double tt_mean = 0.0, tt_var = 1.0, tt_lr = 1e-2;
  uint32_t tt_steps = 5000, tt_batch = 32, tt_ratio = 5;
  uint64_t tt_seed = 0;
  std::string tt_mode = "forward+backward", tt_trace;
  bool tt_json = false;
  train_cmd->add_option("--target-mean", tt_mean, "target Gaussian mean")
      ->required();
  train_cmd->add_option("--target-var", tt_var, "target Gaussian variance");
  train_cmd->add_option("--steps", tt_steps, "generator updates");
  train_cmd->add_option("--lr", tt_lr, "learning rate");
  train_cmd->add_option("--seed", tt_seed, "training seed")->required();
  train_cmd->add_option("--mode", tt_mode,
                        "full|forward|backward|forward+backward");
  train_cmd->add_option("--batch", tt_batch, "batch size");
  train_cmd->add_option("--ratio", tt_ratio,
                        "generated-scorer updates per generator update");
  train_cmd->add_option("--trace", tt_trace, "per-step trace output path");
  train_cmd->add_flag("--json", tt_json,
                      "line-delimited JSON instead of text/CSV");
  train_cmd->callback([&] {
    TrainConfig cfg;
    cfg.lr = tt_lr;
    cfg.steps = tt_steps;
    cfg.batch = tt_batch;
    cfg.scorer_ratio = tt_ratio;
    cfg.seed = tt_seed;
    cfg.mode = parse_mode(tt_mode);
    const TrainResult res = train_affine_toy(cfg, tt_mean, tt_var);
    if (!tt_trace.empty()) {
      std::ofstream trace_out(tt_trace, std::ios::trunc);
      if (!trace_out)
        throw IoError("cannot open for write: " + tt_trace);
      if (tt_json)
        write_trace_jsonl(res.trace, trace_out);
      else
        write_trace_csv(res.trace, trace_out);
    }
    if (tt_json) {
      std::cout << "{\"final_mean\":" << format_double(res.final_mean)
                << ",\"final_std\":" << format_double(res.final_std)
                << ",\"steps\":" << cfg.steps << ",\"mode\":\"" << tt_mode
                << "\"}\n";
    } else {
      std::cout << "final_mean " << format_double(res.final_mean)
                << "\nfinal_std " << format_double(res.final_std) << "\n";
    }
  });

  // ---- generate --------------------------------------------------------------
  auto* generate_cmd = app.add_subcommand(
      "generate", "roll the one-step generator over a scheme");
  SharedGenFlags gen_flags;
  std::string gn_out, gn_units_out, gn_ckpt_in, gn_ckpt_out;
  uint64_t gn_seed = 0;
  generate_cmd->add_option("--scheme", gen_flags.scheme_spec, "unit scheme")
      ->required();
  generate_cmd->add_option("--dims", gen_flags.dims_spec, "t,h,w,c")
      ->required();
  generate_cmd->add_option("--seed", gn_seed, "noise seed")->required();
  add_net_flags(generate_cmd, gen_flags);
  generate_cmd->add_option("--out", gn_out, "latent output path (VLAT)")
      ->required();
  generate_cmd->add_option("--units-out", gn_units_out,
                           "optional unit-sequence output path");
  generate_cmd->add_option("--ckpt", gn_ckpt_in,
                           "load generator parameters from a checkpoint");
  generate_cmd->add_option("--save-ckpt", gn_ckpt_out,
                           "write generator parameters to a checkpoint");
  generate_cmd->callback([&] {
    const auto dims = parse_dims(gen_flags.dims_spec);
    const GenConfig cfg = gen_flags.to_config();
    NetParams params =
        gn_ckpt_in.empty() ? init_params(cfg) : load_checkpoint(gn_ckpt_in);
    Rng rng(gn_seed);
    const UnitSequence seq =
        generate_sequence(cfg, params, dims[0], dims[1], dims[2], dims[3], rng);
    write_latent(reconstruct(seq), gn_out);
    if (!gn_units_out.empty()) write_units(seq, gn_units_out);
    if (!gn_ckpt_out.empty()) save_checkpoint(params, gn_ckpt_out);
    std::cout << "generated " << seq.units.size() << " units ("
              << scheme_to_string(cfg.scheme) << ") -> " << gn_out << "\n";
  });

  // ---- stream-bench ----------------------------------------------------------
  auto* bench_cmd = app.add_subcommand(
      "stream-bench",
      "stream units through the KV cache; emits one record per unit\n"
      "(unit_index,latency_ns,resident_bytes,context_units,attn_macs)\n"
      "plus a summary record (peak_kv_bytes, latency medians, drift flag,\n"
      "closed-form MAC cross-check)");
  SharedGenFlags bench_flags;
  uint32_t sb_segments = 1, sb_window = 1, sb_warmup = 4;
  uint64_t sb_seed = 0;
  std::string sb_out;
  bool sb_json = false, sb_no_timing = false, sb_pin = false;
  bench_cmd->add_option("--scheme", bench_flags.scheme_spec, "unit scheme")
      ->required();
  bench_cmd->add_option("--dims", bench_flags.dims_spec, "t,h,w,c per segment")
      ->required();
  bench_cmd->add_option("--segments", sb_segments, "scheme instances to chain")
      ->required();
  bench_cmd->add_option("--window", sb_window, "KV cache capacity in units")
      ->required();
  bench_cmd->add_option("--seed", sb_seed, "noise seed")->required();
  bench_cmd->add_option("--warmup", sb_warmup,
                        "units excluded from latency medians");
  add_net_flags(bench_cmd, bench_flags);
  bench_cmd->add_option("--out", sb_out, "per-unit records output path");
  bench_cmd->add_flag("--json", sb_json, "line-delimited JSON records");
  bench_cmd->add_flag("--no-timing", sb_no_timing,
                      "zero the latency fields for byte-reproducible output");
  bench_cmd->add_flag("--pin-first", sb_pin,
                      "keep the first unit resident as a global anchor");
  bench_cmd->callback([&] {
    const auto dims = parse_dims(bench_flags.dims_spec);
    const GenConfig cfg = bench_flags.to_config();
    const NetParams params = init_params(cfg);
    const UnitLayout layout =
        layout_for(cfg.scheme, dims[0], dims[1], dims[2], 1);
    const uint32_t n_units =
        sb_segments * static_cast<uint32_t>(layout.tokens_per_unit.size());
    if (sb_warmup >= n_units) sb_warmup = n_units > 1 ? n_units / 4 : 0;
    BenchReport report =
        bench_throughput(cfg, params, dims[0], dims[1], dims[2], dims[3],
                         sb_window, n_units, sb_warmup, sb_seed);
    if (sb_no_timing) {
      for (auto& m : report.per_unit) m.latency_ns = 0;
      report.leading_median_ns = 0.0;
      report.trailing_median_ns = 0.0;
      report.latency_drift = false;
    }

    std::ostringstream records;
    if (sb_json) {
      for (const auto& m : report.per_unit)
        records << "{\"unit_index\":" << m.unit_index
                << ",\"latency_ns\":" << m.latency_ns
                << ",\"resident_bytes\":" << m.resident_bytes
                << ",\"context_units\":" << m.context_units
                << ",\"attn_macs\":" << m.attn_macs << "}\n";
      records << "{\"summary\":{\"units\":" << report.per_unit.size()
              << ",\"peak_kv_bytes\":" << report.peak_kv_bytes
              << ",\"leading_median_ns\":"
              << format_double(report.leading_median_ns)
              << ",\"trailing_median_ns\":"
              << format_double(report.trailing_median_ns)
              << ",\"latency_drift\":"
              << (report.latency_drift ? "true" : "false")
              << ",\"macs_match_analytic\":"
              << (report.macs_match_analytic ? "true" : "false") << "}}\n";
    } else {
      records << "unit_index,latency_ns,resident_bytes,context_units,"
                 "attn_macs\n";
      for (const auto& m : report.per_unit)
        records << m.unit_index << "," << m.latency_ns << ","
                << m.resident_bytes << "," << m.context_units << ","
                << m.attn_macs << "\n";
      records << "summary,units=" << report.per_unit.size()
              << ",peak_kv_bytes=" << report.peak_kv_bytes
              << ",leading_median_ns=" << format_double(report.leading_median_ns)
              << ",trailing_median_ns="
              << format_double(report.trailing_median_ns)
              << ",latency_drift=" << (report.latency_drift ? "1" : "0")
              << ",macs_match_analytic="
              << (report.macs_match_analytic ? "1" : "0") << "\n";
    }
    if (!sb_out.empty()) write_file(sb_out, records.str());
    std::cout << records.str();
  });

  // ---- selftest ---------------------------------------------------------------
  auto* selftest_cmd = app.add_subcommand(
      "selftest", "run the invariant suite (reduced strength by default)");
  bool st_full = false;
  selftest_cmd->add_flag("--full", st_full, "full acceptance strength");
  selftest_cmd->callback([&] {
    selftest::Options opts;
    opts.full = st_full;
    const auto results = selftest::run_checks(opts, std::cout);
    if (!selftest::all_passed(results))
      throw IntegrityError("selftest found failing invariants");
    std::cout << "selftest: all " << results.size() << " checks passed\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    if (err.get_exit_code() == 0) return app.exit(err);  // --help
    app.exit(err);
    return kExitUserError;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const IntegrityError& err) {
    std::cerr << "error (integrity): " << err.what() << "\n";
    return kExitInternalError;
  } catch (const NumericError& err) {
    std::cerr << "error (numeric): " << err.what() << "\n";
    return kExitInternalError;
  } catch (const ProtocolError& err) {
    std::cerr << "error (protocol): " << err.what() << "\n";
    return kExitInternalError;
  } catch (const ParseError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUserError;
  } catch (const FormatError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUserError;
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUserError;
  } catch (const TrainingError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUserError;
  } catch (const IoError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUserError;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUserError;
  } catch (const std::exception& err) {
    std::cerr << "internal error: " << err.what() << "\n";
    return kExitInternalError;
  }
}
