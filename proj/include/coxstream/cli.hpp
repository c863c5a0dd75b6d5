#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "coxstream/checkpoint.hpp"
#include "coxstream/csv.hpp"
#include "coxstream/experiments.hpp"
#include "coxstream/gt_test.hpp"
#include "coxstream/online.hpp"
#include "coxstream/simulate.hpp"

namespace coxstream {

/// Exit codes: 0 clean, 1 fatal configuration or I/O error, 2 finished with
/// block-level errors.
enum : int { kExitOk = 0, kExitFatal = 1, kExitBlockErrors = 2 };

struct RunConfig {
  enum class Command { fit, test_full, stream, simulate, permute };
  enum class OutFormat { jsonl, csv };

  Command command = Command::stream;
  std::string input = "-";
  Transform transform = Transform::kaplan_meier;
  Ties ties = Ties::efron;
  int window = 5;
  double alpha = 0.05;
  HMode h_mode = HMode::simplified;
  EvalPolicy eval_policy = EvalPolicy::paper_default;
  std::vector<double> fixed_beta;
  std::string checkpoint;  // stream: resume from / save to this path
  OutFormat out_format = OutFormat::jsonl;
  std::string output;   // stream records destination; empty = stdout
  std::string out_dir;  // simulate/permute artifacts; empty = env or "."

  SimConfig sim;                  // simulate parameters (seed, K, n_k, ...)
  std::string experiment = "size";  // size | power | qq
  std::vector<int> checkpoints;     // qq checkpoints; empty = quartiles
  int n_perm = 999;
  bool save_samples = false;  // permute: also write the permuted statistics
};

namespace detail {

inline std::string g17(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string json_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size() + 8);
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out;
}

inline std::string json_vector(const Eigen::VectorXd& v) {
  std::string out = "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += g17(v[i]);
  }
  return out + "]";
}

inline std::string semicolon_vector(const Eigen::VectorXd& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ";";
    out += g17(v[i]);
  }
  return out;
}

/// One stream record. Field set is fixed; unavailable values are emitted as
/// explicit nulls (JSONL) or NA (CSV), never omitted.
inline std::string format_stream_record(const BlockOutcome& o,
                                        RunConfig::OutFormat fmt) {
  const bool ok = o.ok;
  if (fmt == RunConfig::OutFormat::jsonl) {
    std::string s = "{";
    s += "\"k\":" + std::to_string(o.k);
    s += ",\"n_k\":" + std::to_string(o.n);
    s += ",\"d_k\":" + std::to_string(o.d);
    s += ",\"T_cum\":" + (ok ? g17(o.cumulative.statistic) : "null");
    s += ",\"p_cum\":" + (ok ? g17(o.cumulative.p_value) : "null");
    s += ",\"T_win\":" + (ok ? g17(o.window.statistic) : "null");
    s += ",\"p_win\":" + (ok ? g17(o.window.p_value) : "null");
    s += ",\"beta_cee\":" + (ok ? json_vector(o.beta_cee) : "null");
    s += ",\"beta_cuee\":" + (ok ? json_vector(o.beta_cuee) : "null");
    s += ",\"se_cuee\":" + (ok ? json_vector(o.se_cuee) : "null");
    s += ",\"flags\":{";
    s += "\"rank_deficient_cum\":" + std::string(ok && o.cumulative.rank_deficient ? "true" : "false");
    s += ",\"rank_deficient_win\":" + std::string(ok && o.window.rank_deficient ? "true" : "false");
    s += ",\"partial_window\":" + std::string(ok && o.window.partial_window ? "true" : "false");
    s += ",\"error\":" + (ok ? std::string("null") : "\"" + json_escape(o.error) + "\"");
    s += "}}";
    return s;
  }
  std::string s;
  s += std::to_string(o.k) + "," + std::to_string(o.n) + "," + std::to_string(o.d);
  s += "," + (ok ? g17(o.cumulative.statistic) : "NA");
  s += "," + (ok ? g17(o.cumulative.p_value) : "NA");
  s += "," + (ok ? g17(o.window.statistic) : "NA");
  s += "," + (ok ? g17(o.window.p_value) : "NA");
  s += "," + (ok ? semicolon_vector(o.beta_cee) : "NA");
  s += "," + (ok ? semicolon_vector(o.beta_cuee) : "NA");
  s += "," + (ok ? semicolon_vector(o.se_cuee) : "NA");
  s += std::string(",") + (ok && o.cumulative.rank_deficient ? "1" : "0");
  s += std::string(",") + (ok && o.window.rank_deficient ? "1" : "0");
  s += std::string(",") + (ok && o.window.partial_window ? "1" : "0");
  s += ",\"" + (ok ? std::string() : o.error) + "\"";
  return s;
}

inline constexpr const char* kStreamCsvHeader =
    "k,n_k,d_k,T_cum,p_cum,T_win,p_win,beta_cee,beta_cuee,se_cuee,"
    "rank_deficient_cum,rank_deficient_win,partial_window,error";

inline std::string resolve_out_dir(const RunConfig& cfg) {
  if (!cfg.out_dir.empty()) return cfg.out_dir;
  if (const char* env = std::getenv("COXSTREAM_OUT_DIR"); env && *env) return env;
  return ".";
}

inline EngineOptions engine_options(const RunConfig& cfg) {
  EngineOptions opt;
  opt.transform = cfg.transform;
  opt.ties = cfg.ties;
  opt.eval_policy = cfg.eval_policy;
  if (!cfg.fixed_beta.empty())
    opt.fixed_beta = Eigen::Map<const Eigen::VectorXd>(cfg.fixed_beta.data(),
                                                       cfg.fixed_beta.size());
  return opt;
}

inline int run_stream(const RunConfig& cfg, std::istream& stdin_in,
                      std::ostream& stdout_out, std::ostream& stderr_out) {
  std::ofstream file_out;
  if (!cfg.output.empty()) {
    file_out.open(cfg.output);
    if (!file_out) {
      stderr_out << "error: cannot open output " << cfg.output << "\n";
      return kExitFatal;
    }
  }
  std::ostream& out = cfg.output.empty() ? stdout_out : file_out;

  const EngineOptions opt = engine_options(cfg);
  OnlineState state;
  bool have_state = false;
  if (!cfg.checkpoint.empty() && std::filesystem::exists(cfg.checkpoint)) {
    state = load_checkpoint(cfg.checkpoint, &opt);
    have_state = true;
  }

  if (cfg.out_format == RunConfig::OutFormat::csv) out << kStreamCsvHeader << "\n";

  auto reader = open_block_reader(cfg.input, stdin_in);
  bool any_error = false;
  while (auto item = reader->next()) {
    BlockOutcome o;
    if (!item->block.has_value()) {
      o.k = state.k + 1;
      o.ok = false;
      o.error = item->error;
      any_error = true;
    } else {
      if (!have_state) {
        state = OnlineState(item->block->p(), cfg.window);
        have_state = true;
      }
      o = process_block(state, *item->block, opt);
      if (!o.ok) any_error = true;
      if (o.ok && !cfg.checkpoint.empty())
        save_checkpoint(state, opt, cfg.checkpoint);
    }
    out << format_stream_record(o, cfg.out_format) << "\n";
  }
  return any_error ? kExitBlockErrors : kExitOk;
}

inline int run_fit(const RunConfig& cfg, std::istream& stdin_in,
                   std::ostream& stdout_out, std::ostream& stderr_out) {
  IngestResult in = ingest_blocks(cfg.input, stdin_in);
  for (const auto& e : in.errors)
    stderr_out << "block " << e.index << " (" << e.label << "): " << e.error << "\n";
  if (in.blocks.empty()) {
    stderr_out << "error: no valid blocks in input\n";
    return kExitFatal;
  }
  const DataBlock data = pool_blocks(in.blocks);
  const CoxFit fit = fit_cox(data, SolverOptions{}, cfg.ties);
  const Eigen::MatrixXd var = sym_pinv(fit.information);
  std::string s = "{";
  s += "\"n\":" + std::to_string(data.size());
  s += ",\"d\":" + std::to_string(data.events());
  s += ",\"beta\":" + json_vector(fit.beta_hat);
  s += ",\"se\":" + json_vector(var.diagonal().cwiseSqrt());
  s += ",\"log_pl\":" + g17(fit.log_pl);
  s += ",\"score_norm\":" + g17(fit.score_norm);
  s += ",\"iterations\":" + std::to_string(fit.iterations);
  s += ",\"converged\":" + std::string(fit.converged ? "true" : "false");
  s += "}";
  stdout_out << s << "\n";
  return in.errors.empty() ? kExitOk : kExitBlockErrors;
}

inline int run_test_full(const RunConfig& cfg, std::istream& stdin_in,
                         std::ostream& stdout_out, std::ostream& stderr_out) {
  IngestResult in = ingest_blocks(cfg.input, stdin_in);
  for (const auto& e : in.errors)
    stderr_out << "block " << e.index << " (" << e.label << "): " << e.error << "\n";
  if (in.blocks.empty()) {
    stderr_out << "error: no valid blocks in input\n";
    return kExitFatal;
  }
  const DataBlock data = pool_blocks(in.blocks);
  const TestResult r = full_test(data, cfg.transform, cfg.ties, cfg.h_mode);
  std::string s = "{";
  s += "\"statistic\":" + g17(r.statistic);
  s += ",\"df\":" + std::to_string(r.df);
  s += ",\"p_value\":" + g17(r.p_value);
  s += ",\"transform\":\"" + std::string(transform_name(cfg.transform)) + "\"";
  s += ",\"h_mode\":\"" + std::string(cfg.h_mode == HMode::simplified ? "simplified" : "exact") + "\"";
  s += ",\"rank_deficient\":" + std::string(r.rank_deficient ? "true" : "false");
  s += "}";
  stdout_out << s << "\n";
  return in.errors.empty() ? kExitOk : kExitBlockErrors;
}

inline void write_rate_csvs(const RateCurve& curve, const SimConfig& sim,
                            const std::string& records_path,
                            const std::string& summary_path) {
  std::ofstream rec(records_path);
  if (!rec) throw invalid_input_error("cannot write " + records_path);
  rec << "replicate,k,version,statistic,reject\n";
  const int K = sim.blocks;
  for (int r = 0; r < sim.replicates; ++r) {
    for (int k = 1; k <= K; ++k) {
      if (!curve.records.ok[r][k - 1]) continue;
      rec << r + 1 << "," << k << ",cumulative,"
          << g17(curve.records.t_cum[r][k - 1]) << ","
          << (curve.records.t_cum[r][k - 1] > curve.cutoff ? 1 : 0) << "\n";
      rec << r + 1 << "," << k << ",window,"
          << g17(curve.records.t_win[r][k - 1]) << ","
          << (curve.records.t_win[r][k - 1] > curve.cutoff ? 1 : 0) << "\n";
    }
  }
  std::ofstream sum(summary_path);
  if (!sum) throw invalid_input_error("cannot write " + summary_path);
  sum << "k,version,rejection_rate,mc_se,excluded\n";
  for (int k = 1; k <= K; ++k) {
    sum << k << ",cumulative," << g17(curve.cumulative_rate[k - 1]) << ","
        << g17(curve.cumulative_se[k - 1]) << "," << curve.excluded[k - 1] << "\n";
    sum << k << ",window," << g17(curve.window_rate[k - 1]) << ","
        << g17(curve.window_se[k - 1]) << "," << curve.excluded[k - 1] << "\n";
  }
}

inline int run_simulate(const RunConfig& cfg, std::ostream& stdout_out,
                        std::ostream& stderr_out) {
  SimConfig sim = cfg.sim;
  sim.transform = cfg.transform;
  sim.window_width = cfg.window;
  sim.alpha = cfg.alpha;
  const std::string dir = resolve_out_dir(cfg);
  std::filesystem::create_directories(dir);

  if (cfg.experiment == "size" || cfg.experiment == "power") {
    const bool is_size = cfg.experiment == "size";
    const RateCurve curve = is_size ? size_experiment(sim) : power_experiment(sim);
    const std::string rec_path = dir + "/" + cfg.experiment + "_records.csv";
    const std::string sum_path = dir + "/" + cfg.experiment + "_summary.csv";
    write_rate_csvs(curve, sim, rec_path, sum_path);
    std::string s = "{";
    s += "\"experiment\":\"" + cfg.experiment + "\"";
    s += ",\"records\":\"" + rec_path + "\"";
    s += ",\"summary\":\"" + sum_path + "\"";
    s += ",\"cutoff\":" + g17(curve.cutoff);
    if (!is_size) {
      s += ",\"first_k_cumulative_over_half\":" +
           std::to_string(curve.first_k_cumulative_over_half);
      s += ",\"first_k_window_over_half\":" +
           std::to_string(curve.first_k_window_over_half);
    }
    s += "}";
    stdout_out << s << "\n";
    return kExitOk;
  }

  if (cfg.experiment == "qq") {
    std::vector<int> cps = cfg.checkpoints;
    if (cps.empty()) {
      const int K = sim.blocks;
      cps = {std::max(1, K / 4), std::max(1, K / 2), std::max(1, 3 * K / 4), K};
    }
    const QqSamples qq = qq_experiment(sim, cps);
    const std::string pairs_path = dir + "/qq_pairs.csv";
    std::ofstream pairs(pairs_path);
    if (!pairs) throw invalid_input_error("cannot write " + pairs_path);
    pairs << "replicate,k,t_online,t_pooled\n";
    for (std::size_t c = 0; c < qq.checkpoints.size(); ++c)
      for (int r = 0; r < sim.replicates; ++r)
        if (qq.ok[c][r])
          pairs << r + 1 << "," << qq.checkpoints[c] << ","
                << g17(qq.online_stat[c][r]) << "," << g17(qq.pooled_stat[c][r])
                << "\n";
    const std::string sum_path = dir + "/qq_summary.csv";
    std::ofstream sum(sum_path);
    if (!sum) throw invalid_input_error("cannot write " + sum_path);
    sum << "k,ks_online_vs_pooled_p,ks_online_vs_chisq_p,n\n";
    const int df = static_cast<int>(sim.beta.size());
    for (std::size_t c = 0; c < qq.checkpoints.size(); ++c) {
      std::vector<double> on, po;
      for (int r = 0; r < sim.replicates; ++r) {
        if (!qq.ok[c][r]) continue;
        on.push_back(qq.online_stat[c][r]);
        po.push_back(qq.pooled_stat[c][r]);
      }
      const double p2 = ks_test_two_sample_pvalue(on, po);
      const double p1 = ks_test_vs_cdf_pvalue(
          on, [df](double x) { return chisq_cdf(x, df); });
      sum << qq.checkpoints[c] << "," << g17(p2) << "," << g17(p1) << ","
          << on.size() << "\n";
    }
    stdout_out << "{\"experiment\":\"qq\",\"pairs\":\"" << pairs_path
               << "\",\"summary\":\"" << sum_path << "\"}\n";
    return kExitOk;
  }

  stderr_out << "error: unknown experiment '" << cfg.experiment << "'\n";
  return kExitFatal;
}

inline int run_permute(const RunConfig& cfg, std::istream& stdin_in,
                       std::ostream& stdout_out, std::ostream& stderr_out) {
  IngestResult in = ingest_blocks(cfg.input, stdin_in);
  for (const auto& e : in.errors)
    stderr_out << "block " << e.index << " (" << e.label << "): " << e.error << "\n";
  if (in.blocks.size() < 2) {
    stderr_out << "error: permute needs at least 2 valid blocks\n";
    return kExitFatal;
  }
  Philox4x32 rng(cfg.sim.seed, 0x7065726d);  // dedicated permutation stream
  const PermutationResult res =
      permutation_experiment(in.blocks, cfg.n_perm, rng, engine_options(cfg));
  if (cfg.save_samples) {
    const std::string dir = resolve_out_dir(cfg);
    std::filesystem::create_directories(dir);
    const std::string path = dir + "/permute_samples.csv";
    std::ofstream f(path);
    if (!f) throw invalid_input_error("cannot write " + path);
    f << "permutation,statistic\n";
    for (std::size_t i = 0; i < res.permuted.size(); ++i)
      f << i + 1 << "," << g17(res.permuted[i]) << "\n";
  }
  std::string s = "{";
  s += "\"observed\":" + g17(res.observed);
  s += ",\"n_perm\":" + std::to_string(cfg.n_perm);
  s += ",\"p_value\":" + g17(res.p_value);
  s += ",\"retries\":" + std::to_string(res.retries);
  s += "}";
  stdout_out << s << "\n";
  return in.errors.empty() ? kExitOk : kExitBlockErrors;
}

}  // namespace detail

/// Dispatch one configured command. Streams are passed in so the whole CLI is
/// exercisable in-process.
inline int run_command(const RunConfig& cfg, std::istream& stdin_in,
                       std::ostream& stdout_out, std::ostream& stderr_out) {
  try {
    switch (cfg.command) {
      case RunConfig::Command::fit:
        return detail::run_fit(cfg, stdin_in, stdout_out, stderr_out);
      case RunConfig::Command::test_full:
        return detail::run_test_full(cfg, stdin_in, stdout_out, stderr_out);
      case RunConfig::Command::stream:
        return detail::run_stream(cfg, stdin_in, stdout_out, stderr_out);
      case RunConfig::Command::simulate:
        return detail::run_simulate(cfg, stdout_out, stderr_out);
      case RunConfig::Command::permute:
        return detail::run_permute(cfg, stdin_in, stdout_out, stderr_out);
    }
  } catch (const std::exception& e) {
    stderr_out << "error: " << e.what() << "\n";
    return kExitFatal;
  }
  return kExitFatal;
}

}  // namespace coxstream
