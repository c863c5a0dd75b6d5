#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <thread>
#include <vector>

#include "coxstream/chisq.hpp"
#include "coxstream/online.hpp"
#include "coxstream/simulate.hpp"

namespace coxstream {

/// Run fn(i) for i in [0, jobs) on up to `threads` workers. Results must be
/// written to per-job slots so the outcome is independent of scheduling.
template <typename Fn>
inline void parallel_for(int jobs, int threads, Fn&& fn) {
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, jobs));
  if (threads == 1) {
    for (int i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < jobs; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

inline EngineOptions engine_options(const SimConfig& c) {
  EngineOptions opt;
  opt.transform = c.transform;
  opt.ties = Ties::efron;
  return opt;
}

/// Raw per-replicate trajectories of both statistics; entry [r][k-1].
struct ExperimentRecords {
  std::vector<std::vector<double>> t_cum;
  std::vector<std::vector<double>> t_win;
  std::vector<std::vector<std::uint8_t>> ok;
};

/// Rejection-rate curves over k for both statistic versions, with binomial
/// Monte-Carlo standard errors and per-k counts of excluded (failed) blocks.
struct RateCurve {
  double cutoff = 0.0;
  std::vector<double> cumulative_rate, cumulative_se;
  std::vector<double> window_rate, window_se;
  std::vector<int> excluded;
  int first_k_cumulative_over_half = -1;  // power runs only
  int first_k_window_over_half = -1;
  ExperimentRecords records;
};

namespace detail {

inline RateCurve run_rate_experiment(const SimConfig& c) {
  validate(c);
  const int K = c.blocks;
  const int R = c.replicates;
  RateCurve out;
  out.cutoff = chisq_quantile(1.0 - c.alpha, static_cast<int>(c.beta.size()));
  out.records.t_cum.assign(R, std::vector<double>(K, 0.0));
  out.records.t_win.assign(R, std::vector<double>(K, 0.0));
  out.records.ok.assign(R, std::vector<std::uint8_t>(K, 0));

  parallel_for(R, c.threads, [&](int r) {
    OnlineState state(static_cast<int>(c.beta.size()), c.window_width);
    const EngineOptions opt = engine_options(c);
    for (int k = 1; k <= K; ++k) {
      const DataBlock block = generate_replicate_block(c, static_cast<std::uint32_t>(r), k);
      const BlockOutcome o = process_block(state, block, opt);
      out.records.ok[r][k - 1] = o.ok ? 1 : 0;
      if (o.ok) {
        out.records.t_cum[r][k - 1] = o.cumulative.statistic;
        out.records.t_win[r][k - 1] = o.window.statistic;
      }
    }
  });

  out.cumulative_rate.resize(K);
  out.cumulative_se.resize(K);
  out.window_rate.resize(K);
  out.window_se.resize(K);
  out.excluded.assign(K, 0);
  for (int k = 0; k < K; ++k) {
    int n_eff = 0, rej_cum = 0, rej_win = 0;
    for (int r = 0; r < R; ++r) {
      if (!out.records.ok[r][k]) {
        ++out.excluded[k];
        continue;
      }
      ++n_eff;
      rej_cum += out.records.t_cum[r][k] > out.cutoff;
      rej_win += out.records.t_win[r][k] > out.cutoff;
    }
    const double denom = std::max(1, n_eff);
    out.cumulative_rate[k] = rej_cum / denom;
    out.window_rate[k] = rej_win / denom;
    out.cumulative_se[k] =
        std::sqrt(out.cumulative_rate[k] * (1.0 - out.cumulative_rate[k]) / denom);
    out.window_se[k] =
        std::sqrt(out.window_rate[k] * (1.0 - out.window_rate[k]) / denom);
  }
  for (int k = 0; k < K; ++k) {
    if (out.first_k_cumulative_over_half < 0 && out.cumulative_rate[k] > 0.5)
      out.first_k_cumulative_over_half = k + 1;
    if (out.first_k_window_over_half < 0 && out.window_rate[k] > 0.5)
      out.first_k_window_over_half = k + 1;
  }
  return out;
}

}  // namespace detail

inline RateCurve size_experiment(const SimConfig& c) {
  if (c.scenario != Scenario::null_model)
    throw invalid_input_error("size_experiment: scenario must be null");
  return detail::run_rate_experiment(c);
}

inline RateCurve power_experiment(const SimConfig& c) {
  if (c.scenario == Scenario::null_model)
    throw invalid_input_error("power_experiment: scenario must be an alternative");
  return detail::run_rate_experiment(c);
}

/// Paired samples of the online statistic T_k and the pooled-data statistic
/// T_{1:k} at selected checkpoints; samples[c][r].
struct QqSamples {
  std::vector<int> checkpoints;
  std::vector<std::vector<double>> online_stat;
  std::vector<std::vector<double>> pooled_stat;
  std::vector<std::vector<std::uint8_t>> ok;
};

inline QqSamples qq_experiment(const SimConfig& c, std::vector<int> checkpoints) {
  validate(c);
  if (c.scenario != Scenario::null_model)
    throw invalid_input_error("qq_experiment: scenario must be null");
  std::sort(checkpoints.begin(), checkpoints.end());
  if (checkpoints.empty() || checkpoints.front() < 1 || checkpoints.back() > c.blocks)
    throw invalid_input_error("qq_experiment: checkpoints out of range");
  const int R = c.replicates;
  const int C = static_cast<int>(checkpoints.size());
  QqSamples out;
  out.checkpoints = checkpoints;
  out.online_stat.assign(C, std::vector<double>(R, 0.0));
  out.pooled_stat.assign(C, std::vector<double>(R, 0.0));
  out.ok.assign(C, std::vector<std::uint8_t>(R, 0));

  parallel_for(R, c.threads, [&](int r) {
    OnlineState state(static_cast<int>(c.beta.size()), c.window_width);
    const EngineOptions opt = engine_options(c);
    std::vector<DataBlock> seen;
    seen.reserve(checkpoints.back());
    int cp = 0;
    for (int k = 1; k <= checkpoints.back() && cp < C; ++k) {
      DataBlock block = generate_replicate_block(c, static_cast<std::uint32_t>(r), k);
      const BlockOutcome o = process_block(state, block, opt);
      seen.push_back(std::move(block));
      if (k == checkpoints[cp]) {
        if (o.ok) {
          try {
            const TestResult pooled =
                full_test(pool_blocks(seen), c.transform, opt.ties, HMode::simplified);
            out.online_stat[cp][r] = o.cumulative.statistic;
            out.pooled_stat[cp][r] = pooled.statistic;
            out.ok[cp][r] = 1;
          } catch (const std::exception&) {
            // leave this checkpoint marked failed
          }
        }
        ++cp;
      }
    }
  });
  return out;
}

// --- Kolmogorov-Smirnov helpers -------------------------------------------

/// Tail probability of the Kolmogorov distribution at lambda.
inline double kolmogorov_sf(double lambda) {
  if (lambda <= 0.0) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    sum += sign * term;
    sign = -sign;
    if (term < 1e-16) break;
  }
  return std::min(1.0, std::max(0.0, 2.0 * sum));
}

/// Asymptotic KS p-value with the small-sample effective-size correction.
inline double ks_pvalue(double d, double effective_n) {
  const double rn = std::sqrt(effective_n);
  return kolmogorov_sf((rn + 0.12 + 0.11 / rn) * d);
}

/// Two-sample KS statistic (copies are sorted internally).
inline double ks_statistic_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty())
    throw invalid_input_error("ks_statistic_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::fabs(i / na - j / nb));
  }
  return d;
}

inline double ks_test_two_sample_pvalue(const std::vector<double>& a,
                                        const std::vector<double>& b) {
  const double d = ks_statistic_two_sample(a, b);
  const double ne = static_cast<double>(a.size()) * b.size() / (a.size() + b.size());
  return ks_pvalue(d, ne);
}

/// One-sample KS statistic against a continuous CDF.
inline double ks_statistic_vs_cdf(std::vector<double> a,
                                  const std::function<double(double)>& cdf) {
  if (a.empty()) throw invalid_input_error("ks_statistic_vs_cdf: empty sample");
  std::sort(a.begin(), a.end());
  const double n = static_cast<double>(a.size());
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double f = cdf(a[i]);
    d = std::max(d, std::max(f - i / n, (i + 1) / n - f));
  }
  return d;
}

inline double ks_test_vs_cdf_pvalue(const std::vector<double>& a,
                                    const std::function<double(double)>& cdf) {
  return ks_pvalue(ks_statistic_vs_cdf(a, cdf), static_cast<double>(a.size()));
}

// --- Permutation experiment ------------------------------------------------

struct PermutationResult {
  double observed = 0.0;         // terminal cumulative statistic, original order
  std::vector<double> permuted;  // terminal statistic per permutation
  double p_value = 1.0;
  int retries = 0;  // permutations redrawn because a block came up degenerate
};

namespace detail {

/// Terminal cumulative statistic over a stream of blocks; throws if any
/// block fails to process.
inline double terminal_cumulative_stat(const std::vector<DataBlock>& blocks,
                                       const EngineOptions& opt) {
  OnlineState state(blocks.front().p(), 1);
  TestResult last;
  for (const auto& b : blocks) {
    const BlockOutcome o = process_block(state, b, opt);
    if (!o.ok) throw invalid_input_error("block failed: " + o.error);
    last = o.cumulative;
  }
  return last.statistic;
}

}  // namespace detail

/// Shuffle the pooled subjects, re-partition into the original block sizes,
/// and compare the observed terminal cumulative statistic against the
/// permutation distribution. Permutations that produce a block with zero
/// events (or a failed fit) are redrawn and counted in `retries`.
inline PermutationResult permutation_experiment(const std::vector<DataBlock>& blocks,
                                                int n_perm, Philox4x32& rng,
                                                const EngineOptions& opt = {}) {
  if (blocks.size() < 2)
    throw invalid_input_error("permutation_experiment: need at least 2 blocks");
  if (n_perm < 1)
    throw invalid_input_error("permutation_experiment: need n_perm >= 1");
  const int p = blocks.front().p();
  long n_total = 0;
  std::vector<int> sizes;
  for (const auto& b : blocks) {
    sizes.push_back(b.size());
    n_total += b.size();
  }
  Eigen::VectorXd times(n_total);
  Eigen::VectorXi status(n_total);
  Eigen::MatrixXd x(n_total, p);
  long at = 0;
  for (const auto& b : blocks) {
    times.segment(at, b.size()) = b.times();
    status.segment(at, b.size()) = b.status();
    x.middleRows(at, b.size()) = b.covariates();
    at += b.size();
  }

  PermutationResult out;
  out.observed = detail::terminal_cumulative_stat(blocks, opt);
  out.permuted.reserve(n_perm);
  std::vector<long> idx(n_total);
  for (long i = 0; i < n_total; ++i) idx[i] = i;

  for (int b = 0; b < n_perm; ++b) {
    for (;;) {
      for (long i = n_total - 1; i > 0; --i)
        std::swap(idx[i], idx[rng.next_index(static_cast<std::uint64_t>(i + 1))]);
      try {
        std::vector<DataBlock> shuffled;
        shuffled.reserve(sizes.size());
        long pos = 0;
        for (std::size_t kb = 0; kb < sizes.size(); ++kb) {
          Eigen::VectorXd bt(sizes[kb]);
          Eigen::VectorXi bs(sizes[kb]);
          Eigen::MatrixXd bx(sizes[kb], p);
          for (int i = 0; i < sizes[kb]; ++i, ++pos) {
            bt[i] = times[idx[pos]];
            bs[i] = status[idx[pos]];
            bx.row(i) = x.row(idx[pos]);
          }
          shuffled.emplace_back(static_cast<long>(kb + 1), std::move(bt),
                                std::move(bs), std::move(bx));
        }
        out.permuted.push_back(detail::terminal_cumulative_stat(shuffled, opt));
        break;
      } catch (const std::exception&) {
        ++out.retries;
      }
    }
  }
  int geq = 0;
  for (double t : out.permuted) geq += t >= out.observed;
  out.p_value = (1.0 + geq) / (n_perm + 1.0);
  return out;
}

}  // namespace coxstream
