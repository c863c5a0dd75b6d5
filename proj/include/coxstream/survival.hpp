#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "coxstream/errors.hpp"
#include "coxstream/linalg.hpp"

namespace coxstream {

enum class Ties { efron, breslow };

/// One right-censored observation: follow-up time, event flag, covariates.
struct SubjectRecord {
  double time = 0.0;
  int status = 0;  // 0 = censored, 1 = event
  std::vector<double> covariates;
};

/// One arriving chunk of the stream. Records are validated and sorted by
/// ascending time at construction; at least one event is required.
class DataBlock {
 public:
  DataBlock(long index, const std::vector<SubjectRecord>& records)
      : index_(index) {
    const int n = static_cast<int>(records.size());
    if (n == 0) throw invalid_input_error("DataBlock: no records");
    p_ = static_cast<int>(records.front().covariates.size());
    Eigen::VectorXd times(n);
    Eigen::VectorXi status(n);
    Eigen::MatrixXd x(n, p_);
    for (int i = 0; i < n; ++i) {
      const auto& r = records[i];
      if (static_cast<int>(r.covariates.size()) != p_)
        throw invalid_input_error("DataBlock: inconsistent covariate dimension");
      times[i] = r.time;
      status[i] = r.status;
      for (int j = 0; j < p_; ++j) x(i, j) = r.covariates[j];
    }
    init(std::move(times), std::move(status), std::move(x));
  }

  DataBlock(long index, Eigen::VectorXd times, Eigen::VectorXi status,
            Eigen::MatrixXd x)
      : index_(index), p_(static_cast<int>(x.cols())) {
    if (times.size() == 0) throw invalid_input_error("DataBlock: no records");
    if (times.size() != status.size() || times.size() != x.rows())
      throw invalid_input_error("DataBlock: length mismatch");
    init(std::move(times), std::move(status), std::move(x));
  }

  long index() const { return index_; }
  int p() const { return p_; }
  int size() const { return static_cast<int>(times_.size()); }
  int events() const { return d_; }

  // Sorted ascending by time.
  const Eigen::VectorXd& times() const { return times_; }
  const Eigen::VectorXi& status() const { return status_; }
  const Eigen::MatrixXd& covariates() const { return x_; }

 private:
  void init(Eigen::VectorXd times, Eigen::VectorXi status, Eigen::MatrixXd x) {
    const int n = static_cast<int>(times.size());
    if (p_ < 1) throw invalid_input_error("DataBlock: need at least one covariate");
    for (int i = 0; i < n; ++i) {
      if (!std::isfinite(times[i]) || times[i] <= 0.0)
        throw invalid_input_error("DataBlock: time must be positive and finite");
      if (status[i] != 0 && status[i] != 1)
        throw invalid_input_error("DataBlock: status must be 0 or 1");
      for (int j = 0; j < p_; ++j)
        if (!std::isfinite(x(i, j)))
          throw invalid_input_error("DataBlock: non-finite covariate");
    }
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return times[a] < times[b]; });
    times_.resize(n);
    status_.resize(n);
    x_.resize(n, p_);
    d_ = 0;
    for (int i = 0; i < n; ++i) {
      times_[i] = times[order[i]];
      status_[i] = status[order[i]];
      x_.row(i) = x.row(order[i]);
      d_ += status_[i];
    }
    if (d_ == 0) throw degenerate_block_error("DataBlock: block has no events");
  }

  long index_;
  int p_;
  int d_;
  Eigen::VectorXd times_;
  Eigen::VectorXi status_;
  Eigen::MatrixXd x_;
};

/// Concatenate blocks into one dataset (index = last block's index).
inline DataBlock pool_blocks(const std::vector<DataBlock>& blocks) {
  if (blocks.empty()) throw invalid_input_error("pool_blocks: no blocks");
  const int p = blocks.front().p();
  long n_total = 0;
  for (const auto& b : blocks) {
    if (b.p() != p) throw invalid_input_error("pool_blocks: dimension mismatch");
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
  return DataBlock(blocks.back().index(), std::move(times), std::move(status),
                   std::move(x));
}

enum class EvalDetail { summary_only, with_residuals, with_event_variance };

/// Everything one backward risk-set sweep produces at a fixed beta.
/// score is accumulated as the sum of the per-event Schoenfeld residuals, so
/// the residual/score identity holds bit-for-bit.
struct BlockEval {
  double log_pl = 0.0;
  Eigen::VectorXd score;
  Eigen::MatrixXd information;
  Eigen::VectorXd event_times;                  // d, ascending
  Eigen::MatrixXd residuals;                    // d x p, rows match event_times
  std::vector<Eigen::MatrixXd> event_variance;  // V(beta, t_l), when requested
};

inline BlockEval evaluate_block(const DataBlock& block, const Eigen::VectorXd& beta,
                                Ties ties = Ties::efron,
                                EvalDetail detail = EvalDetail::summary_only) {
  const int n = block.size();
  const int p = block.p();
  const int d = block.events();
  if (beta.size() != p)
    throw invalid_input_error("evaluate_block: beta dimension mismatch");
  if (!beta.allFinite())
    throw invalid_input_error("evaluate_block: beta must be finite");

  const Eigen::MatrixXd& x = block.covariates();
  const Eigen::VectorXd& t = block.times();
  const Eigen::VectorXi& st = block.status();

  // Risk scores relative to the largest linear predictor; keeps exp() bounded
  // without changing log PL, score, or information.
  Eigen::VectorXd eta = x * beta;
  const double shift = eta.maxCoeff();
  Eigen::VectorXd w = (eta.array() - shift).exp();

  BlockEval out;
  out.score = Eigen::VectorXd::Zero(p);
  out.information = Eigen::MatrixXd::Zero(p, p);
  const bool want_events = detail != EvalDetail::summary_only;
  const bool want_var = detail == EvalDetail::with_event_variance;
  if (want_events) {
    out.event_times.resize(d);
    out.residuals.resize(d, p);
    if (want_var) out.event_variance.resize(d);
  }

  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd s1d(p), mbar(p), mbar_sum(p), resid(p);
  Eigen::MatrixXd s2d(p, p), vplain(p, p);

  int ev_out = d;  // filled from the back so events end up ascending
  int hi = n - 1;
  while (hi >= 0) {
    int lo = hi;
    while (lo > 0 && t[lo - 1] == t[hi]) --lo;
    for (int i = lo; i <= hi; ++i) {
      s0 += w[i];
      s1.noalias() += w[i] * x.row(i).transpose();
      s2.noalias() += w[i] * (x.row(i).transpose() * x.row(i));
    }
    int m = 0;
    for (int i = lo; i <= hi; ++i) m += st[i];
    if (m > 0) {
      if (want_var) {
        mbar = s1 / s0;
        vplain = s2 / s0 - mbar * mbar.transpose();
      }
      if (ties == Ties::breslow) {
        mbar = s1 / s0;
        const Eigen::MatrixXd vtie = s2 / s0 - mbar * mbar.transpose();
        out.information.noalias() += m * vtie;
        out.log_pl -= m * std::log(s0);
        for (int i = hi; i >= lo; --i) {
          if (!st[i]) continue;
          out.log_pl += eta[i] - shift;
          resid = x.row(i).transpose() - mbar;
          out.score += resid;
          if (want_events) {
            --ev_out;
            out.event_times[ev_out] = t[i];
            out.residuals.row(ev_out) = resid.transpose();
            if (want_var) out.event_variance[ev_out] = vplain;
          }
        }
      } else {  // Efron: step the tied events' own mass out in m fractions
        double s0d = 0.0;
        s1d.setZero();
        s2d.setZero();
        for (int i = lo; i <= hi; ++i) {
          if (!st[i]) continue;
          s0d += w[i];
          s1d.noalias() += w[i] * x.row(i).transpose();
          s2d.noalias() += w[i] * (x.row(i).transpose() * x.row(i));
        }
        mbar_sum.setZero();
        for (int j = 0; j < m; ++j) {
          const double f = static_cast<double>(j) / m;
          const double s0j = s0 - f * s0d;
          const Eigen::VectorXd mbar_j = (s1 - f * s1d) / s0j;
          out.log_pl -= std::log(s0j);
          mbar_sum += mbar_j;
          out.information.noalias() +=
              (s2 - f * s2d) / s0j - mbar_j * mbar_j.transpose();
        }
        const Eigen::VectorXd mbar_avg = mbar_sum / m;
        for (int i = hi; i >= lo; --i) {
          if (!st[i]) continue;
          out.log_pl += eta[i] - shift;
          resid = x.row(i).transpose() - mbar_avg;
          out.score += resid;
          if (want_events) {
            --ev_out;
            out.event_times[ev_out] = t[i];
            out.residuals.row(ev_out) = resid.transpose();
            if (want_var) out.event_variance[ev_out] = vplain;
          }
        }
      }
    }
    hi = lo - 1;
  }
  return out;
}

inline double log_partial_likelihood(const DataBlock& block,
                                     const Eigen::VectorXd& beta,
                                     Ties ties = Ties::efron) {
  return evaluate_block(block, beta, ties).log_pl;
}

/// Score vector U(beta) = sum over events of the Schoenfeld residuals.
inline Eigen::VectorXd score(const DataBlock& block, const Eigen::VectorXd& beta,
                             Ties ties = Ties::efron) {
  return evaluate_block(block, beta, ties).score;
}

/// Observed information (negative Hessian of the log partial likelihood).
inline Eigen::MatrixXd information(const DataBlock& block,
                                   const Eigen::VectorXd& beta,
                                   Ties ties = Ties::efron) {
  return evaluate_block(block, beta, ties).information;
}

/// Risk-score-weighted mean of the covariates over the risk set at time t.
inline Eigen::VectorXd weighted_mean_covariates(const DataBlock& block,
                                                const Eigen::VectorXd& beta,
                                                double t) {
  if (beta.size() != block.p() || !beta.allFinite())
    throw invalid_input_error("weighted_mean_covariates: bad beta");
  const Eigen::MatrixXd& x = block.covariates();
  const Eigen::VectorXd eta = x * beta;
  double shift = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < block.size(); ++i)
    if (block.times()[i] >= t) shift = std::max(shift, eta[i]);
  if (!std::isfinite(shift))
    throw empty_risk_set_error("weighted_mean_covariates: no subject at risk");
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(block.p());
  for (int i = 0; i < block.size(); ++i) {
    if (block.times()[i] < t) continue;
    const double w = std::exp(eta[i] - shift);
    s0 += w;
    s1.noalias() += w * x.row(i).transpose();
  }
  return s1 / s0;
}

/// Risk-score-weighted covariance of the covariates over the risk set at t.
inline Eigen::MatrixXd weighted_variance(const DataBlock& block,
                                         const Eigen::VectorXd& beta, double t) {
  if (beta.size() != block.p() || !beta.allFinite())
    throw invalid_input_error("weighted_variance: bad beta");
  const Eigen::MatrixXd& x = block.covariates();
  const Eigen::VectorXd eta = x * beta;
  double shift = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < block.size(); ++i)
    if (block.times()[i] >= t) shift = std::max(shift, eta[i]);
  if (!std::isfinite(shift))
    throw empty_risk_set_error("weighted_variance: no subject at risk");
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(block.p());
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(block.p(), block.p());
  for (int i = 0; i < block.size(); ++i) {
    if (block.times()[i] < t) continue;
    const double w = std::exp(eta[i] - shift);
    s0 += w;
    s1.noalias() += w * x.row(i).transpose();
    s2.noalias() += w * (x.row(i).transpose() * x.row(i));
  }
  const Eigen::VectorXd mean = s1 / s0;
  return s2 / s0 - mean * mean.transpose();
}

struct SolverOptions {
  double score_tol = 1e-9;        // stop when sup-norm of U drops below this
  double logpl_tol = 1e-10;       // or when log PL stops moving by this much
  double converged_score = 1e-8;  // a fit only counts as converged under this
  int max_iterations = 25;
  int max_step_halvings = 5;
  double separation_bound = 50.0;  // sup-norm bound on beta
};

/// Block maximum partial likelihood estimate with convergence metadata.
struct CoxFit {
  Eigen::VectorXd beta_hat;
  Eigen::MatrixXd information;  // evaluated at beta_hat
  double score_norm = 0.0;      // sup-norm of U(beta_hat)
  double log_pl = 0.0;
  int iterations = 0;
  bool converged = false;
  Ties ties = Ties::efron;
};

/// Newton-Raphson with step-halving for the block MLE.
inline CoxFit fit_cox(const DataBlock& block, const Eigen::VectorXd& init,
                      const SolverOptions& opts = {}, Ties ties = Ties::efron) {
  if (init.size() != block.p() || !init.allFinite())
    throw invalid_input_error("fit_cox: bad initial beta");
  Eigen::VectorXd beta = init;
  BlockEval ev = evaluate_block(block, beta, ties);
  CoxFit fit;
  fit.ties = ties;
  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    if (ev.score.lpNorm<Eigen::Infinity>() <= opts.score_tol) break;
    Eigen::VectorXd step;
    try {
      step = spd_solve(ev.information, ev.score, "fit_cox");
    } catch (const singular_matrix_error&) {
      throw singular_matrix_error("fit_cox: singular information matrix");
    }
    // A step counts as acceptable when the log PL does not drop by more than
    // its own rounding noise; near the optimum the true improvement sits
    // below one ulp of the log PL.
    const double slack =
        32.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::fabs(ev.log_pl));
    double scale = 1.0;
    Eigen::VectorXd trial_beta = beta + step;
    BlockEval trial = evaluate_block(block, trial_beta, ties);
    for (int h = 0; h < opts.max_step_halvings && trial.log_pl < ev.log_pl - slack;
         ++h) {
      scale *= 0.5;
      trial_beta = beta + scale * step;
      trial = evaluate_block(block, trial_beta, ties);
    }
    const double delta_logpl = std::fabs(trial.log_pl - ev.log_pl);
    beta.swap(trial_beta);
    ev = std::move(trial);
    fit.iterations = iter + 1;
    if (beta.lpNorm<Eigen::Infinity>() > opts.separation_bound)
      throw separation_error("fit_cox: coefficients diverging (separation)");
    if (delta_logpl < opts.logpl_tol &&
        ev.score.lpNorm<Eigen::Infinity>() <= opts.converged_score)
      break;
  }
  fit.beta_hat = std::move(beta);
  fit.information = std::move(ev.information);
  fit.score_norm = ev.score.lpNorm<Eigen::Infinity>();
  fit.log_pl = ev.log_pl;
  fit.converged = fit.score_norm <= opts.converged_score;
  return fit;
}

inline CoxFit fit_cox(const DataBlock& block, const SolverOptions& opts = {},
                      Ties ties = Ties::efron) {
  return fit_cox(block, Eigen::VectorXd::Zero(block.p()), opts, ties);
}

}  // namespace coxstream
