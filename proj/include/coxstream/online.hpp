#pragma once

#include <Eigen/Dense>
#include <deque>
#include <optional>
#include <string>
#include <utility>

#include "coxstream/gt_test.hpp"
#include "coxstream/linalg.hpp"
#include "coxstream/residuals.hpp"
#include "coxstream/survival.hpp"

namespace coxstream {

/// Everything the stream retains about one processed block: the H and Q
/// pieces of the test statistic plus the information and score at the
/// evaluation point. Size depends only on p.
struct BlockSummary {
  long k = 0;
  int d = 0;
  Eigen::MatrixXd h_blk;          // (sum g^2 / d) * information
  Eigen::VectorXd q_blk;          // sum_l g_l r_l
  Eigen::MatrixXd info;           // observed information at beta_eval
  Eigen::VectorXd score_at_eval;  // U(beta_eval)
  Eigen::VectorXd beta_eval;
  Eigen::VectorXd beta_blk;  // block MLE (equals beta_eval when not supplied)
  bool info_rank_deficient = false;
};

inline BlockSummary block_summary(
    const DataBlock& block, const Eigen::VectorXd& beta_eval, Transform kind,
    Ties ties = Ties::efron,
    const std::optional<Eigen::VectorXd>& beta_blk = std::nullopt) {
  BlockEval ev = evaluate_block(block, beta_eval, ties, EvalDetail::with_residuals);
  const Eigen::VectorXd g = transform_and_center(ev.event_times, kind, block);
  BlockSummary s;
  s.k = block.index();
  s.d = block.events();
  s.q_blk = ev.residuals.transpose() * g;
  s.h_blk = (g.squaredNorm() / s.d) * ev.information;
  s.info = std::move(ev.information);
  s.score_at_eval = std::move(ev.score);
  s.beta_eval = beta_eval;
  s.beta_blk = beta_blk.value_or(beta_eval);
  s.info_rank_deficient = sym_is_singular(s.info);
  return s;
}

/// Constant-size stream state: cumulative (H, Q), the CEE and CUEE estimator
/// accumulators, and a ring of the last w block summaries. Memory is
/// O(w p^2 + p^2) regardless of how many observations have gone by.
struct OnlineState {
  int p = 0;
  int w = 1;
  long k = 0;  // blocks folded into the cumulative statistic

  Eigen::MatrixXd h_cum;
  Eigen::VectorXd q_cum;

  Eigen::MatrixXd cee_info;  // sum of block informations at block MLEs
  Eigen::VectorXd cee_beta;

  Eigen::MatrixXd cuee_info;  // sum of block informations at intermediaries
  Eigen::VectorXd cuee_s;     // running sum of info_k * beta_check_k
  Eigen::VectorXd cuee_xi;    // running sum of U_k(beta_check_k)
  Eigen::VectorXd cuee_beta;

  std::deque<BlockSummary> window;  // most recent last, at most w entries

  OnlineState() = default;
  OnlineState(int p_dim, int window_width)
      : p(p_dim),
        w(window_width),
        h_cum(Eigen::MatrixXd::Zero(p_dim, p_dim)),
        q_cum(Eigen::VectorXd::Zero(p_dim)),
        cee_info(Eigen::MatrixXd::Zero(p_dim, p_dim)),
        cee_beta(Eigen::VectorXd::Zero(p_dim)),
        cuee_info(Eigen::MatrixXd::Zero(p_dim, p_dim)),
        cuee_s(Eigen::VectorXd::Zero(p_dim)),
        cuee_xi(Eigen::VectorXd::Zero(p_dim)),
        cuee_beta(Eigen::VectorXd::Zero(p_dim)) {
    if (p_dim < 1 || window_width < 1)
      throw invalid_input_error("OnlineState: need p >= 1 and w >= 1");
  }
};

/// Fold one summary into the cumulative statistic: H += H_blk, Q += Q_blk,
/// T_k = Q' H^-1 Q on the running sums.
inline TestResult update_cumulative(OnlineState& state, const BlockSummary& s) {
  if (s.q_blk.size() != state.p)
    throw invalid_input_error("update_cumulative: dimension mismatch");
  state.h_cum += s.h_blk;
  state.q_cum += s.q_blk;
  state.k += 1;
  return detail::chisq_result(state.h_cum, state.q_cum, TestVersion::cumulative,
                              state.k, 0, false);
}

inline void push_window_summary(OnlineState& state, BlockSummary s) {
  state.window.push_back(std::move(s));
  while (static_cast<int>(state.window.size()) > state.w) state.window.pop_front();
}

/// Test statistic over the most recent w retained summaries. With fewer than
/// w blocks seen, all available are used and the result is flagged partial.
inline TestResult window_test(const OnlineState& state, int w = 0) {
  if (w == 0) w = state.w;
  if (w < 1 || w > state.w)
    throw invalid_input_error("window_test: width must be in [1, state.w]");
  if (state.window.empty())
    throw invalid_input_error("window_test: no summaries retained");
  const int avail = static_cast<int>(state.window.size());
  const int used = std::min(w, avail);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(state.p, state.p);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(state.p);
  for (int i = avail - used; i < avail; ++i) {
    h += state.window[i].h_blk;
    q += state.window[i].q_blk;
  }
  return detail::chisq_result(h, q, TestVersion::window, state.k, w, used < w);
}

struct EstimateUpdate {
  Eigen::VectorXd beta;
  Eigen::MatrixXd variance;
};

/// Cumulative estimating-equation step: information-weighted average of the
/// running estimate and the new block MLE.
inline EstimateUpdate cee_update(OnlineState& state, const CoxFit& fit) {
  if (!fit.converged)
    throw convergence_error("cee_update: block fit not converged");
  if (fit.beta_hat.size() != state.p)
    throw invalid_input_error("cee_update: dimension mismatch");
  const Eigen::MatrixXd combined = state.cee_info + fit.information;
  EstimateUpdate out;
  out.beta = spd_solve(combined,
                       state.cee_info * state.cee_beta + fit.information * fit.beta_hat,
                       "cee_update");
  out.variance = spd_inverse(combined, "cee_update");
  state.cee_info = combined;
  state.cee_beta = out.beta;
  return out;
}

/// Intermediary estimator: weighted combination of the accumulated
/// intermediaries and the current block MLE.
inline Eigen::VectorXd cuee_intermediary(const OnlineState& state,
                                         const CoxFit& fit) {
  if (!fit.converged)
    throw convergence_error("cuee_intermediary: block fit not converged");
  return spd_solve(state.cuee_info + fit.information,
                   state.cuee_s + fit.information * fit.beta_hat,
                   "cuee_intermediary");
}

struct CueeUpdate {
  Eigen::VectorXd beta;        // the bias-corrected estimator
  Eigen::MatrixXd variance;    // (info_{k-1} + info_k)^-1
  Eigen::VectorXd beta_check;  // the intermediary it was expanded around
};

/// One CUEE step: re-evaluate information and score at the intermediary,
/// extend the s and xi accumulators, and solve for the updated estimator.
inline CueeUpdate cuee_update(OnlineState& state, const DataBlock& block,
                              const CoxFit& fit, Ties ties = Ties::efron) {
  CueeUpdate out;
  out.beta_check = cuee_intermediary(state, fit);
  const BlockEval ev = evaluate_block(block, out.beta_check, ties);
  const Eigen::MatrixXd combined = state.cuee_info + ev.information;
  const Eigen::VectorXd s_new = state.cuee_s + ev.information * out.beta_check;
  const Eigen::VectorXd xi_new = state.cuee_xi + ev.score;
  out.beta = spd_solve(combined, s_new + xi_new, "cuee_update");
  out.variance = spd_inverse(combined, "cuee_update");
  state.cuee_info = combined;
  state.cuee_s = s_new;
  state.cuee_xi = xi_new;
  state.cuee_beta = out.beta;
  return out;
}

/// Where block summaries are evaluated. The default follows the scheme the
/// estimators were designed around: CUEE for the cumulative statistic, CEE
/// for the window statistic.
enum class EvalPolicy { paper_default, block_mle, fixed };

struct EngineOptions {
  Transform transform = Transform::kaplan_meier;
  Ties ties = Ties::efron;
  EvalPolicy eval_policy = EvalPolicy::paper_default;
  Eigen::VectorXd fixed_beta;  // used when eval_policy == fixed
  SolverOptions solver;
};

/// Per-block output record of the streaming engine.
struct BlockOutcome {
  long k = 0;
  int n = 0;
  int d = 0;
  bool ok = false;
  std::string error;  // set when ok == false
  TestResult cumulative;
  TestResult window;
  Eigen::VectorXd beta_cee;
  Eigen::VectorXd beta_cuee;
  Eigen::VectorXd se_cuee;
};

/// Process one block end to end: fit the block MLE, advance the CEE and CUEE
/// recursions, build the two summaries, and refresh both test statistics.
/// The update is atomic: on any error the state is left untouched and the
/// outcome carries the message.
inline BlockOutcome process_block(OnlineState& state, const DataBlock& block,
                                  const EngineOptions& opt = {}) {
  BlockOutcome out;
  out.k = state.k + 1;
  out.n = block.size();
  out.d = block.events();
  OnlineState next = state;
  try {
    const CoxFit fit = fit_cox(block, opt.solver, opt.ties);
    if (!fit.converged)
      throw convergence_error("process_block: block fit did not converge");
    const EstimateUpdate cee = cee_update(next, fit);
    const CueeUpdate cuee = cuee_update(next, block, fit, opt.ties);

    Eigen::VectorXd eval_cum, eval_win;
    switch (opt.eval_policy) {
      case EvalPolicy::paper_default:
        eval_cum = cuee.beta;
        eval_win = cee.beta;
        break;
      case EvalPolicy::block_mle:
        eval_cum = eval_win = fit.beta_hat;
        break;
      case EvalPolicy::fixed:
        if (opt.fixed_beta.size() != block.p())
          throw invalid_input_error("process_block: fixed_beta dimension");
        eval_cum = eval_win = opt.fixed_beta;
        break;
    }

    BlockSummary cum_sum =
        block_summary(block, eval_cum, opt.transform, opt.ties, fit.beta_hat);
    out.cumulative = update_cumulative(next, cum_sum);
    BlockSummary win_sum =
        opt.eval_policy == EvalPolicy::paper_default
            ? block_summary(block, eval_win, opt.transform, opt.ties, fit.beta_hat)
            : cum_sum;
    push_window_summary(next, std::move(win_sum));
    out.window = window_test(next);

    out.beta_cee = cee.beta;
    out.beta_cuee = cuee.beta;
    out.se_cuee = cuee.variance.diagonal().cwiseSqrt();
    out.ok = true;
    state = std::move(next);
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
  }
  return out;
}

}  // namespace coxstream
