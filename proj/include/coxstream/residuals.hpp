#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "coxstream/errors.hpp"
#include "coxstream/survival.hpp"

namespace coxstream {

/// Time transform g(t) applied (after centering) to the Schoenfeld residuals.
enum class Transform { identity, log_time, kaplan_meier };

inline const char* transform_name(Transform t) {
  switch (t) {
    case Transform::identity: return "identity";
    case Transform::log_time: return "log";
    case Transform::kaplan_meier: return "km";
  }
  return "?";
}

/// Schoenfeld residuals r_l = X_(l) - Xbar(beta, t_l) at the block's event
/// times (ascending), plus the centered transform values once attached.
struct ResidualSet {
  Eigen::VectorXd event_times;  // length d
  Eigen::MatrixXd residuals;    // d x p
  Eigen::VectorXd g_centered;   // length d, sums to zero; empty until attached
  Eigen::VectorXd beta_eval;
};

inline ResidualSet schoenfeld_residuals(const DataBlock& block,
                                        const Eigen::VectorXd& beta,
                                        Ties ties = Ties::efron) {
  BlockEval ev = evaluate_block(block, beta, ties, EvalDetail::with_residuals);
  ResidualSet rs;
  rs.event_times = std::move(ev.event_times);
  rs.residuals = std::move(ev.residuals);
  rs.beta_eval = beta;
  return rs;
}

/// Left-continuous Kaplan-Meier survival estimate S(t_l -) at each event time
/// of the block, ascending. Tied events share a value; S(t_1 -) = 1.
inline Eigen::VectorXd km_left_continuous(const DataBlock& block) {
  const int n = block.size();
  const Eigen::VectorXd& t = block.times();
  const Eigen::VectorXi& st = block.status();
  Eigen::VectorXd out(block.events());
  double surv = 1.0;
  int at_risk = n;
  int filled = 0;
  int i = 0;
  while (i < n) {
    int j = i;
    int deaths = 0;
    while (j < n && t[j] == t[i]) {
      deaths += st[j];
      ++j;
    }
    for (int e = 0; e < deaths; ++e) out[filled++] = surv;
    if (deaths > 0) surv *= 1.0 - static_cast<double>(deaths) / at_risk;
    at_risk -= j - i;
    i = j;
  }
  return out;
}

/// Raw g(t) at the block's event times, centered to sum to zero over the
/// block's d events.
inline Eigen::VectorXd transform_and_center(const Eigen::VectorXd& event_times,
                                            Transform kind,
                                            const DataBlock& block) {
  const int d = static_cast<int>(event_times.size());
  if (d < 1) throw invalid_input_error("transform_and_center: no events");
  Eigen::VectorXd g(d);
  switch (kind) {
    case Transform::identity:
      g = event_times;
      break;
    case Transform::log_time:
      for (int l = 0; l < d; ++l) {
        if (!(event_times[l] > 0.0))
          throw invalid_time_error("transform_and_center: log needs t > 0");
        g[l] = std::log(event_times[l]);
      }
      break;
    case Transform::kaplan_meier:
      if (d != block.events())
        throw invalid_input_error(
            "transform_and_center: event count does not match block");
      g = km_left_continuous(block);
      break;
  }
  g.array() -= g.mean();
  return g;
}

}  // namespace coxstream
