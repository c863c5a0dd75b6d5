#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>

#include "coxstream/errors.hpp"
#include "coxstream/residuals.hpp"
#include "coxstream/rng.hpp"
#include "coxstream/survival.hpp"

namespace coxstream {

enum class Scenario { null_model, frailty, beta_shift };

/// Stream generator settings. Covariates are x1 ~ N(0,1),
/// x2 ~ Bernoulli(0.5), x3 ~ Bernoulli(0.1); event times are exponential with
/// rate lambda0 * exp(x' beta); censoring is a mixture of a point mass at 60
/// and Uniform(0, 60). The alternatives kick in at change_block: `frailty`
/// adds a per-subject N(0, sigma^2) term to the log hazard, `beta_shift`
/// raises the first coefficient by delta.
struct SimConfig {
  int blocks = 50;        // K
  int block_size = 1000;  // n_k
  Eigen::VectorXd beta = (Eigen::VectorXd(3) << 0.67, -0.26, 0.36).finished();
  double lambda0 = 0.018;
  double epsilon = 0.9;  // weight of the point mass at 60 in the censoring mix
  Scenario scenario = Scenario::null_model;
  double sigma = 0.0;   // frailty standard deviation
  double delta = 0.0;   // shift applied to beta[0]
  int change_block = 51;
  Transform transform = Transform::kaplan_meier;
  int window_width = 5;
  int replicates = 500;
  std::uint64_t seed = 1;
  double alpha = 0.05;
  int threads = 0;  // 0 = hardware concurrency
};

inline void validate(const SimConfig& c) {
  if (c.blocks < 1 || c.block_size < 2 || c.replicates < 1)
    throw invalid_input_error("SimConfig: need blocks >= 1, block_size >= 2, replicates >= 1");
  if (!(c.lambda0 > 0.0)) throw invalid_input_error("SimConfig: lambda0 must be > 0");
  if (!(c.epsilon >= 0.0 && c.epsilon <= 1.0))
    throw invalid_input_error("SimConfig: epsilon must be in [0, 1]");
  if (!(c.alpha > 0.0 && c.alpha <= 1.0))
    throw invalid_input_error("SimConfig: alpha must be in (0, 1]");
  if (c.beta.size() != 3)
    throw invalid_input_error("SimConfig: the generator draws three covariates");
  if (c.window_width < 1) throw invalid_input_error("SimConfig: window_width >= 1");
  if (c.scenario != Scenario::null_model && c.change_block > c.blocks)
    throw invalid_input_error("SimConfig: change_block must be <= blocks");
}

/// Draw block k of a stream. Every subject consumes the same fixed number of
/// uniforms in every scenario, so frailty(sigma = 0) and beta_shift(delta = 0)
/// reproduce the null stream bit for bit.
inline DataBlock generate_block(const SimConfig& c, int k, Philox4x32& rng) {
  const int n = c.block_size;
  Eigen::VectorXd beta_eff = c.beta;
  if (c.scenario == Scenario::beta_shift && k >= c.change_block)
    beta_eff[0] += c.delta;
  const double sigma_eff =
      (c.scenario == Scenario::frailty && k >= c.change_block) ? c.sigma : 0.0;

  Eigen::VectorXd times(n);
  Eigen::VectorXi status(n);
  Eigen::MatrixXd x(n, 3);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = rng.next_normal();
    x(i, 1) = rng.next_double() < 0.5 ? 1.0 : 0.0;
    x(i, 2) = rng.next_double() < 0.1 ? 1.0 : 0.0;
    const double frailty = rng.next_normal();
    const double u_event = rng.next_double_open();
    const double u_mix = rng.next_double();
    const double u_unif = rng.next_double_open();
    const double eta = x.row(i).dot(beta_eff) + sigma_eff * frailty;
    const double t_star = -std::log(u_event) / (c.lambda0 * std::exp(eta));
    const double censor = u_mix < c.epsilon ? 60.0 : 60.0 * u_unif;
    status[i] = t_star < censor ? 1 : 0;  // ties (measure zero) censor
    times[i] = std::min(t_star, censor);
  }
  return DataBlock(k, std::move(times), std::move(status), std::move(x));
}

/// Block k of replicate stream r, on its own (seed, r, k) substream.
inline DataBlock generate_replicate_block(const SimConfig& c,
                                          std::uint32_t replicate, int k) {
  Philox4x32 rng = make_stream(c.seed, replicate, static_cast<std::uint32_t>(k));
  return generate_block(c, k, rng);
}

}  // namespace coxstream
