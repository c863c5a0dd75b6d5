#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstring>
#include <filesystem>

#include "coxstream/checkpoint.hpp"
#include "coxstream/online.hpp"
#include "coxstream/simulate.hpp"
#include "oracle_helpers.hpp"

using Catch::Matchers::WithinAbs;
using coxstream::BlockSummary;
using coxstream::DataBlock;
using coxstream::EngineOptions;
using coxstream::EvalPolicy;
using coxstream::OnlineState;
using coxstream::Ties;
using coxstream::Transform;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

bool same_bits(const MatrixXd& a, const MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

bool same_bits(const VectorXd& a, const VectorXd& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

bool same_state_bits(const OnlineState& a, const OnlineState& b) {
  if (a.k != b.k || a.p != b.p || a.w != b.w) return false;
  if (!same_bits(a.h_cum, b.h_cum) || !same_bits(a.q_cum, b.q_cum)) return false;
  if (!same_bits(a.cee_info, b.cee_info) || !same_bits(a.cee_beta, b.cee_beta))
    return false;
  if (!same_bits(a.cuee_info, b.cuee_info) || !same_bits(a.cuee_s, b.cuee_s) ||
      !same_bits(a.cuee_xi, b.cuee_xi) || !same_bits(a.cuee_beta, b.cuee_beta))
    return false;
  if (a.window.size() != b.window.size()) return false;
  for (std::size_t i = 0; i < a.window.size(); ++i)
    if (!same_bits(a.window[i].h_blk, b.window[i].h_blk) ||
        !same_bits(a.window[i].q_blk, b.window[i].q_blk) ||
        !same_bits(a.window[i].info, b.window[i].info))
      return false;
  return true;
}

std::vector<DataBlock> sim_stream(int K, int n, std::uint64_t seed) {
  coxstream::SimConfig cfg;
  cfg.blocks = K;
  cfg.block_size = n;
  cfg.seed = seed;
  std::vector<DataBlock> out;
  for (int k = 1; k <= K; ++k)
    out.push_back(coxstream::generate_replicate_block(cfg, 0, k));
  return out;
}

}  // namespace

TEST_CASE("block_summary closed forms on D4") {
  const DataBlock d4 = oracle::to_block(oracle::d4());
  const auto s =
      coxstream::block_summary(d4, VectorXd::Zero(1), Transform::identity);
  CHECK(s.d == 4);
  CHECK_THAT(s.q_blk[0], WithinAbs(1.0 / 3.0, 1e-12));
  CHECK_THAT(s.h_blk(0, 0), WithinAbs(65.0 / 72.0, 1e-12));
  CHECK_THAT(s.info(0, 0), WithinAbs(13.0 / 18.0, 1e-12));
  CHECK_THAT(s.score_at_eval[0], WithinAbs(-2.0 / 3.0, 1e-12));
}

TEST_CASE("single-event block contributes nothing") {
  std::vector<coxstream::SubjectRecord> recs{{2.0, 1, {1.0}}, {3.0, 0, {0.0}}};
  const auto s = coxstream::block_summary(DataBlock(1, recs), VectorXd::Zero(1),
                                          Transform::identity);
  CHECK(s.h_blk(0, 0) == 0.0);
  CHECK(s.q_blk[0] == 0.0);
}

TEST_CASE("first cumulative update equals the single-dataset test at the MLE") {
  const auto blocks = sim_stream(1, 400, 401);
  const auto fit = coxstream::fit_cox(blocks[0]);
  REQUIRE(fit.converged);
  for (Transform kind : {Transform::identity, Transform::kaplan_meier}) {
    OnlineState state(3, 5);
    const auto s = coxstream::block_summary(blocks[0], fit.beta_hat, kind);
    const auto t1 = coxstream::update_cumulative(state, s);
    const auto full = coxstream::full_test(blocks[0], kind);
    CHECK_THAT(t1.statistic, WithinAbs(full.statistic, 1e-10));
    CHECK(t1.df == full.df);
    CHECK(t1.version == coxstream::TestVersion::cumulative);
    CHECK(t1.k == 1);
  }
}

TEST_CASE("cumulative sums are exactly additive") {
  const auto blocks = sim_stream(2, 300, 402);
  OnlineState state(3, 5);
  const auto s1 =
      coxstream::block_summary(blocks[0], VectorXd::Zero(3), Transform::identity);
  const auto s2 =
      coxstream::block_summary(blocks[1], VectorXd::Zero(3), Transform::identity);
  coxstream::update_cumulative(state, s1);
  coxstream::update_cumulative(state, s2);
  CHECK(same_bits(state.h_cum, MatrixXd(s1.h_blk + s2.h_blk)));
  CHECK(same_bits(state.q_cum, VectorXd(s1.q_blk + s2.q_blk)));
  CHECK(state.k == 2);
}

TEST_CASE("cumulative statistic matches batch recomputation from stored summaries") {
  const auto blocks = sim_stream(10, 250, 403);
  OnlineState state(3, 5);
  std::vector<BlockSummary> kept;
  coxstream::TestResult last;
  for (const auto& b : blocks) {
    const auto fit = coxstream::fit_cox(b);
    REQUIRE(fit.converged);
    auto s = coxstream::block_summary(b, fit.beta_hat, Transform::kaplan_meier);
    kept.push_back(s);
    last = coxstream::update_cumulative(state, s);
  }
  MatrixXd h = MatrixXd::Zero(3, 3);
  VectorXd q = VectorXd::Zero(3);
  for (const auto& s : kept) {
    h += s.h_blk;
    q += s.q_blk;
  }
  CHECK((state.h_cum - h).lpNorm<Eigen::Infinity>() <= 1e-10 * h.norm());
  CHECK((state.q_cum - q).lpNorm<Eigen::Infinity>() <= 1e-10 * (1.0 + q.norm()));
  const double t_direct = coxstream::pinv_quadratic_form(h, q).value;
  CHECK_THAT(last.statistic, WithinAbs(t_direct, 1e-10 * (1.0 + t_direct)));
}

TEST_CASE("summary sums commute across groupings") {
  const auto blocks = sim_stream(6, 200, 404);
  std::vector<BlockSummary> ss;
  for (const auto& b : blocks)
    ss.push_back(coxstream::block_summary(b, VectorXd::Zero(3), Transform::identity));
  MatrixXd h_fwd = MatrixXd::Zero(3, 3), h_rev = h_fwd, h_grp = h_fwd;
  for (const auto& s : ss) h_fwd += s.h_blk;
  for (auto it = ss.rbegin(); it != ss.rend(); ++it) h_rev += it->h_blk;
  h_grp = (ss[0].h_blk + ss[1].h_blk) +
          ((ss[2].h_blk + ss[3].h_blk) + (ss[4].h_blk + ss[5].h_blk));
  CHECK((h_fwd - h_rev).lpNorm<Eigen::Infinity>() <= 1e-10 * h_fwd.norm());
  CHECK((h_fwd - h_grp).lpNorm<Eigen::Infinity>() <= 1e-10 * h_fwd.norm());
}

TEST_CASE("window equals cumulative when the window covers the stream") {
  const auto blocks = sim_stream(4, 250, 405);
  OnlineState state(3, 10);
  EngineOptions opt;
  opt.eval_policy = EvalPolicy::fixed;
  opt.fixed_beta = VectorXd::Zero(3);
  for (const auto& b : blocks) {
    const auto o = coxstream::process_block(state, b, opt);
    REQUIRE(o.ok);
    CHECK_THAT(o.window.statistic, WithinAbs(o.cumulative.statistic, 1e-10));
    CHECK(o.window.partial_window);  // fewer than w = 10 blocks seen
  }
}

TEST_CASE("width-one window reproduces the single-block statistic") {
  const auto blocks = sim_stream(3, 250, 406);
  OnlineState state(3, 1);
  EngineOptions opt;
  for (const auto& b : blocks) {
    const auto o = coxstream::process_block(state, b, opt);
    REQUIRE(o.ok);
    const auto& s = state.window.back();
    const double t = coxstream::pinv_quadratic_form(s.h_blk, s.q_blk).value;
    CHECK_THAT(o.window.statistic, WithinAbs(t, 1e-12 * (1.0 + t)));
    CHECK_FALSE(o.window.partial_window);
  }
}

TEST_CASE("window of five over ten blocks equals the direct sums") {
  const auto blocks = sim_stream(10, 200, 407);
  OnlineState state(3, 5);
  EngineOptions opt;
  std::vector<BlockSummary> all;
  coxstream::TestResult last;
  for (const auto& b : blocks) {
    const auto o = coxstream::process_block(state, b, opt);
    REQUIRE(o.ok);
    all.push_back(state.window.back());
    last = o.window;
  }
  MatrixXd h = MatrixXd::Zero(3, 3);
  VectorXd q = VectorXd::Zero(3);
  for (int i = 5; i < 10; ++i) {
    h += all[i].h_blk;
    q += all[i].q_blk;
  }
  const double t = coxstream::pinv_quadratic_form(h, q).value;
  CHECK_THAT(last.statistic, WithinAbs(t, 1e-10 * (1.0 + t)));
  CHECK(last.window_width == 5);
}

TEST_CASE("CEE: first update returns the block MLE") {
  const auto blocks = sim_stream(1, 300, 408);
  const auto fit = coxstream::fit_cox(blocks[0]);
  OnlineState state(3, 5);
  const auto up = coxstream::cee_update(state, fit);
  CHECK((up.beta - fit.beta_hat).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("CEE: blocks with identical information and MLE keep the common value") {
  const auto blocks = sim_stream(1, 300, 409);
  const auto fit = coxstream::fit_cox(blocks[0]);
  OnlineState state(3, 5);
  coxstream::cee_update(state, fit);
  const auto up2 = coxstream::cee_update(state, fit);
  CHECK((up2.beta - fit.beta_hat).lpNorm<Eigen::Infinity>() < 1e-11);
}

TEST_CASE("CEE terminal value equals the one-shot AEE formula") {
  const auto blocks = sim_stream(8, 300, 410);
  OnlineState state(3, 5);
  MatrixXd info_sum = MatrixXd::Zero(3, 3);
  VectorXd weighted = VectorXd::Zero(3);
  VectorXd cee;
  for (const auto& b : blocks) {
    const auto fit = coxstream::fit_cox(b);
    REQUIRE(fit.converged);
    cee = coxstream::cee_update(state, fit).beta;
    info_sum += fit.information;
    weighted += fit.information * fit.beta_hat;
  }
  const VectorXd aee = info_sum.ldlt().solve(weighted);
  CHECK((cee - aee).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("CUEE: first update returns the block MLE") {
  const auto blocks = sim_stream(1, 300, 411);
  const auto fit = coxstream::fit_cox(blocks[0]);
  OnlineState state(3, 5);
  const VectorXd check = coxstream::cuee_intermediary(state, fit);
  CHECK((check - fit.beta_hat).lpNorm<Eigen::Infinity>() < 1e-12);
  const auto up = coxstream::cuee_update(state, blocks[0], fit);
  CHECK((up.beta - fit.beta_hat).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("CUEE matches an independently maintained recursion") {
  const auto blocks = sim_stream(3, 250, 412);
  OnlineState state(3, 5);

  MatrixXd info_check_sum = MatrixXd::Zero(3, 3);
  VectorXd s_acc = VectorXd::Zero(3);
  VectorXd xi_acc = VectorXd::Zero(3);

  for (const auto& b : blocks) {
    const auto fit = coxstream::fit_cox(b);
    REQUIRE(fit.converged);
    const VectorXd check_ref =
        (info_check_sum + fit.information)
            .ldlt()
            .solve(s_acc + fit.information * fit.beta_hat);
    const auto ev = coxstream::evaluate_block(b, check_ref);
    const VectorXd s_ref = s_acc + ev.information * check_ref;
    const VectorXd xi_ref = xi_acc + ev.score;
    const VectorXd tilde_ref =
        (info_check_sum + ev.information).ldlt().solve(s_ref + xi_ref);

    const auto up = coxstream::cuee_update(state, b, fit);
    CHECK((up.beta_check - check_ref).lpNorm<Eigen::Infinity>() <= 1e-12);
    CHECK((up.beta - tilde_ref).lpNorm<Eigen::Infinity>() <= 1e-12);

    info_check_sum += ev.information;
    s_acc = s_ref;
    xi_acc = xi_ref;
  }
}

TEST_CASE("CUEE tracks the pooled MLE on a null stream") {
  const auto blocks = sim_stream(10, 500, 413);
  OnlineState state(3, 5);
  VectorXd cuee;
  for (const auto& b : blocks) {
    const auto fit = coxstream::fit_cox(b);
    REQUIRE(fit.converged);
    cuee = coxstream::cuee_update(state, b, fit).beta;
  }
  const auto pooled = coxstream::fit_cox(coxstream::pool_blocks(blocks));
  REQUIRE(pooled.converged);
  CHECK((cuee - pooled.beta_hat).lpNorm<Eigen::Infinity>() <= 0.01);
}

TEST_CASE("process_block: the three estimators coincide on the first block") {
  const auto blocks = sim_stream(1, 400, 414);
  const auto fit = coxstream::fit_cox(blocks[0]);
  OnlineState state(3, 5);
  const auto o = coxstream::process_block(state, blocks[0]);
  REQUIRE(o.ok);
  CHECK((o.beta_cee - fit.beta_hat).lpNorm<Eigen::Infinity>() < 1e-9);
  CHECK((o.beta_cuee - fit.beta_hat).lpNorm<Eigen::Infinity>() < 1e-9);
  CHECK_THAT(o.window.statistic, WithinAbs(o.cumulative.statistic, 1e-6));
}

TEST_CASE("shared evaluation point makes window and cumulative trajectories equal") {
  const auto blocks = sim_stream(6, 250, 415);
  OnlineState state(3, 6);
  EngineOptions opt;
  opt.eval_policy = EvalPolicy::block_mle;
  for (const auto& b : blocks) {
    const auto o = coxstream::process_block(state, b, opt);
    REQUIRE(o.ok);
    CHECK_THAT(o.window.statistic, WithinAbs(o.cumulative.statistic, 1e-10));
  }
}

TEST_CASE("a failing block leaves the state bit-identical") {
  const auto blocks = sim_stream(2, 300, 416);
  OnlineState state(3, 5);
  REQUIRE(coxstream::process_block(state, blocks[0]).ok);
  const OnlineState before = state;

  // Exactly collinear columns: the block information is singular, so the
  // Newton solve inside the fit fails.
  Eigen::VectorXd t(4);
  t << 1, 2, 3, 4;
  Eigen::VectorXi st(4);
  st << 1, 1, 1, 0;
  Eigen::MatrixXd x(4, 3);
  x.col(0) << 0.5, -0.3, 0.8, -1.2;
  x.col(1) << 1, 0, 1, 0;
  x.col(2) = 2.0 * x.col(1);
  const DataBlock bad(2, t, st, x);
  const auto o = coxstream::process_block(state, bad);
  CHECK_FALSE(o.ok);
  CHECK(!o.error.empty());
  CHECK(same_state_bits(state, before));

  CHECK(coxstream::process_block(state, blocks[1]).ok);
}

TEST_CASE("state footprint depends on (p, w) only") {
  const auto count_doubles = [](const OnlineState& s) {
    std::size_t n = s.h_cum.size() + s.q_cum.size() + s.cee_info.size() +
                    s.cee_beta.size() + s.cuee_info.size() + s.cuee_s.size() +
                    s.cuee_xi.size() + s.cuee_beta.size();
    for (const auto& w : s.window)
      n += w.h_blk.size() + w.q_blk.size() + w.info.size() +
           w.score_at_eval.size() + w.beta_eval.size() + w.beta_blk.size();
    return n;
  };
  OnlineState small(3, 5), large(3, 5);
  for (const auto& b : sim_stream(2, 150, 417)) coxstream::process_block(small, b);
  for (const auto& b : sim_stream(12, 150, 418)) coxstream::process_block(large, b);
  const std::size_t base = count_doubles(OnlineState(3, 5));
  const std::size_t per_summary = 2 * 9 + 4 * 3;
  CHECK(count_doubles(small) == base + 2 * per_summary);
  // Past w blocks the footprint saturates at w summaries.
  CHECK(count_doubles(large) == base + 5 * per_summary);
}

TEST_CASE("checkpoint round-trips bit-exactly and refuses mismatches") {
  const auto blocks = sim_stream(7, 250, 419);
  OnlineState state(3, 5);
  EngineOptions opt;
  for (const auto& b : blocks) REQUIRE(coxstream::process_block(state, b, opt).ok);

  const auto tmp = std::filesystem::temp_directory_path() / "coxstream_ckpt.json";
  coxstream::save_checkpoint(state, opt, tmp.string());
  const OnlineState loaded = coxstream::load_checkpoint(tmp.string(), &opt);
  CHECK(same_state_bits(state, loaded));

  EngineOptions other = opt;
  other.transform = Transform::identity;
  CHECK_THROWS_AS(coxstream::load_checkpoint(tmp.string(), &other),
                  coxstream::checkpoint_error);

  auto j = coxstream::checkpoint_to_json(state, opt);
  j["version"] = 999;
  CHECK_THROWS_AS(coxstream::checkpoint_from_json(j, &opt),
                  coxstream::checkpoint_error);
  std::filesystem::remove(tmp);
}

TEST_CASE("resume from checkpoint continues the exact trajectory") {
  const auto blocks = sim_stream(8, 250, 420);
  EngineOptions opt;

  OnlineState full(3, 5);
  std::vector<coxstream::BlockOutcome> straight;
  for (const auto& b : blocks)
    straight.push_back(coxstream::process_block(full, b, opt));

  OnlineState head(3, 5);
  for (int k = 0; k < 4; ++k)
    REQUIRE(coxstream::process_block(head, blocks[k], opt).ok);
  const auto tmp = std::filesystem::temp_directory_path() / "coxstream_resume.json";
  coxstream::save_checkpoint(head, opt, tmp.string());
  OnlineState tail = coxstream::load_checkpoint(tmp.string(), &opt);
  for (int k = 4; k < 8; ++k) {
    const auto o = coxstream::process_block(tail, blocks[k], opt);
    REQUIRE(o.ok);
    CHECK(o.cumulative.statistic == straight[k].cumulative.statistic);
    CHECK(o.window.statistic == straight[k].window.statistic);
    CHECK(same_bits(o.beta_cuee, straight[k].beta_cuee));
  }
  CHECK(same_state_bits(tail, full));
  std::filesystem::remove(tmp);
}
