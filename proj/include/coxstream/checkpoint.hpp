#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "coxstream/errors.hpp"
#include "coxstream/online.hpp"

namespace coxstream {

inline constexpr const char* kCheckpointFormat = "coxstream.checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  // Row-major flattening; dimensions come from the state header.
  std::vector<double> flat;
  flat.reserve(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) flat.push_back(m(i, j));
  return nlohmann::json(flat);
}

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, int rows, int cols) {
  if (static_cast<int>(j.size()) != rows * cols)
    throw checkpoint_error("checkpoint: matrix size mismatch");
  Eigen::MatrixXd m(rows, cols);
  int at = 0;
  for (int i = 0; i < rows; ++i)
    for (int c = 0; c < cols; ++c) m(i, c) = j[at++].get<double>();
  return m;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j, int n) {
  if (static_cast<int>(j.size()) != n)
    throw checkpoint_error("checkpoint: vector size mismatch");
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = j[i].get<double>();
  return v;
}

inline nlohmann::json summary_to_json(const BlockSummary& s) {
  return {{"k", s.k},
          {"d", s.d},
          {"h_blk", matrix_to_json(s.h_blk)},
          {"q_blk", vector_to_json(s.q_blk)},
          {"info", matrix_to_json(s.info)},
          {"score_at_eval", vector_to_json(s.score_at_eval)},
          {"beta_eval", vector_to_json(s.beta_eval)},
          {"beta_blk", vector_to_json(s.beta_blk)},
          {"info_rank_deficient", s.info_rank_deficient}};
}

inline BlockSummary summary_from_json(const nlohmann::json& j, int p) {
  BlockSummary s;
  s.k = j.at("k").get<long>();
  s.d = j.at("d").get<int>();
  s.h_blk = matrix_from_json(j.at("h_blk"), p, p);
  s.q_blk = vector_from_json(j.at("q_blk"), p);
  s.info = matrix_from_json(j.at("info"), p, p);
  s.score_at_eval = vector_from_json(j.at("score_at_eval"), p);
  s.beta_eval = vector_from_json(j.at("beta_eval"), p);
  s.beta_blk = vector_from_json(j.at("beta_blk"), p);
  s.info_rank_deficient = j.at("info_rank_deficient").get<bool>();
  return s;
}

inline nlohmann::json engine_config_json(const EngineOptions& opt) {
  nlohmann::json j;
  j["transform"] = transform_name(opt.transform);
  j["ties"] = opt.ties == Ties::efron ? "efron" : "breslow";
  switch (opt.eval_policy) {
    case EvalPolicy::paper_default: j["eval_policy"] = "default"; break;
    case EvalPolicy::block_mle: j["eval_policy"] = "block-mle"; break;
    case EvalPolicy::fixed: j["eval_policy"] = "fixed"; break;
  }
  j["fixed_beta"] = vector_to_json(opt.fixed_beta);
  return j;
}

}  // namespace detail

inline nlohmann::json checkpoint_to_json(const OnlineState& state,
                                         const EngineOptions& opt) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["p"] = state.p;
  j["w"] = state.w;
  j["k"] = state.k;
  j["h_cum"] = detail::matrix_to_json(state.h_cum);
  j["q_cum"] = detail::vector_to_json(state.q_cum);
  j["cee_info"] = detail::matrix_to_json(state.cee_info);
  j["cee_beta"] = detail::vector_to_json(state.cee_beta);
  j["cuee_info"] = detail::matrix_to_json(state.cuee_info);
  j["cuee_s"] = detail::vector_to_json(state.cuee_s);
  j["cuee_xi"] = detail::vector_to_json(state.cuee_xi);
  j["cuee_beta"] = detail::vector_to_json(state.cuee_beta);
  j["window"] = nlohmann::json::array();
  for (const auto& s : state.window) j["window"].push_back(detail::summary_to_json(s));
  j["engine"] = detail::engine_config_json(opt);
  return j;
}

/// Restore a state from JSON. When `expected` is given, the engine
/// configuration recorded in the checkpoint must match it exactly; resuming a
/// stream under a different configuration is refused.
inline OnlineState checkpoint_from_json(const nlohmann::json& j,
                                        const EngineOptions* expected = nullptr) {
  if (!j.contains("format") || j.at("format") != kCheckpointFormat)
    throw checkpoint_error("checkpoint: unrecognized format");
  if (!j.contains("version") || j.at("version").get<int>() != kCheckpointVersion)
    throw checkpoint_error("checkpoint: version mismatch");
  if (expected != nullptr &&
      j.at("engine") != detail::engine_config_json(*expected))
    throw checkpoint_error("checkpoint: engine configuration mismatch");
  const int p = j.at("p").get<int>();
  const int w = j.at("w").get<int>();
  OnlineState state(p, w);
  state.k = j.at("k").get<long>();
  state.h_cum = detail::matrix_from_json(j.at("h_cum"), p, p);
  state.q_cum = detail::vector_from_json(j.at("q_cum"), p);
  state.cee_info = detail::matrix_from_json(j.at("cee_info"), p, p);
  state.cee_beta = detail::vector_from_json(j.at("cee_beta"), p);
  state.cuee_info = detail::matrix_from_json(j.at("cuee_info"), p, p);
  state.cuee_s = detail::vector_from_json(j.at("cuee_s"), p);
  state.cuee_xi = detail::vector_from_json(j.at("cuee_xi"), p);
  state.cuee_beta = detail::vector_from_json(j.at("cuee_beta"), p);
  for (const auto& s : j.at("window")) {
    state.window.push_back(detail::summary_from_json(s, p));
    if (static_cast<int>(state.window.size()) > w)
      throw checkpoint_error("checkpoint: window larger than width");
  }
  return state;
}

inline void save_checkpoint(const OnlineState& state, const EngineOptions& opt,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw checkpoint_error("checkpoint: cannot write " + path);
  out << checkpoint_to_json(state, opt) << "\n";
  if (!out.good()) throw checkpoint_error("checkpoint: write failed " + path);
}

inline OnlineState load_checkpoint(const std::string& path,
                                   const EngineOptions* expected = nullptr) {
  std::ifstream in(path);
  if (!in) throw checkpoint_error("checkpoint: cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw checkpoint_error(std::string("checkpoint: parse error: ") + e.what());
  }
  return checkpoint_from_json(j, expected);
}

}  // namespace coxstream
