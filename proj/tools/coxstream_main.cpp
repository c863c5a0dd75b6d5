// Command-line front end: fit | test-full | stream | simulate | permute.

#include <CLI11.hpp>
#include <iostream>
#include <map>
#include <string>

#include "coxstream/cli.hpp"

namespace {

using coxstream::RunConfig;

void add_common(CLI::App* cmd, RunConfig& cfg) {
  static const std::map<std::string, coxstream::Transform> transforms{
      {"identity", coxstream::Transform::identity},
      {"log", coxstream::Transform::log_time},
      {"km", coxstream::Transform::kaplan_meier}};
  static const std::map<std::string, coxstream::Ties> ties{
      {"efron", coxstream::Ties::efron},
      {"breslow", coxstream::Ties::breslow}};
  cmd->add_option("--transform", cfg.transform, "time transform g(t)")
      ->transform(CLI::CheckedTransformer(transforms, CLI::ignore_case));
  cmd->add_option("--ties", cfg.ties, "tie handling for the partial likelihood")
      ->transform(CLI::CheckedTransformer(ties, CLI::ignore_case));
  cmd->add_option("--alpha", cfg.alpha, "test level");
}

void add_engine(CLI::App* cmd, RunConfig& cfg) {
  static const std::map<std::string, coxstream::EvalPolicy> policies{
      {"paper-default", coxstream::EvalPolicy::paper_default},
      {"default", coxstream::EvalPolicy::paper_default},
      {"block-mle", coxstream::EvalPolicy::block_mle},
      {"fixed", coxstream::EvalPolicy::fixed}};
  cmd->add_option("--window,-w", cfg.window, "window width")->check(CLI::PositiveNumber);
  cmd->add_option("--eval-policy", cfg.eval_policy,
                  "where summaries are evaluated: paper-default | block-mle | fixed")
      ->transform(CLI::CheckedTransformer(policies, CLI::ignore_case));
  cmd->add_option("--fixed-beta", cfg.fixed_beta,
                  "coefficients for --eval-policy fixed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming Cox proportional-hazards diagnostics"};
  app.require_subcommand(1);

  RunConfig cfg;
  static const std::map<std::string, RunConfig::OutFormat> formats{
      {"jsonl", RunConfig::OutFormat::jsonl}, {"csv", RunConfig::OutFormat::csv}};
  static const std::map<std::string, coxstream::Scenario> scenarios{
      {"null", coxstream::Scenario::null_model},
      {"frailty", coxstream::Scenario::frailty},
      {"beta-shift", coxstream::Scenario::beta_shift}};
  static const std::map<std::string, coxstream::HMode> hmodes{
      {"simplified", coxstream::HMode::simplified},
      {"exact", coxstream::HMode::exact}};

  auto* fit = app.add_subcommand("fit", "fit a Cox model on the pooled input");
  fit->add_option("--input,-i", cfg.input, "CSV file, directory, or - for stdin")
      ->required();
  fit->add_option("--ties", cfg.ties)->transform(CLI::CheckedTransformer(
      std::map<std::string, coxstream::Ties>{{"efron", coxstream::Ties::efron},
                                             {"breslow", coxstream::Ties::breslow}},
      CLI::ignore_case));

  auto* tf = app.add_subcommand("test-full",
                                "proportional-hazards test on the pooled input");
  tf->add_option("--input,-i", cfg.input)->required();
  add_common(tf, cfg);
  tf->add_option("--h-mode", cfg.h_mode, "H assembly: simplified | exact")
      ->transform(CLI::CheckedTransformer(hmodes, CLI::ignore_case));

  auto* stream = app.add_subcommand("stream",
                                    "online statistics over a stream of blocks");
  stream->add_option("--input,-i", cfg.input)->required();
  add_common(stream, cfg);
  add_engine(stream, cfg);
  stream->add_option("--checkpoint", cfg.checkpoint,
                     "resume from / save state to this file");
  stream->add_option("--out", cfg.out_format, "record format: jsonl | csv")
      ->transform(CLI::CheckedTransformer(formats, CLI::ignore_case));
  stream->add_option("--output,-o", cfg.output, "records file (default stdout)");

  auto* sim = app.add_subcommand("simulate", "size / power / qq experiments");
  add_common(sim, cfg);
  add_engine(sim, cfg);
  sim->add_option("--experiment", cfg.experiment, "size | power | qq");
  sim->add_option("--scenario", cfg.sim.scenario)
      ->transform(CLI::CheckedTransformer(scenarios, CLI::ignore_case));
  sim->add_option("--blocks,-K", cfg.sim.blocks, "blocks per stream");
  sim->add_option("--block-size,-n", cfg.sim.block_size, "subjects per block");
  sim->add_option("--replicates,-R", cfg.sim.replicates);
  sim->add_option("--seed", cfg.sim.seed);
  sim->add_option("--epsilon", cfg.sim.epsilon, "censoring point-mass weight");
  sim->add_option("--sigma", cfg.sim.sigma, "frailty standard deviation");
  sim->add_option("--delta", cfg.sim.delta, "shift applied to beta1");
  sim->add_option("--change-block", cfg.sim.change_block);
  sim->add_option("--threads", cfg.sim.threads);
  sim->add_option("--checkpoints", cfg.checkpoints, "qq checkpoints");
  sim->add_option("--out-dir", cfg.out_dir,
                  "artifact directory (default $COXSTREAM_OUT_DIR or .)");

  auto* perm = app.add_subcommand("permute",
                                  "block-permutation test of the stream ordering");
  perm->add_option("--input,-i", cfg.input)->required();
  add_common(perm, cfg);
  add_engine(perm, cfg);
  perm->add_option("--n-perm", cfg.n_perm)->check(CLI::PositiveNumber);
  perm->add_option("--seed", cfg.sim.seed);
  perm->add_flag("--save-samples", cfg.save_samples,
                 "write the permuted statistics to out-dir");
  perm->add_option("--out-dir", cfg.out_dir);

  CLI11_PARSE(app, argc, argv);

  if (fit->parsed()) cfg.command = RunConfig::Command::fit;
  if (tf->parsed()) cfg.command = RunConfig::Command::test_full;
  if (stream->parsed()) cfg.command = RunConfig::Command::stream;
  if (sim->parsed()) cfg.command = RunConfig::Command::simulate;
  if (perm->parsed()) cfg.command = RunConfig::Command::permute;

  return coxstream::run_command(cfg, std::cin, std::cout, std::cerr);
}
