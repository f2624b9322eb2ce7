#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "peg/peg.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> loss_mode;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, Options& opts) {
  cmd->add_option("--config", opts.config, "config file (key = value)")->required();
  cmd->add_option("--seed", opts.seed, "overrides the config seed");
  cmd->add_option("--loss-mode", opts.loss_mode, "progressive or infonce")
      ->check(CLI::IsMember({"progressive", "infonce"}));
  cmd->add_option("--out", opts.out, "output directory");
}

peg::RunConfig resolve(const Options& opts) {
  peg::RunConfig cfg = peg::load_config(opts.config);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.loss_mode) cfg.loss_mode = *opts.loss_mode;
  if (opts.out) cfg.out_dir = *opts.out;
  cfg.validate();
  return cfg;
}

int fail(peg::ExitCode code, const char* kind, const std::string& what) {
  std::cerr << "peg: " << kind << " error: " << what << '\n';
  return static_cast<int>(code);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"peg: progressive contrastive training for retrieval embeddings"};
  app.require_subcommand(1);
  Options opts;
  auto* pretrain = app.add_subcommand("pretrain", "masked-autoencoder pretraining of the encoder");
  auto* mine = app.add_subcommand("mine", "split, generate queries, mine and filter hard negatives");
  auto* finetune = app.add_subcommand("finetune", "contrastive fine-tuning on a mined dataset");
  auto* evaluate = app.add_subcommand("evaluate", "retrieval metrics for a checkpoint");
  auto* bench = app.add_subcommand("bench", "progressive vs InfoNCE on synthetic data");
  for (auto* cmd : {pretrain, mine, finetune, evaluate, bench}) add_common(cmd, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(peg::ExitCode::kValidation);
  }

  try {
    const peg::RunConfig cfg = resolve(opts);
    const std::filesystem::path out = cfg.out_dir;
    if (pretrain->parsed()) peg::cli::cmd_pretrain(cfg, out, std::cout);
    if (mine->parsed()) peg::cli::cmd_mine(cfg, out, std::cout);
    if (finetune->parsed()) peg::cli::cmd_finetune(cfg, out, std::cout);
    if (evaluate->parsed()) peg::cli::cmd_evaluate(cfg, out, std::cout);
    if (bench->parsed()) peg::cli::cmd_bench(cfg, out, std::cout);
  } catch (const peg::ValidationError& e) {
    return fail(peg::ExitCode::kValidation, "validation", e.what());
  } catch (const peg::DomainError& e) {
    return fail(peg::ExitCode::kValidation, "validation", e.what());
  } catch (const peg::IoError& e) {
    return fail(peg::ExitCode::kIo, "io", e.what());
  } catch (const std::exception& e) {
    return fail(peg::ExitCode::kInternal, "internal", e.what());
  }
  return 0;
}
