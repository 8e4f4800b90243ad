// xvol: command line front end for the harness.
//
// Exit codes: 0 success, 1 a check failed, 2 bad usage or unusable input.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "harness.hpp"
#include "xvol/io.hpp"
#include "xvol/parallel.hpp"

namespace {

using namespace xvol;
using namespace xvol::harness;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  std::optional<double> tol;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config, "key=value config file")->check(CLI::ExistingFile);
  sub->add_option("--seed", f.seed, "random seed");
  sub->add_option("--out", f.out, "CSV output path (default: stdout)");
  sub->add_option("--threads", f.threads, "worker threads")->check(CLI::PositiveNumber);
  sub->add_option("--tol", f.tol, "override every max-abs tolerance")->check(CLI::PositiveNumber);
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig cfg;
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw IoError("cannot open config " + f.config);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    cfg.apply(parse_kv(text));
  }
  if (f.seed) cfg.seed = *f.seed;
  if (f.out) cfg.out = *f.out;
  if (f.threads) cfg.threads = *f.threads;
  if (f.tol) cfg.set_tolerance(*f.tol);
  return cfg;
}

int emit(const CommandResult& r, const RunConfig& cfg) {
  for (const auto& line : r.log) std::cerr << line << '\n';
  const std::string csv = r.csv.str();
  if (cfg.out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream os(cfg.out, std::ios::binary);
    if (!os) throw IoError("cannot write " + cfg.out);
    os << csv;
  }
  return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"X-volution operator toolkit"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto* eq = app.add_subcommand("equivalence", "two-path, static-merge and BN-folding equivalence checks");
  bool corrupt = false;
  eq->add_flag("--corrupt", corrupt, "perturb merged kernels (negative control)");
  auto* bench = app.add_subcommand("bench", "operator timing and log-log scaling fit");
  auto* approx = app.add_subcommand("approx", "PSSA stack fidelity against exact attention");
  auto* train = app.add_subcommand("train-toy", "toy convergence experiment");
  auto* repack = app.add_subcommand("repack", "convert a training bundle into an inference bundle");
  std::string in_path, out_bundle;
  repack->add_option("input", in_path, "training bundle")->required()->check(CLI::ExistingFile);
  repack->add_option("output", out_bundle, "inference bundle to write")->required();
  auto* init = app.add_subcommand("init-bundle", "write a randomly initialised training bundle");
  std::string init_path;
  int c_in = 4, c_out = 4, c_emb = 4;
  init->add_option("output", init_path, "bundle to write")->required();
  init->add_option("--c-in", c_in, "input channels")->check(CLI::PositiveNumber);
  init->add_option("--c-out", c_out, "output channels")->check(CLI::PositiveNumber);
  init->add_option("--c-emb", c_emb, "embedding channels")->check(CLI::PositiveNumber);
  for (auto* sub : {eq, bench, approx, train, repack, init}) add_common(sub, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  RunConfig cfg;
  try {
    cfg = resolve(flags);
    if (corrupt) cfg.corrupt = true;
  } catch (const std::exception& e) {
    std::cerr << "xvol: " << e.what() << '\n';
    return 2;
  }
  set_num_threads(cfg.threads);

  try {
    if (eq->parsed()) return emit(cmd_equivalence(cfg), cfg);
    if (bench->parsed()) return emit(cmd_bench(cfg), cfg);
    if (approx->parsed()) return emit(cmd_approx(cfg), cfg);
    if (train->parsed()) return emit(cmd_train_toy(cfg), cfg);
    if (init->parsed()) return emit(cmd_init_bundle(init_path, cfg, c_in, c_out, c_emb), cfg);
    if (repack->parsed()) {
      try {
        return emit(cmd_repack(in_path, out_bundle, cfg), cfg);
      } catch (const DomainError& e) {
        std::cerr << "xvol repack: refusing to convert: " << e.what() << '\n';
        return 2;
      } catch (const IoError& e) {
        std::cerr << "xvol repack: " << e.what() << '\n';
        return 2;
      }
    }
  } catch (const DomainError& e) {
    std::cerr << "xvol: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "xvol: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
