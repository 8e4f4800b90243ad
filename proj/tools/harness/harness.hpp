#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "xvol/pssa.hpp"
#include "xvol/tensor.hpp"

namespace xvol::harness {

/// Settings shared by all subcommands. Loaded from a key=value file and then
/// overridden by command-line flags.
struct RunConfig {
  std::uint64_t seed = 42;
  int threads = 1;
  std::string out;  // CSV destination; empty means stdout

  // equivalence
  int repeat = 100;
  std::vector<std::pair<int, int>> sizes;  // spatial sizes; empty draws from [6, 32]
  int max_channels = 8;
  double tol_two_path = 1e-4;
  double tol_rel_l2 = 1e-5;
  double tol_bn_fold = 1e-5;
  double tol_static_merge = 1e-4;
  double tol_zero_pssa = 1e-5;
  bool corrupt = false;  // negative control: perturb the merged kernel

  PssaConfig pssa;

  // bench
  std::vector<int> bench_pssa_sizes{64, 128, 256, 512};
  std::vector<int> bench_sa_sizes{8, 16, 32, 48};
  std::vector<int> bench_conv_sizes{64, 128, 256, 512};
  int bench_repeats = 7;
  int bench_warmup = 2;
  int bench_channels = 4;
  int bench_sa_channels = 16;

  // approx
  std::vector<int> approx_depths{1, 2, 3};
  int approx_size = 8;
  int approx_train_fields = 96;
  int approx_test_fields = 48;

  // train-toy
  int epochs = 10;
  int classes = 4;
  int train_samples = 256;
  int val_samples = 128;
  int batch = 32;
  int channels = 8;
  int embed_channels = 4;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  /// Applies recognised keys; throws DomainError on malformed values or unknown keys.
  void apply(const std::map<std::string, std::string>& kv);
  /// Overrides every max-abs tolerance.
  void set_tolerance(double tol);
};

/// RFC-4180 table with a mandatory header row.
struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row) { rows.push_back(std::move(row)); }
  std::string str() const;
};

/// Fixed-format rendering so repeated runs produce identical bytes. Non-finite
/// values render as an empty field.
std::string fmt_num(double v);

struct CommandResult {
  Csv csv;
  int exit_code = 0;
  std::vector<std::string> log;
};

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

/// Two-path X-volution, BN folding and static-merge checks over cfg.repeat
/// random instances. Columns: case, max_abs_diff, rel_l2, pass. Exit 1 iff a case fails.
CommandResult cmd_equivalence(const RunConfig& cfg);

/// Median wall time per size and a log-log slope per operator.
/// Columns: op, n_pixels, median_ns, slope_fit.
CommandResult cmd_bench(const RunConfig& cfg);

/// Least-squares-fitted PSSA stacks against exact attention.
/// Columns: depth, mode, cosine, rel_l2.
CommandResult cmd_approx(const RunConfig& cfg);

/// Trains conv-only, PSSA-only and X-volution toy models.
/// Columns: epoch, model, train_loss, val_acc.
CommandResult cmd_train_toy(const RunConfig& cfg);

/// Converts a training bundle to an inference bundle and probes equivalence.
/// Columns: probe, max_abs_diff, rel_l2, pass.
CommandResult cmd_repack(const std::filesystem::path& in, const std::filesystem::path& out, const RunConfig& cfg);

/// Writes a random training bundle (c_in, c_out, c_emb from the config channels).
CommandResult cmd_init_bundle(const std::filesystem::path& out, const RunConfig& cfg, int c_in, int c_out, int c_emb);

// ---------------------------------------------------------------------------
// Building blocks exposed for tests
// ---------------------------------------------------------------------------

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

struct BenchPoint {
  std::string op;
  long long n_pixels = 0;
  double median_ns = 0.0;
};

struct BenchSummary {
  std::vector<BenchPoint> points;
  std::map<std::string, double> slopes;
};

BenchSummary run_bench(const RunConfig& cfg);

/// Synthetic texture-classification set: each class renders Gaussian blobs
/// with its own scale and orientation at 1 x size x size.
struct ToyDataset {
  Tensor4 train_x;
  std::vector<int> train_y;
  Tensor4 val_x;
  std::vector<int> val_y;
  int classes = 0;

  static ToyDataset generate(std::uint64_t seed, int classes, int n_train, int n_val, int size = 32);
};

enum class ToyModel { ConvOnly, PssaOnly, Xvolution };
const char* to_string(ToyModel m);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
};

std::vector<EpochStats> train_toy_model(ToyModel model, const ToyDataset& data, const RunConfig& cfg);

/// Smooth random fields (sums of low-frequency cosines), n x c x size x size.
Tensor4 smooth_fields(std::uint64_t seed, int n, int c, int size);

enum class ApproxMode { Logits, Outputs };
const char* to_string(ApproxMode m);

struct ApproxResult {
  int depth = 0;
  ApproxMode mode = ApproxMode::Logits;
  ApproxQuality quality;
};

/// Fits the final-layer mix of a depth-d PSSA stack to the exact attention
/// target by least squares and measures fidelity on fresh fields.
std::vector<ApproxResult> run_approx(const RunConfig& cfg);

}  // namespace xvol::harness
