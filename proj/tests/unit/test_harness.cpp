#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include "harness.hpp"
#include "xvol/io.hpp"
#include "xvol/parallel.hpp"
#include "xvol/xvolution.hpp"

using namespace xvol;
using namespace xvol::harness;

namespace {

RunConfig quick() {
  RunConfig cfg;
  cfg.repeat = 4;
  cfg.sizes = {{8, 8}, {12, 10}};
  cfg.max_channels = 3;
  cfg.approx_train_fields = 24;
  cfg.approx_test_fields = 8;
  cfg.epochs = 2;
  cfg.train_samples = 16;
  cfg.val_samples = 8;
  cfg.batch = 8;
  cfg.channels = 4;
  cfg.embed_channels = 2;
  return cfg;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("xvol_test_" + name);
}

}  // namespace

// ---------------------------------------------------------------------------
// CSV and number formatting
// ---------------------------------------------------------------------------

TEST(Csv, HeaderAndQuoting) {
  Csv csv;
  csv.header = {"a", "b"};
  csv.add({"plain", "has,comma"});
  csv.add({"quote\"d", "line\nbreak"});
  EXPECT_EQ(csv.str(), "a,b\r\nplain,\"has,comma\"\r\n\"quote\"\"d\",\"line\nbreak\"\r\n");
}

TEST(Csv, HeaderOnlyAndShapeErrors) {
  Csv csv;
  csv.header = {"x"};
  EXPECT_EQ(csv.str(), "x\r\n");
  csv.add({"1", "2"});
  EXPECT_THROW(csv.str(), DomainError);
  Csv empty;
  EXPECT_THROW(empty.str(), DomainError);
}

TEST(FmtNum, StableAndNeverNan) {
  EXPECT_EQ(fmt_num(0.5), "0.5");
  EXPECT_EQ(fmt_num(1e-7), "1e-07");
  EXPECT_EQ(fmt_num(123456789.0), "1.23457e+08");
  EXPECT_EQ(fmt_num(std::nan("")), "");
  EXPECT_EQ(fmt_num(INFINITY), "");
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

TEST(RunConfig, AppliesKnownKeys) {
  RunConfig cfg;
  cfg.apply(parse_kv("seed=7\nrepeat=3\nsizes=8x12,16\ntol=2e-4\nbench.pssa_sizes=32,64\n"
                     "train.epochs=0\npssa.lengths=1,2\npssa.product=reduce\n"));
  EXPECT_EQ(cfg.seed, 7u);
  EXPECT_EQ(cfg.repeat, 3);
  EXPECT_EQ(cfg.sizes, (std::vector<std::pair<int, int>>{{8, 12}, {16, 16}}));
  EXPECT_EQ(cfg.tol_two_path, 2e-4);
  EXPECT_EQ(cfg.tol_bn_fold, 2e-4);
  EXPECT_EQ(cfg.tol_rel_l2, 1e-5);
  EXPECT_EQ(cfg.bench_pssa_sizes, (std::vector<int>{32, 64}));
  EXPECT_EQ(cfg.epochs, 0);
  EXPECT_EQ(cfg.pssa.shift_lengths, (std::vector<int>{1, 2}));
  EXPECT_EQ(cfg.pssa.product, ProductMode::Reduce);
  EXPECT_EQ(cfg.pssa.directions, 8);
}

TEST(RunConfig, RejectsBadInput) {
  RunConfig cfg;
  EXPECT_THROW(cfg.apply({{"nonsense", "1"}}), DomainError);
  EXPECT_THROW(cfg.apply({{"seed", "abc"}}), DomainError);
  EXPECT_THROW(cfg.apply({{"repeat", "0"}}), DomainError);
  EXPECT_THROW(cfg.apply({{"tol", "-1"}}), DomainError);
  EXPECT_THROW(cfg.apply({{"tol.two_path", "nan"}}), DomainError);
  EXPECT_THROW(cfg.apply({{"sizes", "8x"}}), DomainError);
  EXPECT_THROW(cfg.apply({{"pssa.directions", "5"}}), DomainError);
  EXPECT_THROW(cfg.apply({{"corrupt", "maybe"}}), DomainError);
}

// ---------------------------------------------------------------------------
// equivalence
// ---------------------------------------------------------------------------

TEST(Equivalence, PassesAndIsReproducible) {
  const auto cfg = quick();
  const auto a = cmd_equivalence(cfg);
  const auto b = cmd_equivalence(cfg);
  EXPECT_EQ(a.exit_code, 0);
  ASSERT_EQ(a.csv.rows.size(), 5u);
  for (const auto& row : a.csv.rows) EXPECT_EQ(row.back(), "true") << row.front();
  EXPECT_EQ(a.csv.str(), b.csv.str());
}

TEST(Equivalence, CorruptedKernelFails) {
  auto cfg = quick();
  cfg.corrupt = true;
  const auto r = cmd_equivalence(cfg);
  EXPECT_EQ(r.exit_code, 1);
  int failing = 0;
  for (const auto& row : r.csv.rows) failing += row.back() == "false";
  EXPECT_GT(failing, 0);
}

TEST(Equivalence, ReduceModeAndThreadsAgree) {
  auto cfg = quick();
  cfg.pssa.product = ProductMode::Reduce;
  const auto one = cmd_equivalence(cfg);
  EXPECT_EQ(one.exit_code, 0);
  set_num_threads(3);
  const auto three = cmd_equivalence(cfg);
  set_num_threads(1);
  EXPECT_EQ(one.csv.str(), three.csv.str());
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

TEST(Bench, LogLogSlope) {
  EXPECT_NEAR(loglog_slope({1, 2, 4, 8}, {3, 6, 12, 24}), 1.0, 1e-12);
  EXPECT_NEAR(loglog_slope({1, 10, 100}, {5, 500, 50000}), 2.0, 1e-12);
  EXPECT_THROW(loglog_slope({1}, {1}), DomainError);
  EXPECT_THROW(loglog_slope({1, 2}, {0, 1}), DomainError);
}

TEST(Bench, SmallRunHasExpectedRows) {
  auto cfg = quick();
  cfg.bench_pssa_sizes = {16, 24};
  cfg.bench_sa_sizes = {4, 6};
  cfg.bench_conv_sizes = {16, 24};
  cfg.bench_repeats = 1;
  cfg.bench_warmup = 0;
  const auto r = cmd_bench(cfg);
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.csv.header, (std::vector<std::string>{"op", "n_pixels", "median_ns", "slope_fit"}));
  std::map<std::string, int> count;
  for (const auto& row : r.csv.rows) ++count[row[0]];
  // two timed sizes plus one slope row per op
  EXPECT_EQ(count["pssa"], 3);
  EXPECT_EQ(count["self_attention"], 3);
  EXPECT_EQ(r.csv.rows.back()[1], "");
}

// ---------------------------------------------------------------------------
// approx
// ---------------------------------------------------------------------------

TEST(Approx, SmoothFieldsAreDeterministic) {
  EXPECT_EQ(smooth_fields(5, 3, 2, 8), smooth_fields(5, 3, 2, 8));
  EXPECT_FALSE(smooth_fields(5, 3, 2, 8) == smooth_fields(6, 3, 2, 8));
}

TEST(Approx, QualityIsDefinedAndReproducible) {
  const auto cfg = quick();
  const auto a = cmd_approx(cfg);
  const auto b = cmd_approx(cfg);
  EXPECT_EQ(a.csv.str(), b.csv.str());
  ASSERT_EQ(a.csv.rows.size(), 6u);
  for (const auto& row : a.csv.rows) {
    EXPECT_FALSE(row[2].empty());
    EXPECT_FALSE(row[3].empty());
  }
}

TEST(Approx, ShiftLongerThanFieldIsRejected) {
  auto cfg = quick();
  cfg.approx_size = 4;
  EXPECT_THROW(run_approx(cfg), DomainError);
}

TEST(Approx, ExactTargetAgainstItselfHasUnitCosine) {
  const auto f = smooth_fields(1, 2, 2, 8);
  Rng rng(1);
  const AttentionParams p{rng.normal_tensor(Dims{2, 2, 1, 1}), rng.normal_tensor(Dims{2, 2, 1, 1}),
                          rng.normal_tensor(Dims{2, 2, 1, 1})};
  const auto sa = self_attention_exact(f, p);
  const auto q = approx_quality(sa, sa);
  ASSERT_TRUE(q.cosine);
  EXPECT_NEAR(*q.cosine, 1.0, 1e-12);
}

TEST(Approx, ConstantFieldHasDefinedMetrics) {
  Rng rng(2);
  const AttentionParams p{rng.normal_tensor(Dims{2, 2, 1, 1}), rng.normal_tensor(Dims{2, 2, 1, 1}),
                          rng.normal_tensor(Dims{2, 2, 1, 1})};
  const Tensor4 x(Dims{1, 2, 8, 8}, 0.75f);
  const auto sa = self_attention_exact(x, p);
  for (int c = 0; c < 2; ++c)
    for (int i = 1; i < 64; ++i) EXPECT_EQ(sa.plane(0, c)[i], sa.plane(0, c)[0]);
  const auto q = approx_quality(scale(sa, 0.5), sa);
  ASSERT_TRUE(q.cosine && q.relative_l2);
  EXPECT_NEAR(*q.relative_l2, 0.5, 1e-6);
}

// ---------------------------------------------------------------------------
// train-toy
// ---------------------------------------------------------------------------

TEST(ToyDataset, BalancedAndDeterministic) {
  const auto a = ToyDataset::generate(3, 4, 32, 16);
  const auto b = ToyDataset::generate(3, 4, 32, 16);
  EXPECT_EQ(a.train_x, b.train_x);
  EXPECT_EQ(a.train_y, b.train_y);
  EXPECT_EQ(a.train_x.dims(), (Dims{32, 1, 32, 32}));
  std::vector<int> count(4);
  for (int y : a.train_y) ++count[static_cast<std::size_t>(y)];
  for (int c : count) EXPECT_EQ(c, 8);
  EXPECT_THROW(ToyDataset::generate(3, 1, 32, 16), DomainError);
}

TEST(TrainToy, ZeroEpochsGivesHeaderOnly) {
  auto cfg = quick();
  cfg.epochs = 0;
  const auto r = cmd_train_toy(cfg);
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.csv.str(), "epoch,model,train_loss,val_acc\r\n");
}

TEST(TrainToy, SmallRunIsDeterministic) {
  const auto cfg = quick();
  const auto data = ToyDataset::generate(cfg.seed, cfg.classes, cfg.train_samples, cfg.val_samples);
  for (auto m : {ToyModel::ConvOnly, ToyModel::PssaOnly, ToyModel::Xvolution}) {
    const auto a = train_toy_model(m, data, cfg);
    const auto b = train_toy_model(m, data, cfg);
    ASSERT_EQ(a.size(), 2u) << to_string(m);
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].train_loss, b[i].train_loss);
      EXPECT_EQ(a[i].val_acc, b[i].val_acc);
      EXPECT_TRUE(std::isfinite(a[i].train_loss));
      EXPECT_GE(a[i].val_acc, 0.0);
      EXPECT_LE(a[i].val_acc, 1.0);
    }
  }
}

TEST(TrainToy, DivergenceIsReportedNotHidden) {
  auto cfg = quick();
  cfg.epochs = 3;
  cfg.lr = 1e6;
  const auto r = cmd_train_toy(cfg);
  EXPECT_EQ(r.exit_code, 1);
  bool empty_loss = false;
  for (const auto& row : r.csv.rows) empty_loss |= row[2].empty();
  EXPECT_TRUE(empty_loss);
}

// ---------------------------------------------------------------------------
// repack
// ---------------------------------------------------------------------------

TEST(Repack, ConvertsAndProbes) {
  const auto cfg = quick();
  const auto in = temp_path("train.xvb"), out = temp_path("infer.xvb");
  ASSERT_EQ(cmd_init_bundle(in, cfg, 3, 4, 2).exit_code, 0);
  const auto r = cmd_repack(in, out, cfg);
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.csv.rows.size(), 5u);
  EXPECT_NO_THROW(infer_params_from_bundle(Bundle::load(out)));
  std::filesystem::remove(in);
  std::filesystem::remove(out);
}

TEST(Repack, RefusesStackedPssa) {
  Rng rng(4);
  auto p = random_xvolution(2, 2, 2, rng);
  p.pssa_cfg.stack_depth = 2;
  const auto in = temp_path("stacked.xvb"), out = temp_path("stacked_out.xvb");
  to_bundle(p).save(in);
  EXPECT_THROW(cmd_repack(in, out, quick()), DomainError);
  EXPECT_FALSE(std::filesystem::exists(out));
  std::filesystem::remove(in);
  EXPECT_THROW(cmd_repack(temp_path("missing.xvb"), out, quick()), IoError);
}
