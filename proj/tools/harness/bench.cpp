#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>

#include "harness.hpp"
#include "xvol/parallel.hpp"
#include "xvol/xvolution.hpp"

namespace xvol::harness {

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("loglog_slope: need two or more matching points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw DomainError("loglog_slope: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) throw DomainError("loglog_slope: x values are all equal");
  return sxy / sxx;
}

namespace {

double median_ns(const std::function<void()>& fn, int warmup, int repeats) {
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> t;
  t.reserve(static_cast<std::size_t>(repeats));
  for (int i = 0; i < repeats; ++i) {
    const auto a = std::chrono::steady_clock::now();
    fn();
    const auto b = std::chrono::steady_clock::now();
    t.push_back(std::chrono::duration<double, std::nano>(b - a).count());
  }
  std::sort(t.begin(), t.end());
  const std::size_t m = t.size() / 2;
  return t.size() % 2 ? t[m] : 0.5 * (t[m - 1] + t[m]);
}

// Keeps results observable so the optimiser cannot drop the work.
volatile float g_sink = 0.0f;

void series(BenchSummary& s, const std::string& op, const std::vector<int>& sizes, const RunConfig& cfg,
            const std::function<std::function<void()>(int)>& make) {
  std::vector<double> px, ns;
  for (int side : sizes) {
    const auto fn = make(side);
    const double t = median_ns(fn, cfg.bench_warmup, cfg.bench_repeats);
    const long long n = static_cast<long long>(side) * side;
    s.points.push_back({op, n, t});
    px.push_back(static_cast<double>(n));
    ns.push_back(t);
  }
  if (px.size() >= 2) s.slopes[op] = loglog_slope(px, ns);
}

}  // namespace

BenchSummary run_bench(const RunConfig& cfg) {
  set_num_threads(cfg.threads);
  BenchSummary s;
  Rng rng(cfg.seed);
  const int c = cfg.bench_channels;
  PssaConfig pc = cfg.pssa;
  pc.stack_depth = 1;

  {
    const auto kern = ConvKernel::same(rng.normal_tensor(Dims{c, c, 3, 3}, 0.3), std::vector<float>(c, 0.0f));
    series(s, "conv2d", cfg.bench_conv_sizes, cfg, [&](int side) {
      auto x = std::make_shared<Tensor4>(rng.normal_tensor(Dims{1, c, side, side}));
      return [x, &kern] { g_sink = g_sink + conv2d(*x, kern)[0]; };
    });
  }
  {
    const auto p = random_xvolution(c, c, c, rng, pc);
    series(s, "pssa", cfg.bench_pssa_sizes, cfg, [&](int side) {
      auto x = std::make_shared<Tensor4>(rng.normal_tensor(Dims{1, c, side, side}));
      return [x, &p, &pc] { g_sink = g_sink + pssa_forward(*x, p.pssa, pc)[0]; };
    });
    const auto ip = reparameterize(p);
    series(s, "xvolution_infer", cfg.bench_pssa_sizes, cfg, [&](int side) {
      auto x = std::make_shared<Tensor4>(rng.normal_tensor(Dims{1, c, side, side}));
      return [x, &ip] { g_sink = g_sink + xvolution_infer_forward(*x, ip)[0]; };
    });
  }
  {
    const int ce = cfg.bench_sa_channels;
    AttentionParams ap{rng.normal_tensor(Dims{ce, ce, 1, 1}, 0.1), rng.normal_tensor(Dims{ce, ce, 1, 1}, 0.1),
                       rng.normal_tensor(Dims{ce, ce, 1, 1}, 0.1)};
    series(s, "self_attention", cfg.bench_sa_sizes, cfg, [&](int side) {
      auto x = std::make_shared<Tensor4>(rng.normal_tensor(Dims{1, ce, side, side}));
      return [x, &ap] { g_sink = g_sink + self_attention_exact(*x, ap)[0]; };
    });
  }
  return s;
}

CommandResult cmd_bench(const RunConfig& cfg) {
  CommandResult res;
  res.csv.header = {"op", "n_pixels", "median_ns", "slope_fit"};
  const auto s = run_bench(cfg);
  for (const auto& p : s.points) res.csv.add({p.op, std::to_string(p.n_pixels), fmt_num(p.median_ns), ""});
  for (const auto& [op, slope] : s.slopes) {
    res.csv.add({op, "", "", fmt_num(slope)});
    res.log.push_back("bench " + op + " slope=" + fmt_num(slope));
  }
  return res;
}

}  // namespace xvol::harness
