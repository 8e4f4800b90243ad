#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "harness.hpp"

namespace xvol::harness {
namespace {

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end) throw DomainError("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

int parse_positive(const std::string& key, const std::string& v, int min = 1) {
  const auto x = parse_int(key, v);
  if (x < min || x > 1'000'000'000) throw DomainError("config: '" + key + "' out of range: " + v);
  return static_cast<int>(x);
}

double parse_double(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  double out = 0.0;
  is >> out;
  if (!is || !is.eof() || !std::isfinite(out))
    throw DomainError("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::vector<std::string> split(const std::string& v) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : v) {
    if (ch == ',') {
      parts.push_back(cur);
      cur.clear();
    } else if (ch != ' ') {
      cur += ch;
    }
  }
  if (!cur.empty()) parts.push_back(cur);
  return parts;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& p : split(v)) out.push_back(parse_positive(key, p));
  if (out.empty()) throw DomainError("config: '" + key + "' must not be empty");
  return out;
}

std::vector<std::pair<int, int>> parse_sizes(const std::string& key, const std::string& v) {
  std::vector<std::pair<int, int>> out;
  for (const auto& p : split(v)) {
    const auto x = p.find('x');
    if (x == std::string::npos) {
      const int s = parse_positive(key, p);
      out.emplace_back(s, s);
    } else {
      out.emplace_back(parse_positive(key, p.substr(0, x)), parse_positive(key, p.substr(x + 1)));
    }
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw DomainError("config: '" + key + "' expects true/false, got '" + v + "'");
}

}  // namespace

void RunConfig::set_tolerance(double tol) {
  if (!(tol > 0.0)) throw DomainError("config: tolerance must be positive");
  tol_two_path = tol_bn_fold = tol_static_merge = tol_zero_pssa = tol;
}

void RunConfig::apply(const std::map<std::string, std::string>& kv) {
  std::map<std::string, std::string> pssa_kv;
  for (const auto& [key, v] : kv) {
    if (key.rfind("pssa.", 0) == 0) {
      pssa_kv[key] = v;
    } else if (key == "seed") {
      const auto s = parse_int(key, v);
      if (s < 0) throw DomainError("config: seed must be non-negative");
      seed = static_cast<std::uint64_t>(s);
    } else if (key == "threads") {
      threads = parse_positive(key, v);
    } else if (key == "out") {
      out = v;
    } else if (key == "repeat") {
      repeat = parse_positive(key, v);
    } else if (key == "sizes") {
      sizes = parse_sizes(key, v);
    } else if (key == "max_channels") {
      max_channels = parse_positive(key, v);
    } else if (key == "tol") {
      set_tolerance(parse_double(key, v));
    } else if (key == "tol.two_path") {
      tol_two_path = parse_double(key, v);
    } else if (key == "tol.rel_l2") {
      tol_rel_l2 = parse_double(key, v);
    } else if (key == "tol.bn_fold") {
      tol_bn_fold = parse_double(key, v);
    } else if (key == "tol.static_merge") {
      tol_static_merge = parse_double(key, v);
    } else if (key == "tol.zero_pssa") {
      tol_zero_pssa = parse_double(key, v);
    } else if (key == "corrupt") {
      corrupt = parse_bool(key, v);
    } else if (key == "bench.pssa_sizes") {
      bench_pssa_sizes = parse_int_list(key, v);
    } else if (key == "bench.sa_sizes") {
      bench_sa_sizes = parse_int_list(key, v);
    } else if (key == "bench.conv_sizes") {
      bench_conv_sizes = parse_int_list(key, v);
    } else if (key == "bench.repeats") {
      bench_repeats = parse_positive(key, v);
    } else if (key == "bench.warmup") {
      bench_warmup = parse_positive(key, v, 0);
    } else if (key == "bench.channels") {
      bench_channels = parse_positive(key, v);
    } else if (key == "bench.sa_channels") {
      bench_sa_channels = parse_positive(key, v);
    } else if (key == "approx.depths") {
      approx_depths = parse_int_list(key, v);
    } else if (key == "approx.size") {
      approx_size = parse_positive(key, v, 2);
    } else if (key == "approx.train_fields") {
      approx_train_fields = parse_positive(key, v);
    } else if (key == "approx.test_fields") {
      approx_test_fields = parse_positive(key, v);
    } else if (key == "train.epochs") {
      epochs = parse_positive(key, v, 0);
    } else if (key == "train.classes") {
      classes = parse_positive(key, v, 2);
    } else if (key == "train.samples") {
      train_samples = parse_positive(key, v);
    } else if (key == "train.val_samples") {
      val_samples = parse_positive(key, v);
    } else if (key == "train.batch") {
      batch = parse_positive(key, v);
    } else if (key == "train.channels") {
      channels = parse_positive(key, v);
    } else if (key == "train.embed") {
      embed_channels = parse_positive(key, v);
    } else if (key == "train.lr") {
      lr = parse_double(key, v);
    } else if (key == "train.momentum") {
      momentum = parse_double(key, v);
    } else if (key == "train.weight_decay") {
      weight_decay = parse_double(key, v);
    } else {
      throw DomainError("config: unknown key '" + key + "'");
    }
  }
  if (!pssa_kv.empty()) {
    // Start from the current config so partial overrides keep other fields.
    auto merged = pssa.to_kv();
    for (const auto& [k, v] : pssa_kv) merged[k] = v;
    pssa = PssaConfig::from_kv(merged);
    pssa.validate();
  }
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace {

void put_field(std::string& out, const std::string& f) {
  if (f.find_first_of(",\"\r\n") == std::string::npos) {
    out += f;
    return;
  }
  out += '"';
  for (char ch : f) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
}

void put_record(std::string& out, const std::vector<std::string>& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out += ',';
    put_field(out, row[i]);
  }
  out += "\r\n";
}

}  // namespace

std::string Csv::str() const {
  if (header.empty()) throw DomainError("Csv: header row is required");
  std::string out;
  put_record(out, header);
  for (const auto& r : rows) {
    if (r.size() != header.size()) throw DomainError("Csv: row width does not match header");
    put_record(out, r);
  }
  return out;
}

std::string fmt_num(double v) {
  // Non-finite values become empty fields; failures are reported via pass and exit codes.
  if (!std::isfinite(v)) return {};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace xvol::harness
