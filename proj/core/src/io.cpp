#include "xvol/io.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace xvol {

namespace {

constexpr std::array<char, 4> kTensorMagic{'X', 'V', 'T', '1'};
constexpr std::array<char, 4> kBundleMagic{'X', 'V', 'B', '1'};
constexpr std::uint32_t kMaxName = 1u << 16;

void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("unexpected end of stream");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void expect_magic(std::istream& is, const std::array<char, 4>& magic) {
  std::array<char, 4> got{};
  if (!is.read(got.data(), 4) || got != magic)
    throw IoError(std::string("bad magic, expected ") + std::string(magic.begin(), magic.end()));
}

std::string get_bytes(std::istream& is, std::uint32_t len) {
  std::string s(len, '\0');
  if (len && !is.read(s.data(), len)) throw IoError("unexpected end of stream");
  return s;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor4& t) {
  os.write(kTensorMagic.data(), 4);
  for (int d : {t.n(), t.c(), t.h(), t.w()}) put_u32(os, static_cast<std::uint32_t>(d));
  for (float v : t.data()) put_u32(os, std::bit_cast<std::uint32_t>(v));
  if (!os) throw IoError("failed to write tensor");
}

Tensor4 read_tensor(std::istream& is) {
  expect_magic(is, kTensorMagic);
  std::uint32_t d[4];
  for (auto& v : d) {
    v = get_u32(is);
    if (v == 0 || v > (1u << 30)) throw IoError("invalid tensor dimension " + std::to_string(v));
  }
  const Dims dims{static_cast<int>(d[0]), static_cast<int>(d[1]), static_cast<int>(d[2]), static_cast<int>(d[3])};
  if (dims.size() > (std::size_t{1} << 32)) throw IoError("tensor too large");
  Tensor4 t(dims);
  for (auto& v : t.data()) v = std::bit_cast<float>(get_u32(is));
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor4& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor4 load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_tensor(is);
}

void Bundle::put(const std::string& name, Tensor4 t) { sections_[name] = std::move(t); }

void Bundle::put_vector(const std::string& name, const std::vector<float>& v) {
  put(name, Tensor4(Dims{1, static_cast<int>(v.size()), 1, 1}, v));
}

void Bundle::put_text(const std::string& name, std::string text) { sections_[name] = std::move(text); }

const Tensor4& Bundle::tensor(const std::string& name) const {
  auto it = sections_.find(name);
  if (it == sections_.end()) throw IoError("bundle has no section '" + name + "'");
  if (const auto* t = std::get_if<Tensor4>(&it->second)) return *t;
  throw IoError("bundle section '" + name + "' is not a tensor");
}

std::vector<float> Bundle::vector(const std::string& name) const {
  const auto& t = tensor(name);
  return {t.data().begin(), t.data().end()};
}

const std::string& Bundle::text(const std::string& name) const {
  auto it = sections_.find(name);
  if (it == sections_.end()) throw IoError("bundle has no section '" + name + "'");
  if (const auto* s = std::get_if<std::string>(&it->second)) return *s;
  throw IoError("bundle section '" + name + "' is not text");
}

std::vector<std::string> Bundle::names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : sections_) out.push_back(k);
  return out;
}

void Bundle::write(std::ostream& os) const {
  os.write(kBundleMagic.data(), 4);
  put_u32(os, static_cast<std::uint32_t>(sections_.size()));
  for (const auto& [name, value] : sections_) {
    const bool is_tensor = std::holds_alternative<Tensor4>(value);
    os.put(static_cast<char>(is_tensor ? SectionTag::Tensor : SectionTag::Text));
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    if (is_tensor) {
      write_tensor(os, std::get<Tensor4>(value));
    } else {
      const auto& s = std::get<std::string>(value);
      put_u32(os, static_cast<std::uint32_t>(s.size()));
      os.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
  }
  if (!os) throw IoError("failed to write bundle");
}

Bundle Bundle::read(std::istream& is) {
  expect_magic(is, kBundleMagic);
  const auto count = get_u32(is);
  Bundle b;
  for (std::uint32_t i = 0; i < count; ++i) {
    const int tag = is.get();
    if (tag == std::char_traits<char>::eof()) throw IoError("unexpected end of stream");
    const auto name_len = get_u32(is);
    if (name_len > kMaxName) throw IoError("section name too long");
    auto name = get_bytes(is, name_len);
    if (b.has(name)) throw IoError("duplicate section '" + name + "'");
    switch (static_cast<SectionTag>(tag)) {
      case SectionTag::Tensor:
        b.put(name, read_tensor(is));
        break;
      case SectionTag::Text: {
        const auto len = get_u32(is);
        if (len > (1u << 24)) throw IoError("text section too long");
        b.put_text(name, get_bytes(is, len));
        break;
      }
      default:
        throw IoError("unknown section tag " + std::to_string(tag) + " for '" + name + "'");
    }
  }
  return b;
}

void Bundle::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write(os);
}

Bundle Bundle::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read(is);
}

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream ss(text);
  std::string line;
  int lineno = 0;
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(ss, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw IoError("line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::string format_kv(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

}  // namespace xvol
