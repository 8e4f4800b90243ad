#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "xvol/tensor.hpp"

namespace xvol {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor record: "XVT1", u32 n, c, h, w (little endian), then n*c*h*w
// little-endian IEEE-754 binary32 values in (n, c, h, w) row-major order.
void write_tensor(std::ostream& os, const Tensor4& t);
Tensor4 read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor4& t);
Tensor4 load_tensor(const std::filesystem::path& path);

/// Section kinds of a parameter bundle.
enum class SectionTag : std::uint8_t {
  Tensor = 0x54,  // 'T': payload is one tensor record
  Text = 0x4B,    // 'K': payload is u32 length + UTF-8 key=value lines
};

/// Named collection of tensors and text sections.
///
/// File layout: "XVB1", u32 section count, then per section
///   u8 tag, u32 name length, name bytes, payload (see SectionTag).
/// Sections are written in name order.
class Bundle {
 public:
  void put(const std::string& name, Tensor4 t);
  void put_vector(const std::string& name, const std::vector<float>& v);
  void put_text(const std::string& name, std::string text);

  bool has(const std::string& name) const { return sections_.count(name) != 0; }
  const Tensor4& tensor(const std::string& name) const;
  std::vector<float> vector(const std::string& name) const;
  const std::string& text(const std::string& name) const;
  std::vector<std::string> names() const;

  void write(std::ostream& os) const;
  static Bundle read(std::istream& is);
  void save(const std::filesystem::path& path) const;
  static Bundle load(const std::filesystem::path& path);

 private:
  std::map<std::string, std::variant<Tensor4, std::string>> sections_;
};

/// Parses "key=value" lines; blank lines and lines starting with '#' are skipped.
std::map<std::string, std::string> parse_kv(const std::string& text);
std::string format_kv(const std::map<std::string, std::string>& kv);

}  // namespace xvol
