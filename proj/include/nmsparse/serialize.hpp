#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nmsparse {

// Raised for malformed binary containers; carries the byte offset at which
// the problem was detected.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& msg, std::size_t offset);
  std::size_t offset;
};

// Raised for invalid user input (CLI flags, config files, bad shapes).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Little-endian binary writer.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void str16(std::string_view s);  // u16 length + bytes
  void raw(const void* p, std::size_t n);

  std::size_t size() const { return buf_.size(); }
  const std::vector<std::uint8_t>& data() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

// Little-endian bounds-checked reader.
class ByteReader {
 public:
  ByteReader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
  explicit ByteReader(const std::vector<std::uint8_t>& v) : p_(v.data()), n_(v.size()) {}

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str16();
  std::vector<std::uint8_t> raw(std::size_t n);

  std::size_t offset() const { return off_; }
  std::size_t remaining() const { return n_ - off_; }
  bool done() const { return off_ == n_; }

 private:
  void need(std::size_t n) const;
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t off_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

// Flat key=value text (one pair per line, '#' comments ignored).
std::map<std::string, std::string> parse_kv_text(std::string_view text);

}  // namespace nmsparse
