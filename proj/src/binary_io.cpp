#include "hetdiar/binary_io.hpp"

#include "hetdiar/error.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <memory>
#include <ostream>

namespace hetdiar::io {

namespace {

void put_bytes(std::ostream& os, std::uint64_t bits, int n) {
  std::array<char, 8> buf{};
  for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  os.write(buf.data(), n);
}

std::uint64_t get_bytes(std::istream& is, int n) {
  std::array<unsigned char, 8> buf{};
  is.read(reinterpret_cast<char*>(buf.data()), n);
  if (!is) throw DataError("unexpected end of binary stream");
  std::uint64_t bits = 0;
  for (int i = 0; i < n; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return bits;
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { put_bytes(os, v, 4); }
void write_f32(std::ostream& os, float v) { put_bytes(os, std::bit_cast<std::uint32_t>(v), 4); }
void write_f64(std::ostream& os, double v) { put_bytes(os, std::bit_cast<std::uint64_t>(v), 8); }

std::uint32_t read_u32(std::istream& is) { return static_cast<std::uint32_t>(get_bytes(is, 4)); }
float read_f32(std::istream& is) {
  return std::bit_cast<float>(static_cast<std::uint32_t>(get_bytes(is, 4)));
}
double read_f64(std::istream& is) { return std::bit_cast<double>(get_bytes(is, 8)); }

void write_magic(std::ostream& os, std::string_view magic) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

void expect_magic(std::istream& is, std::string_view magic, const std::string& what) {
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!is || got != magic)
    throw DataError(what + ": bad magic (expected \"" + std::string(magic) + "\")");
}

void write_string_block(std::ostream& os, const std::string& text) {
  write_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string read_string_block(std::istream& is) {
  const std::uint32_t n = read_u32(is);
  if (n > (1u << 26)) throw DataError("string block too large");
  std::string text(n, '\0');
  is.read(text.data(), n);
  if (!is) throw DataError("truncated string block");
  return text;
}

void write_f64_block(std::ostream& os, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) write_f64(os, m(r, c));
}

Eigen::MatrixXd read_f64_block(std::istream& is, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = read_f64(is);
  return m;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string() + " for hashing");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xf]);
  }
  return out;
}

}  // namespace hetdiar::io
