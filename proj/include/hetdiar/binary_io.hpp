#ifndef HETDIAR_BINARY_IO_HPP
#define HETDIAR_BINARY_IO_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

namespace hetdiar::io {

// Little-endian primitives shared by the HDFM/HDEM/HDPL/HDVB containers.
void write_u32(std::ostream& os, std::uint32_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
std::uint32_t read_u32(std::istream& is);
float read_f32(std::istream& is);
double read_f64(std::istream& is);

void write_magic(std::ostream& os, std::string_view magic);
/// Throws DataError when the next four bytes differ from `magic`.
void expect_magic(std::istream& is, std::string_view magic, const std::string& what);

/// Length-prefixed (u32) UTF-8 block.
void write_string_block(std::ostream& os, const std::string& text);
std::string read_string_block(std::istream& is);

/// Row-major f64 block of a dense matrix, no shape header.
void write_f64_block(std::ostream& os, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_f64_block(std::istream& is, Eigen::Index rows, Eigen::Index cols);

/// Hex SHA-256 of a file's contents.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace hetdiar::io

#endif  // HETDIAR_BINARY_IO_HPP
