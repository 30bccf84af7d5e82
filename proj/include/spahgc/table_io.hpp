#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "spahgc/matrix.hpp"

namespace spahgc {

/// A CSV table whose first column holds row identifiers and whose remaining
/// columns are numeric.
struct Table {
  std::string id_column;
  std::vector<std::string> columns;
  std::vector<std::string> row_ids;
  Matrix values;
};

Table read_table_csv(const std::filesystem::path& path);
void write_table_csv(const std::filesystem::path& path, const Table& table);

/// Shortest decimal text that round-trips the value rounded to f32.
std::string format_f32(double v);
/// Shortest decimal text that round-trips the double.
std::string format_f64(double v);
double parse_double(std::string_view text, std::string_view context);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// Raw embedding matrix: magic "SPAHGCF1", u32 LE rows, u32 LE cols, then
/// rows*cols f32 LE values in row-major order.
Matrix read_embed_bin(const std::filesystem::path& path);
void write_embed_bin(const std::filesystem::path& path, const Matrix& m);

/// Little-endian primitive encoders shared by the binary formats.
void append_u32_le(std::string& out, std::uint32_t v);
void append_f32_le(std::string& out, float v);
std::uint32_t read_u32_le(std::string_view bytes, std::size_t offset);
float read_f32_le(std::string_view bytes, std::size_t offset);

}  // namespace spahgc
