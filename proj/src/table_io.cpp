#include "spahgc/table_io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "spahgc/error.hpp"

namespace spahgc {

namespace {

constexpr std::string_view kEmbedMagic = "SPAHGCF1";

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t pos = text.find('\n', start);
    if (pos == std::string_view::npos) pos = text.size();
    std::string_view line = text.substr(start, pos - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
    start = pos + 1;
  }
  return lines;
}

}  // namespace

std::string format_f32(double v) {
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), static_cast<float>(v));
  return std::string(buf.data(), res.ptr);
}

std::string format_f64(double v) {
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

double parse_double(std::string_view text, std::string_view context) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw FormatError(std::string(context) + ": cannot parse number '" + std::string(text) + "'");
  }
  return v;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Table read_table_csv(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  const auto lines = split_lines(text);
  if (lines.empty()) throw FormatError(path.string() + ": empty CSV");
  const auto header = split_commas(lines.front());
  Table t;
  t.id_column = std::string(header.front());
  for (std::size_t c = 1; c < header.size(); ++c) t.columns.emplace_back(header[c]);
  const std::size_t cols = t.columns.size();
  std::vector<double> values;
  values.reserve((lines.size() - 1) * cols);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto fields = split_commas(lines[r]);
    if (fields.size() != cols + 1) {
      throw FormatError(path.string() + ": line " + std::to_string(r + 1) + " has " +
                        std::to_string(fields.size()) + " fields, header has " +
                        std::to_string(cols + 1));
    }
    t.row_ids.emplace_back(fields.front());
    for (std::size_t c = 1; c < fields.size(); ++c) {
      values.push_back(parse_double(fields[c], path.string()));
    }
  }
  t.values = Matrix(t.row_ids.size(), cols, std::move(values));
  return t;
}

void write_table_csv(const std::filesystem::path& path, const Table& table) {
  if (table.values.rows() != table.row_ids.size() || table.values.cols() != table.columns.size()) {
    throw DimensionError("write_table_csv: table shape does not match its labels");
  }
  std::string out = table.id_column;
  for (const auto& c : table.columns) {
    out += ',';
    out += c;
  }
  out += '\n';
  for (std::size_t r = 0; r < table.row_ids.size(); ++r) {
    out += table.row_ids[r];
    for (double v : table.values.row(r)) {
      out += ',';
      out += format_f32(v);
    }
    out += '\n';
  }
  write_text_file(path, out);
}

void append_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void append_f32_le(std::string& out, float v) { append_u32_le(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t read_u32_le(std::string_view bytes, std::size_t offset) {
  if (offset + 4 > bytes.size()) throw FormatError("unexpected end of binary data");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

float read_f32_le(std::string_view bytes, std::size_t offset) {
  return std::bit_cast<float>(read_u32_le(bytes, offset));
}

Matrix read_embed_bin(const std::filesystem::path& path) {
  const std::string bytes = read_text_file(path);
  if (bytes.size() < 16 || std::string_view(bytes).substr(0, 8) != kEmbedMagic) {
    throw FormatError(path.string() + ": missing SPAHGCF1 header");
  }
  const std::size_t rows = read_u32_le(bytes, 8);
  const std::size_t cols = read_u32_le(bytes, 12);
  if (bytes.size() != 16 + rows * cols * 4) {
    throw FormatError(path.string() + ": payload size does not match " + std::to_string(rows) +
                      "x" + std::to_string(cols));
  }
  Matrix m(rows, cols);
  auto v = m.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = read_f32_le(bytes, 16 + 4 * i);
  return m;
}

void write_embed_bin(const std::filesystem::path& path, const Matrix& m) {
  std::string bytes(kEmbedMagic);
  append_u32_le(bytes, static_cast<std::uint32_t>(m.rows()));
  append_u32_le(bytes, static_cast<std::uint32_t>(m.cols()));
  bytes.reserve(bytes.size() + m.size() * 4);
  for (double v : m.values()) append_f32_le(bytes, static_cast<float>(v));
  write_text_file(path, bytes);
}

}  // namespace spahgc
