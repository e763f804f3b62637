#include "sde/csv.hpp"

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <fstream>

#include "sde/errors.hpp"

namespace sde {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

double parse_double_field(const std::string& s, const std::string& context) {
  if (s.empty()) throw DataError(context + ": empty field where a number is required");
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE)
    throw DataError(context + ": malformed number '" + s + "'");
  return v;
}

int parse_int_field(const std::string& s, const std::string& context) {
  if (s.empty()) throw DataError(context + ": empty field where an integer is required");
  errno = 0;
  char* end = nullptr;
  long v = std::strtol(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size() || errno == ERANGE)
    throw DataError(context + ": malformed integer '" + s + "'");
  return static_cast<int>(v);
}

std::optional<double> parse_optional_double(const std::string& s, const std::string& context) {
  if (s.empty()) return std::nullopt;
  return parse_double_field(s, context);
}

std::optional<int> parse_optional_int(const std::string& s, const std::string& context) {
  if (s.empty()) return std::nullopt;
  return parse_int_field(s, context);
}

std::string format_double(double v) {
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

FileWriter::FileWriter(const std::string& path) : path_(path) {
  f_ = std::fopen(path.c_str(), "wb");
  if (!f_) throw DataError("cannot open " + path + " for writing");
}

FileWriter::~FileWriter() {
  if (f_) std::fclose(f_);
}

void FileWriter::write(const std::string& s) {
  if (std::fwrite(s.data(), 1, s.size(), f_) != s.size())
    throw DataError("short write to " + path_);
}

void FileWriter::writeln(const std::string& s) {
  write(s);
  write("\n");
}

std::string file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path + " for checksum");
  std::uint64_t h = 0xCBF29CE484222325ULL;
  char buf[65536];
  while (in) {
    in.read(buf, sizeof buf);
    std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001B3ULL;
    }
  }
  char out[32];
  std::snprintf(out, sizeof out, "fnv1a:%016llx", static_cast<unsigned long long>(h));
  return out;
}

}  // namespace sde
