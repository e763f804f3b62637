#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

namespace sde {

// Minimal CSV support for the fixed formats used here: comma separation, no
// quoting, empty field means missing. Formatting is locale-independent and
// stable so that reruns are byte-identical.

std::vector<std::string> split_csv_line(const std::string& line);

// Throws DataError with file/line context on malformed numbers.
double parse_double_field(const std::string& s, const std::string& context);
int parse_int_field(const std::string& s, const std::string& context);
std::optional<double> parse_optional_double(const std::string& s, const std::string& context);
std::optional<int> parse_optional_int(const std::string& s, const std::string& context);

// Round-trippable shortest representation (printf %.17g trimmed via %.*g probing).
std::string format_double(double v);
// Fixed number of decimals, for compact report columns.
std::string format_fixed(double v, int decimals);

// Reads all lines; strips trailing '\r'. Throws DataError when unreadable.
std::vector<std::string> read_lines(const std::string& path);

// Buffered writer that normalizes line endings to '\n'.
class FileWriter {
 public:
  explicit FileWriter(const std::string& path);
  ~FileWriter();
  FileWriter(const FileWriter&) = delete;
  FileWriter& operator=(const FileWriter&) = delete;

  void write(const std::string& s);
  void writeln(const std::string& s);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::FILE* f_ = nullptr;
};

// FNV-1a 64-bit over the file bytes, hex-encoded. Used in run manifests.
std::string file_checksum(const std::string& path);

}  // namespace sde
