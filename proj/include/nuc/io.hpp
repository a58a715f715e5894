#pragma once

// On-disk formats.
//
// NUCF float image: 16-byte header ("NUCF", version byte 1, height and width
// as little-endian u32, 3 reserved zero bytes), row-major little-endian
// float64 values, then row-major validity bits packed LSB-first.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "nuc/grid.hpp"

namespace nuc::io {

namespace fs = std::filesystem;

inline constexpr std::uint8_t kNucfVersion = 1;

std::vector<std::uint8_t> encode_nucf(const ImageGrid& image);
// Throws IoError on a bad magic, version, size or truncated payload.
ImageGrid decode_nucf(const std::vector<std::uint8_t>& bytes, const std::string& name = "<memory>");

void write_nucf(const fs::path& path, const ImageGrid& image);
ImageGrid read_nucf(const fs::path& path);

// 8-bit binary PGM. Values are mapped linearly from [lo, hi] to [0, 255],
// rounded and clamped; invalid pixels are written as 0.
void write_pgm(const fs::path& path, const ImageGrid& image, double lo, double hi);
void write_pgm(const fs::path& path, const VisibilityMask& mask);  // 255 = set
// Reads P5 with maxval <= 255 into gray values; every pixel valid.
ImageGrid read_pgm(const fs::path& path);

// Whitespace separated rows at full precision ("%.17g"); invalid pixels are "nan".
void write_matrix(const fs::path& path, const ImageGrid& image);
ImageGrid read_matrix(const fs::path& path);

void write_homography(const fs::path& path, const Homography& h);
Homography read_homography(const fs::path& path);

std::string format_double(double v);

// Ordered key=value text. Keys may not contain '=' or newlines.
class Manifest {
 public:
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value) { set(key, format_double(value)); }
  void set(const std::string& key, long long value) { set(key, std::to_string(value)); }
  void set(const std::string& key, int value) { set(key, std::to_string(value)); }
  void set(const std::string& key, std::uint64_t value) { set(key, std::to_string(value)); }
  void set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }

  bool has(const std::string& key) const;
  // Throws IoError naming the key when it is absent.
  const std::string& get(const std::string& key) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string str() const;
  void write(const fs::path& path) const;
  static Manifest read(const fs::path& path);

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::string sha256_file(const fs::path& path);

std::vector<std::uint8_t> read_bytes(const fs::path& path);
void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

// Regular files below `root`, as sorted paths relative to it.
std::vector<fs::path> list_files(const fs::path& root);

}  // namespace nuc::io
