#include "nuc/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <openssl/evp.h>

namespace nuc::io {

namespace {

constexpr std::size_t kHeader = 16;

void put_u32(std::vector<std::uint8_t>& out, std::size_t at, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out[at + k] = static_cast<std::uint8_t>(v >> (8 * k));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(in[at + k]) << (8 * k);
  return v;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string());
  }
}

}  // namespace

std::vector<std::uint8_t> encode_nucf(const ImageGrid& image) {
  const std::size_t n = image.size();
  std::vector<std::uint8_t> out(kHeader + 8 * n + (n + 7) / 8, 0);
  std::memcpy(out.data(), "NUCF", 4);
  out[4] = kNucfVersion;
  put_u32(out, 5, static_cast<std::uint32_t>(image.height()));
  put_u32(out, 9, static_cast<std::uint32_t>(image.width()));
  for (std::size_t i = 0; i < n; ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(image[i]);
    for (int k = 0; k < 8; ++k)
      out[kHeader + 8 * i + k] = static_cast<std::uint8_t>(bits >> (8 * k));
  }
  const std::size_t mask_at = kHeader + 8 * n;
  for (std::size_t i = 0; i < n; ++i)
    if (image.valid(i)) out[mask_at + i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  return out;
}

ImageGrid decode_nucf(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  if (bytes.size() < kHeader || std::memcmp(bytes.data(), "NUCF", 4) != 0)
    throw IoError(name + ": not a NUCF image");
  if (bytes[4] != kNucfVersion)
    throw IoError(name + ": unsupported NUCF version " + std::to_string(bytes[4]));
  const std::uint32_t h = get_u32(bytes, 5);
  const std::uint32_t w = get_u32(bytes, 9);
  if (h < 3 || w < 3 || h > 65536 || w > 65536) throw IoError(name + ": bad image dimensions");
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (bytes.size() != kHeader + 8 * n + (n + 7) / 8)
    throw IoError(name + ": truncated or oversized NUCF payload");
  ImageGrid image(static_cast<int>(h), static_cast<int>(w), 0.0, false);
  const std::size_t mask_at = kHeader + 8 * n;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k)
      bits |= static_cast<std::uint64_t>(bytes[kHeader + 8 * i + k]) << (8 * k);
    image[i] = std::bit_cast<double>(bits);
    image.set_valid(i, (bytes[mask_at + i / 8] >> (i % 8)) & 1u);
  }
  return image;
}

void write_nucf(const fs::path& path, const ImageGrid& image) {
  write_bytes(path, encode_nucf(image));
}

ImageGrid read_nucf(const fs::path& path) { return decode_nucf(read_bytes(path), path.string()); }

void write_pgm(const fs::path& path, const ImageGrid& image, double lo, double hi) {
  std::string header = "P5\n" + std::to_string(image.width()) + " " +
                       std::to_string(image.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t i = 0; i < image.size(); ++i) {
    double v = 0.0;
    if (image.valid(i) && std::isfinite(image[i]))
      v = std::clamp(std::round((image[i] - lo) / span * 255.0), 0.0, 255.0);
    out.push_back(static_cast<std::uint8_t>(v));
  }
  write_bytes(path, out);
}

void write_pgm(const fs::path& path, const VisibilityMask& mask) {
  ImageGrid g(mask.height(), mask.width());
  for (std::size_t i = 0; i < mask.size(); ++i) g[i] = mask[i] ? 255.0 : 0.0;
  write_pgm(path, g, 0.0, 255.0);
}

ImageGrid read_pgm(const fs::path& path) {
  const std::vector<std::uint8_t> bytes = read_bytes(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P5") throw IoError(path.string() + ": not a binary PGM");
  int w = 0;
  int h = 0;
  int maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw IoError(path.string() + ": malformed PGM header");
  }
  if (maxval <= 0 || maxval > 255) throw IoError(path.string() + ": only 8-bit PGM is supported");
  if (w < 3 || h < 3) throw IoError(path.string() + ": image too small");
  ++pos;  // single whitespace before the raster
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() < pos + n) throw IoError(path.string() + ": truncated PGM raster");
  ImageGrid g(h, w);
  for (std::size_t i = 0; i < n; ++i) g[i] = bytes[pos + i];
  return g;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_matrix(const fs::path& path, const ImageGrid& image) {
  std::string text;
  for (int r = 0; r < image.height(); ++r) {
    for (int c = 0; c < image.width(); ++c) {
      if (c) text += ' ';
      text += image.valid(r, c) ? format_double(image(r, c)) : "nan";
    }
    text += '\n';
  }
  write_text(path, text);
}

ImageGrid read_matrix(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<std::vector<double>> rows;
  std::vector<std::vector<bool>> valid;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string tok;
    rows.emplace_back();
    valid.emplace_back();
    while (ls >> tok) {
      if (tok == "nan") {
        rows.back().push_back(0.0);
        valid.back().push_back(false);
        continue;
      }
      try {
        std::size_t used = 0;
        rows.back().push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw IoError(path.string() + ": bad number '" + tok + "'");
      }
      valid.back().push_back(true);
    }
  }
  if (rows.size() < 3 || rows.front().size() < 3) throw IoError(path.string() + ": matrix too small");
  for (const auto& r : rows)
    if (r.size() != rows.front().size()) throw IoError(path.string() + ": ragged matrix");
  ImageGrid g(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
  for (int r = 0; r < g.height(); ++r)
    for (int c = 0; c < g.width(); ++c) {
      g(r, c) = rows[r][c];
      g.set_valid(r, c, valid[r][c]);
    }
  return g;
}

void write_homography(const fs::path& path, const Homography& h) {
  std::string text;
  const Eigen::Matrix3d& m = h.matrix();
  for (int r = 0; r < 3; ++r)
    text += format_double(m(r, 0)) + ' ' + format_double(m(r, 1)) + ' ' + format_double(m(r, 2)) + '\n';
  write_text(path, text);
}

Homography read_homography(const fs::path& path) {
  std::istringstream in(read_text(path));
  Eigen::Matrix3d m;
  for (int k = 0; k < 9; ++k) {
    std::string tok;
    if (!(in >> tok)) throw IoError(path.string() + ": expected 9 homography entries");
    try {
      m(k / 3, k % 3) = std::stod(tok);
    } catch (const std::exception&) {
      throw IoError(path.string() + ": bad number '" + tok + "'");
    }
  }
  try {
    return Homography::from_matrix(m);
  } catch (const InvalidTransformError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void Manifest::set(const std::string& key, const std::string& value) {
  if (key.empty() || key.find_first_of("=\n") != std::string::npos)
    throw ConfigError("bad manifest key '" + key + "'");
  if (value.find('\n') != std::string::npos) throw ConfigError("manifest value has a newline");
  for (auto& [k, v] : entries_)
    if (k == key) {
      v = value;
      return;
    }
  entries_.emplace_back(key, value);
}

bool Manifest::has(const std::string& key) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == key; });
}

const std::string& Manifest::get(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  throw IoError("manifest has no key '" + key + "'");
}

std::string Manifest::str() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + '=' + v + '\n';
  return out;
}

void Manifest::write(const fs::path& path) const { write_text(path, str()); }

Manifest Manifest::read(const fs::path& path) {
  Manifest m;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) throw IoError(path.string() + ": bad manifest line");
    m.entries_.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return m;
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw InternalError("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_bytes(path)); }

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return out;
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const fs::path& path) {
  const auto b = read_bytes(path);
  return std::string(b.begin(), b.end());
}

std::vector<fs::path> list_files(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace nuc::io
