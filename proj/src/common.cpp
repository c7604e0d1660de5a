#include "gloss/common.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace gloss {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::parse_error: return "parse_error";
    case Errc::io_error: return "io_error";
    case Errc::corrupt_checkpoint: return "corrupt_checkpoint";
    case Errc::version_mismatch: return "version_mismatch";
    case Errc::numeric_error: return "numeric_error";
    case Errc::train_diverged: return "train_diverged";
    case Errc::config_error: return "config_error";
    case Errc::unsupported: return "unsupported";
  }
  return "unknown";
}

int64_t Rng::below(int64_t n) {
  require(n > 0, Errc::invalid_argument, "Rng::below needs n > 0");
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<int64_t>(x % un);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double Rng::trunc_normal(double stddev, double clip) {
  require(stddev >= 0.0 && clip > 0.0, Errc::invalid_argument, "bad trunc_normal parameters");
  double z;
  do {
    z = normal();
  } while (std::fabs(z) > clip);
  return z * stddev;
}

int Rng::poisson(double lambda) {
  require(lambda > 0.0, Errc::invalid_argument, "poisson needs lambda > 0");
  const double limit = std::exp(-lambda);
  int k = 0;
  double p = 1.0;
  do {
    ++k;
    p *= uniform();
  } while (p > limit);
  return k - 1;
}

Rng Rng::fork(std::string_view label) const {
  uint64_t h = fnv1a(&seed_, sizeof(seed_));
  h = fnv1a(label, h);
  return Rng(h);
}

// --- UTF-8 ------------------------------------------------------------------

std::u32string utf8_decode(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  size_t i = 0;
  while (i < s.size()) {
    const unsigned char b0 = static_cast<unsigned char>(s[i]);
    int len;
    char32_t cp;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      fail(Errc::parse_error, "invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    require(i + len <= s.size(), Errc::parse_error,
            "truncated UTF-8 sequence at offset " + std::to_string(i));
    for (int j = 1; j < len; ++j) {
      const unsigned char b = static_cast<unsigned char>(s[i + j]);
      require((b & 0xC0) == 0x80, Errc::parse_error,
              "invalid UTF-8 continuation byte at offset " + std::to_string(i + j));
      cp = (cp << 6) | (b & 0x3F);
    }
    // Reject overlong encodings and surrogate range.
    static constexpr char32_t kMin[5] = {0, 0, 0x80, 0x800, 0x10000};
    require(cp >= kMin[len] && cp <= 0x10FFFF && !(cp >= 0xD800 && cp <= 0xDFFF),
            Errc::parse_error, "invalid UTF-8 codepoint at offset " + std::to_string(i));
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string utf8_encode_one(char32_t c) {
  std::string out;
  if (c < 0x80) {
    out.push_back(static_cast<char>(c));
  } else if (c < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (c >> 6)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else if (c < 0x10000) {
    require(!(c >= 0xD800 && c <= 0xDFFF), Errc::invalid_argument, "surrogate codepoint");
    out.push_back(static_cast<char>(0xE0 | (c >> 12)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else {
    require(c <= 0x10FFFF, Errc::invalid_argument, "codepoint out of range");
    out.push_back(static_cast<char>(0xF0 | (c >> 18)));
    out.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  }
  return out;
}

std::string utf8_encode(std::u32string_view s) {
  std::string out;
  out.reserve(s.size() * 3);
  for (char32_t c : s) out += utf8_encode_one(c);
  return out;
}

size_t utf8_length(std::string_view s) { return utf8_decode(s).size(); }

std::string to_hex(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

// --- file IO -----------------------------------------------------------------

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io_error, "cannot open for reading: " + path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(!in.bad(), Errc::io_error, "read failed: " + path);
  return content;
}

void write_file_atomic(const std::string& path, std::string_view content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), Errc::io_error, "cannot open for writing: " + tmp);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    require(out.good(), Errc::io_error, "write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, Errc::io_error, "rename failed: " + tmp + " -> " + path + " (" + ec.message() + ")");
}

uint64_t hash_file(const std::string& path) {
  const std::string content = read_file(path);
  return fnv1a(content);
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  size_t start = 0;
  while (start <= text.size()) {
    const size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      if (start < text.size()) lines.emplace_back(text.substr(start));
      break;
    }
    lines.emplace_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> parts;
  size_t start = 0;
  while (true) {
    const size_t p = text.find(sep, start);
    if (p == std::string_view::npos) {
      parts.emplace_back(text.substr(start));
      return parts;
    }
    parts.emplace_back(text.substr(start, p - start));
    start = p + 1;
  }
}

std::vector<std::string> split(std::string_view text, std::string_view sep) {
  require(!sep.empty(), Errc::invalid_argument, "split needs a non-empty separator");
  std::vector<std::string> parts;
  size_t start = 0;
  while (true) {
    const size_t p = text.find(sep, start);
    if (p == std::string_view::npos) {
      parts.emplace_back(text.substr(start));
      return parts;
    }
    parts.emplace_back(text.substr(start, p - start));
    start = p + sep.size();
  }
}

}  // namespace gloss
