#include "helio/fits.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include "helio/error.hpp"

namespace helio {

namespace {

constexpr std::size_t kBlock = 2880;
constexpr std::size_t kCard = 80;

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(' ');
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(' ');
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::string t = s;
  for (char& c : t) {
    if (c == 'D' || c == 'd') c = 'E';  // Fortran exponent
  }
  char* end = nullptr;
  out = std::strtod(t.c_str(), &end);
  return end && *end == '\0';
}

struct Card {
  std::string key;
  std::string value;
  bool has_value = false;
};

Card parse_card(const char* p) {
  Card c;
  c.key = trim(std::string(p, 8));
  if (p[8] != '=' || p[9] != ' ') return c;
  std::string rest(p + 10, kCard - 10);
  c.has_value = true;
  const auto first = rest.find_first_not_of(' ');
  if (first != std::string::npos && rest[first] == '\'') {
    std::string v;
    for (std::size_t i = first + 1; i < rest.size(); ++i) {
      if (rest[i] == '\'') {
        if (i + 1 < rest.size() && rest[i + 1] == '\'') {
          v += '\'';
          ++i;
          continue;
        }
        break;
      }
      v += rest[i];
    }
    c.value = trim(v);
  } else {
    const auto slash = rest.find('/');
    c.value = trim(rest.substr(0, slash));
  }
  return c;
}

struct Hdu {
  std::map<std::string, std::string> header;
  std::size_t header_bytes = 0;  // including padding
  int bitpix = 0;
  std::vector<std::size_t> axes;
  std::size_t data_bytes() const {
    if (axes.empty()) return 0;
    std::size_t n = static_cast<std::size_t>(std::abs(bitpix)) / 8;
    for (std::size_t a : axes) n *= a;
    return n;
  }
};

[[noreturn]] void malformed(const std::filesystem::path& path, const std::string& why) {
  throw Error(ErrorKind::MalformedFits, path.string() + ": " + why);
}

long long header_int(const Hdu& h, const std::string& key, const std::filesystem::path& path) {
  const auto it = h.header.find(key);
  double v = 0.0;
  if (it == h.header.end() || !parse_double(it->second, v) || v != std::floor(v)) {
    malformed(path, "missing or invalid " + key);
  }
  return static_cast<long long>(v);
}

Hdu parse_header(const std::vector<char>& bytes, std::size_t offset, bool primary,
                 const std::filesystem::path& path) {
  Hdu h;
  std::size_t pos = offset;
  bool ended = false;
  bool first = true;
  while (!ended) {
    if (pos + kBlock > bytes.size()) malformed(path, "truncated header");
    for (std::size_t c = 0; c < kBlock / kCard; ++c) {
      const Card card = parse_card(bytes.data() + pos + c * kCard);
      if (first) {
        const char* want = primary ? "SIMPLE" : "XTENSION";
        if (card.key != want) malformed(path, std::string("first card is not ") + want);
        if (primary && card.value != "T") malformed(path, "SIMPLE is not T");
        first = false;
      }
      if (card.key == "END") {
        ended = true;
        break;
      }
      if (card.has_value && !card.key.empty() && !h.header.count(card.key)) {
        h.header[card.key] = card.value;
      }
    }
    pos += kBlock;
  }
  h.header_bytes = pos - offset;
  h.bitpix = static_cast<int>(header_int(h, "BITPIX", path));
  const long long naxis = header_int(h, "NAXIS", path);
  if (naxis < 0 || naxis > 999) malformed(path, "invalid NAXIS");
  for (long long i = 1; i <= naxis; ++i) {
    const long long n = header_int(h, "NAXIS" + std::to_string(i), path);
    if (n < 0) malformed(path, "negative axis length");
    h.axes.push_back(static_cast<std::size_t>(n));
  }
  static const std::set<int> valid{8, 16, 32, 64, -32, -64};
  if (!valid.count(h.bitpix)) malformed(path, "unsupported BITPIX " + std::to_string(h.bitpix));
  return h;
}

template <typename U>
U byteswap(U v) {
  if constexpr (sizeof(U) == 2) return __builtin_bswap16(v);
  if constexpr (sizeof(U) == 4) return __builtin_bswap32(v);
  if constexpr (sizeof(U) == 8) return __builtin_bswap64(v);
}

template <typename U>
U load_be(const char* p) {
  U v;
  std::memcpy(&v, p, sizeof v);
  if constexpr (std::endian::native == std::endian::little) v = byteswap(v);
  return v;
}

template <typename U>
void store_be(char* p, U v) {
  if constexpr (std::endian::native == std::endian::little) v = byteswap(v);
  std::memcpy(p, &v, sizeof v);
}

std::string card_text(const std::string& key, const std::string& value, bool quote) {
  std::string c = key;
  c.resize(8, ' ');
  c += "= ";
  if (quote) {
    std::string q = "'";
    for (char ch : value) {
      q += ch;
      if (ch == '\'') q += '\'';
    }
    if (q.size() < 9) q.resize(9, ' ');
    q += '\'';
    c += q;
  } else {
    std::string v = value;
    if (v.size() < 20) v.insert(0, 20 - v.size(), ' ');
    c += v;
  }
  if (c.size() > kCard) throw Error(ErrorKind::IoFailure, "header card too long for key " + key);
  c.resize(kCard, ' ');
  return c;
}

}  // namespace

std::optional<std::string> FitsImage::find(const std::string& key) const {
  const auto it = header.find(key);
  if (it == header.end()) return std::nullopt;
  return it->second;
}

double FitsImage::number(const std::string& key) const {
  const auto v = find(key);
  double out = 0.0;
  if (!v || !parse_double(*v, out)) {
    throw Error(ErrorKind::MissingHeaderKey, "header key " + key + " missing or not numeric");
  }
  return out;
}

double FitsImage::number_or(const std::string& key, double fallback) const {
  const auto v = find(key);
  double out = 0.0;
  return v && parse_double(*v, out) ? out : fallback;
}

Timestamp FitsImage::timestamp() const {
  for (const char* key : {"DATE-OBS", "T_OBS", "DATE_OBS"}) {
    if (const auto v = find(key); v && !v->empty()) {
      try {
        return parse_timestamp(*v);
      } catch (const Error&) {
        throw Error(ErrorKind::MissingHeaderKey, std::string(key) + " is not a timestamp: " + *v);
      }
    }
  }
  throw Error(ErrorKind::MissingHeaderKey, "no DATE-OBS or T_OBS header key");
}

FitsImage read_fits(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw Error(ErrorKind::MissingFile, path.string() + ": no such file");
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, path.string() + ": cannot open");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) malformed(path, "empty file");

  Hdu hdu = parse_header(bytes, 0, true, path);
  std::size_t data_offset = hdu.header_bytes;
  std::map<std::string, std::string> merged = hdu.header;
  if (hdu.data_bytes() == 0) {
    // Empty primary array: look for an IMAGE extension.
    if (bytes.size() <= data_offset) malformed(path, "no image data");
    Hdu ext = parse_header(bytes, data_offset, false, path);
    if (ext.header.count("ZIMAGE")) malformed(path, "tile-compressed images are not supported");
    if (ext.header["XTENSION"] != "IMAGE") malformed(path, "first extension is not an IMAGE");
    for (const auto& [k, v] : ext.header) merged[k] = v;
    data_offset += ext.header_bytes;
    hdu = std::move(ext);
  }

  std::size_t extra = 1;
  for (std::size_t i = 2; i < hdu.axes.size(); ++i) extra *= hdu.axes[i];
  if (hdu.axes.size() < 2 || extra != 1) malformed(path, "data array must be 2-D");
  if (data_offset + hdu.data_bytes() > bytes.size()) malformed(path, "truncated data");

  FitsImage img;
  img.width = hdu.axes[0];
  img.height = hdu.axes[1];
  img.header = std::move(merged);
  const double bscale = img.number_or("BSCALE", 1.0);
  const double bzero = img.number_or("BZERO", 0.0);
  const auto blank_text = img.find("BLANK");
  double blank = 0.0;
  const bool has_blank = hdu.bitpix > 0 && blank_text && parse_double(*blank_text, blank);

  const std::size_t n = img.width * img.height;
  img.data.resize(n);
  const char* p = bytes.data() + data_offset;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  auto integer = [&](auto stored) {
    const double s = static_cast<double>(stored);
    return has_blank && s == blank ? nan : bzero + bscale * s;
  };
  for (std::size_t i = 0; i < n; ++i) {
    switch (hdu.bitpix) {
      case 8: img.data[i] = integer(static_cast<std::uint8_t>(p[i])); break;
      case 16: img.data[i] = integer(static_cast<std::int16_t>(load_be<std::uint16_t>(p + 2 * i))); break;
      case 32: img.data[i] = integer(static_cast<std::int32_t>(load_be<std::uint32_t>(p + 4 * i))); break;
      case 64: img.data[i] = integer(static_cast<std::int64_t>(load_be<std::uint64_t>(p + 8 * i))); break;
      case -32:
        img.data[i] = bzero + bscale * static_cast<double>(std::bit_cast<float>(load_be<std::uint32_t>(p + 4 * i)));
        break;
      case -64:
        img.data[i] = bzero + bscale * std::bit_cast<double>(load_be<std::uint64_t>(p + 8 * i));
        break;
    }
  }
  return img;
}

void write_fits(const std::filesystem::path& path, const FitsImage& image, int bitpix) {
  if (bitpix != -32 && bitpix != -64 && bitpix != 16 && bitpix != 32) {
    throw Error(ErrorKind::InvalidSpec, "write_fits supports BITPIX 16, 32, -32, -64");
  }
  if (image.data.size() != image.width * image.height) {
    throw Error(ErrorKind::ShapeMismatch, "FITS data size does not match width * height");
  }
  static const std::set<std::string> structural{"SIMPLE", "BITPIX", "NAXIS", "NAXIS1", "NAXIS2",
                                                "EXTEND", "BSCALE", "BZERO", "BLANK", "END",
                                                "XTENSION", "PCOUNT", "GCOUNT"};
  std::string header;
  header += card_text("SIMPLE", "T", false);
  header += card_text("BITPIX", std::to_string(bitpix), false);
  header += card_text("NAXIS", "2", false);
  header += card_text("NAXIS1", std::to_string(image.width), false);
  header += card_text("NAXIS2", std::to_string(image.height), false);
  for (const auto& [key, value] : image.header) {
    if (structural.count(key)) continue;
    double num = 0.0;
    const bool raw = parse_double(value, num) || value == "T" || value == "F";
    header += card_text(key, value, !raw);
  }
  std::string end = "END";
  end.resize(kCard, ' ');
  header += end;
  header.resize((header.size() + kBlock - 1) / kBlock * kBlock, ' ');

  const std::size_t width = static_cast<std::size_t>(std::abs(bitpix)) / 8;
  std::vector<char> data(image.data.size() * width);
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    const double v = image.data[i];
    char* p = data.data() + i * width;
    switch (bitpix) {
      case -32: store_be(p, std::bit_cast<std::uint32_t>(static_cast<float>(v))); break;
      case -64: store_be(p, std::bit_cast<std::uint64_t>(v)); break;
      case 16: {
        const double r = std::clamp(std::round(v), -32768.0, 32767.0);
        store_be(p, static_cast<std::uint16_t>(static_cast<std::int16_t>(r)));
        break;
      }
      case 32: {
        const double r = std::clamp(std::round(v), -2147483648.0, 2147483647.0);
        store_be(p, static_cast<std::uint32_t>(static_cast<std::int32_t>(r)));
        break;
      }
    }
  }
  data.resize((data.size() + kBlock - 1) / kBlock * kBlock, '\0');

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error(ErrorKind::IoFailure, "short write to " + path.string());
}

}  // namespace helio
