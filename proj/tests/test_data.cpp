#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>

#include "helio/data.hpp"
#include "helio/error.hpp"
#include "helio/fits.hpp"

using namespace helio;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("helio_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected helio::Error";
  return ErrorKind::IoFailure;
}

// ---------------------------------------------------------------- FITS oracle

// Minimal FITS writer written separately from the library: fixed-format
// cards built with snprintf, big-endian data by hand.
struct OracleCard {
  std::string key, value;
};

void oracle_write(const fs::path& path, int bitpix, std::size_t w, std::size_t h,
                  const std::vector<unsigned char>& be_payload, const std::vector<OracleCard>& extra) {
  std::string hdr;
  auto card = [&hdr](const std::string& k, const std::string& v) {
    char buf[81];
    std::snprintf(buf, sizeof buf, "%-8.8s= %20s", k.c_str(), v.c_str());
    std::string c(buf);
    c.resize(80, ' ');
    hdr += c;
  };
  card("SIMPLE", "T");
  card("BITPIX", std::to_string(bitpix));
  card("NAXIS", "2");
  card("NAXIS1", std::to_string(w));
  card("NAXIS2", std::to_string(h));
  for (const auto& c : extra) card(c.key, c.value);
  std::string end = "END";
  end.resize(80, ' ');
  hdr += end;
  while (hdr.size() % 2880) hdr += ' ';
  std::vector<unsigned char> data = be_payload;
  while (data.size() % 2880) data.push_back(0);
  std::ofstream out(path, std::ios::binary);
  out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
}

template <typename U>
void push_be(std::vector<unsigned char>& out, U bits) {
  for (int b = static_cast<int>(sizeof(U)) - 1; b >= 0; --b) out.push_back(static_cast<unsigned char>(bits >> (8 * b)));
}

FitsImage centred_raw(std::size_t n, const std::vector<double>& data, const std::string& instrument = "HMI",
                      double roll = 0.0) {
  FitsImage f;
  f.width = f.height = n;
  f.data = data;
  f.header["DATE-OBS"] = "2013-05-01T12:00:00Z";
  f.header["INSTRUME"] = instrument;
  f.header["WAVELNTH"] = instrument == "AIA" ? "304" : "6173";
  f.header["CRPIX1"] = std::to_string((static_cast<double>(n) + 1.0) / 2.0);
  f.header["CRPIX2"] = f.header["CRPIX1"];
  f.header["CDELT1"] = "0.5";
  f.header["CDELT2"] = "0.5";
  f.header["CROTA2"] = std::to_string(roll);
  return f;
}

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

// ------------------------------------------------------------- pairing oracle

struct OracleResult {
  int count = -1;
  long long cost = 0;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  int optimal_solutions = 0;
};

// Exhaustive search over all one-to-one assignments within tolerance.
OracleResult oracle_pairing(const std::vector<long long>& a, const std::vector<long long>& b, long long tol) {
  OracleResult best;
  std::vector<bool> used(b.size(), false);
  std::vector<std::pair<std::size_t, std::size_t>> cur;
  std::function<void(std::size_t, int, long long)> rec = [&](std::size_t i, int count, long long cost) {
    if (i == a.size()) {
      if (count > best.count || (count == best.count && cost < best.cost)) {
        best.count = count;
        best.cost = cost;
        best.pairs = cur;
        best.optimal_solutions = 1;
      } else if (count == best.count && cost == best.cost) {
        ++best.optimal_solutions;
      }
      return;
    }
    rec(i + 1, count, cost);
    for (std::size_t j = 0; j < b.size(); ++j) {
      const long long d = std::llabs(a[i] - b[j]);
      if (used[j] || d > tol) continue;
      used[j] = true;
      cur.emplace_back(i, j);
      rec(i + 1, count + 1, cost + d);
      cur.pop_back();
      used[j] = false;
    }
  };
  rec(0, 0, 0);
  return best;
}

std::vector<Timestamp> to_stamps(const std::vector<long long>& ms) {
  std::vector<Timestamp> out;
  for (long long v : ms) out.push_back(Timestamp{std::chrono::milliseconds{v}});
  return out;
}

}  // namespace

// ---------------------------------------------------------------- timestamps

TEST(Timestamp, ParsesIsoAndJsocForms) {
  const Timestamp t = make_timestamp(2014, 10, 1);
  EXPECT_EQ(parse_timestamp("2014-10-01T00:00:00Z"), t);
  EXPECT_EQ(parse_timestamp("2014-10-01T00:00:00.000"), t);
  EXPECT_EQ(parse_timestamp("2014-10-01"), t);
  EXPECT_EQ(parse_timestamp("2014.10.01_00:00:35_TAI"), t);  // 35 s in 2014
  EXPECT_EQ(parse_timestamp("2017.03.01_00:00:37_TAI"), make_timestamp(2017, 3, 1));
  EXPECT_EQ(parse_timestamp("2012.01.01_00:00:34_TAI"), make_timestamp(2012, 1, 1));
  EXPECT_EQ(parse_timestamp("2014.10.01_00:00:00_UTC"), t);
  EXPECT_EQ(parse_timestamp("2014-10-01T00:00:01.250Z") - t, std::chrono::milliseconds{1250});
}

TEST(Timestamp, FormatRoundTripsAndRejectsGarbage) {
  const Timestamp t = make_timestamp(2013, 2, 28, 23, 59, 58) + std::chrono::milliseconds{7};
  EXPECT_EQ(format_timestamp(t), "2013-02-28T23:59:58.007Z");
  EXPECT_EQ(parse_timestamp(format_timestamp(t)), t);
  for (const char* bad : {"", "yesterday", "2014-13-01T00:00:00", "2014-10-01T25:00:00", "2014-10-01T00:00:00junk"}) {
    EXPECT_THROW(parse_timestamp(bad), Error) << bad;
  }
}

TEST(Timestamp, LeapSecondTable) {
  EXPECT_EQ(tai_minus_utc(make_timestamp(2010, 6, 1)), 34);
  EXPECT_EQ(tai_minus_utc(make_timestamp(2012, 6, 30, 23, 59, 59)), 34);
  EXPECT_EQ(tai_minus_utc(make_timestamp(2012, 7, 1)), 35);
  EXPECT_EQ(tai_minus_utc(make_timestamp(2016, 1, 1)), 36);
  EXPECT_EQ(tai_minus_utc(make_timestamp(2020, 1, 1)), 37);
}

// ---------------------------------------------------------------------- FITS

TEST(Fits, ReadsOracleWrittenFilesBitwise) {
  const fs::path dir = scratch("fits_oracle");
  std::mt19937_64 rng(17);
  const int bitpixes[] = {-32, -64, 16, 32, 8};
  for (int trial = 0; trial < 10; ++trial) {
    const int bitpix = bitpixes[trial % 5];
    std::uniform_int_distribution<std::size_t> dim(1, 40);
    const std::size_t w = dim(rng), h = dim(rng);
    std::vector<unsigned char> payload;
    std::vector<double> expected(w * h);
    const double bscale = trial % 2 ? 0.25 : 1.0, bzero = bitpix == 16 ? 32768.0 : 0.0;
    std::vector<OracleCard> cards{{"DATE-OBS", "'2014-01-01T00:00:00'"}};
    if (bitpix > 0) {
      cards.push_back({"BSCALE", std::to_string(bscale)});
      cards.push_back({"BZERO", std::to_string(bzero)});
    }
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t i = 0; i < w * h; ++i) {
      switch (bitpix) {
        case -32: {
          const float f = static_cast<float>(u(rng) * 1e3);
          std::uint32_t bits;
          std::memcpy(&bits, &f, 4);
          push_be(payload, bits);
          expected[i] = f;
          break;
        }
        case -64: {
          const double d = u(rng) * 1e6;
          std::uint64_t bits;
          std::memcpy(&bits, &d, 8);
          push_be(payload, bits);
          expected[i] = d;
          break;
        }
        case 16: {
          const auto s = static_cast<std::int16_t>(std::lround(u(rng) * 30000));
          push_be(payload, static_cast<std::uint16_t>(s));
          expected[i] = bzero + bscale * s;
          break;
        }
        case 32: {
          const auto s = static_cast<std::int32_t>(std::lround(u(rng) * 2e9));
          push_be(payload, static_cast<std::uint32_t>(s));
          expected[i] = bzero + bscale * s;
          break;
        }
        case 8: {
          const auto s = static_cast<std::uint8_t>(std::lround((u(rng) + 1) * 127));
          payload.push_back(s);
          expected[i] = bzero + bscale * s;
          break;
        }
      }
    }
    const fs::path p = dir / ("oracle_" + std::to_string(trial) + ".fits");
    oracle_write(p, bitpix, w, h, payload, cards);
    const FitsImage img = read_fits(p);
    ASSERT_EQ(img.width, w);
    ASSERT_EQ(img.height, h);
    EXPECT_EQ(std::memcmp(img.data.data(), expected.data(), expected.size() * sizeof(double)), 0)
        << "bitpix " << bitpix;
    EXPECT_EQ(img.timestamp(), make_timestamp(2014, 1, 1));
  }
}

TEST(Fits, WriterRoundTripIsBitwise) {
  const fs::path dir = scratch("fits_roundtrip");
  std::mt19937_64 rng(3);
  for (int bitpix : {-64, -32, 16, 32}) {
    FitsImage img;
    img.width = 13;
    img.height = 7;
    img.header["DATE-OBS"] = "2012-07-01T00:00:00";
    img.header["INSTRUME"] = "AIA_3";
    img.header["OBJECT"] = "it's the sun";
    img.header["CRPIX1"] = "7.5";
    for (std::size_t i = 0; i < img.width * img.height; ++i) {
      const double v = std::uniform_real_distribution<double>(-1000, 1000)(rng);
      img.data.push_back(bitpix == -64 ? v : bitpix == -32 ? static_cast<float>(v) : std::round(v));
    }
    write_fits(dir / "a.fits", img, bitpix);
    const FitsImage back = read_fits(dir / "a.fits");
    EXPECT_EQ(back.data, img.data) << bitpix;
    EXPECT_EQ(back.find("OBJECT"), "it's the sun");
    EXPECT_EQ(back.find("INSTRUME"), "AIA_3");
    EXPECT_DOUBLE_EQ(back.number("CRPIX1"), 7.5);
    EXPECT_EQ(slurp(dir / "a.fits").size() % 2880, 0u);
  }
}

TEST(Fits, ErrorKinds) {
  const fs::path dir = scratch("fits_errors");
  EXPECT_EQ(kind_of([&] { read_fits(dir / "nope.fits"); }), ErrorKind::MissingFile);
  std::ofstream(dir / "empty.fits").close();
  EXPECT_EQ(kind_of([&] { read_fits(dir / "empty.fits"); }), ErrorKind::MalformedFits);
  std::ofstream(dir / "text.fits") << std::string(3000, 'x');
  EXPECT_EQ(kind_of([&] { read_fits(dir / "text.fits"); }), ErrorKind::MalformedFits);

  FitsImage img;
  img.width = img.height = 40;
  img.data.assign(1600, 1.0);
  write_fits(dir / "ok.fits", img);
  const std::string bytes = slurp(dir / "ok.fits");
  std::ofstream(dir / "trunc.fits", std::ios::binary) << bytes.substr(0, bytes.size() - 2880);
  EXPECT_EQ(kind_of([&] { read_fits(dir / "trunc.fits"); }), ErrorKind::MalformedFits);
  // No timestamp key.
  EXPECT_EQ(kind_of([&] { read_fits(dir / "ok.fits").timestamp(); }), ErrorKind::MissingHeaderKey);
  EXPECT_EQ(kind_of([&] { read_fits(dir / "ok.fits").number("CRPIX1"); }), ErrorKind::MissingHeaderKey);
}

TEST(Fits, BlankIntegersReadAsNaN) {
  const fs::path dir = scratch("fits_blank");
  std::vector<unsigned char> payload;
  for (std::int16_t v : {std::int16_t{5}, std::int16_t{-32768}, std::int16_t{7}, std::int16_t{1}}) {
    push_be(payload, static_cast<std::uint16_t>(v));
  }
  oracle_write(dir / "b.fits", 16, 2, 2, payload, {{"BLANK", "-32768"}, {"T_OBS", "'2014.01.01_00:00:35_TAI'"}});
  const FitsImage img = read_fits(dir / "b.fits");
  EXPECT_EQ(img.data[0], 5.0);
  EXPECT_TRUE(std::isnan(img.data[1]));
  EXPECT_EQ(img.at(1, 1), 1.0);
  EXPECT_EQ(img.timestamp(), make_timestamp(2014, 1, 1));
}

// --------------------------------------------------------------- preprocess

TEST(Preprocess, IdentityGeometryIsAffineMap) {
  std::mt19937_64 rng(1);
  const std::size_t n = 16;
  std::vector<double> v = random_values(n * n, rng, -100.0, 100.0);
  v[0] = -100.0;
  v[1] = 100.0;
  const SolarImage img = preprocess(centred_raw(n, v), n, NormalizationRecord::defaults());
  ASSERT_EQ(img.pixels.shape(), (Shape{3, n, n}));
  EXPECT_EQ(img.instrument, Instrument::HMI);
  EXPECT_EQ(img.timestamp, make_timestamp(2013, 5, 1, 12));
  for (std::size_t i = 0; i < n * n; ++i) {
    const float expected = static_cast<float>(v[i] / 100.0);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(img.pixels[c * n * n + i], expected, 1e-6);
  }
  EXPECT_EQ(img.pixels[0], -1.0f);
  EXPECT_EQ(img.pixels[1], 1.0f);
}

TEST(Preprocess, ConstantAtClipMaximumIsAllOnes) {
  const std::size_t n = 32;
  for (std::size_t target : {32u, 16u, 8u}) {
    // Off-grid samples read 0, so use a source larger than the disk window.
    const SolarImage img = preprocess(centred_raw(n, std::vector<double>(n * n, 100.0)), target,
                                      NormalizationRecord::defaults());
    for (float p : img.pixels.values()) EXPECT_EQ(p, 1.0f);
  }
}

TEST(Preprocess, Roll180EqualsRotatedZeroRollOutput) {
  std::mt19937_64 rng(2);
  for (auto [n, t] : {std::pair<std::size_t, std::size_t>{32, 32}, {64, 32}, {64, 16}}) {
    const std::vector<double> v = random_values(n * n, rng, -100.0, 100.0);
    const SolarImage a = preprocess(centred_raw(n, v, "HMI", 0.0), t, NormalizationRecord::defaults());
    const SolarImage b = preprocess(centred_raw(n, v, "HMI", 180.0), t, NormalizationRecord::defaults());
    // Reference rotation of the 0-degree result.
    for (std::size_t y = 0; y < t; ++y) {
      for (std::size_t x = 0; x < t; ++x) {
        EXPECT_NEAR(b.pixels[y * t + x], a.pixels[(t - 1 - y) * t + (t - 1 - x)], 1e-5);
      }
    }
  }
}

TEST(Preprocess, Roll90MatchesQuarterTurn) {
  std::mt19937_64 rng(3);
  const std::size_t n = 16;
  const std::vector<double> v = random_values(n * n, rng, -100.0, 100.0);
  const SolarImage a = preprocess(centred_raw(n, v, "HMI", 0.0), n, NormalizationRecord::defaults());
  const SolarImage b = preprocess(centred_raw(n, v, "HMI", 90.0), n, NormalizationRecord::defaults());
  // Output (u, v) samples source centre + R(-90)(u - c, v - c) = (c + dv, c - du).
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      EXPECT_NEAR(b.pixels[y * n + x], a.pixels[(n - 1 - x) * n + y], 1e-5);
    }
  }
}

TEST(Preprocess, OffCentreDiskIsTranslatedToGridCentre) {
  std::mt19937_64 rng(4);
  const std::size_t n = 32;
  const long long sx = 3, sy = -2;
  const std::vector<double> v = random_values(n * n, rng, -100.0, 100.0);
  std::vector<double> shifted(n * n, 0.0);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const long long xx = static_cast<long long>(x) - sx, yy = static_cast<long long>(y) - sy;
      if (xx >= 0 && yy >= 0 && xx < static_cast<long long>(n) && yy < static_cast<long long>(n)) {
        shifted[y * n + x] = v[static_cast<std::size_t>(yy) * n + static_cast<std::size_t>(xx)];
      }
    }
  }
  FitsImage moved = centred_raw(n, shifted);
  moved.header["CRPIX1"] = std::to_string((n + 1) / 2.0 + sx);
  moved.header["CRPIX2"] = std::to_string((n + 1) / 2.0 + sy);
  const SolarImage a = preprocess(centred_raw(n, v), n, NormalizationRecord::defaults());
  const SolarImage b = preprocess(moved, n, NormalizationRecord::defaults());
  for (std::size_t y = 4; y < n - 4; ++y) {
    for (std::size_t x = 4; x < n - 4; ++x) EXPECT_NEAR(b.pixels[y * n + x], a.pixels[y * n + x], 1e-6);
  }
  // CRVAL offsets locate the same centre through CDELT.
  FitsImage via_crval = centred_raw(n, shifted);
  via_crval.header["CRVAL1"] = std::to_string(-sx * 0.5);
  via_crval.header["CRVAL2"] = std::to_string(-sy * 0.5);
  const DiskGeometry g = disk_geometry(via_crval);
  EXPECT_NEAR(g.center_x, (n - 1) / 2.0 + sx, 1e-9);
  EXPECT_NEAR(g.center_y, (n - 1) / 2.0 + sy, 1e-9);
}

TEST(Preprocess, AreaAveragingOfBlocks) {
  // 2x2 blocks of constant value must survive a 2x reduction exactly.
  const std::size_t n = 16, t = 8;
  std::vector<double> v(n * n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) v[y * n + x] = static_cast<double>((x / 2) * 10 + (y / 2)) - 40.0;
  }
  const SolarImage img = preprocess(centred_raw(n, v), t, NormalizationRecord::defaults());
  for (std::size_t y = 0; y < t; ++y) {
    for (std::size_t x = 0; x < t; ++x) {
      EXPECT_NEAR(img.pixels[y * t + x], (static_cast<double>(x * 10 + y) - 40.0) / 100.0, 1e-6);
    }
  }
}

TEST(Preprocess, IdempotentOnItsOwnOutput) {
  std::mt19937_64 rng(5);
  const std::size_t n = 64, t = 32;
  const NormalizationRecord norm = NormalizationRecord::defaults();
  const SolarImage first = preprocess(centred_raw(n, random_values(n * n, rng, -150.0, 150.0), "HMI", 17.0), t, norm);
  std::vector<double> raw(t * t);
  for (std::size_t i = 0; i < t * t; ++i) raw[i] = norm.to_raw(Instrument::HMI, first.pixels[i]);
  const SolarImage second = preprocess(centred_raw(t, raw), t, norm);
  for (std::size_t i = 0; i < first.pixels.size(); ++i) EXPECT_NEAR(second.pixels[i], first.pixels[i], 1e-6);
}

TEST(Preprocess, NormalizationIsInvertible) {
  const NormalizationRecord norm = NormalizationRecord::defaults();
  std::mt19937_64 rng(6);
  for (Instrument inst : {Instrument::HMI, Instrument::SyntheticIn, Instrument::SyntheticOut}) {
    const ClipRange r = norm.at(inst);
    for (double x : random_values(200, rng, r.lo - 0.5 * (r.hi - r.lo), r.hi + 0.5 * (r.hi - r.lo))) {
      const double clipped = std::clamp(x, r.lo, r.hi);
      const double back = norm.to_raw(inst, norm.to_unit(inst, x));
      EXPECT_LE(std::abs(back - clipped), 1e-5 * std::max(1.0, std::abs(clipped)));
    }
  }
}

TEST(Preprocess, OutputInvariantsOnRandomInputs) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 48;
    FitsImage raw = centred_raw(n, random_values(n * n, rng, -500.0, 500.0), "HMI", 33.0 * trial);
    raw.header["CRPIX1"] = std::to_string(24.0 + trial);
    const SolarImage img = preprocess(raw, 32, NormalizationRecord::defaults());
    const std::size_t plane = 32 * 32;
    for (std::size_t i = 0; i < plane; ++i) {
      const float v = img.pixels[i];
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_LE(std::abs(v), 1.0f);
      EXPECT_EQ(img.pixels[plane + i], v);
      EXPECT_EQ(img.pixels[2 * plane + i], v);
    }
  }
}

TEST(Preprocess, NanHandlingRespectsDiskAndThreshold) {
  const std::size_t n = 32;
  std::vector<double> v(n * n, 10.0);
  FitsImage raw = centred_raw(n, v);
  raw.header["R_SUN"] = "10";
  raw.data[0] = std::nan("");  // corner, off disk
  const SolarImage ok = preprocess(raw, n, NormalizationRecord::defaults());
  EXPECT_EQ(ok.nan_fraction, 0.0);
  EXPECT_EQ(ok.pixels[0], 0.0f);  // raw 0 maps to the middle of the HMI range

  raw.data[16 * n + 16] = std::nan("");  // disk centre
  EXPECT_EQ(kind_of([&] { preprocess(raw, n, NormalizationRecord::defaults()); }), ErrorKind::NonFiniteResult);
  const SolarImage loose = preprocess(raw, n, NormalizationRecord::defaults(), 0.5);
  EXPECT_GT(loose.nan_fraction, 0.0);
  EXPECT_FALSE(quality_screen(loose).accepted);
}

TEST(Preprocess, ErrorsForMissingGeometryAndBadSize) {
  FitsImage raw = centred_raw(16, std::vector<double>(256, 0.0));
  EXPECT_EQ(kind_of([&] { preprocess(raw, 12, NormalizationRecord::defaults()); }), ErrorKind::InvalidSize);
  FitsImage no_crpix = raw;
  no_crpix.header.erase("CRPIX1");
  EXPECT_EQ(kind_of([&] { preprocess(no_crpix, 16, NormalizationRecord::defaults()); }), ErrorKind::MissingHeaderKey);
  FitsImage no_time = raw;
  no_time.header.erase("DATE-OBS");
  EXPECT_EQ(kind_of([&] { preprocess(no_time, 16, NormalizationRecord::defaults()); }), ErrorKind::MissingHeaderKey);
  FitsImage aia171 = centred_raw(16, std::vector<double>(256, 0.0), "AIA");
  aia171.header["WAVELNTH"] = "171";
  EXPECT_THROW(preprocess(aia171, 16, NormalizationRecord::defaults()), Error);
}

TEST(Percentile, MatchesSortedInterpolation) {
  std::mt19937_64 rng(8);
  std::vector<double> v = random_values(101, rng, 0.0, 1.0);
  std::vector<double> s = v;
  std::sort(s.begin(), s.end());
  EXPECT_EQ(percentile(v, 0.0), s.front());
  EXPECT_EQ(percentile(v, 100.0), s.back());
  EXPECT_EQ(percentile(v, 50.0), s[50]);
  EXPECT_NEAR(percentile(v, 99.5), s[99] + 0.5 * (s[100] - s[99]), 1e-15);
}

// ---------------------------------------------------------------- screening

TEST(QualityScreen, CleanSyntheticImageIsAccepted) {
  SolarImage img;
  img.pixels = synthetic_input(64, 1, 0);
  const QualityVerdict v = quality_screen(img);
  EXPECT_TRUE(v.accepted);
  EXPECT_TRUE(v.reasons.empty());
}

TEST(QualityScreen, SaturationThresholdIsStrict) {
  SolarImage img;
  img.pixels = Tensor({3, 20, 20}, 0.0f);
  auto saturate = [&](std::size_t count) {
    img.pixels.fill(0.0f);
    for (std::size_t i = 0; i < count; ++i) {
      for (std::size_t c = 0; c < 3; ++c) img.pixels[c * 400 + i] = 1.0f;
    }
    return quality_screen(img);
  };
  const QualityVerdict ten = saturate(40);
  EXPECT_FALSE(ten.accepted);
  ASSERT_EQ(ten.reasons.size(), 1u);
  EXPECT_EQ(ten.reasons[0], QualityReason::Saturation);
  EXPECT_TRUE(saturate(20).accepted);  // exactly 5%
  EXPECT_FALSE(saturate(21).accepted);
}

TEST(QualityScreen, NanFractionAndMisalignment) {
  SolarImage img;
  img.pixels = Tensor({3, 64, 64}, -1.0f);
  img.instrument = Instrument::AIA0304;
  auto draw_disk = [&](double cx, double cy) {
    img.pixels.fill(-1.0f);
    for (std::size_t y = 0; y < 64; ++y) {
      for (std::size_t x = 0; x < 64; ++x) {
        if (std::hypot(x - cx, y - cy) < 20.0) {
          for (std::size_t c = 0; c < 3; ++c) img.pixels[c * 4096 + y * 64 + x] = 0.5f;
        }
      }
    }
  };
  draw_disk(31.5, 31.5);
  EXPECT_TRUE(quality_screen(img).accepted);
  draw_disk(41.5, 31.5);
  QualityVerdict v = quality_screen(img);
  ASSERT_EQ(v.reasons.size(), 1u);
  EXPECT_EQ(v.reasons[0], QualityReason::OffDiskMisalignment);
  ScreeningConfig loose;
  loose.max_misalignment_px = 10.5;
  EXPECT_TRUE(quality_screen(img, loose).accepted);

  img.nan_fraction = 0.01;
  v = quality_screen(img);
  EXPECT_EQ(v.reasons, (std::vector<QualityReason>{QualityReason::NanFraction, QualityReason::OffDiskMisalignment}));
  // Misalignment is only screened for the EUV target.
  img.instrument = Instrument::HMI;
  img.nan_fraction = 0.0;
  EXPECT_TRUE(quality_screen(img).accepted);
}

// ------------------------------------------------------------------ pairing

TEST(Pairing, IdenticalListsPairWithZeroDelta) {
  std::vector<Timestamp> t;
  for (int i = 0; i < 20; ++i) t.push_back(make_timestamp(2013, 1, 1) + std::chrono::minutes{12 * i});
  const auto pairs = pair_by_timestamp(t, t, 600);
  ASSERT_EQ(pairs.size(), t.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(pairs[i].input_index, i);
    EXPECT_EQ(pairs[i].target_index, i);
    EXPECT_EQ(pairs[i].time_delta_s, 0.0);
  }
}

TEST(Pairing, NearestWithinTolerance) {
  const auto pairs = pair_by_timestamp(to_stamps({0}), to_stamps({100'000, 400'000}), 120);
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].target_index, 0u);
  EXPECT_DOUBLE_EQ(pairs[0].time_delta_s, 100.0);
  EXPECT_TRUE(pair_by_timestamp(to_stamps({0}), to_stamps({400'000}), 120).empty());
  EXPECT_TRUE(pair_by_timestamp({}, to_stamps({1}), 120).empty());
}

TEST(Pairing, MatchesExhaustiveAssignmentOnRandomLists) {
  std::mt19937_64 rng(21);
  int compared_exactly = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<int> len(0, 8);
    std::uniform_int_distribution<long long> jitter(-400'000, 400'000);
    const int n = len(rng) + (trial % 5 == 0 ? 2 : 0), m = len(rng);
    std::vector<long long> a, b;
    for (int i = 0; i < n; ++i) a.push_back(i * 700'000 + jitter(rng));
    for (int j = 0; j < m; ++j) b.push_back(j * 650'000 + jitter(rng));
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const long long tol_ms = 300'000;
    const OracleResult want = oracle_pairing(a, b, tol_ms);
    const auto got = pair_by_timestamp(to_stamps(a), to_stamps(b), 300.0);
    long long cost = 0;
    std::vector<std::pair<std::size_t, std::size_t>> got_pairs;
    for (const PairMatch& p : got) {
      cost += std::llabs(b[p.target_index] - a[p.input_index]);
      got_pairs.emplace_back(p.input_index, p.target_index);
    }
    EXPECT_EQ(static_cast<int>(got.size()), want.count) << "trial " << trial;
    EXPECT_EQ(cost, want.cost) << "trial " << trial;
    if (want.optimal_solutions == 1) {
      EXPECT_EQ(got_pairs, want.pairs) << "trial " << trial;
      ++compared_exactly;
    }
  }
  EXPECT_GT(compared_exactly, 40);
}

TEST(Pairing, ScanInvariantsOnLargeLists) {
  std::mt19937_64 rng(22);
  std::uniform_int_distribution<long long> t(0, 86'400'000LL * 30);
  std::vector<long long> a(400), b(350);
  for (auto& v : a) v = t(rng);
  for (auto& v : b) v = t(rng);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const auto pairs = pair_by_timestamp(to_stamps(a), to_stamps(b), 600);
  std::vector<bool> ua(a.size()), ub(b.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const PairMatch& p = pairs[k];
    EXPECT_LE(std::abs(p.time_delta_s), 600.0);
    EXPECT_FALSE(ua[p.input_index]);
    EXPECT_FALSE(ub[p.target_index]);
    ua[p.input_index] = ub[p.target_index] = true;
    if (k) EXPECT_LT(pairs[k - 1].input_index, p.input_index);
  }
  EXPECT_GT(pairs.size(), 0u);
}

TEST(Pairing, RejectsUnsortedInput) {
  EXPECT_EQ(kind_of([] { pair_by_timestamp(to_stamps({5, 1}), to_stamps({1}), 10); }), ErrorKind::UnsortedInput);
  EXPECT_EQ(kind_of([] { pair_by_timestamp(to_stamps({1}), to_stamps({9, 2}), 10); }), ErrorKind::UnsortedInput);
}

// ----------------------------------------------------------- manifest/split

TEST(Split, DateRuleOnStudyPopulation) {
  // Two years and nine months of training dates plus October-December 2014.
  std::vector<ManifestEntry> entries;
  const Timestamp train_begin = make_timestamp(2012, 1, 1), test_begin = make_timestamp(2014, 10, 1),
                  end = make_timestamp(2015, 1, 1);
  auto spread = [&](Timestamp from, Timestamp to, int count, const std::string& tag) {
    const auto step = (to - from) / count;
    for (int i = 0; i < count; ++i) {
      const std::string id = tag + std::to_string(i);
      entries.push_back({"hmi/" + id + ".bin", "aia/" + id + ".bin", from + step * i, Split::Train});
    }
  };
  spread(train_begin, test_begin, 1892, "a");
  spread(test_begin, end, 200, "b");
  std::shuffle(entries.begin(), entries.end(), std::mt19937_64(5));
  std::vector<std::string> warnings;
  const DatasetManifest m = split_manifest(entries, SplitRule::default_rule(), &warnings);
  EXPECT_EQ(m.count(Split::Train), 1892u);
  EXPECT_EQ(m.count(Split::Test), 200u);
  EXPECT_TRUE(warnings.empty());
  for (const ManifestEntry& e : m.entries) {
    EXPECT_EQ(e.split == Split::Test, e.timestamp >= test_begin);
  }
}

TEST(Split, BoundariesAreHalfOpen) {
  const SplitRule r = SplitRule::default_rule();
  EXPECT_TRUE(r.is_test(make_timestamp(2014, 10, 1)));
  EXPECT_FALSE(r.is_test(make_timestamp(2014, 10, 1) - std::chrono::milliseconds{1}));
  EXPECT_TRUE(r.is_test(make_timestamp(2014, 12, 31, 23, 59, 59)));
  EXPECT_FALSE(r.is_test(make_timestamp(2015, 1, 1)));
}

TEST(Split, EmptySidesWarnButDoNotThrow) {
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < 5; ++i) {
    entries.push_back({"i" + std::to_string(i), "t" + std::to_string(i), synthetic_timestamp(i), Split::Train});
  }
  std::vector<std::string> warnings;
  DatasetManifest none = split_manifest(entries, SplitRule{}, &warnings);
  EXPECT_EQ(none.count(Split::Train), 5u);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("EmptySplit"), std::string::npos);

  warnings.clear();
  DatasetManifest all = split_manifest(entries, SplitRule{{DateRange{make_timestamp(2000, 1, 1), make_timestamp(2100, 1, 1)}}}, &warnings);
  EXPECT_EQ(all.count(Split::Test), 5u);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Manifest, RoundTripAndSidecar) {
  const fs::path dir = scratch("manifest");
  DatasetManifest m;
  m.pairing_tolerance_s = 123.5;
  m.normalization.ranges[Instrument::AIA0304] = {0.0, 1234.5678901234567};
  for (int i = 0; i < 6; ++i) {
    m.entries.push_back({"in/" + std::to_string(i) + ".bin", "out/" + std::to_string(i) + ".bin",
                         synthetic_timestamp(i) + std::chrono::milliseconds{i}, i % 3 == 0 ? Split::Test : Split::Train});
  }
  write_manifest(m, dir / "m.tsv");
  EXPECT_TRUE(fs::exists(dir / "m.tsv.norm"));
  const DatasetManifest back = read_manifest(dir / "m.tsv");
  ASSERT_EQ(back.entries.size(), m.entries.size());
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    EXPECT_EQ(back.entries[i].input_path, m.entries[i].input_path);
    EXPECT_EQ(back.entries[i].target_path, m.entries[i].target_path);
    EXPECT_EQ(back.entries[i].timestamp, m.entries[i].timestamp);
    EXPECT_EQ(back.entries[i].split, m.entries[i].split);
  }
  EXPECT_EQ(back.pairing_tolerance_s, 123.5);
  EXPECT_EQ(back.normalization.at(Instrument::AIA0304).hi, 1234.5678901234567);
  EXPECT_EQ(back.normalization.at(Instrument::HMI).lo, -100.0);
  EXPECT_EQ(back.resolve("in/0.bin"), dir / "in/0.bin");
  // Line format: four tab-separated fields.
  std::istringstream lines(slurp(dir / "m.tsv"));
  std::string line;
  std::size_t records = 0;
  while (std::getline(lines, line)) {
    if (line.empty() || line[0] == '#') continue;
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 3);
    ++records;
  }
  EXPECT_EQ(records, 6u);
}

TEST(Manifest, ValidationRejectsDuplicatesAndCrossSplitTimes) {
  DatasetManifest m;
  m.entries.push_back({"a", "b", synthetic_timestamp(0), Split::Train});
  m.entries.push_back({"a", "c", synthetic_timestamp(1), Split::Train});
  EXPECT_THROW(m.validate(), Error);
  m.entries[1] = {"d", "c", synthetic_timestamp(0), Split::Test};
  EXPECT_THROW(m.validate(), Error);
  m.entries[1].timestamp = synthetic_timestamp(1);
  EXPECT_NO_THROW(m.validate());
}

// -------------------------------------------------------------- image cache

TEST(ImageCache, RoundTripAndHeaderLayout) {
  const fs::path dir = scratch("cache");
  std::mt19937_64 rng(9);
  Tensor t({3, 4, 5});
  for (float& v : t.values()) v = std::uniform_real_distribution<float>(-1, 1)(rng);
  write_image_cache(dir / "x.bin", t);
  const std::string bytes = slurp(dir / "x.bin");
  ASSERT_EQ(bytes.size(), 8 + 4 * t.size());
  EXPECT_EQ(static_cast<unsigned char>(bytes[0]), 4);
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 5);
  EXPECT_EQ(bytes[1] | bytes[2] | bytes[3] | bytes[5] | bytes[6] | bytes[7], 0);
  EXPECT_EQ(read_image_cache(dir / "x.bin"), t);

  write_image_cache(dir / "one.bin", Tensor({1, 2, 2}, 0.5f));
  EXPECT_EQ(read_image_cache(dir / "one.bin").shape(), (Shape{1, 2, 2}));
  std::ofstream(dir / "bad.bin", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  EXPECT_THROW(read_image_cache(dir / "bad.bin"), Error);
  EXPECT_EQ(kind_of([&] { read_image_cache(dir / "missing.bin"); }), ErrorKind::MissingFile);
}

// ---------------------------------------------------------------- synthetic

TEST(Synthetic, DeterministicAcrossRuns) {
  const fs::path a = scratch("synth_a"), b = scratch("synth_b");
  const SyntheticOptions opt{4, 64, 7, SyntheticTask::GaussianBlobs, 0};
  const DatasetManifest ma = make_synthetic_dataset(opt, a);
  const DatasetManifest mb = make_synthetic_dataset(opt, b);
  EXPECT_EQ(slurp(a / "manifest.tsv"), slurp(b / "manifest.tsv"));
  EXPECT_EQ(slurp(a / "manifest.tsv.norm"), slurp(b / "manifest.tsv.norm"));
  for (const ManifestEntry& e : ma.entries) {
    EXPECT_EQ(slurp(a / e.input_path), slurp(b / e.input_path));
    EXPECT_EQ(slurp(a / e.target_path), slurp(b / e.target_path));
  }
  EXPECT_NE(synthetic_input(64, 7, 0), synthetic_input(64, 8, 0));
  EXPECT_NE(synthetic_input(64, 7, 0), synthetic_input(64, 7, 1));
}

TEST(Synthetic, TargetsAreTheReferenceTransform) {
  const fs::path dir = scratch("synth_ref");
  const DatasetManifest m = make_synthetic_dataset({20, 32, 3, SyntheticTask::GaussianBlobs, 0}, dir);
  EXPECT_EQ(m.count(Split::Test), 2u);
  for (Split s : {Split::Train, Split::Test}) {
    const PairSet ps = load_pairs(read_manifest(dir / "manifest.tsv"), s);
    for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_EQ(ps.targets[i], synthetic_target(ps.inputs[i]));
  }
  // Test entries are the latest.
  Timestamp last_train{};
  for (const ManifestEntry& e : m.subset(Split::Train)) last_train = std::max(last_train, e.timestamp);
  for (const ManifestEntry& e : m.subset(Split::Test)) EXPECT_GT(e.timestamp, last_train);
}

TEST(Synthetic, TargetTransformMatchesDirectFormula) {
  // Constant input: blur leaves 1 - exp(-4 x^2) unchanged.
  const Tensor in({3, 16, 16}, 0.5f);
  const Tensor t = synthetic_target(in);
  const double want = 2.0 * (1.0 - std::exp(-4.0 * 0.25)) - 1.0;
  for (float v : t.values()) EXPECT_NEAR(v, want, 1e-6);
}

TEST(Synthetic, FiveHundredPairsPassScreening) {
  const fs::path dir = scratch("synth_500");
  const DatasetManifest m = make_synthetic_dataset({500, 64, 1, SyntheticTask::GaussianBlobs, 0}, dir);
  EXPECT_EQ(m.entries.size(), 500u);
  EXPECT_EQ(m.count(Split::Test), 50u);
  for (Split s : {Split::Train, Split::Test}) {
    const PairSet ps = load_pairs(m, s);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      SolarImage in{ps.inputs[i], ps.timestamps[i], Instrument::SyntheticIn, "", 0.0};
      SolarImage out{ps.targets[i], ps.timestamps[i], Instrument::SyntheticOut, "", 0.0};
      EXPECT_TRUE(quality_screen(in).accepted) << i;
      EXPECT_TRUE(quality_screen(out).accepted) << i;
    }
  }
}

TEST(Synthetic, RejectsBadSizes) {
  const fs::path dir = scratch("synth_bad");
  for (std::size_t size : {8u, 48u, 0u}) {
    EXPECT_EQ(kind_of([&] { make_synthetic_dataset({4, size, 1, SyntheticTask::GaussianBlobs, 0}, dir); }),
              ErrorKind::InvalidSize);
  }
}
