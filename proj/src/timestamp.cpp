#include "helio/timestamp.hpp"

#include <array>
#include <cstdio>

#include "helio/error.hpp"

namespace helio {

namespace {

using namespace std::chrono;

struct LeapEntry {
  Timestamp from;
  int offset;
};

const std::array<LeapEntry, 4>& leap_table() {
  static const std::array<LeapEntry, 4> table{{
      {make_timestamp(2009, 1, 1), 34},
      {make_timestamp(2012, 7, 1), 35},
      {make_timestamp(2015, 7, 1), 36},
      {make_timestamp(2017, 1, 1), 37},
  }};
  return table;
}

[[noreturn]] void bad(std::string_view text) {
  throw Error(ErrorKind::InvalidSpec, "unrecognized timestamp '" + std::string(text) + "'");
}

}  // namespace

Timestamp make_timestamp(int year, unsigned month, unsigned day, int hour, int minute, int second) {
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
  if (!ymd.ok()) throw Error(ErrorKind::InvalidSpec, "invalid calendar date");
  return time_point_cast<milliseconds>(sys_days{ymd}) + hours{hour} + minutes{minute} +
         seconds{second};
}

int tai_minus_utc(Timestamp utc) {
  int offset = leap_table().front().offset;
  for (const LeapEntry& e : leap_table()) {
    if (utc >= e.from) offset = e.offset;
  }
  return offset;
}

Timestamp parse_timestamp(std::string_view text) {
  std::string s(text);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\n' || s.back() == '\r')) s.pop_back();
  bool tai = false;
  auto strip_suffix = [&s](std::string_view suf) {
    if (s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0) {
      s.resize(s.size() - suf.size());
      return true;
    }
    return false;
  };
  if (strip_suffix("_TAI")) {
    tai = true;
  } else if (!strip_suffix("_UTC")) {
    strip_suffix("Z");
  }
  for (char& c : s) {
    if (c == '.' && &c - s.data() < 10) c = '-';  // JSOC date separators
    if (c == '_' || c == ' ') c = 'T';
  }

  int y = 0, mo = 0, d = 0, h = 0, mi = 0, consumed = 0;
  double sec = 0.0;
  if (std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%lf%n", &y, &mo, &d, &h, &mi, &sec, &consumed) == 6) {
    if (static_cast<std::size_t>(consumed) != s.size()) bad(text);
  } else if (std::sscanf(s.c_str(), "%4d-%2d-%2d%n", &y, &mo, &d, &consumed) == 3 &&
             static_cast<std::size_t>(consumed) == s.size()) {
    // date only
  } else {
    bad(text);
  }
  if (h < 0 || h > 23 || mi < 0 || mi > 59 || sec < 0.0 || sec >= 61.0) bad(text);

  Timestamp t = make_timestamp(y, static_cast<unsigned>(mo), static_cast<unsigned>(d), h, mi) +
                milliseconds{static_cast<long long>(sec * 1000.0 + 0.5)};
  if (tai) {
    // The offset is defined on the UTC side; pick the one consistent with it.
    for (const LeapEntry& e : leap_table()) {
      const Timestamp utc = t - seconds{e.offset};
      if (tai_minus_utc(utc) == e.offset) return utc;
    }
    t -= seconds{leap_table().front().offset};
  }
  return t;
}

std::string format_timestamp(Timestamp t) {
  const auto day = floor<days>(t);
  const year_month_day ymd{day};
  hh_mm_ss<milliseconds> tod{t - day};
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(tod.hours().count()), static_cast<int>(tod.minutes().count()),
                static_cast<int>(tod.seconds().count()),
                static_cast<int>(tod.subseconds().count()));
  return buf;
}

}  // namespace helio
