#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace helio {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

// Accepts ISO-8601 ("2014-10-01T00:00:00[.fff][Z]") and the JSOC form
// ("2014.10.01_00:00:00[.fff]_TAI" / "_UTC"). TAI stamps are shifted to UTC
// with the leap-second table below. Throws InvalidSpec on anything else.
Timestamp parse_timestamp(std::string_view text);

// "YYYY-MM-DDTHH:MM:SS.fffZ"
std::string format_timestamp(Timestamp t);

Timestamp make_timestamp(int year, unsigned month, unsigned day, int hour = 0, int minute = 0,
                         int second = 0);

// TAI - UTC in seconds at the given UTC instant (valid from 2009 onward,
// which covers the SDO mission).
int tai_minus_utc(Timestamp utc);

inline double seconds_between(Timestamp from, Timestamp to) {
  return std::chrono::duration<double>(to - from).count();
}

}  // namespace helio
