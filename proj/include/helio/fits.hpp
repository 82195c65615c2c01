#pragma once

// Uncompressed FITS image I/O: primary HDU, or an IMAGE extension when the
// primary array is empty. Tile-compressed files are rejected.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "helio/timestamp.hpp"

namespace helio {

struct FitsImage {
  std::size_t width = 0;   // NAXIS1
  std::size_t height = 0;  // NAXIS2
  // Physical values (BZERO + BSCALE * stored), index y * width + x with y the
  // FITS row (pixel j = y + 1). BLANK integers read as NaN.
  std::vector<double> data;
  // Card values with string quotes stripped and whitespace trimmed.
  std::map<std::string, std::string> header;

  std::optional<std::string> find(const std::string& key) const;
  // Numeric header value; throws MissingHeaderKey when absent or unparsable.
  double number(const std::string& key) const;
  double number_or(const std::string& key, double fallback) const;
  // Acquisition time from DATE-OBS (or T_OBS); throws MissingHeaderKey.
  Timestamp timestamp() const;

  double at(std::size_t x, std::size_t y) const { return data[y * width + x]; }
};

FitsImage read_fits(const std::filesystem::path& path);

// BITPIX -32 or -64 write the values as IEEE floats; 16 and 32 round to
// integers with BSCALE 1 and BZERO 0. Header entries pass through as cards
// (structural keys are generated and must not be supplied).
void write_fits(const std::filesystem::path& path, const FitsImage& image, int bitpix = -32);

}  // namespace helio
