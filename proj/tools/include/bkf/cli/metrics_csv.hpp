#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "bkf/training.hpp"

namespace bkf::cli {

struct MetricsRow {
  std::string model;
  std::string kind;
  std::size_t params = 0;
  std::string difficulty;
  double rms = 0.0;
  double rms_std = 0.0;
  std::size_t n_sequences = 0;
  std::uint64_t seed = 0;
};

MetricsRow metrics_row(const std::string& model, const train::EvalReport& report, std::uint64_t seed);

/// Quotes the field when it holds a comma, quote or line break (RFC 4180).
std::string csv_field(std::string_view text);
/// Six significant digits; NaN as an empty field.
std::string csv_number(double value);

std::string metrics_header();
std::string format_metrics_row(const MetricsRow& row);

/// Appends one row, writing the header first when the file is new or empty.
/// Throws FormatError when an existing file has a different header.
void append_metrics(const std::filesystem::path& path, const MetricsRow& row);
/// Replaces the file with the header and `rows`.
void write_metrics(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);

/// epoch, train_loss, validation_loss; one row per epoch.
void write_loss_curve(const std::filesystem::path& path, const std::vector<train::EpochRecord>& curve);

/// Records of an RFC 4180 document (quoted fields may span lines).
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

}  // namespace bkf::cli
