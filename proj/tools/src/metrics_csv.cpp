#include "bkf/cli/metrics_csv.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bkf/error.hpp"
#include "bkf/pack.hpp"

namespace bkf::cli {
namespace {

constexpr const char* kEol = "\r\n";

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = tensorpack::read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  tensorpack::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace

MetricsRow metrics_row(const std::string& model, const train::EvalReport& report, std::uint64_t seed) {
  return {model,      std::string(nets::to_string(report.kind)), report.parameter_count, report.difficulty,
          report.rms, report.rms_std,                             report.sequences,       seed};
}

std::string csv_field(std::string_view text) {
  if (text.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(text);
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string csv_number(double value) {
  if (std::isnan(value)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", value);
  return buf;
}

std::string metrics_header() {
  return std::string("model,kind,params,difficulty,rms,rms_std,n_sequences,seed") + kEol;
}

std::string format_metrics_row(const MetricsRow& r) {
  return csv_field(r.model) + "," + csv_field(r.kind) + "," + std::to_string(r.params) + "," +
         csv_field(r.difficulty) + "," + csv_number(r.rms) + "," + csv_number(r.rms_std) + "," +
         std::to_string(r.n_sequences) + "," + std::to_string(r.seed) + kEol;
}

void append_metrics(const std::filesystem::path& path, const MetricsRow& row) {
  std::string text;
  if (std::filesystem::exists(path)) text = read_text(path);
  if (text.empty()) {
    text = metrics_header();
  } else if (text.rfind(metrics_header(), 0) != 0) {
    throw FormatError("'" + path.string() + "' is not a metrics CSV (header differs)");
  }
  write_text(path, text + format_metrics_row(row));
}

void write_metrics(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  std::string text = metrics_header();
  for (const auto& r : rows) text += format_metrics_row(r);
  write_text(path, text);
}

void write_loss_curve(const std::filesystem::path& path, const std::vector<train::EpochRecord>& curve) {
  std::string text = std::string("epoch,train_loss,validation_loss") + kEol;
  for (const auto& e : curve) {
    text += std::to_string(e.epoch) + "," + csv_number(e.train_loss) + "," + csv_number(e.validation_loss) + kEol;
  }
  write_text(path, text);
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      record.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        record.push_back(std::move(field));
        records.push_back(std::move(record));
      }
      field.clear();
      record.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw FormatError("csv: unterminated quoted field");
  if (any || !field.empty()) {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  return records;
}

}  // namespace bkf::cli
