#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "ibpcat/core.hpp"
#include "ibpcat/vi.hpp"

namespace ibpcat::io {

/// Parse failure; the message names the source, line and (when known) column.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& source, std::size_t line, std::size_t column,
              const std::string& what);
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// Dataset CSV: a header "R:r1,r2,..." followed by one line per row of
/// 1-based categories. Missing values are not supported.
ObservationMatrix parse_dataset(std::istream& in, const std::string& source = "<stream>");
ObservationMatrix load_dataset(const std::filesystem::path& path);
void write_dataset(std::ostream& out, const ObservationMatrix& x);
void save_dataset(const std::filesystem::path& path, const ObservationMatrix& x);

/// Binary feature matrix: a header "Z:N,K" followed by N lines of K 0/1 flags.
LatentFeatureState parse_features(std::istream& in, const std::string& source = "<stream>");
LatentFeatureState load_features(const std::filesystem::path& path);
void write_features(std::ostream& out, const LatentFeatureState& z);
void save_features(const std::filesystem::path& path, const LatentFeatureState& z);

/// Twelve significant digits, the precision used in every report.
std::string format_real(double v);

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

nlohmann::json weights_to_json(const WeightStack& b);
WeightStack weights_from_json(const nlohmann::json& j);

/// Versioned snapshot of every variational parameter array.
nlohmann::json vi_state_to_json(const vi::VariationalState& s);
vi::VariationalState vi_state_from_json(const nlohmann::json& j);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace ibpcat::io
