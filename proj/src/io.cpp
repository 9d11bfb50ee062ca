#include "ibpcat/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ibpcat::io {

namespace {

constexpr int kSnapshotVersion = 1;

struct Field {
  std::string_view text;
  std::size_t column;  // 1-based
};

std::vector<Field> split(std::string_view line) {
  std::vector<Field> out;
  std::size_t start = 0;
  std::size_t col = 1;
  while (true) {
    const auto comma = line.find(',', start);
    const auto end = comma == std::string_view::npos ? line.size() : comma;
    auto f = line.substr(start, end - start);
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) {
      f.remove_suffix(1);
    }
    out.push_back({f, col});
    if (comma == std::string_view::npos) break;
    start = comma + 1;
    ++col;
  }
  return out;
}

bool parse_int(std::string_view s, int& v) {
  if (s.empty()) return false;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  return ec == std::errc() && ptr == end;
}

bool blank(std::string_view s) {
  return s.find_first_not_of(" \t\r") == std::string_view::npos;
}

// Parses "<tag>:a,b,..." into integers.
std::vector<int> parse_header(const std::string& line, char tag, const std::string& source) {
  if (line.size() < 2 || line[0] != tag || line[1] != ':') {
    throw FormatError(source, 1, 1, std::string("header must start with \"") + tag + ":\"");
  }
  std::vector<int> values;
  const std::string_view rest = std::string_view(line).substr(2);
  if (blank(rest)) return values;
  for (const auto& f : split(rest)) {
    int v = 0;
    if (!parse_int(f.text, v)) {
      throw FormatError(source, 1, f.column, "header entry \"" + std::string(f.text) +
                                                 "\" is not an integer");
    }
    values.push_back(v);
  }
  return values;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

FormatError::FormatError(const std::string& source, std::size_t line, std::size_t column,
                         const std::string& what)
    : std::runtime_error(source + ":" + std::to_string(line) +
                         (column > 0 ? ":" + std::to_string(column) : std::string()) + ": " +
                         what),
      line_(line),
      column_(column) {}

ObservationMatrix parse_dataset(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(source, 1, 0, "empty file");
  const auto cards = parse_header(line, 'R', source);
  if (cards.empty()) throw FormatError(source, 1, 0, "no dimensions declared");
  for (std::size_t d = 0; d < cards.size(); ++d) {
    if (cards[d] < 2) {
      throw FormatError(source, 1, d + 1, "cardinality must be at least 2");
    }
  }

  std::vector<std::vector<int>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    const auto fields = split(line);
    if (fields.size() != cards.size()) {
      throw FormatError(source, line_no, 0,
                        "expected " + std::to_string(cards.size()) + " columns, found " +
                            std::to_string(fields.size()));
    }
    std::vector<int> row(cards.size());
    for (std::size_t d = 0; d < fields.size(); ++d) {
      int v = 0;
      if (!parse_int(fields[d].text, v)) {
        throw FormatError(source, line_no, d + 1,
                          "entry \"" + std::string(fields[d].text) + "\" is not an integer");
      }
      if (v < 1 || v > cards[d]) {
        throw FormatError(source, line_no, d + 1,
                          "category " + std::to_string(v) + " outside 1.." +
                              std::to_string(cards[d]));
      }
      row[d] = v - 1;
    }
    rows.push_back(std::move(row));
  }

  ObservationMatrix x(rows.size(), cards);
  for (std::size_t n = 0; n < rows.size(); ++n) {
    for (std::size_t d = 0; d < cards.size(); ++d) x.set(n, d, rows[n][d]);
  }
  return x;
}

ObservationMatrix load_dataset(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse_dataset(in, path.string());
}

void write_dataset(std::ostream& out, const ObservationMatrix& x) {
  out << "R:";
  for (std::size_t d = 0; d < x.n_cols(); ++d) out << (d ? "," : "") << x.cardinality(d);
  out << '\n';
  for (std::size_t n = 0; n < x.n_rows(); ++n) {
    for (std::size_t d = 0; d < x.n_cols(); ++d) out << (d ? "," : "") << x(n, d) + 1;
    out << '\n';
  }
}

void save_dataset(const std::filesystem::path& path, const ObservationMatrix& x) {
  auto out = open_out(path);
  write_dataset(out, x);
}

LatentFeatureState parse_features(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(source, 1, 0, "empty file");
  const auto shape = parse_header(line, 'Z', source);
  if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0) {
    throw FormatError(source, 1, 0, "header must be Z:<rows>,<features>");
  }
  const auto n = static_cast<std::size_t>(shape[0]);
  const auto k = static_cast<std::size_t>(shape[1]);
  LatentFeatureState z(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) {
      throw FormatError(source, i + 2, 0, "expected " + std::to_string(n) + " rows");
    }
    if (k == 0) continue;
    const auto fields = split(line);
    if (fields.size() != k) {
      throw FormatError(source, i + 2, 0,
                        "expected " + std::to_string(k) + " flags, found " +
                            std::to_string(fields.size()));
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (fields[j].text == "1") {
        z.set(i, j, true);
      } else if (fields[j].text != "0") {
        throw FormatError(source, i + 2, j + 1, "feature flags must be 0 or 1");
      }
    }
  }
  return z;
}

LatentFeatureState load_features(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse_features(in, path.string());
}

void write_features(std::ostream& out, const LatentFeatureState& z) {
  out << "Z:" << z.n_rows() << ',' << z.k_active() << '\n';
  for (std::size_t n = 0; n < z.n_rows(); ++n) {
    for (std::size_t k = 0; k < z.k_active(); ++k) out << (k ? "," : "") << (z(n, k) ? 1 : 0);
    out << '\n';
  }
}

void save_features(const std::filesystem::path& path, const LatentFeatureState& z) {
  auto out = open_out(path);
  write_features(out, z);
}

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"values", std::move(rows)}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto r = j.at("rows").get<Eigen::Index>();
  const auto c = j.at("cols").get<Eigen::Index>();
  const auto& values = j.at("values");
  if (static_cast<Eigen::Index>(values.size()) != r) {
    throw std::runtime_error("matrix row count does not match its shape header");
  }
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const auto& row = values.at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(row.size()) != c) {
      throw std::runtime_error("matrix column count does not match its shape header");
    }
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
  }
  return m;
}

nlohmann::json weights_to_json(const WeightStack& b) {
  nlohmann::json dims = nlohmann::json::array();
  for (const auto& w : b.weights) dims.push_back(matrix_to_json(w));
  return {{"format", "ibpcat-weights"}, {"version", kSnapshotVersion}, {"dimensions", dims}};
}

WeightStack weights_from_json(const nlohmann::json& j) {
  WeightStack b;
  for (const auto& d : j.at("dimensions")) b.weights.push_back(matrix_from_json(d));
  return b;
}

nlohmann::json vi_state_to_json(const vi::VariationalState& s) {
  nlohmann::json phi = nlohmann::json::array();
  nlohmann::json var = nlohmann::json::array();
  for (std::size_t d = 0; d < s.n_dims(); ++d) {
    phi.push_back(matrix_to_json(s.phi[d]));
    var.push_back(matrix_to_json(s.sigma_sq[d]));
  }
  return {{"format", "ibpcat-vi-state"},
          {"version", kSnapshotVersion},
          {"K", s.k},
          {"tau", matrix_to_json(s.tau)},
          {"nu", matrix_to_json(s.nu)},
          {"lambda", matrix_to_json(s.lambda)},
          {"phi", phi},
          {"sigma_sq", var},
          {"xi", matrix_to_json(s.xi)}};
}

vi::VariationalState vi_state_from_json(const nlohmann::json& j) {
  if (j.value("version", 0) != kSnapshotVersion) {
    throw std::runtime_error("unsupported variational snapshot version");
  }
  vi::VariationalState s;
  s.k = j.at("K").get<std::size_t>();
  s.tau = matrix_from_json(j.at("tau"));
  s.nu = matrix_from_json(j.at("nu"));
  s.lambda = matrix_from_json(j.at("lambda"));
  for (const auto& m : j.at("phi")) s.phi.push_back(matrix_from_json(m));
  for (const auto& m : j.at("sigma_sq")) s.sigma_sq.push_back(matrix_from_json(m));
  s.xi = matrix_from_json(j.at("xi"));
  return s;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
}

}  // namespace ibpcat::io
