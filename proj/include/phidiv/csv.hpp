#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "phidiv/errors.hpp"
#include "phidiv/survey_model.hpp"

namespace phidiv {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline double parse_number(const std::string& raw, const std::string& what) {
  const std::string s = trim(raw);
  if (s.empty()) throw DataError("empty " + what + " field");
  // Exact rational form "a/b" (weights are often expressed that way).
  const auto slash = s.find('/');
  try {
    if (slash != std::string::npos) {
      const std::string ns = s.substr(0, slash);
      const std::string ds = s.substr(slash + 1);
      std::size_t np = 0, dp = 0;
      const double num = std::stod(ns, &np);
      const double den = std::stod(ds, &dp);
      if (np != ns.size() || dp != ds.size()) {
        throw DataError("cannot parse " + what + ": '" + s + "'");
      }
      if (den == 0.0) throw DataError("zero denominator in " + what);
      return num / den;
    }
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) {
      throw DataError("trailing characters in " + what + ": '" + s + "'");
    }
    return v;
  } catch (const DataError&) {
    throw;
  } catch (const std::exception&) {
    throw DataError("cannot parse " + what + ": '" + s + "'");
  }
}

inline int parse_int(const std::string& raw, const std::string& what) {
  const double v = parse_number(raw, what);
  if (v != std::floor(v)) throw DataError(what + " must be an integer: " + raw);
  return static_cast<int>(v);
}

// Assigns dense 0-based indices to labels in order of first appearance.
class LabelIndex {
 public:
  int index_of(const std::string& label) {
    auto it = map_.find(label);
    if (it != map_.end()) return it->second;
    const int id = static_cast<int>(labels_.size());
    map_.emplace(label, id);
    labels_.push_back(label);
    return id;
  }
  const std::vector<std::string>& labels() const { return labels_; }

 private:
  std::map<std::string, int> map_;
  std::vector<std::string> labels_;
};

struct CsvRow {
  int line = 0;  // 1-based line number in the input (header is line 1)
  std::vector<std::string> fields;
};

inline std::vector<CsvRow> read_csv_rows(std::istream& in,
                                         std::vector<std::string>* header) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV input");
  *header = split_csv_line(line);
  std::vector<CsvRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    rows.push_back(CsvRow{lineno, split_csv_line(line)});
  }
  return rows;
}

// Re-throws DataErrors from `body` with the CSV line number prepended.
template <typename Fn>
inline void with_line(int lineno, Fn&& body) {
  try {
    body();
  } catch (const DataError& e) {
    throw DataError("line " + std::to_string(lineno) + ": " + e.what());
  }
}

// Counts trailing columns named prefix1, prefix2, ... starting at `from`.
inline int count_prefixed(const std::vector<std::string>& header,
                          std::size_t from, const std::string& prefix) {
  int n = 0;
  for (std::size_t j = from; j < header.size(); ++j) {
    const std::string want = prefix + std::to_string(n + 1);
    if (header[j] != want) break;
    ++n;
  }
  return n;
}

}  // namespace detail

// Cluster-level schema: stratum,cluster,weight,m,y1..y{d+1},x1..xk
// Individual-level schema: stratum,cluster,weight,category,x1..xk
// The reader dispatches on the header.  Stratum and cluster identifiers are
// arbitrary strings; dense indices are assigned in order of first appearance
// and the original labels are preserved on the dataset.
inline SurveyDataset read_survey_csv(std::istream& in) {
  std::vector<std::string> header;
  const auto rows = detail::read_csv_rows(in, &header);
  if (header.size() < 5 || header[0] != "stratum" || header[1] != "cluster" ||
      header[2] != "weight") {
    throw DataError(
        "CSV header must start with stratum,cluster,weight followed by "
        "m,y1..,x1.. (cluster level) or category,x1.. (individual level)");
  }

  detail::LabelIndex strata;

  if (header[3] == "m") {
    const int dp1 = detail::count_prefixed(header, 4, "y");
    const int k = detail::count_prefixed(header, 4 + dp1, "x");
    if (dp1 < 2 || k < 1 || header.size() != 4 + dp1 + k) {
      throw DataError("cluster-level header must be stratum,cluster,weight,m,"
                      "y1..y{d+1},x1..xk");
    }
    std::vector<ClusterRecord> recs;
    for (const auto& [lineno, row] : rows) {
      detail::with_line(lineno, [&] {
        if (row.size() != header.size()) {
          throw DataError("row has " + std::to_string(row.size()) +
                          " fields, expected " + std::to_string(header.size()));
        }
        ClusterRecord r;
        r.stratum_label = row[0];
        r.cluster_label = row[1];
        r.stratum = strata.index_of(row[0]);
        r.weight = detail::parse_number(row[2], "weight");
        r.size = detail::parse_int(row[3], "m");
        r.counts.resize(dp1);
        for (int s = 0; s < dp1; ++s) {
          r.counts[s] = detail::parse_number(row[4 + s], "count y" +
                                             std::to_string(s + 1));
        }
        r.x.resize(k);
        for (int j = 0; j < k; ++j) {
          r.x[j] = detail::parse_number(row[4 + dp1 + j],
                                        "covariate x" + std::to_string(j + 1));
        }
        recs.push_back(std::move(r));
      });
    }
    return SurveyDataset(std::move(recs), dp1, k);
  }

  if (header[3] == "category") {
    const int k = detail::count_prefixed(header, 4, "x");
    if (k < 1 || header.size() != 4 + static_cast<std::size_t>(k)) {
      throw DataError("individual-level header must be "
                      "stratum,cluster,weight,category,x1..xk");
    }
    struct Partial {
      std::string stratum_label, cluster_label;
      int stratum = 0;
      double weight = 0.0;
      Eigen::VectorXd x;
      std::vector<int> categories;
    };
    std::vector<Partial> parts;          // in order of first appearance
    std::map<std::pair<std::string, std::string>, int> where;
    int max_category = 0;
    for (const auto& [lineno, row] : rows) {
      detail::with_line(lineno, [&] {
        if (row.size() != header.size()) {
          throw DataError("row has " + std::to_string(row.size()) +
                          " fields, expected " + std::to_string(header.size()));
        }
        const auto key = std::make_pair(row[0], row[1]);
        const double w = detail::parse_number(row[2], "weight");
        const int cat = detail::parse_int(row[3], "category");
        if (cat < 1) throw DataError("category must be >= 1, got " + row[3]);
        max_category = std::max(max_category, cat);
        Eigen::VectorXd x(k);
        for (int j = 0; j < k; ++j) {
          x[j] = detail::parse_number(row[4 + j],
                                      "covariate x" + std::to_string(j + 1));
        }
        auto it = where.find(key);
        if (it == where.end()) {
          Partial p;
          p.stratum_label = row[0];
          p.cluster_label = row[1];
          p.stratum = strata.index_of(row[0]);
          p.weight = w;
          p.x = x;
          where.emplace(key, static_cast<int>(parts.size()));
          parts.push_back(std::move(p));
          it = where.find(key);
        } else {
          const Partial& p = parts[it->second];
          if (p.weight != w) {
            throw DataError("cluster " + row[1] +
                            ": weight varies across individual rows");
          }
          if ((p.x - x).lpNorm<Eigen::Infinity>() != 0.0) {
            throw DataError("cluster " + row[1] +
                            ": covariates vary across individual rows");
          }
        }
        parts[it->second].categories.push_back(cat);
      });
    }
    if (max_category < 2) {
      throw DataError("individual-level data must use at least two categories");
    }
    std::vector<ClusterRecord> recs;
    for (auto& p : parts) {
      ClusterRecord r;
      r.stratum_label = p.stratum_label;
      r.cluster_label = p.cluster_label;
      r.stratum = p.stratum;
      r.weight = p.weight;
      r.x = p.x;
      r.counts = Eigen::VectorXd::Zero(max_category);
      for (int c : p.categories) r.counts[c - 1] += 1.0;
      r.size = static_cast<int>(p.categories.size());
      recs.push_back(std::move(r));
    }
    return SurveyDataset(std::move(recs), max_category, k);
  }

  throw DataError("fourth CSV column must be 'm' (cluster level) or "
                  "'category' (individual level), got '" + header[3] + "'");
}

inline SurveyDataset read_survey_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_survey_csv(in);
}

// Writes the cluster-level schema; counts round-trip exactly, weights and
// covariates to full double precision.
inline void write_cluster_csv(std::ostream& out, const SurveyDataset& data) {
  const int dp1 = data.num_categories();
  out << "stratum,cluster,weight,m";
  for (int s = 1; s <= dp1; ++s) out << ",y" << s;
  for (int j = 1; j <= data.k(); ++j) out << ",x" << j;
  out << "\n";
  char buf[64];
  for (const auto& r : data.records()) {
    out << r.stratum_label << ',' << r.cluster_label << ',';
    std::snprintf(buf, sizeof buf, "%.17g", r.weight);
    out << buf << ',' << r.size;
    for (int s = 0; s < dp1; ++s)
      out << ',' << static_cast<long long>(r.counts[s]);
    for (int j = 0; j < data.k(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", r.x[j]);
      out << ',' << buf;
    }
    out << "\n";
  }
}

}  // namespace phidiv
