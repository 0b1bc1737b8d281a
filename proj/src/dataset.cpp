#include "sitehet/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "sitehet/error.hpp"

namespace sitehet {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
  return std::string(s.substr(b, e - b));
}

// Splits one line, honoring double-quoted fields ("" escapes a quote).
std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "NA" || cell == "na" || cell == "N/A" || cell == ".";
}

std::optional<double> parse_number(const std::string& cell) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return v;
}

std::string row_label(std::size_t row, const std::string& column) {
  return "row " + std::to_string(row) + ", column '" + column + "'";
}

std::size_t require_column(const std::vector<std::string>& header, const std::string& name) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw InputError("missing column '" + name + "' in input header");
  return static_cast<std::size_t>(it - header.begin());
}

}  // namespace

ColumnMap ColumnMap::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"site",  "arm",          "d",         "y",
                                              "mediators", "unit_weight", "site_covariates",
                                              "arms",  "control_arm",  "delimiter"};
  if (!j.is_object()) throw InputError("column map must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw InputError("unknown column-map key '" + it.key() + "'");
  }
  ColumnMap c;
  try {
    if (j.contains("site")) c.site = j.at("site").get<std::string>();
    if (j.contains("arm")) c.arm = j.at("arm").get<std::string>();
    if (j.contains("d")) c.d = j.at("d").get<std::string>();
    if (j.contains("y")) c.y = j.at("y").get<std::string>();
    if (j.contains("mediators")) c.mediators = j.at("mediators").get<std::vector<std::string>>();
    if (j.contains("unit_weight") && !j.at("unit_weight").is_null())
      c.unit_weight = j.at("unit_weight").get<std::string>();
    if (j.contains("site_covariates"))
      c.site_covariates = j.at("site_covariates").get<std::vector<std::string>>();
    if (j.contains("arms")) c.arms = j.at("arms").get<std::vector<std::string>>();
    if (j.contains("control_arm")) c.control_arm = j.at("control_arm").get<std::string>();
    if (j.contains("delimiter")) {
      auto d = j.at("delimiter").get<std::string>();
      if (d == "auto") c.delimiter = 0;
      else if (d == "," || d == "comma") c.delimiter = ',';
      else if (d == "\t" || d == "tab") c.delimiter = '\t';
      else throw InputError("delimiter must be \"auto\", \",\" or \"tab\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad column map: ") + e.what());
  }
  if (std::find(c.arms.begin(), c.arms.end(), c.control_arm) == c.arms.end())
    throw InputError("control arm '" + c.control_arm + "' is not among the declared arms");
  return c;
}

std::size_t CovariateTable::index_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw InputError("unknown site covariate '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

std::vector<std::string> Dataset::site_ids() const {
  std::vector<std::string> ids;
  for (const auto& r : records) {
    if (ids.empty() || ids.back() != r.site_id) ids.push_back(r.site_id);
  }
  return ids;
}

bool Dataset::has_arm(const std::string& arm) const {
  return std::find(arm_set.begin(), arm_set.end(), arm) != arm_set.end();
}

void canonicalize(Dataset& ds) {
  std::sort(ds.records.begin(), ds.records.end(), [](const UnitRecord& a, const UnitRecord& b) {
    return std::tie(a.site_id, a.arm, a.d, a.y, a.m, a.unit_weight) <
           std::tie(b.site_id, b.arm, b.d, b.y, b.m, b.unit_weight);
  });
}

Dataset parse_dataset(std::istream& in, const ColumnMap& columns) {
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw InputError("empty input file");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM

  const char delim = columns.delimiter ? columns.delimiter : (line.find('\t') != std::string::npos ? '\t' : ',');
  const auto header = split_line(line, delim);

  const std::size_t c_site = require_column(header, columns.site);
  const std::size_t c_arm = require_column(header, columns.arm);
  const std::size_t c_d = require_column(header, columns.d);
  const std::size_t c_y = require_column(header, columns.y);
  std::vector<std::size_t> c_m;
  for (const auto& name : columns.mediators) c_m.push_back(require_column(header, name));
  std::optional<std::size_t> c_w;
  if (columns.unit_weight) c_w = require_column(header, *columns.unit_weight);
  std::vector<std::size_t> c_x;
  for (const auto& name : columns.site_covariates) c_x.push_back(require_column(header, name));

  Dataset ds;
  ds.arm_set = columns.arms;
  ds.control_arm = columns.control_arm;
  ds.mediator_names = columns.mediators;
  ds.covariates.names = columns.site_covariates;

  const std::set<std::string> arms(columns.arms.begin(), columns.arms.end());
  const double nan = std::numeric_limits<double>::quiet_NaN();

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    auto cells = split_line(line, delim);
    if (cells.size() != header.size()) {
      throw InputError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                       " fields, found " + std::to_string(cells.size()));
    }

    std::vector<std::size_t> required = {c_site, c_arm, c_d, c_y};
    required.insert(required.end(), c_m.begin(), c_m.end());
    if (c_w) required.push_back(*c_w);
    auto missing = std::find_if(required.begin(), required.end(),
                                [&](std::size_t c) { return is_missing(cells[c]); });
    if (missing != required.end()) {
      ds.rejected_rows.push_back({row, "missing value in column '" + header[*missing] + "'"});
      continue;
    }

    auto numeric = [&](std::size_t c) {
      auto v = parse_number(cells[c]);
      if (!v) throw InputError(row_label(row, header[c]) + ": non-numeric value '" + cells[c] + "'");
      if (!std::isfinite(*v)) throw InputError(row_label(row, header[c]) + ": value is not finite");
      return *v;
    };

    UnitRecord r;
    r.site_id = cells[c_site];
    r.arm = cells[c_arm];
    if (!arms.count(r.arm)) throw InputError(row_label(row, header[c_arm]) + ": unknown arm label '" + r.arm + "'");
    const double d = numeric(c_d);
    if (d != 0.0 && d != 1.0)
      throw InputError(row_label(row, header[c_d]) + ": take-up must be 0 or 1, found " + cells[c_d]);
    r.d = static_cast<int>(d);
    r.y = numeric(c_y);
    for (auto c : c_m) r.m.push_back(numeric(c));
    if (c_w) {
      r.unit_weight = numeric(*c_w);
      if (!(r.unit_weight > 0.0)) throw InputError(row_label(row, header[*c_w]) + ": unit weight must be positive");
    }

    auto [it, inserted] = ds.covariates.values.try_emplace(r.site_id, std::vector<double>(c_x.size(), nan));
    for (std::size_t k = 0; k < c_x.size(); ++k) {
      const auto& cell = cells[c_x[k]];
      if (is_missing(cell)) continue;
      const double v = numeric(c_x[k]);
      double& slot = it->second[k];
      if (std::isnan(slot)) slot = v;
      else if (slot != v)
        throw InputError(row_label(row, header[c_x[k]]) + ": site covariate varies within site '" + r.site_id + "'");
    }
    ds.records.push_back(std::move(r));
  }

  if (ds.records.empty()) throw InputError("input contains no usable data rows");
  canonicalize(ds);
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path, const ColumnMap& columns) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open input file '" + path.string() + "'");
  return parse_dataset(in, columns);
}

std::pair<Dataset, FilterLog> restrict_and_filter(const Dataset& ds, const std::string& focal_arm, int min_per_arm) {
  if (min_per_arm < kMinPerArm)
    throw InputError("min_per_arm must be at least " + std::to_string(kMinPerArm));
  if (!ds.has_arm(focal_arm)) throw InputError("focal arm '" + focal_arm + "' is not a declared arm");
  if (focal_arm == ds.control_arm) throw InputError("focal arm cannot be the control arm");

  std::map<std::string, std::pair<int, int>> counts;
  for (const auto& r : ds.records) {
    auto& c = counts[r.site_id];
    if (r.arm == focal_arm) ++c.first;
    else if (r.arm == ds.control_arm) ++c.second;
  }

  FilterLog log;
  std::set<std::string> keep;
  for (const auto& [site, c] : counts) {
    if (c.first >= min_per_arm && c.second >= min_per_arm) {
      keep.insert(site);
      continue;
    }
    std::string reason;
    if (c.first < min_per_arm) reason = "fewer than " + std::to_string(min_per_arm) + " units in arm '" + focal_arm + "'";
    if (c.second < min_per_arm) {
      if (!reason.empty()) reason += "; ";
      reason += "fewer than " + std::to_string(min_per_arm) + " units in arm '" + ds.control_arm + "'";
    }
    log.dropped.push_back({site, c.first, c.second, reason});
  }
  if (keep.empty()) throw InputError("all sites dropped: none has " + std::to_string(min_per_arm) +
                                     " treated and control units for arm '" + focal_arm + "'");

  Dataset out;
  out.arm_set = ds.arm_set;
  out.control_arm = ds.control_arm;
  out.focal_arm = focal_arm;
  out.mediator_names = ds.mediator_names;
  out.covariates.names = ds.covariates.names;
  out.rejected_rows = ds.rejected_rows;
  for (const auto& r : ds.records) {
    if (keep.count(r.site_id)) out.records.push_back(r);
  }
  for (const auto& [site, vals] : ds.covariates.values) {
    if (keep.count(site)) out.covariates.values.emplace(site, vals);
  }
  log.retained = keep.size();
  return {std::move(out), std::move(log)};
}

WeightScheme WeightScheme::from_json(const nlohmann::json& j) {
  WeightScheme s;
  auto kind_of = [](const std::string& k) {
    if (k == "equal") return WeightKind::equal;
    if (k == "proportional") return WeightKind::proportional;
    if (k == "custom") return WeightKind::custom;
    throw InputError("unknown weight scheme '" + k + "'");
  };
  if (j.is_string()) {
    s.kind = kind_of(j.get<std::string>());
  } else if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() != "scheme" && it.key() != "custom") throw InputError("unknown weights key '" + it.key() + "'");
    }
    try {
      s.kind = kind_of(j.value("scheme", std::string("equal")));
      if (j.contains("custom")) s.custom = j.at("custom").get<std::map<std::string, double>>();
    } catch (const nlohmann::json::exception& e) {
      throw InputError(std::string("bad weights block: ") + e.what());
    }
  } else {
    throw InputError("weights must be a string or an object");
  }
  if (s.kind == WeightKind::custom && s.custom.empty()) throw InputError("custom weight scheme needs a 'custom' map");
  return s;
}

Weights Weights::equal(std::vector<std::string> site_ids) {
  Weights out;
  out.w.assign(site_ids.size(), site_ids.empty() ? 0.0 : 1.0 / static_cast<double>(site_ids.size()));
  out.site_ids = std::move(site_ids);
  return out;
}

Weights Weights::normalized(std::vector<std::string> site_ids, const std::vector<double>& raw) {
  if (raw.size() != site_ids.size()) throw InputError("weight vector does not match the number of sites");
  for (std::size_t s = 0; s < raw.size(); ++s) {
    if (!(raw[s] > 0.0) || !std::isfinite(raw[s]))
      throw InputError("weight for site '" + site_ids[s] + "' must be positive and finite");
  }
  const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
  Weights out;
  out.site_ids = std::move(site_ids);
  out.w.reserve(raw.size());
  for (double r : raw) out.w.push_back(r / total);
  return out;
}

Weights Weights::subset(const std::vector<std::size_t>& keep) const {
  std::vector<std::string> ids;
  std::vector<double> raw;
  for (auto i : keep) {
    ids.push_back(site_ids.at(i));
    raw.push_back(w.at(i));
  }
  return normalized(std::move(ids), raw);
}

Weights resolve_weights(const Dataset& ds, const WeightScheme& scheme) {
  auto ids = ds.site_ids();
  if (ids.empty()) throw InputError("cannot resolve weights for an empty dataset");
  switch (scheme.kind) {
    case WeightKind::equal:
      return Weights::equal(std::move(ids));
    case WeightKind::proportional: {
      std::map<std::string, double> size;
      for (const auto& r : ds.records) {
        const bool in_analysis = ds.focal_arm.empty() || r.arm == ds.focal_arm || r.arm == ds.control_arm;
        if (in_analysis) size[r.site_id] += r.unit_weight;
      }
      std::vector<double> raw;
      for (const auto& id : ids) raw.push_back(size[id]);
      return Weights::normalized(std::move(ids), raw);
    }
    case WeightKind::custom: {
      std::vector<double> raw;
      for (const auto& id : ids) {
        auto it = scheme.custom.find(id);
        if (it == scheme.custom.end()) throw InputError("custom weights missing site '" + id + "'");
        raw.push_back(it->second);
      }
      return Weights::normalized(std::move(ids), raw);
    }
  }
  throw InputError("unhandled weight scheme");
}

}  // namespace sitehet
