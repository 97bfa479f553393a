#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "popbench/csv.hpp"
#include "popbench/datamodel.hpp"
#include "popbench/geometry.hpp"
#include "popbench/util.hpp"

namespace popbench {

struct PlaceRecord {
  std::string record_id;
  std::string raw_name;
  std::optional<Point> coordinates;
};

struct MatchConfig {
  double winkler_prefix_weight = 0.1;
  int winkler_max_prefix = 4;
  double similarity_margin = 0.10;
  double low_similarity_threshold = 0.85;
  std::vector<std::string> suffix_list{"municipio",  "municipality",
                                       "district",   "local government area",
                                       "lga",        "county"};
  // Higher-level region names whose tokens may be embedded in place names;
  // similarity scoring also tries the record name with these stripped.
  std::vector<std::string> region_names;
};

enum class MatchFlag { kLowSimilarity, kOutsidePolygon };

inline std::string flag_name(MatchFlag f) {
  return f == MatchFlag::kLowSimilarity ? "LowSimilarity" : "OutsidePolygon";
}

struct MatchResult {
  std::string record_id;
  UnitId matched_unit;
  double name_similarity = 0.0;
  double distance_km = 0.0;
  std::vector<MatchFlag> flags;  // ordered: LowSimilarity before OutsidePolygon

  bool has_flag(MatchFlag f) const {
    return std::find(flags.begin(), flags.end(), f) != flags.end();
  }
};

struct QaSummary {
  std::size_t n_low_similarity = 0;
  std::size_t n_outside_polygon = 0;
  std::size_t n_both = 0;
};

// ---------------------------------------------------------------------------
// name normalisation

namespace detail {

// Latin-1 / Latin Extended-A diacritic folding for the name scripts we meet.
inline const char* fold_codepoint(unsigned int cp) {
  switch (cp) {
    case 0x00C0: case 0x00C1: case 0x00C2: case 0x00C3: case 0x00C4: case 0x00C5:
    case 0x00E0: case 0x00E1: case 0x00E2: case 0x00E3: case 0x00E4: case 0x00E5:
    case 0x0100: case 0x0101: case 0x0102: case 0x0103: case 0x0104: case 0x0105:
      return "a";
    case 0x00C7: case 0x00E7: case 0x0106: case 0x0107: case 0x010C: case 0x010D:
      return "c";
    case 0x00C8: case 0x00C9: case 0x00CA: case 0x00CB:
    case 0x00E8: case 0x00E9: case 0x00EA: case 0x00EB:
    case 0x0112: case 0x0113: case 0x0118: case 0x0119: case 0x011A: case 0x011B:
      return "e";
    case 0x00CC: case 0x00CD: case 0x00CE: case 0x00CF:
    case 0x00EC: case 0x00ED: case 0x00EE: case 0x00EF:
    case 0x012A: case 0x012B:
      return "i";
    case 0x00D1: case 0x00F1: case 0x0143: case 0x0144:
      return "n";
    case 0x00D2: case 0x00D3: case 0x00D4: case 0x00D5: case 0x00D6: case 0x00D8:
    case 0x00F2: case 0x00F3: case 0x00F4: case 0x00F5: case 0x00F6: case 0x00F8:
    case 0x014C: case 0x014D:
      return "o";
    case 0x00D9: case 0x00DA: case 0x00DB: case 0x00DC:
    case 0x00F9: case 0x00FA: case 0x00FB: case 0x00FC:
    case 0x016A: case 0x016B:
      return "u";
    case 0x00DD: case 0x00FD: case 0x00FF:
      return "y";
    case 0x00DF:
      return "ss";
    case 0x015A: case 0x015B: case 0x0160: case 0x0161:
      return "s";
    case 0x017B: case 0x017C: case 0x017D: case 0x017E: case 0x0179: case 0x017A:
      return "z";
    default:
      return nullptr;
  }
}

// Decodes one UTF-8 codepoint starting at i; advances i past it. Malformed
// bytes decode as replacement (0xFFFD) one byte at a time.
inline unsigned int decode_utf8(const std::string& s, std::size_t& i) {
  unsigned char c = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) {
    return i + k < s.size() &&
           (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
  };
  if (c < 0x80) {
    i += 1;
    return c;
  }
  if ((c & 0xE0) == 0xC0 && cont(1)) {
    unsigned int cp = (c & 0x1Fu) << 6 | (static_cast<unsigned char>(s[i + 1]) & 0x3Fu);
    i += 2;
    return cp;
  }
  if ((c & 0xF0) == 0xE0 && cont(1) && cont(2)) {
    unsigned int cp = (c & 0x0Fu) << 12 | (static_cast<unsigned char>(s[i + 1]) & 0x3Fu) << 6 |
                      (static_cast<unsigned char>(s[i + 2]) & 0x3Fu);
    i += 3;
    return cp;
  }
  if ((c & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
    unsigned int cp = (c & 0x07u) << 18 | (static_cast<unsigned char>(s[i + 1]) & 0x3Fu) << 12 |
                      (static_cast<unsigned char>(s[i + 2]) & 0x3Fu) << 6 |
                      (static_cast<unsigned char>(s[i + 3]) & 0x3Fu);
    i += 4;
    return cp;
  }
  i += 1;
  return 0xFFFD;
}

inline std::string collapse_spaces(const std::string& s) {
  std::string out;
  bool pending = false;
  for (char c : s) {
    if (c == ' ') {
      pending = !out.empty();
    } else {
      if (pending) out += ' ';
      pending = false;
      out += c;
    }
  }
  return out;
}

inline std::vector<std::string> tokenize(const std::string& s) {
  std::vector<std::string> tokens;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) tokens.push_back(tok);
  return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

}  // namespace detail

// Lowercases, folds diacritics to ASCII, drops '.'/'\'', maps other
// punctuation to spaces, collapses whitespace, then repeatedly strips any
// trailing suffix-list phrase. Idempotent.
inline std::string normalize_name(const std::string& raw,
                                  const std::vector<std::string>& suffix_list) {
  std::string folded;
  folded.reserve(raw.size());
  std::size_t i = 0;
  while (i < raw.size()) {
    unsigned int cp = detail::decode_utf8(raw, i);
    if (cp < 0x80) {
      char c = static_cast<char>(cp);
      if (std::isalnum(static_cast<unsigned char>(c))) {
        folded += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      } else if (c == '.' || c == '\'') {
        // deleted: keeps dotted abbreviations ("L.G.A" -> "lga") matchable
      } else {
        folded += ' ';
      }
    } else if (const char* rep = detail::fold_codepoint(cp)) {
      folded += rep;
    } else {
      folded += ' ';
    }
  }
  std::string name = detail::collapse_spaces(folded);

  bool stripped = true;
  while (stripped && !name.empty()) {
    stripped = false;
    for (const auto& suffix : suffix_list) {
      std::string norm_suffix = detail::collapse_spaces(suffix);
      for (char& c : norm_suffix) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      if (norm_suffix.empty()) continue;
      if (name == norm_suffix) {
        name.clear();
        stripped = true;
        break;
      }
      std::string tail = " " + norm_suffix;
      if (name.size() > tail.size() &&
          name.compare(name.size() - tail.size(), tail.size(), tail) == 0) {
        name.erase(name.size() - tail.size());
        stripped = true;
        break;
      }
    }
  }
  return name;
}

// Removes whole-token occurrences of each region name (itself tokenized) from
// an already-normalized name.
inline std::string strip_region_tokens(const std::string& name,
                                       const std::vector<std::string>& region_names) {
  std::vector<std::string> tokens = detail::tokenize(name);
  for (const auto& region : region_names) {
    std::vector<std::string> rtokens = detail::tokenize(region);
    if (rtokens.empty() || rtokens.size() > tokens.size()) continue;
    std::vector<std::string> kept;
    std::size_t i = 0;
    while (i < tokens.size()) {
      bool match = i + rtokens.size() <= tokens.size();
      for (std::size_t k = 0; match && k < rtokens.size(); ++k) {
        match = tokens[i + k] == rtokens[k];
      }
      if (match) {
        i += rtokens.size();
      } else {
        kept.push_back(tokens[i]);
        ++i;
      }
    }
    tokens = std::move(kept);
  }
  return detail::join_tokens(tokens);
}

// ---------------------------------------------------------------------------
// string similarity

inline double jaro(const std::string& a, const std::string& b) {
  if (a == b) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  std::size_t la = a.size(), lb = b.size();
  std::size_t window = std::max(la, lb) / 2;
  window = window > 0 ? window - 1 : 0;

  std::vector<bool> a_match(la, false), b_match(lb, false);
  std::size_t m = 0;
  for (std::size_t i = 0; i < la; ++i) {
    std::size_t lo = i > window ? i - window : 0;
    std::size_t hi = std::min(lb, i + window + 1);
    for (std::size_t j = lo; j < hi; ++j) {
      if (!b_match[j] && a[i] == b[j]) {
        a_match[i] = b_match[j] = true;
        ++m;
        break;
      }
    }
  }
  if (m == 0) return 0.0;

  std::size_t half_transpositions = 0;
  std::size_t j = 0;
  for (std::size_t i = 0; i < la; ++i) {
    if (!a_match[i]) continue;
    while (!b_match[j]) ++j;
    if (a[i] != b[j]) ++half_transpositions;
    ++j;
  }
  double t = half_transpositions / 2.0;
  double dm = static_cast<double>(m);
  return (dm / la + dm / lb + (dm - t) / dm) / 3.0;
}

inline double jaro_winkler(const std::string& a, const std::string& b, const MatchConfig& cfg) {
  double j = jaro(a, b);
  std::size_t max_prefix = static_cast<std::size_t>(std::max(cfg.winkler_max_prefix, 0));
  std::size_t limit = std::min({a.size(), b.size(), max_prefix});
  std::size_t prefix = 0;
  while (prefix < limit && a[prefix] == b[prefix]) ++prefix;
  return j + prefix * cfg.winkler_prefix_weight * (1.0 - j);
}

// ---------------------------------------------------------------------------
// geocoding

class GeocoderClient {
 public:
  virtual ~GeocoderClient() = default;
  virtual Point locate(const std::string& record_id) const = 0;
};

// Hermetic geocoder backed by a CSV file `record_id,lon,lat`. Safe for
// concurrent reads after construction.
class FixtureGeocoder : public GeocoderClient {
 public:
  explicit FixtureGeocoder(const std::string& path) {
    CsvTable csv = read_csv(path);
    if (csv.header.size() != 3 || csv.header[0] != "record_id" || csv.header[1] != "lon" ||
        csv.header[2] != "lat") {
      throw std::runtime_error(path + ": expected header 'record_id,lon,lat'");
    }
    for (std::size_t r = 0; r < csv.rows.size(); ++r) {
      const auto& row = csv.rows[r];
      if (row.size() != 3) throw std::runtime_error(path + ": ragged row " + std::to_string(r + 2));
      Point p{parse_double(row[1], path + " lon row " + std::to_string(r + 2)),
              parse_double(row[2], path + " lat row " + std::to_string(r + 2))};
      try {
        validate_point(p);
      } catch (const std::exception& e) {
        throw std::runtime_error(path + ": row " + std::to_string(r + 2) + ": " + e.what());
      }
      if (!fixture_.emplace(row[0], p).second) {
        throw std::runtime_error(path + ": duplicate record_id '" + row[0] + "'");
      }
    }
  }

  Point locate(const std::string& record_id) const override {
    auto it = fixture_.find(record_id);
    if (it == fixture_.end()) {
      throw std::runtime_error("geocode fixture has no record_id '" + record_id + "'");
    }
    return it->second;
  }

 private:
  std::map<std::string, Point> fixture_;
};

// Records that already carry coordinates pass through without consulting the
// client.
inline Point geocode(const PlaceRecord& record, const GeocoderClient& client) {
  if (record.coordinates) return *record.coordinates;
  return client.locate(record.record_id);
}

// ---------------------------------------------------------------------------
// matching

// Nearest polygon followed by its one-hop adjacency neighbours in
// lexicographic order.
inline std::vector<UnitId> candidate_set(const Point& p, const GeometrySet& geoms) {
  UnitId nearest = nearest_polygon(p, geoms);
  std::vector<UnitId> candidates{nearest};
  auto it = geoms.adjacency.find(nearest);
  if (it != geoms.adjacency.end()) {
    for (const auto& neighbour : it->second) {  // std::set: already lexicographic
      if (neighbour != nearest) candidates.push_back(neighbour);
    }
  }
  return candidates;
}

namespace detail {

inline std::map<UnitId, std::string> normalized_unit_names(const std::vector<AdminUnit>& units,
                                                           const MatchConfig& cfg) {
  std::map<UnitId, std::string> names;
  for (const auto& u : units) names.emplace(u.id, normalize_name(u.name, cfg.suffix_list));
  return names;
}

}  // namespace detail

inline MatchResult match_record(const PlaceRecord& record, const GeometrySet& geoms,
                                const std::vector<AdminUnit>& units, const MatchConfig& cfg) {
  if (!record.coordinates) {
    throw std::invalid_argument("record '" + record.record_id + "' has no coordinates");
  }
  const Point& p = *record.coordinates;
  std::vector<UnitId> candidates = candidate_set(p, geoms);
  if (candidates.empty()) throw std::runtime_error("no candidate polygons");

  auto unit_names = detail::normalized_unit_names(units, cfg);
  std::string full = normalize_name(record.raw_name, cfg.suffix_list);
  std::vector<std::string> norm_regions;
  for (const auto& r : cfg.region_names) norm_regions.push_back(normalize_name(r, {}));
  std::string stripped = strip_region_tokens(full, norm_regions);

  std::vector<double> sims(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto it = unit_names.find(candidates[i]);
    if (it == unit_names.end()) {
      throw std::runtime_error("candidate '" + candidates[i] + "' missing from unit list");
    }
    double s = jaro_winkler(full, it->second, cfg);
    if (stripped != full) s = std::max(s, jaro_winkler(stripped, it->second, cfg));
    sims[i] = s;
  }

  // Nearest wins unless another candidate beats it by more than the margin;
  // then the overall max-similarity candidate wins (ties: nearest, then
  // lexicographic).
  std::size_t selected = 0;
  bool beaten = false;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if (sims[i] > sims[0] + cfg.similarity_margin) beaten = true;
  }
  if (beaten) {
    double best = sims[0];
    for (double s : sims) best = std::max(best, s);
    if (sims[0] < best) {
      std::size_t pick = 0;
      bool found = false;
      for (std::size_t i = 1; i < candidates.size(); ++i) {
        if (sims[i] != best) continue;
        if (!found || candidates[i] < candidates[pick]) pick = i;
        found = true;
      }
      selected = pick;
    }
  }

  MatchResult result;
  result.record_id = record.record_id;
  result.matched_unit = candidates[selected];
  result.name_similarity = sims[selected];
  result.distance_km = haversine_km(p, geoms.centroids.at(result.matched_unit));
  if (result.name_similarity < cfg.low_similarity_threshold) {
    result.flags.push_back(MatchFlag::kLowSimilarity);
  }
  if (!point_in_multipolygon(p, geoms.polygons.at(result.matched_unit))) {
    result.flags.push_back(MatchFlag::kOutsidePolygon);
  }
  return result;
}

struct MatchBatch {
  std::vector<MatchResult> results;  // input order
  QaSummary summary;
};

inline MatchBatch match_all(const std::vector<PlaceRecord>& records, const GeometrySet& geoms,
                            const std::vector<AdminUnit>& units, const MatchConfig& cfg,
                            const GeocoderClient* client = nullptr,
                            unsigned n_threads = 1) {
  {
    std::set<std::string> seen;
    for (const auto& r : records) {
      if (!seen.insert(r.record_id).second) {
        throw std::invalid_argument("duplicate record_id '" + r.record_id + "'");
      }
    }
  }
  std::vector<PlaceRecord> resolved = records;
  for (auto& r : resolved) {
    if (!r.coordinates) {
      if (!client) throw std::runtime_error("record '" + r.record_id + "' needs a geocoder");
      r.coordinates = geocode(r, *client);
    }
  }

  MatchBatch batch;
  batch.results.resize(resolved.size());
  parallel_for(resolved.size(), n_threads, [&](std::size_t i) {
    batch.results[i] = match_record(resolved[i], geoms, units, cfg);
  });
  for (const auto& r : batch.results) {
    bool low = r.has_flag(MatchFlag::kLowSimilarity);
    bool outside = r.has_flag(MatchFlag::kOutsidePolygon);
    if (low) ++batch.summary.n_low_similarity;
    if (outside) ++batch.summary.n_outside_polygon;
    if (low && outside) ++batch.summary.n_both;
  }
  return batch;
}

// Place-record input: `record_id,name[,lon,lat]`; empty lon/lat cells mean
// the record needs geocoding.
inline std::vector<PlaceRecord> load_places(const std::string& path) {
  CsvTable csv = read_csv(path);
  bool with_coords = csv.header.size() == 4 && csv.header[2] == "lon" && csv.header[3] == "lat";
  if (!(csv.header.size() == 2 || with_coords) || csv.header[0] != "record_id" ||
      csv.header[1] != "name") {
    throw std::runtime_error(path + ": expected header 'record_id,name' or 'record_id,name,lon,lat'");
  }
  std::vector<PlaceRecord> records;
  std::set<std::string> seen;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    if (row.size() != csv.header.size()) {
      throw std::runtime_error(path + ": ragged row " + std::to_string(r + 2));
    }
    PlaceRecord rec;
    rec.record_id = row[0];
    rec.raw_name = row[1];
    if (!seen.insert(rec.record_id).second) {
      throw std::runtime_error(path + ": duplicate record_id '" + rec.record_id + "'");
    }
    if (with_coords && (!row[2].empty() || !row[3].empty())) {
      if (row[2].empty() || row[3].empty()) {
        throw std::runtime_error(path + ": row " + std::to_string(r + 2) +
                                 " has only one coordinate");
      }
      Point p{parse_double(row[2], path + " lon row " + std::to_string(r + 2)),
              parse_double(row[3], path + " lat row " + std::to_string(r + 2))};
      validate_point(p);
      rec.coordinates = p;
    }
    records.push_back(std::move(rec));
  }
  return records;
}

inline void write_linkage_review(const std::vector<MatchResult>& results, const std::string& path) {
  CsvWriter out(path);
  out.row({"record_id", "matched_unit", "name_similarity", "distance_km", "flags"});
  for (const auto& r : results) {
    std::string flags;
    for (const auto& f : r.flags) {
      if (!flags.empty()) flags += '|';
      flags += flag_name(f);
    }
    out.row({r.record_id, r.matched_unit, fmt_g17(r.name_similarity), fmt_g17(r.distance_km),
             flags});
  }
  out.close();
}

}  // namespace popbench
