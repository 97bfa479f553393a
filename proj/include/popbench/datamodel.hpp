#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "popbench/csv.hpp"
#include "popbench/geometry.hpp"
#include "popbench/util.hpp"

namespace popbench {

enum class FeatureFamily { kEmbeddings, kCovariates };

inline std::string family_name(FeatureFamily f) {
  return f == FeatureFamily::kEmbeddings ? "embeddings" : "covariates";
}

inline FeatureFamily family_from_name(const std::string& s) {
  if (s == "embeddings") return FeatureFamily::kEmbeddings;
  if (s == "covariates") return FeatureFamily::kCovariates;
  throw std::invalid_argument("unknown feature family: " + s);
}

// Semantic group of a full-scale 330-column embedding table.
enum class EmbeddingGroup { kSearchTrends, kMapsBusyness, kWeatherAirQuality };

inline EmbeddingGroup embedding_group_of(std::size_t column) {
  if (column < 128) return EmbeddingGroup::kSearchTrends;
  if (column < 256) return EmbeddingGroup::kMapsBusyness;
  if (column < 330) return EmbeddingGroup::kWeatherAirQuality;
  throw std::out_of_range("embedding column index beyond 330");
}

struct AdminUnit {
  UnitId id;
  std::string name;
  std::string group_id;
  std::optional<std::string> supergroup_id;
  double area_km2 = 0.0;
  std::optional<UnitId> geometry_ref;
};

struct FeatureTable {
  FeatureFamily family = FeatureFamily::kCovariates;
  std::vector<std::string> feature_names;
  std::map<UnitId, std::vector<double>> rows;
};

struct PopulationTable {
  std::map<UnitId, double> counts;

  double total() const {
    std::vector<double> v;
    v.reserve(counts.size());
    for (const auto& [id, c] : counts) v.push_back(c);
    return stable_sum(v);
  }
};

struct ShareVector {
  std::map<UnitId, double> shares;
};

struct Dataset {
  std::vector<AdminUnit> units;  // sorted by id
  std::map<FeatureFamily, FeatureTable> families;
  PopulationTable population;
  ShareVector shares;
  std::string country_tag;

  const AdminUnit& unit(const UnitId& id) const {
    for (const auto& u : units) {
      if (u.id == id) return u;
    }
    throw std::out_of_range("unknown unit " + id);
  }
};

struct BoundaryData {
  std::vector<AdminUnit> units;
  GeometrySet geoms;
};

// ---------------------------------------------------------------------------
// loaders

inline BoundaryData load_boundaries(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": invalid JSON: " + e.what());
  }
  if (doc.value("type", "") != "FeatureCollection") {
    throw std::runtime_error(path + ": expected a GeoJSON FeatureCollection");
  }
  const auto& features = doc.at("features");
  if (!features.is_array() || features.empty()) {
    throw std::runtime_error(path + ": no features");
  }

  auto parse_ring = [&](const nlohmann::json& coords) {
    std::vector<Point> ring;
    for (const auto& pt : coords) {
      if (!pt.is_array() || pt.size() < 2) throw std::runtime_error("unparseable ring coordinate");
      ring.push_back({pt[0].get<double>(), pt[1].get<double>()});
    }
    return ring;
  };
  auto parse_polygon = [&](const nlohmann::json& coords) {
    Polygon poly;
    for (const auto& ring : coords) poly.rings.push_back(parse_ring(ring));
    validate_polygon(poly);
    return poly;
  };

  std::vector<AdminUnit> units;
  std::map<UnitId, MultiPolygon> polygons;
  for (const auto& feature : features) {
    if (!feature.contains("properties") || feature["properties"].is_null()) {
      throw std::runtime_error(path + ": feature without properties");
    }
    const auto& props = feature["properties"];
    AdminUnit unit;
    for (const char* key : {"id", "name", "group_id"}) {
      if (!props.contains(key) || !props[key].is_string() || props[key].get<std::string>().empty()) {
        throw std::runtime_error(path + ": feature missing required property '" + key + "'");
      }
    }
    unit.id = props["id"].get<std::string>();
    unit.name = props["name"].get<std::string>();
    unit.group_id = props["group_id"].get<std::string>();
    if (props.contains("supergroup_id") && props["supergroup_id"].is_string()) {
      unit.supergroup_id = props["supergroup_id"].get<std::string>();
    }
    if (polygons.count(unit.id)) {
      throw std::runtime_error(path + ": duplicate id '" + unit.id + "'");
    }

    if (!feature.contains("geometry") || feature["geometry"].is_null()) {
      throw std::runtime_error(path + ": feature '" + unit.id + "' has no geometry");
    }
    const auto& geom = feature["geometry"];
    std::string gtype = geom.value("type", "");
    MultiPolygon mp;
    try {
      if (gtype == "Polygon") {
        mp.push_back(parse_polygon(geom.at("coordinates")));
      } else if (gtype == "MultiPolygon") {
        for (const auto& poly : geom.at("coordinates")) mp.push_back(parse_polygon(poly));
      } else {
        throw std::runtime_error("geometry type '" + gtype + "' not supported");
      }
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ": feature '" + unit.id + "': " + e.what());
    }
    unit.geometry_ref = unit.id;
    polygons.emplace(unit.id, std::move(mp));
    units.push_back(std::move(unit));
  }

  BoundaryData data;
  data.geoms = make_geometry_set(std::move(polygons));
  for (auto& unit : units) unit.area_km2 = data.geoms.area_km2.at(unit.id);
  std::sort(units.begin(), units.end(),
            [](const AdminUnit& a, const AdminUnit& b) { return a.id < b.id; });
  data.units = std::move(units);
  return data;
}

inline FeatureTable load_feature_table(const std::string& path, FeatureFamily family) {
  CsvTable csv = read_csv(path);
  if (csv.header.empty() || csv.header[0] != "unit_id") {
    throw std::runtime_error(path + ": first column must be 'unit_id'");
  }
  FeatureTable table;
  table.family = family;
  table.feature_names.assign(csv.header.begin() + 1, csv.header.end());
  {
    std::set<std::string> seen;
    for (const auto& name : table.feature_names) {
      if (!seen.insert(name).second) throw std::runtime_error(path + ": duplicate feature '" + name + "'");
    }
  }
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    if (row.size() != csv.header.size()) {
      throw std::runtime_error(path + ": row " + std::to_string(r + 2) + " has " +
                               std::to_string(row.size()) + " cells, expected " +
                               std::to_string(csv.header.size()));
    }
    const UnitId& id = row[0];
    if (table.rows.count(id)) throw std::runtime_error(path + ": duplicate unit_id '" + id + "'");
    std::vector<double> values(row.size() - 1);
    for (std::size_t c = 1; c < row.size(); ++c) {
      values[c - 1] = parse_double(
          row[c], path + " row " + std::to_string(r + 2) + " column '" + csv.header[c] + "'");
    }
    table.rows.emplace(id, std::move(values));
  }
  return table;
}

inline PopulationTable load_population(const std::string& path) {
  CsvTable csv = read_csv(path);
  if (csv.header.size() != 2 || csv.header[0] != "unit_id" || csv.header[1] != "population") {
    throw std::runtime_error(path + ": expected header 'unit_id,population'");
  }
  PopulationTable table;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    if (row.size() != 2) throw std::runtime_error(path + ": ragged row " + std::to_string(r + 2));
    const UnitId& id = row[0];
    if (table.counts.count(id)) throw std::runtime_error(path + ": duplicate unit_id '" + id + "'");
    double count = parse_double(row[1], path + " row " + std::to_string(r + 2));
    if (count < 0.0) {
      throw std::runtime_error(path + ": negative population for '" + id + "'");
    }
    table.counts.emplace(id, count);
  }
  if (table.counts.empty()) throw std::runtime_error(path + ": no rows");
  if (table.total() <= 0.0) throw std::runtime_error(path + ": total population is zero");
  return table;
}

inline ShareVector compute_shares(const PopulationTable& population) {
  double total = population.total();
  if (total <= 0.0) throw std::invalid_argument("total population is zero");
  ShareVector shares;
  for (const auto& [id, count] : population.counts) {
    shares.shares.emplace(id, count / total);
  }
  return shares;
}

// ---------------------------------------------------------------------------
// assembly

struct JoinReport {
  struct Source {
    std::string name;
    std::size_t supplied = 0;
    std::size_t dropped = 0;
  };
  std::vector<Source> sources;
  std::size_t kept = 0;

  std::string to_string() const {
    std::ostringstream os;
    os << "join kept " << kept << " units";
    for (const auto& s : sources) {
      if (s.dropped > 0) os << "; " << s.dropped << " dropped from " << s.name;
    }
    return os.str();
  }
};

struct AssembleResult {
  Dataset dataset;
  JoinReport report;
};

// Strict-intersection join over every supplied source; shares recomputed on
// the restricted population.
inline AssembleResult assemble_dataset(const std::vector<AdminUnit>& units,
                                       const std::map<FeatureFamily, FeatureTable>& families,
                                       const PopulationTable& population,
                                       const std::string& country_tag) {
  if (units.empty() || families.empty() || population.counts.empty()) {
    throw std::invalid_argument("assemble_dataset: empty input");
  }
  for (const auto& [family, table] : families) {
    if (table.feature_names.empty()) {
      throw std::invalid_argument("feature family " + family_name(family) + " has zero columns");
    }
  }

  std::set<UnitId> keep;
  for (const auto& u : units) keep.insert(u.id);
  auto intersect = [&keep](const std::set<UnitId>& other) {
    std::set<UnitId> out;
    for (const auto& id : keep) {
      if (other.count(id)) out.insert(id);
    }
    keep = std::move(out);
  };
  for (const auto& [family, table] : families) {
    std::set<UnitId> ids;
    for (const auto& [id, row] : table.rows) ids.insert(id);
    intersect(ids);
  }
  {
    std::set<UnitId> ids;
    for (const auto& [id, c] : population.counts) ids.insert(id);
    intersect(ids);
  }
  if (keep.empty()) throw std::runtime_error("assemble_dataset: no units shared by all sources");

  JoinReport report;
  report.kept = keep.size();
  report.sources.push_back({"boundaries", units.size(), units.size() - keep.size()});
  for (const auto& [family, table] : families) {
    report.sources.push_back(
        {family_name(family), table.rows.size(), table.rows.size() - keep.size()});
  }
  report.sources.push_back(
      {"population", population.counts.size(), population.counts.size() - keep.size()});

  Dataset ds;
  ds.country_tag = country_tag;
  for (const auto& u : units) {
    if (keep.count(u.id)) ds.units.push_back(u);
  }
  std::sort(ds.units.begin(), ds.units.end(),
            [](const AdminUnit& a, const AdminUnit& b) { return a.id < b.id; });
  for (const auto& [family, table] : families) {
    FeatureTable restricted;
    restricted.family = family;
    restricted.feature_names = table.feature_names;
    for (const auto& id : keep) restricted.rows.emplace(id, table.rows.at(id));
    ds.families.emplace(family, std::move(restricted));
  }
  for (const auto& id : keep) ds.population.counts.emplace(id, population.counts.at(id));
  if (ds.population.total() <= 0.0) {
    throw std::runtime_error("assemble_dataset: joined population total is zero");
  }
  ds.shares = compute_shares(ds.population);
  return {std::move(ds), std::move(report)};
}

// ---------------------------------------------------------------------------
// emitters (17 significant digits; reload yields bit-identical values)

inline void write_feature_table(const FeatureTable& table, const std::string& path) {
  CsvWriter out(path);
  std::vector<std::string> header{"unit_id"};
  header.insert(header.end(), table.feature_names.begin(), table.feature_names.end());
  out.row(header);
  for (const auto& [id, values] : table.rows) {
    std::vector<std::string> row{id};
    for (double v : values) row.push_back(fmt_g17(v));
    out.row(row);
  }
  out.close();
}

inline void write_population(const PopulationTable& table, const std::string& path) {
  CsvWriter out(path);
  out.row({"unit_id", "population"});
  for (const auto& [id, count] : table.counts) out.row({id, fmt_g17(count)});
  out.close();
}

}  // namespace popbench
