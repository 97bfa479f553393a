#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace popbench {

using UnitId = std::string;

inline constexpr double kEarthRadiusKm = 6371.0088;
inline constexpr double kAdjacencyTolDeg = 1e-9;

struct Point {
  double lon = 0.0;
  double lat = 0.0;
};

inline void validate_point(const Point& p) {
  if (!std::isfinite(p.lon) || !std::isfinite(p.lat) || p.lon < -180.0 || p.lon > 180.0 ||
      p.lat < -90.0 || p.lat > 90.0) {
    throw std::invalid_argument("point outside lon/lat range");
  }
}

// rings[0] is the exterior, the rest are holes; rings are closed (first == last)
struct Polygon {
  std::vector<std::vector<Point>> rings;
};

using MultiPolygon = std::vector<Polygon>;

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

inline double haversine_km(const Point& a, const Point& b) {
  double lat1 = deg2rad(a.lat), lat2 = deg2rad(b.lat);
  double dlat = lat2 - lat1;
  double dlon = deg2rad(b.lon - a.lon);
  double s = std::sin(dlat / 2);
  double t = std::sin(dlon / 2);
  double h = s * s + std::cos(lat1) * std::cos(lat2) * t * t;
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

namespace detail {

inline void validate_ring(const std::vector<Point>& ring) {
  if (ring.size() < 4) throw std::invalid_argument("ring needs at least 4 points");
  if (ring.front().lon != ring.back().lon || ring.front().lat != ring.back().lat) {
    throw std::invalid_argument("ring is not closed");
  }
  for (const auto& p : ring) validate_point(p);
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    if (std::abs(ring[i + 1].lon - ring[i].lon) > 180.0) {
      throw std::invalid_argument("antimeridian-crossing polygons are unsupported");
    }
  }
}

inline double ring_signed_area(const std::vector<Point>& ring) {
  double a = 0.0;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    a += ring[i].lon * ring[i + 1].lat - ring[i + 1].lon * ring[i].lat;
  }
  return 0.5 * a;
}

inline bool point_on_ring(const Point& p, const std::vector<Point>& ring) {
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    const Point& a = ring[i];
    const Point& b = ring[i + 1];
    double cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
    if (cross != 0.0) continue;
    if (p.lon < std::min(a.lon, b.lon) || p.lon > std::max(a.lon, b.lon)) continue;
    if (p.lat < std::min(a.lat, b.lat) || p.lat > std::max(a.lat, b.lat)) continue;
    return true;
  }
  return false;
}

inline bool ray_parity(const Point& p, const std::vector<Point>& ring) {
  bool inside = false;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    const Point& a = ring[i];
    const Point& b = ring[i + 1];
    if ((a.lat > p.lat) != (b.lat > p.lat)) {
      double x = a.lon + (b.lon - a.lon) * (p.lat - a.lat) / (b.lat - a.lat);
      if (p.lon < x) inside = !inside;
    }
  }
  return inside;
}

inline std::array<double, 3> unit_vec(const Point& p) {
  double lon = deg2rad(p.lon), lat = deg2rad(p.lat);
  return {std::cos(lat) * std::cos(lon), std::cos(lat) * std::sin(lon), std::sin(lat)};
}

// signed solid angle of the spherical triangle (a, b, c), Oosterom-Strackee
inline double triangle_solid_angle(const std::array<double, 3>& a, const std::array<double, 3>& b,
                                   const std::array<double, 3>& c) {
  double triple = a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) +
                  a[2] * (b[0] * c[1] - b[1] * c[0]);
  double dab = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
  double dbc = b[0] * c[0] + b[1] * c[1] + b[2] * c[2];
  double dca = c[0] * a[0] + c[1] * a[1] + c[2] * a[2];
  return 2.0 * std::atan2(triple, 1.0 + dab + dbc + dca);
}

inline double ring_solid_angle(const std::vector<Point>& ring) {
  auto v0 = unit_vec(ring[0]);
  double omega = 0.0;
  for (std::size_t i = 1; i + 2 < ring.size(); ++i) {
    omega += triangle_solid_angle(v0, unit_vec(ring[i]), unit_vec(ring[i + 1]));
  }
  return std::abs(omega);
}

}  // namespace detail

inline void validate_polygon(const Polygon& poly) {
  if (poly.rings.empty()) throw std::invalid_argument("polygon has no rings");
  for (const auto& ring : poly.rings) detail::validate_ring(ring);
}

// Ray-casting parity over all rings; holes subtract. Points exactly on any
// ring edge count as inside.
inline bool point_in_polygon(const Point& p, const Polygon& poly) {
  for (const auto& ring : poly.rings) {
    if (detail::point_on_ring(p, ring)) return true;
  }
  bool inside = false;
  for (const auto& ring : poly.rings) {
    if (detail::ray_parity(p, ring)) inside = !inside;
  }
  return inside;
}

inline bool point_in_multipolygon(const Point& p, const MultiPolygon& mp) {
  for (const auto& poly : mp) {
    if (point_in_polygon(p, poly)) return true;
  }
  return false;
}

// Planar shoelace centroid in lon/lat, exterior minus holes.
inline Point centroid(const Polygon& poly) {
  double area_acc = 0.0, cx = 0.0, cy = 0.0;
  for (std::size_t r = 0; r < poly.rings.size(); ++r) {
    const auto& ring = poly.rings[r];
    double a = detail::ring_signed_area(ring);
    double rx = 0.0, ry = 0.0;
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
      double w = ring[i].lon * ring[i + 1].lat - ring[i + 1].lon * ring[i].lat;
      rx += (ring[i].lon + ring[i + 1].lon) * w;
      ry += (ring[i].lat + ring[i + 1].lat) * w;
    }
    double sign = (r == 0) ? 1.0 : -1.0;
    double mag = std::abs(a);
    if (mag == 0.0) continue;
    // rx/(6a) is the ring centroid; weight by unsigned area with hole sign
    cx += sign * rx / (6.0 * a) * mag;
    cy += sign * ry / (6.0 * a) * mag;
    area_acc += sign * mag;
  }
  if (area_acc == 0.0) throw std::invalid_argument("zero-area polygon has no centroid");
  return {cx / area_acc, cy / area_acc};
}

inline Point centroid(const MultiPolygon& mp) {
  double area_acc = 0.0, cx = 0.0, cy = 0.0;
  for (const auto& poly : mp) {
    double a = std::abs(detail::ring_signed_area(poly.rings[0]));
    for (std::size_t r = 1; r < poly.rings.size(); ++r) {
      a -= std::abs(detail::ring_signed_area(poly.rings[r]));
    }
    if (a <= 0.0) continue;
    Point c = centroid(poly);
    cx += c.lon * a;
    cy += c.lat * a;
    area_acc += a;
  }
  if (area_acc == 0.0) throw std::invalid_argument("zero-area multipolygon has no centroid");
  return {cx / area_acc, cy / area_acc};
}

// Spherical-excess area on the R = 6371.0088 km sphere, holes subtracted.
inline double spherical_area_km2(const Polygon& poly) {
  double omega = detail::ring_solid_angle(poly.rings[0]);
  for (std::size_t r = 1; r < poly.rings.size(); ++r) {
    omega -= detail::ring_solid_angle(poly.rings[r]);
  }
  return std::max(0.0, omega) * kEarthRadiusKm * kEarthRadiusKm;
}

inline double spherical_area_km2(const MultiPolygon& mp) {
  double total = 0.0;
  for (const auto& poly : mp) total += spherical_area_km2(poly);
  return total;
}

struct BoundingBox {
  double min_lon = std::numeric_limits<double>::infinity();
  double min_lat = std::numeric_limits<double>::infinity();
  double max_lon = -std::numeric_limits<double>::infinity();
  double max_lat = -std::numeric_limits<double>::infinity();

  bool contains(const Point& p) const {
    return p.lon >= min_lon && p.lon <= max_lon && p.lat >= min_lat && p.lat <= max_lat;
  }
};

inline BoundingBox bounding_box(const MultiPolygon& mp) {
  BoundingBox box;
  for (const auto& poly : mp) {
    for (const auto& ring : poly.rings) {
      for (const auto& p : ring) {
        box.min_lon = std::min(box.min_lon, p.lon);
        box.min_lat = std::min(box.min_lat, p.lat);
        box.max_lon = std::max(box.max_lon, p.lon);
        box.max_lat = std::max(box.max_lat, p.lat);
      }
    }
  }
  return box;
}

// Admin polygons plus the caches the linkage candidate search needs.
// Immutable once build_adjacency has run.
struct GeometrySet {
  std::map<UnitId, MultiPolygon> polygons;
  std::map<UnitId, std::set<UnitId>> adjacency;
  std::map<UnitId, double> area_km2;
  std::map<UnitId, Point> centroids;
  std::map<UnitId, BoundingBox> boxes;
};

inline std::map<UnitId, std::set<UnitId>> build_adjacency(GeometrySet& set);

inline GeometrySet make_geometry_set(std::map<UnitId, MultiPolygon> polygons) {
  GeometrySet set;
  for (auto& [id, mp] : polygons) {
    for (const auto& poly : mp) validate_polygon(poly);
    set.area_km2[id] = spherical_area_km2(mp);
    set.centroids[id] = centroid(mp);
    set.boxes[id] = bounding_box(mp);
  }
  set.polygons = std::move(polygons);
  build_adjacency(set);
  return set;
}

// Containing polygon if any (smallest spherical area wins on overlap),
// otherwise nearest centroid by haversine. Ties break to the lexicographically
// smallest id.
inline UnitId nearest_polygon(const Point& p, const GeometrySet& set) {
  if (set.polygons.empty()) throw std::invalid_argument("nearest_polygon on empty geometry set");
  const UnitId* best_contain = nullptr;
  double best_area = 0.0;
  for (const auto& [id, mp] : set.polygons) {
    if (!set.boxes.at(id).contains(p)) continue;
    if (!point_in_multipolygon(p, mp)) continue;
    double area = set.area_km2.at(id);
    if (best_contain == nullptr || area < best_area) {
      best_contain = &id;
      best_area = area;
    }
  }
  if (best_contain != nullptr) return *best_contain;
  const UnitId* best = nullptr;
  double best_dist = 0.0;
  for (const auto& [id, c] : set.centroids) {
    double d = haversine_km(p, c);
    if (best == nullptr || d < best_dist) {
      best = &id;
      best_dist = d;
    }
  }
  return *best;
}

// Two units are adjacent iff they share a vertex within 1e-9 degrees on both
// axes. Sorted sweep over all vertices; symmetric, irreflexive.
inline std::map<UnitId, std::set<UnitId>> build_adjacency(GeometrySet& set) {
  struct Vertex {
    double lon, lat;
    std::size_t unit;
  };
  std::vector<UnitId> ids;
  ids.reserve(set.polygons.size());
  std::vector<Vertex> verts;
  for (const auto& [id, mp] : set.polygons) {
    std::size_t unit = ids.size();
    ids.push_back(id);
    for (const auto& poly : mp) {
      for (const auto& ring : poly.rings) {
        for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
          verts.push_back({ring[i].lon, ring[i].lat, unit});
        }
      }
    }
  }
  std::sort(verts.begin(), verts.end(), [](const Vertex& a, const Vertex& b) {
    if (a.lon != b.lon) return a.lon < b.lon;
    return a.lat < b.lat;
  });
  std::map<UnitId, std::set<UnitId>> adj;
  for (const auto& id : ids) adj[id];
  for (std::size_t i = 0; i < verts.size(); ++i) {
    for (std::size_t j = i + 1; j < verts.size(); ++j) {
      if (verts[j].lon - verts[i].lon > kAdjacencyTolDeg) break;
      if (verts[i].unit == verts[j].unit) continue;
      if (std::abs(verts[j].lat - verts[i].lat) > kAdjacencyTolDeg) continue;
      adj[ids[verts[i].unit]].insert(ids[verts[j].unit]);
      adj[ids[verts[j].unit]].insert(ids[verts[i].unit]);
    }
  }
  set.adjacency = adj;
  return adj;
}

}  // namespace popbench
