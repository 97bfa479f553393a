#pragma once

// Shared fixtures for the test suite: scratch directories and small
// in-memory datasets with controllable signal placement.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "popbench/datamodel.hpp"
#include "popbench/rng.hpp"

namespace testutil {

inline std::filesystem::path fresh_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("popbench_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct ToyDatasetParams {
  std::size_t n_groups = 10;
  std::size_t per_group = 12;
  std::size_t emb_dim = 6;
  std::size_t cov_dim = 4;
  double emb_signal = 1.0;  // weight of the population-driving latent in embeddings
  double cov_signal = 0.0;  // same for covariates
  std::uint64_t seed = 42;
  bool with_supergroups = false;
  std::size_t n_supergroups = 5;
};

// In-memory dataset: population = round(1000·exp(z)) + 1 with z ~ N(0,1) per
// unit; each feature = signal·z + noise. No files involved.
inline popbench::Dataset toy_dataset(const ToyDatasetParams& p = {}) {
  using namespace popbench;
  Rng rng(p.seed);
  Dataset ds;
  ds.country_tag = "TOY";
  FeatureTable emb, cov;
  emb.family = FeatureFamily::kEmbeddings;
  cov.family = FeatureFamily::kCovariates;
  for (std::size_t j = 0; j < p.emb_dim; ++j) emb.feature_names.push_back("e" + std::to_string(j));
  for (std::size_t j = 0; j < p.cov_dim; ++j) cov.feature_names.push_back("c" + std::to_string(j));

  for (std::size_t g = 0; g < p.n_groups; ++g) {
    for (std::size_t k = 0; k < p.per_group; ++k) {
      AdminUnit u;
      char buf[16];
      std::snprintf(buf, sizeof(buf), "t%03zu", g * p.per_group + k);
      u.id = buf;
      u.name = u.id;
      u.group_id = "g" + std::to_string(g);
      if (p.with_supergroups) {
        u.supergroup_id = "s" + std::to_string(g * p.n_supergroups / p.n_groups);
      }
      u.area_km2 = 1.0 + static_cast<double>(k);
      double z = rng.next_normal();
      ds.population.counts[u.id] = std::llround(1000.0 * std::exp(z)) + 1;
      std::vector<double> erow(p.emb_dim), crow(p.cov_dim);
      for (std::size_t j = 0; j < p.emb_dim; ++j) {
        erow[j] = p.emb_signal * z + 0.3 * rng.next_normal();
      }
      for (std::size_t j = 0; j < p.cov_dim; ++j) {
        crow[j] = p.cov_signal * z + 0.3 * rng.next_normal();
      }
      emb.rows[u.id] = std::move(erow);
      cov.rows[u.id] = std::move(crow);
      ds.units.push_back(std::move(u));
    }
  }
  std::sort(ds.units.begin(), ds.units.end(),
            [](const AdminUnit& a, const AdminUnit& b) { return a.id < b.id; });
  ds.families[FeatureFamily::kEmbeddings] = std::move(emb);
  ds.families[FeatureFamily::kCovariates] = std::move(cov);
  ds.shares = compute_shares(ds.population);
  return ds;
}

// Closed unit-square ring at (lon0, lat0) .. (lon0+side, lat0+side).
inline std::vector<popbench::Point> square_ring(double lon0, double lat0, double side = 1.0) {
  return {{lon0, lat0},
          {lon0 + side, lat0},
          {lon0 + side, lat0 + side},
          {lon0, lat0 + side},
          {lon0, lat0}};
}

}  // namespace testutil
