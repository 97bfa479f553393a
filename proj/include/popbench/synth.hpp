#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "popbench/csv.hpp"
#include "popbench/datamodel.hpp"
#include "popbench/rng.hpp"
#include "popbench/util.hpp"

namespace popbench {

struct SynthParams {
  std::size_t n_groups = 10;
  std::size_t units_per_group = 20;
  std::size_t n_supergroups = 5;
  std::size_t embedding_dim = 16;
  std::size_t covariate_dim = 8;
  double signal_share_embeddings = 0.9;
  double signal_share_covariates = 0.1;
  double noise_sd = 0.5;
  std::uint64_t seed = 0;
};

struct SynthBundle {
  std::string boundaries;
  std::string embeddings;
  std::string covariates;
  std::string population;
  std::string places;
  std::string geocoder_fixture;
  std::string config;
};

namespace detail {

constexpr std::size_t kSynthLatentDim = 3;
constexpr double kSynthCellDeg = 0.1;

inline std::string synth_id(const char* fmt, std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), fmt, k);
  return buf;
}

inline std::vector<std::string> synth_covariate_names(std::size_t dim) {
  const std::vector<std::string> descriptors{"night_lights", "built_fraction", "built_volume",
                                             "building_density", "dist_highway"};
  std::vector<std::string> names;
  for (std::size_t j = 0; j < dim; ++j) {
    if (j < descriptors.size()) {
      names.push_back(descriptors[j]);
    } else {
      names.push_back(synth_id("cov_%02zu", j));
    }
  }
  return names;
}

inline std::vector<std::string> synth_embedding_names(std::size_t dim) {
  std::vector<std::string> names;
  for (std::size_t j = 0; j < dim; ++j) names.push_back(synth_id("emb_%03zu", j));
  return names;
}

inline std::vector<std::vector<double>> synth_mixing(std::uint64_t seed, const char* tag,
                                                     std::size_t dim) {
  Rng rng(derive_seed(seed, fnv1a(tag)));
  std::vector<std::vector<double>> mix(dim, std::vector<double>(kSynthLatentDim));
  for (std::size_t j = 0; j < dim; ++j) {
    for (std::size_t d = 0; d < kSynthLatentDim; ++d) mix[j][d] = rng.next_normal();
  }
  return mix;
}

}  // namespace detail

// Deterministic synthetic country: a grid of square units whose population
// and features derive from shared latent factors. Identical params produce
// byte-identical files.
inline SynthBundle synth_country(const SynthParams& params, const std::string& out_dir) {
  if (params.n_groups < 1 || params.units_per_group < 1 || params.n_supergroups < 1) {
    throw std::invalid_argument("synth_country: counts must be >= 1");
  }
  if (params.embedding_dim < 1 || params.covariate_dim < 1) {
    throw std::invalid_argument("synth_country: feature dims must be >= 1");
  }
  for (double s : {params.signal_share_embeddings, params.signal_share_covariates}) {
    if (s < 0.0 || s > 1.0) {
      throw std::invalid_argument("synth_country: signal shares must lie in [0,1]");
    }
  }
  if (params.noise_sd < 0.0) throw std::invalid_argument("synth_country: noise_sd must be >= 0");
  if (params.n_supergroups > params.n_groups) {
    throw std::invalid_argument("synth_country: more supergroups than groups");
  }
  std::size_t n_units = params.n_groups * params.units_per_group;
  if (n_units > 9999 || params.n_groups > 999) {
    throw std::invalid_argument("synth_country: generator supports at most 9999 units / 999 groups");
  }

  std::filesystem::create_directories(out_dir);
  auto path_of = [&](const char* name) {
    return (std::filesystem::path(out_dir) / name).string();
  };

  // group → supergroup dealt in contiguous runs
  std::vector<std::size_t> supergroup_of(params.n_groups);
  for (std::size_t g = 0; g < params.n_groups; ++g) {
    supergroup_of[g] = g * params.n_supergroups / params.n_groups;
  }

  // Variance budget: group effects stay small relative to unit-level latent
  // spread so held-out groups land inside the training distribution; the
  // latent->population weights keep the count skew mild. Together these make
  // fold-level metric comparisons reflect feature informativeness rather than
  // which fold drew an extreme group.
  std::vector<std::vector<double>> group_effect(params.n_groups,
                                                std::vector<double>(detail::kSynthLatentDim));
  for (std::size_t g = 0; g < params.n_groups; ++g) {
    Rng rng(derive_seed(params.seed, fnv1a("group-effect"), static_cast<std::uint64_t>(g)));
    for (auto& v : group_effect[g]) v = 0.5 * rng.next_normal();
  }

  std::size_t grid_cols = static_cast<std::size_t>(
      std::ceil(std::sqrt(static_cast<double>(n_units))));

  struct SynthUnit {
    std::string id, name, group, supergroup;
    double lon0, lat0;
    std::vector<double> z;
    double population;
  };
  std::vector<SynthUnit> units(n_units);
  const std::vector<double> pop_weights{0.7, 0.42, 0.21};
  for (std::size_t k = 0; k < n_units; ++k) {
    SynthUnit& u = units[k];
    std::size_t g = k / params.units_per_group;
    u.id = detail::synth_id("u%04zu", k);
    u.name = "Zone " + detail::synth_id("%04zu", k);
    u.group = detail::synth_id("g%03zu", g);
    u.supergroup = detail::synth_id("s%03zu", supergroup_of[g]);
    u.lon0 = static_cast<double>(k % grid_cols) * detail::kSynthCellDeg;
    u.lat0 = static_cast<double>(k / grid_cols) * detail::kSynthCellDeg;

    Rng latent(derive_seed(params.seed, fnv1a("unit-latent"), static_cast<std::uint64_t>(k)));
    u.z.resize(detail::kSynthLatentDim);
    for (std::size_t d = 0; d < detail::kSynthLatentDim; ++d) {
      u.z[d] = group_effect[g][d] + 0.7 * latent.next_normal();
    }
    Rng pop_rng(derive_seed(params.seed, fnv1a("pop-noise"), static_cast<std::uint64_t>(k)));
    double log_pop = 0.0;
    for (std::size_t d = 0; d < detail::kSynthLatentDim; ++d) log_pop += pop_weights[d] * u.z[d];
    log_pop += params.noise_sd * pop_rng.next_normal();
    // integer counts keep downstream aggregation sums exact
    u.population = static_cast<double>(std::llround(1000.0 * std::exp(log_pop)) + 1);
  }

  SynthBundle bundle;
  bundle.boundaries = path_of("boundaries.geojson");
  bundle.embeddings = path_of("embeddings.csv");
  bundle.covariates = path_of("covariates.csv");
  bundle.population = path_of("population.csv");
  bundle.places = path_of("places.csv");
  bundle.geocoder_fixture = path_of("geocode_fixture.csv");
  bundle.config = path_of("config.toml");

  {
    nlohmann::json features = nlohmann::json::array();
    for (const auto& u : units) {
      double lon1 = u.lon0 + detail::kSynthCellDeg;
      double lat1 = u.lat0 + detail::kSynthCellDeg;
      nlohmann::json ring = nlohmann::json::array();
      ring.push_back({u.lon0, u.lat0});
      ring.push_back({lon1, u.lat0});
      ring.push_back({lon1, lat1});
      ring.push_back({u.lon0, lat1});
      ring.push_back({u.lon0, u.lat0});
      nlohmann::json feature;
      feature["type"] = "Feature";
      feature["properties"] = {{"id", u.id},
                               {"name", u.name},
                               {"group_id", u.group},
                               {"supergroup_id", u.supergroup}};
      feature["geometry"] = {{"type", "Polygon"}, {"coordinates", nlohmann::json::array({ring})}};
      features.push_back(std::move(feature));
    }
    nlohmann::json doc;
    doc["type"] = "FeatureCollection";
    doc["features"] = std::move(features);
    std::ofstream out(bundle.boundaries, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + bundle.boundaries);
    out << doc.dump(1) << "\n";
    if (!out) throw std::runtime_error("write failed for " + bundle.boundaries);
  }

  auto write_family = [&](const std::string& path, const std::vector<std::string>& names,
                          const char* mix_tag, const char* noise_tag, double signal_share) {
    std::vector<std::vector<double>> mix = detail::synth_mixing(params.seed, mix_tag, names.size());
    FeatureTable table;
    table.feature_names = names;
    for (std::size_t k = 0; k < units.size(); ++k) {
      Rng noise(derive_seed(params.seed, fnv1a(noise_tag), static_cast<std::uint64_t>(k)));
      std::vector<double> row(names.size());
      for (std::size_t j = 0; j < names.size(); ++j) {
        double signal = 0.0;
        for (std::size_t d = 0; d < detail::kSynthLatentDim; ++d) {
          signal += mix[j][d] * units[k].z[d];
        }
        row[j] = signal_share * signal + (1.0 - signal_share) * noise.next_normal();
      }
      table.rows.emplace(units[k].id, std::move(row));
    }
    write_feature_table(table, path);
  };
  write_family(bundle.embeddings, detail::synth_embedding_names(params.embedding_dim), "emb-mix",
               "emb-noise", params.signal_share_embeddings);
  write_family(bundle.covariates, detail::synth_covariate_names(params.covariate_dim), "cov-mix",
               "cov-noise", params.signal_share_covariates);

  {
    PopulationTable pop;
    for (const auto& u : units) pop.counts.emplace(u.id, u.population);
    write_population(pop, bundle.population);
  }
  {
    CsvWriter out(bundle.places);
    out.row({"record_id", "name", "lon", "lat"});
    for (const auto& u : units) out.row({"p" + u.id, u.name, "", ""});
    out.close();
  }
  {
    CsvWriter out(bundle.geocoder_fixture);
    out.row({"record_id", "lon", "lat"});
    for (const auto& u : units) {
      double half = detail::kSynthCellDeg / 2.0;
      out.row({"p" + u.id, fmt_g17(u.lon0 + half), fmt_g17(u.lat0 + half)});
    }
    out.close();
  }
  {
    std::ofstream out(bundle.config, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + bundle.config);
    out << "# generated dataset bundle\n"
        << "[data]\n"
        << "boundaries = \"boundaries.geojson\"\n"
        << "embeddings = \"embeddings.csv\"\n"
        << "covariates = \"covariates.csv\"\n"
        << "population = \"population.csv\"\n"
        << "places = \"places.csv\"\n"
        << "geocoder_fixture = \"geocode_fixture.csv\"\n"
        << "country = \"SYN\"\n"
        << "\n"
        << "[run]\n"
        << "seed = " << params.seed << "\n"
        << "out_dir = \"out\"\n"
        << "iterations = 100\n";
    if (!out) throw std::runtime_error("write failed for " + bundle.config);
  }
  return bundle;
}

}  // namespace popbench
