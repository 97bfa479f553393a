#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "popbench/datamodel.hpp"
#include "popbench/evaluation.hpp"
#include "popbench/linkage.hpp"
#include "popbench/models.hpp"
#include "popbench/rng.hpp"
#include "popbench/splits.hpp"
#include "popbench/stats.hpp"
#include "popbench/util.hpp"

namespace popbench {

// ---------------------------------------------------------------------------
// matrix assembly

struct ColumnRef {
  FeatureFamily family = FeatureFamily::kCovariates;
  std::string name;
};

inline std::vector<ColumnRef> family_columns(const Dataset& ds, FeatureFamily family) {
  auto it = ds.families.find(family);
  if (it == ds.families.end()) {
    throw std::invalid_argument("dataset has no " + family_name(family) + " table");
  }
  std::vector<ColumnRef> cols;
  for (const auto& name : it->second.feature_names) cols.push_back({family, name});
  return cols;
}

inline TrainMatrix build_matrix(const Dataset& ds, const std::vector<ColumnRef>& cols,
                                const std::vector<UnitId>& unit_ids) {
  if (cols.empty()) throw std::invalid_argument("build_matrix: no columns selected");
  if (unit_ids.empty()) throw std::invalid_argument("build_matrix: no units selected");
  TrainMatrix m;
  m.n = unit_ids.size();
  m.p = cols.size();
  m.X.resize(m.n * m.p);
  m.y.resize(m.n);
  {
    std::set<std::string> seen;
    for (const auto& c : cols) {
      if (!seen.insert(c.name).second) {
        throw std::invalid_argument("build_matrix: duplicate feature name '" + c.name +
                                    "' across selected columns");
      }
      m.feature_names.push_back(c.name);
    }
  }

  std::vector<std::pair<const FeatureTable*, std::size_t>> sources(cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const FeatureTable& table = ds.families.at(cols[j].family);
    auto it = std::find(table.feature_names.begin(), table.feature_names.end(), cols[j].name);
    if (it == table.feature_names.end()) {
      throw std::invalid_argument("build_matrix: unknown feature '" + cols[j].name + "' in " +
                                  family_name(cols[j].family));
    }
    sources[j] = {&table, static_cast<std::size_t>(it - table.feature_names.begin())};
  }
  for (std::size_t i = 0; i < unit_ids.size(); ++i) {
    const UnitId& id = unit_ids[i];
    auto sit = ds.shares.shares.find(id);
    if (sit == ds.shares.shares.end()) {
      throw std::invalid_argument("build_matrix: unit '" + id + "' has no share");
    }
    m.y[i] = sit->second;
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const auto& rows = sources[j].first->rows;
      auto rit = rows.find(id);
      if (rit == rows.end()) {
        throw std::invalid_argument("build_matrix: unit '" + id + "' missing from " +
                                    family_name(cols[j].family));
      }
      m.X[i * m.p + j] = rit->second[sources[j].second];
    }
  }
  return m;
}

namespace detail {

struct IterationSplit {
  std::vector<UnitId> train_ids;  // sorted
  std::vector<UnitId> val_ids;    // sorted
};

inline IterationSplit split_unit_ids(const Dataset& ds, const SplitIteration& iter) {
  IterationSplit s;
  for (const auto& u : ds.units) {
    (iter.train_units.count(u.id) ? s.train_ids : s.val_ids).push_back(u.id);
  }
  if (s.train_ids.size() != iter.train_units.size()) {
    throw std::invalid_argument("split iteration references units absent from the dataset");
  }
  if (s.val_ids.empty()) throw std::invalid_argument("split iteration has an empty validation side");
  return s;
}

}  // namespace detail

inline std::uint64_t experiment_cell_seed(std::uint64_t seed, int iteration,
                                          const std::string& family_label,
                                          const std::string& model_label) {
  return derive_seed(seed, static_cast<std::uint64_t>(iteration), fnv1a(family_label),
                     fnv1a(model_label));
}

// ---------------------------------------------------------------------------
// country-level benchmark

inline std::vector<MetricRecord> run_benchmark(const Dataset& ds,
                                               const std::vector<FeatureFamily>& families,
                                               const std::vector<ModelSpec>& specs,
                                               const SplitPlan& plan, std::uint64_t seed,
                                               unsigned n_threads = 1) {
  if (families.empty() || specs.empty() || plan.iterations.empty()) {
    throw std::invalid_argument("run_benchmark: empty families, specs, or plan");
  }
  struct Cell {
    std::size_t iter_idx, family_idx, spec_idx;
  };
  std::vector<Cell> cells;
  for (std::size_t i = 0; i < plan.iterations.size(); ++i) {
    for (std::size_t f = 0; f < families.size(); ++f) {
      for (std::size_t s = 0; s < specs.size(); ++s) cells.push_back({i, f, s});
    }
  }
  std::vector<MetricRecord> records(cells.size());
  parallel_for(cells.size(), n_threads, [&](std::size_t c) {
    const Cell& cell = cells[c];
    const SplitIteration& iter = plan.iterations[cell.iter_idx];
    FeatureFamily family = families[cell.family_idx];
    const ModelSpec& spec = specs[cell.spec_idx];
    detail::IterationSplit split = detail::split_unit_ids(ds, iter);
    std::vector<ColumnRef> cols = family_columns(ds, family);
    TrainMatrix train = build_matrix(ds, cols, split.train_ids);
    TrainMatrix val = build_matrix(ds, cols, split.val_ids);
    std::uint64_t cell_seed = experiment_cell_seed(seed, iter.iteration, family_name(family),
                                                   model_kind_name(spec.kind));
    FittedModel model = fit(spec, train, cell_seed);
    std::vector<double> pred = predict(model, val.X, val.n, val.p, val.feature_names);
    PartitionMetrics pm = evaluate_partition(val.y, pred);

    MetricRecord& rec = records[c];
    rec.iteration = iter.iteration;
    rec.country_tag = ds.country_tag;
    rec.model_kind = model_kind_name(spec.kind);
    rec.family = family_name(family);
    rec.r2 = pm.r2;
    rec.kl = pm.kl;
    rec.n_val = val.n;
    rec.train_unit_frac = iter.train_unit_frac;
    rec.train_pop_frac = iter.train_pop_frac;
  });
  return records;
}

// ---------------------------------------------------------------------------
// permutation importance

struct ImportanceRecord {
  std::string family;
  std::string feature;
  std::string country;
  std::string model;
  int iteration = 0;
  double delta_r2 = 0.0;
};

struct ImportanceTable {
  std::vector<ImportanceRecord> records;
};

inline ImportanceTable permutation_importance(const Dataset& ds, FeatureFamily family,
                                              const ModelSpec& spec, const SplitPlan& plan,
                                              std::uint64_t seed, unsigned n_threads = 1) {
  if (plan.iterations.empty()) throw std::invalid_argument("permutation_importance: empty plan");
  std::vector<ColumnRef> cols = family_columns(ds, family);
  ImportanceTable table;
  table.records.resize(plan.iterations.size() * cols.size());

  parallel_for(plan.iterations.size(), n_threads, [&](std::size_t i) {
    const SplitIteration& iter = plan.iterations[i];
    detail::IterationSplit split = detail::split_unit_ids(ds, iter);
    TrainMatrix train = build_matrix(ds, cols, split.train_ids);
    TrainMatrix val = build_matrix(ds, cols, split.val_ids);
    std::uint64_t cell_seed = experiment_cell_seed(seed, iter.iteration, family_name(family),
                                                   model_kind_name(spec.kind));
    FittedModel model = fit(spec, train, cell_seed);
    std::vector<double> base_pred = predict(model, val.X, val.n, val.p, val.feature_names);
    double base_r2 = r_squared(val.y, base_pred);

    for (std::size_t j = 0; j < cols.size(); ++j) {
      std::vector<double> shuffled_col(val.n);
      for (std::size_t r = 0; r < val.n; ++r) shuffled_col[r] = val.x(r, j);
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(iter.iteration), fnv1a("permute"),
                          fnv1a(cols[j].name)));
      rng.shuffle(shuffled_col);
      std::vector<double> X = val.X;
      for (std::size_t r = 0; r < val.n; ++r) X[r * val.p + j] = shuffled_col[r];
      std::vector<double> pred = predict(model, X, val.n, val.p, val.feature_names);
      double permuted_r2 = r_squared(val.y, pred);

      ImportanceRecord& rec = table.records[i * cols.size() + j];
      rec.family = family_name(family);
      rec.feature = cols[j].name;
      rec.country = ds.country_tag;
      rec.model = model_kind_name(spec.kind);
      rec.iteration = iter.iteration;
      rec.delta_r2 = base_r2 - permuted_r2;
    }
  });
  return table;
}

// Pooled across countries and models: descending median ΔR², ties by name.
inline std::map<std::string, std::vector<std::string>> rank_features(
    const std::vector<ImportanceTable>& tables) {
  if (tables.empty()) throw std::invalid_argument("rank_features: no tables");
  std::map<std::string, std::map<std::string, std::vector<double>>> pooled;
  for (const auto& table : tables) {
    for (const auto& rec : table.records) pooled[rec.family][rec.feature].push_back(rec.delta_r2);
  }
  std::map<std::string, std::vector<std::string>> rankings;
  for (const auto& [family, features] : pooled) {
    std::vector<std::pair<double, std::string>> scored;
    for (const auto& [feature, deltas] : features) {
      std::vector<double> copy = deltas;
      scored.emplace_back(median(copy), feature);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (const auto& [score, feature] : scored) rankings[family].push_back(feature);
  }
  return rankings;
}

// ---------------------------------------------------------------------------
// feature-sufficiency ablation

struct AblationRecord {
  std::string combo;          // embeddings_only | covariates_only | combined_full_embeddings | combined_full_covariates
  std::string varied_family;  // family whose count varies along the curve
  std::size_t feature_count = 0;
  int iteration = 0;
  double r2 = 0.0;
  double kl = 0.0;
};

struct AblationGrid {
  std::vector<AblationRecord> records;
};

inline AblationGrid run_ablation(const Dataset& ds,
                                 const std::map<std::string, std::vector<std::string>>& rankings,
                                 const std::vector<std::size_t>& counts_embeddings,
                                 const std::vector<std::size_t>& counts_covariates,
                                 const SplitPlan& plan, const ModelSpec& spec, std::uint64_t seed,
                                 unsigned n_threads = 1) {
  if (plan.iterations.empty()) throw std::invalid_argument("run_ablation: empty plan");
  auto ranked = [&](const std::string& family_label) -> const std::vector<std::string>& {
    auto it = rankings.find(family_label);
    if (it == rankings.end() || it->second.empty()) {
      throw std::invalid_argument("run_ablation: no ranking for family '" + family_label + "'");
    }
    return it->second;
  };
  const std::vector<std::string>& emb_rank = ranked(family_name(FeatureFamily::kEmbeddings));
  const std::vector<std::string>& cov_rank = ranked(family_name(FeatureFamily::kCovariates));
  for (std::size_t c : counts_embeddings) {
    if (c < 1 || c > emb_rank.size()) {
      throw std::invalid_argument("run_ablation: embedding count " + std::to_string(c) +
                                  " outside 1.." + std::to_string(emb_rank.size()));
    }
  }
  for (std::size_t c : counts_covariates) {
    if (c < 1 || c > cov_rank.size()) {
      throw std::invalid_argument("run_ablation: covariate count " + std::to_string(c) +
                                  " outside 1.." + std::to_string(cov_rank.size()));
    }
  }

  auto top = [](const std::vector<std::string>& rank, std::size_t k, FeatureFamily family) {
    std::vector<ColumnRef> cols;
    for (std::size_t i = 0; i < k; ++i) cols.push_back({family, rank[i]});
    return cols;
  };

  struct Cell {
    std::string combo;
    std::string varied;
    std::size_t count;
    std::vector<ColumnRef> cols;
  };
  std::vector<Cell> cells;
  for (std::size_t c : counts_embeddings) {
    cells.push_back({"embeddings_only", family_name(FeatureFamily::kEmbeddings), c,
                     top(emb_rank, c, FeatureFamily::kEmbeddings)});
  }
  for (std::size_t c : counts_covariates) {
    cells.push_back({"covariates_only", family_name(FeatureFamily::kCovariates), c,
                     top(cov_rank, c, FeatureFamily::kCovariates)});
  }
  {
    std::vector<std::size_t> with_zero{0};
    with_zero.insert(with_zero.end(), counts_covariates.begin(), counts_covariates.end());
    for (std::size_t c : with_zero) {
      std::vector<ColumnRef> cols = top(emb_rank, emb_rank.size(), FeatureFamily::kEmbeddings);
      std::vector<ColumnRef> extra = top(cov_rank, c, FeatureFamily::kCovariates);
      cols.insert(cols.end(), extra.begin(), extra.end());
      cells.push_back({"combined_full_embeddings", family_name(FeatureFamily::kCovariates), c,
                       std::move(cols)});
    }
  }
  {
    std::vector<std::size_t> with_zero{0};
    with_zero.insert(with_zero.end(), counts_embeddings.begin(), counts_embeddings.end());
    for (std::size_t c : with_zero) {
      std::vector<ColumnRef> cols = top(cov_rank, cov_rank.size(), FeatureFamily::kCovariates);
      std::vector<ColumnRef> extra = top(emb_rank, c, FeatureFamily::kEmbeddings);
      cols.insert(cols.end(), extra.begin(), extra.end());
      cells.push_back({"combined_full_covariates", family_name(FeatureFamily::kEmbeddings), c,
                       std::move(cols)});
    }
  }

  struct Job {
    std::size_t cell_idx, iter_idx;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (std::size_t i = 0; i < plan.iterations.size(); ++i) jobs.push_back({c, i});
  }
  AblationGrid grid;
  grid.records.resize(jobs.size());
  parallel_for(jobs.size(), n_threads, [&](std::size_t k) {
    const Cell& cell = cells[jobs[k].cell_idx];
    const SplitIteration& iter = plan.iterations[jobs[k].iter_idx];
    detail::IterationSplit split = detail::split_unit_ids(ds, iter);
    TrainMatrix train = build_matrix(ds, cell.cols, split.train_ids);
    TrainMatrix val = build_matrix(ds, cell.cols, split.val_ids);
    // Seed depends on the iteration alone so cells with identical columns
    // (e.g. combined at count 0 vs the full single-family cell) match exactly.
    std::uint64_t cell_seed = derive_seed(seed, static_cast<std::uint64_t>(iter.iteration));
    FittedModel model = fit(spec, train, cell_seed);
    std::vector<double> pred = predict(model, val.X, val.n, val.p, val.feature_names);
    PartitionMetrics pm = evaluate_partition(val.y, pred);

    AblationRecord& rec = grid.records[k];
    rec.combo = cell.combo;
    rec.varied_family = cell.varied;
    rec.feature_count = cell.count;
    rec.iteration = iter.iteration;
    rec.r2 = pm.r2;
    rec.kl = pm.kl;
  });
  return grid;
}

// ---------------------------------------------------------------------------
// region descriptors

struct RegionDescriptors {
  double area_km2 = 0.0;
  double pop_density = 0.0;
  double night_lights_mean = 0.0;
  double built_fraction_mean = 0.0;
  double built_volume_mean = 0.0;
  double building_density_mean = 0.0;
  double road_accessibility = 0.0;  // negated mean distance-to-highway
  std::optional<double> pdfm_density;  // area per matched embedding record
};

struct DescriptorColumns {
  std::string night_lights = "night_lights";
  std::string built_fraction = "built_fraction";
  std::string built_volume = "built_volume";
  std::string building_density = "building_density";
  std::string dist_highway = "dist_highway";
};

inline std::map<std::string, RegionDescriptors> compute_region_descriptors(
    const Dataset& ds, const std::vector<MatchResult>& match_results,
    const DescriptorColumns& columns) {
  const FeatureTable& cov = ds.families.at(FeatureFamily::kCovariates);
  auto column_index = [&](const std::string& name) {
    auto it = std::find(cov.feature_names.begin(), cov.feature_names.end(), name);
    if (it == cov.feature_names.end()) {
      throw std::invalid_argument("descriptor column '" + name + "' missing from covariates");
    }
    return static_cast<std::size_t>(it - cov.feature_names.begin());
  };
  std::size_t j_lights = column_index(columns.night_lights);
  std::size_t j_fraction = column_index(columns.built_fraction);
  std::size_t j_volume = column_index(columns.built_volume);
  std::size_t j_density = column_index(columns.building_density);
  std::size_t j_highway = column_index(columns.dist_highway);

  std::map<std::string, std::vector<const AdminUnit*>> members;
  std::map<UnitId, std::string> group_of;
  for (const auto& u : ds.units) {
    members[u.group_id].push_back(&u);
    group_of[u.id] = u.group_id;
  }
  std::map<std::string, std::size_t> record_counts;
  for (const auto& r : match_results) {
    auto it = group_of.find(r.matched_unit);
    if (it != group_of.end()) ++record_counts[it->second];
  }

  std::map<std::string, RegionDescriptors> out;
  for (const auto& [region, units] : members) {
    RegionDescriptors d;
    std::vector<double> areas, pops;
    for (const AdminUnit* u : units) {
      areas.push_back(u->area_km2);
      pops.push_back(ds.population.counts.at(u->id));
    }
    d.area_km2 = stable_sum(areas);
    if (!(d.area_km2 > 0.0)) {
      throw std::invalid_argument("region '" + region + "' has non-positive area");
    }
    d.pop_density = stable_sum(pops) / d.area_km2;

    auto weighted_mean = [&](std::size_t col) {
      std::vector<double> wx(units.size()), w(units.size());
      for (std::size_t i = 0; i < units.size(); ++i) {
        double value = cov.rows.at(units[i]->id)[col];
        w[i] = units[i]->area_km2;
        wx[i] = w[i] * value;
      }
      double w_total = stable_sum(w);
      if (w_total > 0.0) return stable_sum(wx) / w_total;
      std::vector<double> plain(units.size());  // degenerate areas: unweighted fallback
      for (std::size_t i = 0; i < units.size(); ++i) plain[i] = cov.rows.at(units[i]->id)[col];
      return stable_sum(plain) / static_cast<double>(plain.size());
    };
    d.night_lights_mean = weighted_mean(j_lights);
    d.built_fraction_mean = weighted_mean(j_fraction);
    d.built_volume_mean = weighted_mean(j_volume);
    d.building_density_mean = weighted_mean(j_density);
    d.road_accessibility = -weighted_mean(j_highway);

    auto rc = record_counts.find(region);
    if (rc != record_counts.end() && rc->second > 0) {
      d.pdfm_density = d.area_km2 / static_cast<double>(rc->second);
    }
    out.emplace(region, d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// transferability

struct TransferRecord {
  std::string country;
  std::string region_id;
  double delta_r2 = 0.0;  // r2_embeddings − r2_covariates
  double delta_kl = 0.0;  // kl_covariates − kl_embeddings
  double r2_embeddings = 0.0;
  double r2_covariates = 0.0;
  double kl_embeddings = 0.0;
  double kl_covariates = 0.0;
  std::size_t n_val = 0;
  std::optional<RegionDescriptors> descriptors;
};

struct TransferSkip {
  std::string country;
  std::string region_id;
  std::string reason;
};

struct TransferResult {
  std::vector<TransferRecord> records;
  std::vector<TransferSkip> skipped;
};

struct TransferInput {
  Dataset dataset;
  std::map<std::string, RegionDescriptors> descriptors;  // by region; may be empty
};

namespace detail {

struct FamilyEval {
  bool ok = false;
  std::string error;
  PartitionMetrics metrics;
};

inline FamilyEval eval_family_fold(const Dataset& train_source, const Dataset& eval_source,
                                   const std::vector<UnitId>& train_ids,
                                   const std::vector<UnitId>& val_ids, FeatureFamily family,
                                   const ModelSpec& spec, std::uint64_t cell_seed) {
  FamilyEval out;
  try {
    std::vector<ColumnRef> cols = family_columns(eval_source, family);
    TrainMatrix train = build_matrix(train_source, cols, train_ids);
    TrainMatrix val = build_matrix(eval_source, cols, val_ids);
    FittedModel model = fit(spec, train, cell_seed);
    std::vector<double> pred = predict(model, val.X, val.n, val.p, val.feature_names);
    out.metrics = evaluate_partition(val.y, pred);
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

}  // namespace detail

// Leave-one-region-out transfer comparison. Training stays within each
// country unless pooled_training is set, in which case all countries' other
// regions train the fold (feature schemas must agree).
inline TransferResult run_transferability(const std::vector<TransferInput>& inputs,
                                          const ModelSpec& rf_spec, std::uint64_t seed,
                                          bool pooled_training = false, unsigned n_threads = 1) {
  if (inputs.empty()) throw std::invalid_argument("run_transferability: no inputs");
  for (const auto& in : inputs) {
    if (!in.dataset.families.count(FeatureFamily::kEmbeddings) ||
        !in.dataset.families.count(FeatureFamily::kCovariates)) {
      throw std::invalid_argument("run_transferability: dataset '" + in.dataset.country_tag +
                                  "' lacks a feature family");
    }
  }

  // Pooled training joins rows across countries, so schemas must agree.
  Dataset pooled;
  if (pooled_training) {
    pooled.country_tag = "pooled";
    for (FeatureFamily family : {FeatureFamily::kEmbeddings, FeatureFamily::kCovariates}) {
      FeatureTable merged;
      merged.family = family;
      merged.feature_names = inputs.front().dataset.families.at(family).feature_names;
      pooled.families.emplace(family, std::move(merged));
    }
    for (const auto& in : inputs) {
      for (FeatureFamily family : {FeatureFamily::kEmbeddings, FeatureFamily::kCovariates}) {
        const FeatureTable& src = in.dataset.families.at(family);
        FeatureTable& dst = pooled.families.at(family);
        if (src.feature_names != dst.feature_names) {
          throw std::invalid_argument("pooled training requires identical " +
                                      family_name(family) + " schemas across countries");
        }
        for (const auto& [id, row] : src.rows) {
          if (!dst.rows.emplace(id, row).second) {
            throw std::invalid_argument("pooled training: duplicate unit id '" + id +
                                        "' across countries");
          }
        }
      }
      for (const auto& u : in.dataset.units) pooled.units.push_back(u);
      for (const auto& [id, share] : in.dataset.shares.shares) {
        pooled.shares.shares.emplace(id, share);
      }
      for (const auto& [id, count] : in.dataset.population.counts) {
        pooled.population.counts.emplace(id, count);
      }
    }
    std::sort(pooled.units.begin(), pooled.units.end(),
              [](const AdminUnit& a, const AdminUnit& b) { return a.id < b.id; });
  }

  struct Fold {
    std::size_t input_idx;
    std::string region;
    std::vector<UnitId> train_ids;
    std::vector<UnitId> val_ids;
  };
  std::vector<Fold> folds;
  for (std::size_t d = 0; d < inputs.size(); ++d) {
    GroupedIndex index = make_grouped_index(inputs[d].dataset.units);
    if (index.groups.size() < 2) {
      throw std::invalid_argument("run_transferability: dataset '" +
                                  inputs[d].dataset.country_tag + "' has fewer than 2 regions");
    }
    for (const auto& [region, val_ids] : index.groups) {
      Fold fold;
      fold.input_idx = d;
      fold.region = region;
      fold.val_ids = val_ids;
      if (pooled_training) {
        std::set<UnitId> held(val_ids.begin(), val_ids.end());
        for (const auto& u : pooled.units) {
          if (!held.count(u.id)) fold.train_ids.push_back(u.id);
        }
      } else {
        for (const auto& [g, ids] : index.groups) {
          if (g == region) continue;
          fold.train_ids.insert(fold.train_ids.end(), ids.begin(), ids.end());
        }
      }
      folds.push_back(std::move(fold));
    }
  }

  struct FoldOutcome {
    bool skipped = false;
    TransferSkip skip;
    TransferRecord record;
  };
  std::vector<FoldOutcome> outcomes(folds.size());
  parallel_for(folds.size(), n_threads, [&](std::size_t k) {
    const Fold& fold = folds[k];
    const TransferInput& input = inputs[fold.input_idx];
    FoldOutcome& out = outcomes[k];
    if (fold.val_ids.size() < 2) {
      out.skipped = true;
      out.skip = {input.dataset.country_tag, fold.region,
                  "validation region has fewer than 2 units"};
      return;
    }
    const Dataset& train_source = pooled_training ? pooled : input.dataset;
    std::map<FeatureFamily, detail::FamilyEval> evals;
    for (FeatureFamily family : {FeatureFamily::kEmbeddings, FeatureFamily::kCovariates}) {
      std::uint64_t cell_seed = derive_seed(seed, fnv1a(input.dataset.country_tag),
                                            fnv1a(fold.region), fnv1a(family_name(family)));
      evals[family] = detail::eval_family_fold(train_source, input.dataset, fold.train_ids,
                                               fold.val_ids, family, rf_spec, cell_seed);
    }
    for (const auto& [family, ev] : evals) {
      if (!ev.ok) {
        out.skipped = true;
        out.skip = {input.dataset.country_tag, fold.region,
                    family_name(family) + " evaluation failed: " + ev.error};
        return;
      }
    }
    const PartitionMetrics& emb = evals.at(FeatureFamily::kEmbeddings).metrics;
    const PartitionMetrics& cov = evals.at(FeatureFamily::kCovariates).metrics;
    TransferRecord& rec = out.record;
    rec.country = input.dataset.country_tag;
    rec.region_id = fold.region;
    rec.r2_embeddings = emb.r2;
    rec.r2_covariates = cov.r2;
    rec.kl_embeddings = emb.kl;
    rec.kl_covariates = cov.kl;
    rec.delta_r2 = emb.r2 - cov.r2;
    rec.delta_kl = cov.kl - emb.kl;
    rec.n_val = fold.val_ids.size();
    auto dit = input.descriptors.find(fold.region);
    if (dit != input.descriptors.end()) rec.descriptors = dit->second;
  });

  TransferResult result;
  for (auto& out : outcomes) {
    if (out.skipped) {
      result.skipped.push_back(std::move(out.skip));
    } else {
      result.records.push_back(std::move(out.record));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// univariate OLS on z-scored descriptors

struct OlsFit {
  double estimate = 0.0;
  double std_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_value = 0.0;
  std::size_t n = 0;
};

inline OlsFit ols_univariate(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("ols_univariate: length mismatch");
  if (x.size() < 3) throw std::invalid_argument("ols_univariate: need at least 3 points");
  std::size_t n = x.size();
  double dn = static_cast<double>(n);
  double x_mean = stable_sum(x) / dn;
  std::vector<double> dev_sq(n);
  for (std::size_t i = 0; i < n; ++i) dev_sq[i] = (x[i] - x_mean) * (x[i] - x_mean);
  double sample_var = stable_sum(dev_sq) / (dn - 1.0);
  if (!(sample_var > 0.0)) throw std::invalid_argument("ols_univariate: x has zero variance");
  double sd = std::sqrt(sample_var);

  std::vector<double> xz(n);
  for (std::size_t i = 0; i < n; ++i) xz[i] = (x[i] - x_mean) / sd;
  double y_mean = stable_sum(y) / dn;
  std::vector<double> sxy(n), sxx(n);
  for (std::size_t i = 0; i < n; ++i) {
    sxy[i] = xz[i] * (y[i] - y_mean);
    sxx[i] = xz[i] * xz[i];
  }
  double s_xx = stable_sum(sxx);  // xz already has mean 0
  double slope = stable_sum(sxy) / s_xx;
  double intercept = y_mean;

  std::vector<double> res_sq(n);
  for (std::size_t i = 0; i < n; ++i) {
    double r = y[i] - intercept - slope * xz[i];
    res_sq[i] = r * r;
  }
  double rss = stable_sum(res_sq);
  double df = dn - 2.0;
  double se = std::sqrt(std::max(rss, 0.0) / df / s_xx);

  OlsFit fit;
  fit.estimate = slope;
  fit.std_error = se;
  fit.n = n;
  if (se > 0.0) {
    double t_crit = t_quantile(0.975, df);
    fit.ci_low = slope - t_crit * se;
    fit.ci_high = slope + t_crit * se;
    fit.p_value = t_two_sided_p(slope / se, df);
  } else {  // exact fit convention
    fit.ci_low = fit.ci_high = slope;
    fit.p_value = slope == 0.0 ? 1.0 : 0.0;
  }
  return fit;
}

// ---------------------------------------------------------------------------
// aggregation + sensitivity

enum class AggregationLevel { kGroup, kSupergroup };

enum class Aggregator { kSum, kMean, kAreaWeightedMean, kPopWeightedMean };

struct AggregationRules {
  std::map<FeatureFamily, Aggregator> family_rules{
      {FeatureFamily::kEmbeddings, Aggregator::kMean},
      {FeatureFamily::kCovariates, Aggregator::kAreaWeightedMean}};
};

inline Dataset aggregate_dataset(const Dataset& ds, AggregationLevel to_level,
                                 const AggregationRules& rules = {}) {
  std::map<std::string, std::vector<const AdminUnit*>> members;
  for (const auto& u : ds.units) {
    if (to_level == AggregationLevel::kSupergroup) {
      if (!u.supergroup_id) {
        throw std::invalid_argument("aggregate_dataset: unit '" + u.id + "' has no supergroup_id");
      }
      members[*u.supergroup_id].push_back(&u);
    } else {
      members[u.group_id].push_back(&u);
    }
  }

  Dataset out;
  out.country_tag = ds.country_tag;
  for (const auto& [new_id, units] : members) {
    AdminUnit agg;
    agg.id = new_id;
    agg.name = new_id;
    if (to_level == AggregationLevel::kGroup) {
      // The old supergroup becomes the new grouping; units lacking one group
      // by themselves so a downstream grouped index still works.
      std::optional<std::string> super;
      bool first = true;
      for (const AdminUnit* u : units) {
        if (first) {
          super = u->supergroup_id;
          first = false;
        } else if (u->supergroup_id != super) {
          throw std::invalid_argument("aggregate_dataset: group '" + new_id +
                                      "' spans multiple supergroups");
        }
      }
      agg.group_id = super ? *super : new_id;
    } else {
      agg.group_id = new_id;
    }
    std::vector<double> areas, pops;
    for (const AdminUnit* u : units) {
      areas.push_back(u->area_km2);
      pops.push_back(ds.population.counts.at(u->id));
    }
    agg.area_km2 = stable_sum(areas);
    out.units.push_back(agg);
    out.population.counts.emplace(new_id, stable_sum(pops));
  }

  for (const auto& [family, table] : ds.families) {
    auto rit = rules.family_rules.find(family);
    Aggregator agg_rule = rit != rules.family_rules.end()
                              ? rit->second
                              : (family == FeatureFamily::kEmbeddings ? Aggregator::kMean
                                                                      : Aggregator::kAreaWeightedMean);
    FeatureTable agg_table;
    agg_table.family = family;
    agg_table.feature_names = table.feature_names;
    for (const auto& [new_id, units] : members) {
      std::vector<double> row(table.feature_names.size());
      for (std::size_t j = 0; j < table.feature_names.size(); ++j) {
        std::vector<double> vals(units.size()), weights(units.size());
        for (std::size_t i = 0; i < units.size(); ++i) {
          auto mit = table.rows.find(units[i]->id);
          if (mit == table.rows.end()) {
            throw std::invalid_argument("aggregate_dataset: unit '" + units[i]->id +
                                        "' missing from " + family_name(family));
          }
          vals[i] = mit->second[j];
          switch (agg_rule) {
            case Aggregator::kAreaWeightedMean: weights[i] = units[i]->area_km2; break;
            case Aggregator::kPopWeightedMean:
              weights[i] = ds.population.counts.at(units[i]->id);
              break;
            default: weights[i] = 1.0; break;
          }
        }
        if (agg_rule == Aggregator::kSum) {
          row[j] = stable_sum(vals);
          continue;
        }
        double w_total = stable_sum(weights);
        if (w_total > 0.0) {
          std::vector<double> wx(vals.size());
          for (std::size_t i = 0; i < vals.size(); ++i) wx[i] = weights[i] * vals[i];
          row[j] = stable_sum(wx) / w_total;
        } else {  // all weights zero: unweighted fallback
          row[j] = stable_sum(vals) / static_cast<double>(vals.size());
        }
      }
      agg_table.rows.emplace(new_id, std::move(row));
    }
    out.families.emplace(family, std::move(agg_table));
  }

  std::sort(out.units.begin(), out.units.end(),
            [](const AdminUnit& a, const AdminUnit& b) { return a.id < b.id; });
  out.shares = compute_shares(out.population);
  return out;
}

struct SensitivityResult {
  std::vector<MetricRecord> metrics;
  std::vector<TransferRecord> transfers;
  std::vector<TransferSkip> skipped;
};

// Aggregates to the group level, then leave-one-supergroup-out RF comparison.
inline SensitivityResult run_sensitivity(const Dataset& ds, const ModelSpec& rf_spec,
                                         const AggregationRules& rules, std::uint64_t seed,
                                         unsigned n_threads = 1) {
  for (const auto& u : ds.units) {
    if (!u.supergroup_id) {
      throw std::invalid_argument("run_sensitivity: unit '" + u.id + "' has no supergroup_id");
    }
  }
  Dataset agg = aggregate_dataset(ds, AggregationLevel::kGroup, rules);
  TransferInput input;
  input.dataset = agg;
  TransferResult transfer = run_transferability({input}, rf_spec, seed, false, n_threads);

  SensitivityResult result;
  result.transfers = transfer.records;
  result.skipped = transfer.skipped;

  GroupedIndex index = make_grouped_index(agg.units);
  double total_units = static_cast<double>(index.n_units());
  std::map<std::string, std::size_t> region_sizes;
  for (const auto& [g, ids] : index.groups) region_sizes[g] = ids.size();
  std::map<std::string, double> region_shares;
  for (const auto& [g, ids] : index.groups) {
    std::vector<double> s;
    for (const auto& id : ids) s.push_back(agg.shares.shares.at(id));
    region_shares[g] = stable_sum(s);
  }

  int fold = 0;
  for (const auto& rec : transfer.records) {
    double val_units = static_cast<double>(region_sizes.at(rec.region_id));
    double unit_frac = (total_units - val_units) / total_units;
    double pop_frac = 1.0 - region_shares.at(rec.region_id);
    for (FeatureFamily family : {FeatureFamily::kEmbeddings, FeatureFamily::kCovariates}) {
      MetricRecord m;
      m.iteration = fold;
      m.country_tag = agg.country_tag;
      m.model_kind = model_kind_name(rf_spec.kind);
      m.family = family_name(family);
      m.r2 = family == FeatureFamily::kEmbeddings ? rec.r2_embeddings : rec.r2_covariates;
      m.kl = family == FeatureFamily::kEmbeddings ? rec.kl_embeddings : rec.kl_covariates;
      m.n_val = rec.n_val;
      m.train_unit_frac = unit_frac;
      m.train_pop_frac = pop_frac;
      result.metrics.push_back(m);
    }
    ++fold;
  }
  return result;
}

}  // namespace popbench
