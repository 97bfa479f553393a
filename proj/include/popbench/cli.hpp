#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "popbench/analysis.hpp"
#include "popbench/config.hpp"
#include "popbench/datamodel.hpp"
#include "popbench/evaluation.hpp"
#include "popbench/linkage.hpp"
#include "popbench/models.hpp"
#include "popbench/report.hpp"
#include "popbench/splits.hpp"
#include "popbench/synth.hpp"
#include "popbench/util.hpp"

namespace popbench {

// Raised for bad inputs (config, paths, dataset consistency): exit code 1.
// Anything else escaping a command is a runtime failure: exit code 2.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

// Setup work (parsing configs, loading inputs) reports failures as exit 1.
template <class F>
decltype(auto) setup_phase(F&& f) {
  try {
    return f();
  } catch (const ValidationError&) {
    throw;
  } catch (const std::exception& e) {
    throw ValidationError(e.what());
  }
}

}  // namespace detail

inline unsigned resolve_threads(int flag) {
  if (flag > 0) return static_cast<unsigned>(flag);
  if (const char* env = std::getenv("POPBENCH_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v <= 0) {
      throw ValidationError("POPBENCH_THREADS must be a positive integer, got '" +
                            std::string(env) + "'");
    }
    return static_cast<unsigned>(v);
  }
  return default_thread_count();
}

inline std::string resolve_path(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_absolute()) return path.string();
  return (base / path).string();
}

struct CommandContext {
  Config cfg;
  std::filesystem::path config_dir;
  std::string out_dir;
  std::uint64_t seed = 0;
  int iterations = 0;
  unsigned threads = 1;
};

inline CommandContext make_context(const std::string& config_path, const std::string& out_override,
                                   int threads_flag, bool create_out = true) {
  return detail::setup_phase([&] {
    CommandContext ctx;
    ctx.cfg = parse_config(config_path);
    ctx.config_dir = std::filesystem::absolute(config_path).parent_path();
    if (!ctx.cfg.has("run.seed")) {
      throw ValidationError(config_path + ": config must set run.seed (no wall-clock default)");
    }
    ctx.seed = ctx.cfg.get_u64("run.seed");
    std::string out = out_override.empty() ? ctx.cfg.get_string_or("run.out_dir", "out")
                                           : out_override;
    ctx.out_dir = out_override.empty() ? resolve_path(ctx.config_dir, out) : out;
    ctx.iterations = static_cast<int>(ctx.cfg.get_int_or("run.iterations", 100));
    if (ctx.iterations < 1) throw ValidationError("run.iterations must be >= 1");
    ctx.threads = resolve_threads(threads_flag);
    if (create_out) std::filesystem::create_directories(ctx.out_dir);
    return ctx;
  });
}

struct CountryBundle {
  std::string country;
  BoundaryData boundaries;
  Dataset dataset;
  JoinReport report;
  std::string places_path;   // empty when not configured
  std::string fixture_path;  // empty when not configured
};

inline CountryBundle load_country(const Config& cfg, const std::filesystem::path& dir) {
  return detail::setup_phase([&] {
    for (const char* key : {"data.boundaries", "data.embeddings", "data.covariates",
                            "data.population", "data.country"}) {
      if (!cfg.has(key)) throw ValidationError(std::string("config must set ") + key);
    }
    CountryBundle bundle;
    bundle.country = cfg.get_string("data.country");
    bundle.boundaries = load_boundaries(resolve_path(dir, cfg.get_string("data.boundaries")));
    std::map<FeatureFamily, FeatureTable> families;
    families[FeatureFamily::kEmbeddings] = load_feature_table(
        resolve_path(dir, cfg.get_string("data.embeddings")), FeatureFamily::kEmbeddings);
    families[FeatureFamily::kCovariates] = load_feature_table(
        resolve_path(dir, cfg.get_string("data.covariates")), FeatureFamily::kCovariates);
    PopulationTable population =
        load_population(resolve_path(dir, cfg.get_string("data.population")));
    AssembleResult assembled =
        assemble_dataset(bundle.boundaries.units, families, population, bundle.country);
    bundle.dataset = std::move(assembled.dataset);
    bundle.report = std::move(assembled.report);
    if (cfg.has("data.places")) {
      bundle.places_path = resolve_path(dir, cfg.get_string("data.places"));
    }
    if (cfg.has("data.geocoder_fixture")) {
      bundle.fixture_path = resolve_path(dir, cfg.get_string("data.geocoder_fixture"));
    }
    return bundle;
  });
}

// ---------------------------------------------------------------------------
// config -> parameter structs

inline ModelSpec spec_from_config(const Config& cfg, const std::string& name) {
  ModelSpec spec;
  spec.kind = model_kind_from_name(name);
  spec.rf.n_trees = static_cast<int>(cfg.get_int_or("models.rf_trees", spec.rf.n_trees));
  spec.rf.min_node_size =
      static_cast<int>(cfg.get_int_or("models.rf_min_node_size", spec.rf.min_node_size));
  if (cfg.has("models.rf_mtry")) spec.rf.mtry = static_cast<int>(cfg.get_int("models.rf_mtry"));
  spec.rf.bootstrap = cfg.get_bool_or("models.rf_bootstrap", spec.rf.bootstrap);
  spec.gbt.rounds = static_cast<int>(cfg.get_int_or("models.gbt_rounds", spec.gbt.rounds));
  spec.gbt.learning_rate = cfg.get_double_or("models.gbt_learning_rate", spec.gbt.learning_rate);
  spec.gbt.max_depth = static_cast<int>(cfg.get_int_or("models.gbt_max_depth", spec.gbt.max_depth));
  spec.gbt.row_subsample = cfg.get_double_or("models.gbt_row_subsample", spec.gbt.row_subsample);
  spec.gbt.col_subsample = cfg.get_double_or("models.gbt_col_subsample", spec.gbt.col_subsample);
  spec.gbt.l2_leaf = cfg.get_double_or("models.gbt_l2", spec.gbt.l2_leaf);
  spec.gbt.gamma = cfg.get_double_or("models.gbt_gamma", spec.gbt.gamma);
  spec.gbt.min_child_weight =
      cfg.get_double_or("models.gbt_min_child_weight", spec.gbt.min_child_weight);
  spec.en.alpha = cfg.get_double_or("models.en_alpha", spec.en.alpha);
  spec.en.path_length = static_cast<int>(cfg.get_int_or("models.en_path_length", spec.en.path_length));
  spec.en.cv_folds = static_cast<int>(cfg.get_int_or("models.en_cv_folds", spec.en.cv_folds));
  spec.en.tol = cfg.get_double_or("models.en_tol", spec.en.tol);
  spec.en.max_iter = static_cast<int>(cfg.get_int_or("models.en_max_iter", spec.en.max_iter));
  return spec;
}

inline std::vector<ModelSpec> benchmark_specs(const Config& cfg) {
  std::vector<std::string> names{"random_forest", "gradient_boosting", "elastic_net"};
  if (cfg.has("models.run")) names = cfg.get_string_array("models.run");
  if (names.empty()) throw ValidationError("models.run must not be empty");
  std::vector<ModelSpec> specs;
  for (const auto& name : names) specs.push_back(spec_from_config(cfg, name));
  return specs;
}

inline SplitConstraints constraints_from_config(const Config& cfg) {
  SplitConstraints c;
  c.group_sample_frac = cfg.get_double_or("splits.train_group_frac", c.group_sample_frac);
  c.unit_frac_low = cfg.get_double_or("splits.unit_frac_min", c.unit_frac_low);
  c.unit_frac_high = cfg.get_double_or("splits.unit_frac_max", c.unit_frac_high);
  c.pop_frac_low = cfg.get_double_or("splits.pop_frac_min", c.pop_frac_low);
  c.pop_frac_high = cfg.get_double_or("splits.pop_frac_max", c.pop_frac_high);
  c.max_attempts = static_cast<int>(cfg.get_int_or("splits.max_attempts", c.max_attempts));
  return c;
}

inline MatchConfig match_config_from(const Config& cfg) {
  MatchConfig m;
  m.similarity_margin = cfg.get_double_or("linkage.similarity_margin", m.similarity_margin);
  m.low_similarity_threshold =
      cfg.get_double_or("linkage.low_similarity", m.low_similarity_threshold);
  if (cfg.has("linkage.suffixes")) m.suffix_list = cfg.get_string_array("linkage.suffixes");
  if (cfg.has("linkage.region_names")) m.region_names = cfg.get_string_array("linkage.region_names");
  return m;
}

// Default feature-count grid: powers of two up to the family dimension, then
// the full dimension.
inline std::vector<std::size_t> default_ablation_counts(std::size_t dim) {
  std::vector<std::size_t> counts;
  for (std::size_t c = 1; c < dim; c *= 2) counts.push_back(c);
  counts.push_back(dim);
  return counts;
}

inline std::vector<std::size_t> counts_from_config(const Config& cfg, const std::string& key,
                                                   std::size_t dim) {
  if (!cfg.has(key)) return default_ablation_counts(dim);
  std::vector<std::size_t> counts;
  for (double v : cfg.get_double_array(key)) {
    if (v < 1 || v != std::floor(v)) throw ValidationError(key + ": counts must be positive integers");
    counts.push_back(static_cast<std::size_t>(v));
  }
  if (counts.empty()) throw ValidationError(key + " must not be empty");
  return counts;
}

// ---------------------------------------------------------------------------
// shared pipeline pieces

inline SplitPlan build_split_plan(const CountryBundle& bundle, const CommandContext& ctx,
                                  int iterations) {
  GroupedIndex index = make_grouped_index(bundle.dataset.units);
  SplitConstraints constraints = constraints_from_config(ctx.cfg);
  return monte_carlo_splits(index, bundle.dataset.shares, constraints, iterations, ctx.seed,
                            ctx.threads);
}

inline ImportanceTable compute_importance(const CountryBundle& bundle, const CommandContext& ctx,
                                          const SplitPlan& plan) {
  std::string model = ctx.cfg.get_string_or("importance.model", "random_forest");
  ModelSpec spec = detail::setup_phase([&] { return spec_from_config(ctx.cfg, model); });
  ImportanceTable table;
  for (FeatureFamily family : {FeatureFamily::kEmbeddings, FeatureFamily::kCovariates}) {
    ImportanceTable part =
        permutation_importance(bundle.dataset, family, spec, plan, ctx.seed, ctx.threads);
    table.records.insert(table.records.end(), part.records.begin(), part.records.end());
  }
  return table;
}

inline bool has_descriptor_columns(const Dataset& ds, const DescriptorColumns& columns) {
  auto it = ds.families.find(FeatureFamily::kCovariates);
  if (it == ds.families.end()) return false;
  const auto& names = it->second.feature_names;
  auto present = [&](const std::string& name) {
    return std::find(names.begin(), names.end(), name) != names.end();
  };
  return present(columns.night_lights) && present(columns.built_fraction) &&
         present(columns.built_volume) && present(columns.building_density) &&
         present(columns.dist_highway);
}

// Runs the linkage fixture pipeline for one country when configured; the
// matches feed the per-region embedding-coverage descriptor.
inline std::vector<MatchResult> linkage_matches(const CountryBundle& bundle,
                                                const CommandContext& ctx) {
  if (bundle.places_path.empty() || bundle.fixture_path.empty()) return {};
  std::vector<PlaceRecord> places = load_places(bundle.places_path);
  FixtureGeocoder geocoder(bundle.fixture_path);
  MatchConfig match_cfg = match_config_from(ctx.cfg);
  MatchBatch batch = match_all(places, bundle.boundaries.geoms, bundle.boundaries.units, match_cfg,
                               &geocoder, ctx.threads);
  return batch.results;
}

// ---------------------------------------------------------------------------
// subcommands

inline int cmd_synth(const SynthParams& params, const std::string& out_dir) {
  SynthBundle bundle = synth_country(params, out_dir);
  std::cout << "wrote synthetic bundle:\n";
  for (const std::string* path : {&bundle.boundaries, &bundle.embeddings, &bundle.covariates,
                                  &bundle.population, &bundle.places, &bundle.geocoder_fixture,
                                  &bundle.config}) {
    std::cout << "  " << *path << "\n";
  }
  return 0;
}

inline int cmd_link(const CommandContext& ctx) {
  CountryBundle bundle = load_country(ctx.cfg, ctx.config_dir);
  if (bundle.places_path.empty() || bundle.fixture_path.empty()) {
    throw ValidationError("link requires data.places and data.geocoder_fixture in the config");
  }
  std::vector<PlaceRecord> places = detail::setup_phase([&] { return load_places(bundle.places_path); });
  FixtureGeocoder geocoder(bundle.fixture_path);
  MatchConfig match_cfg = match_config_from(ctx.cfg);
  MatchBatch batch = match_all(places, bundle.boundaries.geoms, bundle.boundaries.units, match_cfg,
                               &geocoder, ctx.threads);
  std::string out = (std::filesystem::path(ctx.out_dir) / "linkage_review.csv").string();
  write_linkage_review(batch.results, out);
  std::cout << "matched " << batch.results.size() << " records (" << batch.summary.n_low_similarity
            << " low-similarity, " << batch.summary.n_outside_polygon << " outside-polygon, "
            << batch.summary.n_both << " both)\n"
            << "wrote " << out << "\n";
  return 0;
}

inline int cmd_benchmark(const CommandContext& ctx) {
  CountryBundle bundle = load_country(ctx.cfg, ctx.config_dir);
  std::cout << bundle.report.to_string() << "\n";
  std::vector<ModelSpec> specs = detail::setup_phase([&] { return benchmark_specs(ctx.cfg); });
  SplitPlan plan = build_split_plan(bundle, ctx, ctx.iterations);
  {
    GroupedIndex index = make_grouped_index(bundle.dataset.units);
    write_split_plan(plan, index, (std::filesystem::path(ctx.out_dir) / "splits.csv").string());
  }
  std::vector<FeatureFamily> families{FeatureFamily::kEmbeddings, FeatureFamily::kCovariates};
  std::vector<MetricRecord> records =
      run_benchmark(bundle.dataset, families, specs, plan, ctx.seed, ctx.threads);
  write_metrics_csv(records, (std::filesystem::path(ctx.out_dir) / "metrics.csv").string());
  rebuild_summary_json(ctx.out_dir);
  rebuild_charts(ctx.out_dir);
  std::cout << "wrote " << records.size() << " metric rows to " << ctx.out_dir << "/metrics.csv\n";
  return 0;
}

inline int cmd_importance(const CommandContext& ctx) {
  CountryBundle bundle = load_country(ctx.cfg, ctx.config_dir);
  SplitPlan plan = build_split_plan(bundle, ctx, ctx.iterations);
  ImportanceTable table = compute_importance(bundle, ctx, plan);
  write_importance_csv(table, (std::filesystem::path(ctx.out_dir) / "importance.csv").string());
  rebuild_charts(ctx.out_dir);
  std::cout << "wrote " << table.records.size() << " importance rows to " << ctx.out_dir
            << "/importance.csv\n";
  return 0;
}

inline int cmd_ablate(const CommandContext& ctx) {
  CountryBundle bundle = load_country(ctx.cfg, ctx.config_dir);
  int iterations = static_cast<int>(ctx.cfg.get_int_or("ablation.iterations", ctx.iterations));
  SplitPlan plan = build_split_plan(bundle, ctx, iterations);

  std::string importance_path = (std::filesystem::path(ctx.out_dir) / "importance.csv").string();
  ImportanceTable table;
  if (std::filesystem::exists(importance_path)) {
    table = detail::setup_phase([&] { return read_importance_csv(importance_path); });
    std::cout << "feature ranking from " << importance_path << "\n";
  } else {
    SplitPlan rank_plan = build_split_plan(bundle, ctx, ctx.iterations);
    table = compute_importance(bundle, ctx, rank_plan);
    std::cout << "feature ranking computed in-process (no importance.csv found)\n";
  }
  std::map<std::string, std::vector<std::string>> rankings = rank_features({table});

  std::size_t emb_dim =
      bundle.dataset.families.at(FeatureFamily::kEmbeddings).feature_names.size();
  std::size_t cov_dim =
      bundle.dataset.families.at(FeatureFamily::kCovariates).feature_names.size();
  std::vector<std::size_t> counts_emb = detail::setup_phase(
      [&] { return counts_from_config(ctx.cfg, "ablation.counts_embeddings", emb_dim); });
  std::vector<std::size_t> counts_cov = detail::setup_phase(
      [&] { return counts_from_config(ctx.cfg, "ablation.counts_covariates", cov_dim); });
  std::string model = ctx.cfg.get_string_or("ablation.model", "random_forest");
  ModelSpec spec = detail::setup_phase([&] { return spec_from_config(ctx.cfg, model); });

  AblationGrid grid =
      run_ablation(bundle.dataset, rankings, counts_emb, counts_cov, plan, spec, ctx.seed,
                   ctx.threads);
  write_ablation_csv(grid, (std::filesystem::path(ctx.out_dir) / "ablation.csv").string());
  rebuild_charts(ctx.out_dir);
  std::cout << "wrote " << grid.records.size() << " ablation rows to " << ctx.out_dir
            << "/ablation.csv\n";
  return 0;
}

inline int cmd_transfer(const CommandContext& ctx, const std::vector<std::string>& config_paths) {
  std::vector<TransferInput> inputs;
  for (std::size_t i = 0; i < config_paths.size(); ++i) {
    Config cfg = i == 0 ? ctx.cfg : detail::setup_phase([&] { return parse_config(config_paths[i]); });
    std::filesystem::path dir =
        i == 0 ? ctx.config_dir : std::filesystem::absolute(config_paths[i]).parent_path();
    CountryBundle bundle = load_country(cfg, dir);
    TransferInput input;
    input.dataset = bundle.dataset;
    if (has_descriptor_columns(bundle.dataset, DescriptorColumns{})) {
      std::vector<MatchResult> matches = linkage_matches(bundle, ctx);
      input.descriptors =
          compute_region_descriptors(bundle.dataset, matches, DescriptorColumns{});
    }
    inputs.push_back(std::move(input));
  }
  ModelSpec rf_spec =
      detail::setup_phase([&] { return spec_from_config(ctx.cfg, "random_forest"); });
  bool pooled = ctx.cfg.get_bool_or("transfer.pooled_training", false);
  TransferResult result = run_transferability(inputs, rf_spec, ctx.seed, pooled, ctx.threads);

  write_transfer_csv(result.records, (std::filesystem::path(ctx.out_dir) / "transfer.csv").string());
  std::vector<OlsRow> ols = transfer_ols_rows(result.records);
  write_ols_csv(ols, (std::filesystem::path(ctx.out_dir) / "ols.csv").string());
  rebuild_charts(ctx.out_dir);
  std::cout << "wrote " << result.records.size() << " transfer folds and " << ols.size()
            << " regression rows to " << ctx.out_dir << "\n";
  for (const auto& skip : result.skipped) {
    std::cout << "skipped " << skip.country << "/" << skip.region_id << ": " << skip.reason << "\n";
  }
  return 0;
}

inline int cmd_sensitivity(const CommandContext& ctx) {
  CountryBundle bundle = load_country(ctx.cfg, ctx.config_dir);
  ModelSpec rf_spec =
      detail::setup_phase([&] { return spec_from_config(ctx.cfg, "random_forest"); });
  SensitivityResult result =
      run_sensitivity(bundle.dataset, rf_spec, AggregationRules{}, ctx.seed, ctx.threads);
  write_sensitivity_csv(result, (std::filesystem::path(ctx.out_dir) / "sensitivity.csv").string());
  rebuild_summary_json(ctx.out_dir);
  rebuild_charts(ctx.out_dir);
  std::cout << "wrote " << result.transfers.size() << " sensitivity folds to " << ctx.out_dir
            << "/sensitivity.csv\n";
  for (const auto& skip : result.skipped) {
    std::cout << "skipped " << skip.country << "/" << skip.region_id << ": " << skip.reason << "\n";
  }
  return 0;
}

inline int cmd_report(const CommandContext& ctx) {
  rebuild_summary_json(ctx.out_dir);
  rebuild_charts(ctx.out_dir);
  std::cout << "rebuilt summary.json and charts in " << ctx.out_dir << "\n";
  return 0;
}

inline int cmd_validate(const CommandContext& ctx) {
  bool all_ok = true;
  auto check = [&](const std::string& label, const std::function<std::string()>& fn) {
    try {
      std::string note = fn();
      std::cout << "ok: " << label << (note.empty() ? "" : " (" + note + ")") << "\n";
      return true;
    } catch (const std::exception& e) {
      std::cout << "FAIL: " << label << ": " << e.what() << "\n";
      all_ok = false;
      return false;
    }
  };

  std::optional<BoundaryData> boundaries;
  std::map<FeatureFamily, FeatureTable> families;
  std::optional<PopulationTable> population;

  check("config keys", [&] {
    for (const char* key : {"data.boundaries", "data.embeddings", "data.covariates",
                            "data.population", "data.country", "run.seed"}) {
      if (!ctx.cfg.has(key)) throw std::runtime_error(std::string("missing ") + key);
    }
    return std::string();
  });
  check("boundaries", [&] {
    boundaries = load_boundaries(resolve_path(ctx.config_dir, ctx.cfg.get_string("data.boundaries")));
    return std::to_string(boundaries->units.size()) + " units";
  });
  check("embeddings", [&] {
    families[FeatureFamily::kEmbeddings] = load_feature_table(
        resolve_path(ctx.config_dir, ctx.cfg.get_string("data.embeddings")),
        FeatureFamily::kEmbeddings);
    const auto& t = families.at(FeatureFamily::kEmbeddings);
    return std::to_string(t.rows.size()) + " rows x " + std::to_string(t.feature_names.size()) +
           " columns";
  });
  check("covariates", [&] {
    families[FeatureFamily::kCovariates] = load_feature_table(
        resolve_path(ctx.config_dir, ctx.cfg.get_string("data.covariates")),
        FeatureFamily::kCovariates);
    const auto& t = families.at(FeatureFamily::kCovariates);
    return std::to_string(t.rows.size()) + " rows x " + std::to_string(t.feature_names.size()) +
           " columns";
  });
  check("population", [&] {
    population =
        load_population(resolve_path(ctx.config_dir, ctx.cfg.get_string("data.population")));
    return std::to_string(population->counts.size()) + " rows, total " +
           fmt_g17(population->total());
  });

  std::optional<Dataset> dataset;
  if (boundaries && families.size() == 2 && population) {
    // Cross-source id agreement, with offending ids listed by name.
    auto id_set = [](auto begin, auto end, auto key) {
      std::set<UnitId> ids;
      for (auto it = begin; it != end; ++it) ids.insert(key(*it));
      return ids;
    };
    std::set<UnitId> boundary_ids = id_set(boundaries->units.begin(), boundaries->units.end(),
                                           [](const AdminUnit& u) { return u.id; });
    auto list_mismatch = [&](const std::string& name, const std::set<UnitId>& ids) {
      check("id agreement: " + name + " vs boundaries", [&] {
        std::vector<UnitId> extra, missing;
        for (const auto& id : ids) {
          if (!boundary_ids.count(id)) extra.push_back(id);
        }
        for (const auto& id : boundary_ids) {
          if (!ids.count(id)) missing.push_back(id);
        }
        if (extra.empty() && missing.empty()) return std::string();
        std::string msg;
        auto join_sample = [](const std::vector<UnitId>& v) {
          std::string s;
          for (std::size_t i = 0; i < v.size() && i < 8; ++i) {
            if (i) s += ", ";
            s += v[i];
          }
          if (v.size() > 8) s += ", +" + std::to_string(v.size() - 8) + " more";
          return s;
        };
        if (!extra.empty()) msg += "unknown ids: " + join_sample(extra);
        if (!missing.empty()) {
          if (!msg.empty()) msg += "; ";
          msg += "missing ids: " + join_sample(missing);
        }
        throw std::runtime_error(msg);
      });
    };
    for (const auto& [family, table] : families) {
      std::set<UnitId> ids;
      for (const auto& [id, row] : table.rows) ids.insert(id);
      list_mismatch(family_name(family), ids);
    }
    {
      std::set<UnitId> ids;
      for (const auto& [id, count] : population->counts) ids.insert(id);
      list_mismatch("population", ids);
    }
    check("join", [&] {
      AssembleResult assembled = assemble_dataset(boundaries->units, families, *population,
                                                  ctx.cfg.get_string_or("data.country", "XX"));
      dataset = std::move(assembled.dataset);
      return assembled.report.to_string();
    });
  }

  if (dataset) {
    check("split feasibility (10-attempt probe)", [&] {
      GroupedIndex index = make_grouped_index(dataset->units);
      SplitConstraints probe = constraints_from_config(ctx.cfg);
      probe.max_attempts = 10;
      SplitPlan plan = monte_carlo_splits(index, dataset->shares, probe, 1, ctx.seed);
      const SplitIteration& it = plan.iterations.at(0);
      return std::to_string(index.groups.size()) + " groups; probe iteration kept " +
             std::to_string(it.train_groups.size()) + " groups, unit fraction " +
             fmt_g17(it.train_unit_frac) + ", population fraction " + fmt_g17(it.train_pop_frac);
    });
  }

  if (ctx.cfg.has("data.places") && ctx.cfg.has("data.geocoder_fixture") && boundaries) {
    check("linkage dry run", [&] {
      std::vector<PlaceRecord> places =
          load_places(resolve_path(ctx.config_dir, ctx.cfg.get_string("data.places")));
      FixtureGeocoder geocoder(
          resolve_path(ctx.config_dir, ctx.cfg.get_string("data.geocoder_fixture")));
      MatchBatch batch = match_all(places, boundaries->geoms, boundaries->units,
                                   match_config_from(ctx.cfg), &geocoder, ctx.threads);
      return std::to_string(batch.results.size()) + " records, " +
             std::to_string(batch.summary.n_low_similarity) + " low-similarity, " +
             std::to_string(batch.summary.n_outside_polygon) + " outside-polygon";
    });
  }

  std::cout << (all_ok ? "all checks passed\n" : "validation failed\n");
  return all_ok ? 0 : 1;
}

// ---------------------------------------------------------------------------

inline int cli_main(int argc, char** argv) {
  CLI::App app{"population estimation benchmark harness"};
  app.require_subcommand(1);

  struct Common {
    std::vector<std::string> configs;
    std::string out_dir;
    int threads = 0;
  };
  std::map<std::string, Common> opts;
  auto add_common = [&](CLI::App* cmd, bool multi_config) {
    Common& c = opts[cmd->get_name()];
    auto* config_opt =
        cmd->add_option("--config", c.configs,
                        multi_config ? "run config; repeat to add more countries" : "run config");
    config_opt->required();
    if (!multi_config) config_opt->expected(1);
    cmd->add_option("--out-dir", c.out_dir, "override [run] out_dir");
    cmd->add_option("--threads", c.threads, "worker threads (default: POPBENCH_THREADS, then all cores)");
  };

  auto* link = app.add_subcommand("link", "match place records to admin units");
  add_common(link, false);
  auto* benchmark = app.add_subcommand("benchmark", "Monte Carlo model comparison");
  add_common(benchmark, false);
  auto* importance = app.add_subcommand("importance", "permutation feature importance");
  add_common(importance, false);
  auto* ablate = app.add_subcommand("ablate", "feature-count ablation curves");
  add_common(ablate, false);
  auto* transfer = app.add_subcommand("transfer", "leave-one-group-out transferability");
  add_common(transfer, true);
  auto* sensitivity = app.add_subcommand("sensitivity", "aggregation-level sensitivity");
  add_common(sensitivity, false);
  auto* report = app.add_subcommand("report", "rebuild summary.json and charts from CSVs");
  add_common(report, false);
  auto* validate = app.add_subcommand("validate", "check inputs and constraints");
  add_common(validate, false);

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset bundle");
  SynthParams synth_params;
  std::string synth_out;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_params.seed, "generator seed");
  synth->add_option("--groups", synth_params.n_groups, "number of groups");
  synth->add_option("--units-per-group", synth_params.units_per_group, "units per group");
  synth->add_option("--supergroups", synth_params.n_supergroups, "number of supergroups");
  synth->add_option("--embedding-dim", synth_params.embedding_dim, "embedding columns");
  synth->add_option("--covariate-dim", synth_params.covariate_dim, "covariate columns");
  synth->add_option("--signal-embeddings", synth_params.signal_share_embeddings,
                    "signal share in embeddings [0,1]");
  synth->add_option("--signal-covariates", synth_params.signal_share_covariates,
                    "signal share in covariates [0,1]");
  synth->add_option("--noise-sd", synth_params.noise_sd, "log-normal population noise sd");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_params, synth_out);
    for (CLI::App* cmd : {link, benchmark, importance, ablate, transfer, sensitivity, report,
                          validate}) {
      if (!cmd->parsed()) continue;
      const Common& c = opts.at(cmd->get_name());
      CommandContext ctx = make_context(c.configs.at(0), c.out_dir, c.threads,
                                        cmd->get_name() != "validate");
      if (cmd == link) return cmd_link(ctx);
      if (cmd == benchmark) return cmd_benchmark(ctx);
      if (cmd == importance) return cmd_importance(ctx);
      if (cmd == ablate) return cmd_ablate(ctx);
      if (cmd == transfer) return cmd_transfer(ctx, c.configs);
      if (cmd == sensitivity) return cmd_sensitivity(ctx);
      if (cmd == report) return cmd_report(ctx);
      if (cmd == validate) return cmd_validate(ctx);
    }
    throw ValidationError("no subcommand selected");
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace popbench
