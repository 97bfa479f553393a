// Acceptance gate: one PASS/FAIL line per criterion, exit 0 only if all pass.
// Each criterion is phrased as an observable behavior of the library and is
// checked against an oracle computed independently inside this file.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "popbench/popbench.hpp"

using namespace popbench;
using testutil::fresh_dir;
using testutil::read_file;
using testutil::toy_dataset;
using testutil::ToyDatasetParams;
using testutil::write_file;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& msg) {
  if (!cond) throw Failure(msg);
}

void require_close(double got, double want, double tol, const std::string& what) {
  if (!(std::abs(got - want) <= tol)) {
    std::ostringstream os;
    os.precision(17);
    os << what << ": got " << got << ", want " << want << " +/- " << tol;
    throw Failure(os.str());
  }
}

TrainMatrix make_matrix(const std::vector<std::vector<double>>& rows, std::vector<double> y) {
  TrainMatrix m;
  m.n = rows.size();
  m.p = rows.empty() ? 0 : rows[0].size();
  for (const auto& r : rows) m.X.insert(m.X.end(), r.begin(), r.end());
  m.y = std::move(y);
  for (std::size_t j = 0; j < m.p; ++j) m.feature_names.push_back("f" + std::to_string(j));
  return m;
}

// Least squares via the normal equations on [1 X], solved with
// partial-pivoting Gaussian elimination. Independent of the library solver.
std::vector<double> normal_equation_fit(const TrainMatrix& m) {
  std::size_t q = m.p + 1;
  std::vector<double> A(q * q, 0.0), b(q, 0.0), z(q);
  for (std::size_t i = 0; i < m.n; ++i) {
    z[0] = 1.0;
    for (std::size_t j = 0; j < m.p; ++j) z[j + 1] = m.x(i, j);
    for (std::size_t r = 0; r < q; ++r) {
      b[r] += z[r] * m.y[i];
      for (std::size_t c = 0; c < q; ++c) A[r * q + c] += z[r] * z[c];
    }
  }
  for (std::size_t col = 0; col < q; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < q; ++r) {
      if (std::abs(A[r * q + col]) > std::abs(A[pivot * q + col])) pivot = r;
    }
    require(std::abs(A[pivot * q + col]) > 1e-10, "normal equations: singular system");
    if (pivot != col) {
      for (std::size_t c = 0; c < q; ++c) std::swap(A[pivot * q + c], A[col * q + c]);
      std::swap(b[pivot], b[col]);
    }
    for (std::size_t r = col + 1; r < q; ++r) {
      double f = A[r * q + col] / A[col * q + col];
      for (std::size_t c = col; c < q; ++c) A[r * q + c] -= f * A[col * q + c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(q, 0.0);
  for (std::size_t r = q; r-- > 0;) {
    double s = b[r];
    for (std::size_t c = r + 1; c < q; ++c) s -= A[r * q + c] * x[c];
    x[r] = s / A[r * q + r];
  }
  return x;
}

double vec_median(std::vector<double> v) { return median(v); }

// Runs the CLI in-process with stdout/stderr suppressed.
int quiet_cli(std::vector<std::string> args) {
  std::vector<char*> argv;
  argv.reserve(args.size());
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream sink_out, sink_err;
  std::streambuf* old_out = std::cout.rdbuf(sink_out.rdbuf());
  std::streambuf* old_err = std::cerr.rdbuf(sink_err.rdbuf());
  int code = cli_main(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  return code;
}

// A 5x4 grid of unit squares with distinct single-word names.
struct Grid20 {
  std::vector<AdminUnit> units;
  GeometrySet geoms;
  std::vector<std::string> names;

  Grid20() {
    names = {"arden",  "briar",  "coval",  "dunmore", "elkin",  "farrow", "gable",
             "hollis", "inverl", "jasper", "keldon",  "larkin", "mirfield", "norwood",
             "ostley", "penrose", "quarry", "rathlin", "selwick", "tarbet"};
    std::map<UnitId, MultiPolygon> polys;
    for (int k = 0; k < 20; ++k) {
      int col = k % 5, row = k / 5;
      char id[8];
      std::snprintf(id, sizeof id, "u%02d", k);
      AdminUnit u;
      u.id = id;
      u.name = names[static_cast<std::size_t>(k)];
      u.group_id = "g";
      u.area_km2 = 1.0;
      units.push_back(u);
      Polygon cell;
      cell.rings.push_back(testutil::square_ring(col, row));
      polys[u.id] = MultiPolygon{cell};
    }
    geoms = make_geometry_set(std::move(polys));
  }

  static PlaceRecord place(const std::string& id, const std::string& name, double lon,
                           double lat) {
    PlaceRecord r;
    r.record_id = id;
    r.raw_name = name;
    r.coordinates = Point{lon, lat};
    return r;
  }
};

// Synthetic bundle loaded back through the standard ingestion path.
struct LoadedBundle {
  std::filesystem::path dir;
  Config cfg;
  CountryBundle country;
  std::uint64_t seed = 0;
};

LoadedBundle load_synth(const std::string& tag, const SynthParams& params) {
  LoadedBundle out;
  out.dir = fresh_dir(tag);
  synth_country(params, out.dir.string());
  out.cfg = parse_config((out.dir / "config.toml").string());
  out.country = load_country(out.cfg, out.dir);
  out.seed = out.cfg.get_u64("run.seed");
  return out;
}

// Cheap four-group bundle plus a low-iteration run config, for CLI pipelines.
std::filesystem::path cli_bundle(const std::string& tag, std::uint64_t seed) {
  auto dir = fresh_dir(tag);
  SynthParams p;
  p.n_groups = 4;
  p.units_per_group = 5;
  p.n_supergroups = 2;
  p.embedding_dim = 5;
  p.covariate_dim = 5;
  p.seed = seed;
  synth_country(p, dir.string());
  write_file(dir / "run.toml",
             "[data]\n"
             "boundaries = \"boundaries.geojson\"\n"
             "embeddings = \"embeddings.csv\"\n"
             "covariates = \"covariates.csv\"\n"
             "population = \"population.csv\"\n"
             "places = \"places.csv\"\n"
             "geocoder_fixture = \"geocode_fixture.csv\"\n"
             "country = \"SYNA\"\n"
             "\n"
             "[run]\n"
             "seed = " + std::to_string(seed) + "\n"
             "iterations = 3\n"
             "\n"
             "[models]\n"
             "run = [\"random_forest\"]\n"
             "rf_trees = 12\n"
             "\n"
             "[splits]\n"
             "pop_frac_min = 0.2\n"
             "pop_frac_max = 0.95\n"
             "\n"
             "[ablation]\n"
             "counts_embeddings = [1, 2]\n"
             "counts_covariates = [1, 2]\n"
             "iterations = 2\n");
  return dir;
}

// ---------------------------------------------------------------------------
// criterion bodies

void criterion_metric_oracles() {
  require_close(r_squared({1, 2, 3}, {1, 2, 3}), 1.0, 1e-15, "perfect predictions");
  require_close(r_squared({1, 2, 3}, {2, 2, 2}), 0.0, 1e-15, "mean predictions");
  require_close(r_squared({1, 2, 3}, {1, 2, 5}), -1.0, 1e-9, "worse-than-mean predictions");

  require_close(kl_divergence({0.5, 0.5}, {0.9, 0.1}), 0.5 * std::log(25.0 / 9.0), 1e-9,
                "KL of (.5,.5) vs (.9,.1)");
  require_close(kl_divergence({0.5, 0.5}, {0.9, 0.1}), 0.51083, 1e-5, "KL rounded value");
  require_close(kl_divergence({1, 0}, {0.5, 0.5}), std::log(2.0), 1e-9,
                "KL with a zero observed share");
  double forward = kl_divergence({0.5, 0.5}, {0.9, 0.1});
  double backward = kl_divergence({0.9, 0.1}, {0.5, 0.5});
  require(std::abs(forward - backward) > 0.1, "KL should be asymmetric on this pair");

  Rng rng(20240501);
  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t n = 2 + rng.next_below(10);
    std::vector<double> p(n), q(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = std::abs(rng.next_normal()) + 1e-3;
      q[i] = std::abs(rng.next_normal()) + 1e-3;
    }
    double kl = kl_divergence(p, q);
    require(kl >= 0.0, "KL must be non-negative");
    require(kl_divergence(p, p) == 0.0, "KL of a distribution with itself must be zero");
    double p_total = stable_sum(p), q_total = stable_sum(q);
    double max_gap = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      max_gap = std::max(max_gap, std::abs(p[i] / p_total - q[i] / q_total));
    }
    if (max_gap > 1e-6) require(kl > 0.0, "KL must be positive for distinct distributions");
  }
}

void criterion_mass_preservation() {
  Rng rng(777);
  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t n = 2 + rng.next_below(40);
    std::vector<double> raw(n);
    for (double& v : raw) v = rng.next_normal();  // negatives included
    double target = 0.05 + 3.0 * rng.next_unit();
    std::vector<double> scaled = rescale_predictions(raw, target);
    double total = stable_sum(scaled);
    require(std::abs(total - target) <= 1e-12 * target,
            "rescaled predictions must sum to the target total");
    for (double v : scaled) require(v > 0.0, "rescaled predictions must be positive");
  }

  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t n = 2 + rng.next_below(30);
    std::vector<double> obs(n), raw(n), raw_scaled(n);
    for (std::size_t i = 0; i < n; ++i) {
      obs[i] = std::abs(rng.next_normal()) + 1e-3;
      raw[i] = std::abs(rng.next_normal()) + 0.01;
    }
    double c = std::exp(2.0 * rng.next_normal());
    c = std::min(std::max(c, 0.1), 10.0);
    for (std::size_t i = 0; i < n; ++i) raw_scaled[i] = c * raw[i];
    PartitionMetrics a = evaluate_partition(obs, raw);
    PartitionMetrics b = evaluate_partition(obs, raw_scaled);
    require(std::abs(a.kl - b.kl) <= 1e-12,
            "KL must be invariant to positive scaling of raw predictions");
  }
}

void criterion_elastic_net_closed_form() {
  Rng rng(4242);
  const std::vector<double> beta = {2.0, -1.0, 0.5, 0.0, 3.0};
  for (int trial = 0; trial < 50; ++trial) {
    TrainMatrix m;
    m.n = 20;
    m.p = 5;
    m.X.resize(m.n * m.p);
    m.y.resize(m.n);
    for (std::size_t j = 0; j < m.p; ++j) m.feature_names.push_back("f" + std::to_string(j));
    for (std::size_t i = 0; i < m.n; ++i) {
      double dot = 1.5;
      for (std::size_t j = 0; j < m.p; ++j) {
        double v = rng.next_normal();
        m.X[i * m.p + j] = v;
        dot += beta[j] * v;
      }
      m.y[i] = dot + 0.1 * rng.next_normal();
    }
    ElasticNetParams hp;
    hp.lambda_override = 0.0;
    hp.tol = 1e-12;
    ElasticNetModel fit = fit_elastic_net(m, hp, 1);
    std::vector<double> ols = normal_equation_fit(m);
    require_close(fit.intercept, ols[0], 1e-6, "zero-penalty intercept, trial " +
                                                   std::to_string(trial));
    for (std::size_t j = 0; j < m.p; ++j) {
      require_close(fit.coefficients[j], ols[j + 1], 1e-6,
                    "zero-penalty coefficient " + std::to_string(j) + ", trial " +
                        std::to_string(trial));
    }
  }

  // Single standardized predictor: the coordinate update has a closed form
  // soft(rho, lambda*alpha) / (1 + lambda*(1-alpha)).
  ElasticNetParams hp;
  hp.lambda_override = 1.0;  // alpha 0.5 -> l1 = l2 = 0.5
  TrainMatrix shrunk = make_matrix({{-1}, {1}, {-1}, {1}}, {0, 0.6, 0, 0.6});
  ElasticNetModel zero = fit_elastic_net(shrunk, hp, 1);
  require(zero.coefficients[0] == 0.0, "rho below the l1 threshold must give a zero coefficient");
  require_close(zero.intercept, 0.3, 1e-10, "intercept of the fully shrunk fit");
  TrainMatrix live_m = make_matrix({{-1}, {1}, {-1}, {1}}, {0, 1.4, 0, 1.4});
  ElasticNetModel live = fit_elastic_net(live_m, hp, 1);
  require_close(live.coefficients[0], 0.2 / 1.5, 1e-10, "soft-threshold coefficient");
  require_close(live.intercept, 0.7, 1e-10, "soft-threshold intercept");
}

void criterion_tree_ensembles() {
  Rng rng(909);
  for (int trial = 0; trial < 20; ++trial) {
    TrainMatrix m;
    m.n = 100;
    m.p = 5;
    m.X.resize(m.n * m.p);
    m.y.resize(m.n);
    for (std::size_t j = 0; j < m.p; ++j) m.feature_names.push_back("f" + std::to_string(j));
    for (std::size_t i = 0; i < m.n; ++i) {
      double dot = 3.0;
      for (std::size_t j = 0; j < m.p; ++j) {
        double v = rng.next_normal();
        m.X[i * m.p + j] = v;
        dot += (j % 2 ? -1.0 : 1.0) * (1.0 + 0.5 * static_cast<double>(j)) * v;
      }
      m.y[i] = dot + 0.3 * rng.next_normal();
    }
    GradientBoostingParams hp;  // 500 rounds
    hp.row_subsample = 1.0;
    GradientBoostingModel gbt = fit_gradient_boosting(m, hp, 100 + trial);
    require(gbt.trees.size() == 500, "boosting must fit one tree per round");

    std::vector<double> pred(m.n, gbt.base_score);
    std::vector<double> sq(m.n);
    auto sse = [&] {
      for (std::size_t i = 0; i < m.n; ++i) {
        double e = pred[i] - m.y[i];
        sq[i] = e * e;
      }
      return stable_sum(sq);
    };
    double prev = sse();
    for (std::size_t t = 0; t < gbt.trees.size(); ++t) {
      for (std::size_t i = 0; i < m.n; ++i) pred[i] += gbt.trees[t].eval(m.row(i));
      double now = sse();
      require(now <= prev + 1e-12 * std::max(1.0, prev),
              "training error rose at round " + std::to_string(t) + " of trial " +
                  std::to_string(trial));
      prev = now;
    }
  }

  // Step-function target: hard for a linear model, easy for a forest.
  TrainMatrix steps;
  steps.n = 500;
  steps.p = 1;
  steps.feature_names = {"x"};
  steps.X.resize(steps.n);
  steps.y.resize(steps.n);
  for (std::size_t i = 0; i < steps.n; ++i) {
    steps.X[i] = static_cast<double>(i);
    steps.y[i] = static_cast<double>(i / 100);  // five flat levels
  }
  FittedModel rf = fit(ModelSpec::random_forest(), steps, 2718);  // 499 trees
  std::vector<double> pred = predict(rf, steps.X, steps.n, steps.p, steps.feature_names);
  double r2 = r_squared(steps.y, pred);
  require(r2 >= 0.95, "forest in-sample R2 on the step target was " + std::to_string(r2));
}

void criterion_split_constraints() {
  SynthParams params;  // 10 groups, 200 units
  params.seed = 555;
  LoadedBundle bundle = load_synth("accept_splits", params);
  const Dataset& ds = bundle.country.dataset;
  GroupedIndex index = make_grouped_index(ds.units);
  SplitConstraints c;  // default windows

  SplitPlan one = monte_carlo_splits(index, ds.shares, c, 100, bundle.seed, 1);
  require(one.iterations.size() == 100, "plan must have one entry per iteration");
  for (const auto& it : one.iterations) {
    require(it.train_unit_frac >= 0.60 && it.train_unit_frac <= 0.80,
            "unit fraction outside [0.60, 0.80] at iteration " + std::to_string(it.iteration));
    require(it.train_pop_frac >= 0.65 && it.train_pop_frac <= 0.75,
            "population fraction outside [0.65, 0.75] at iteration " +
                std::to_string(it.iteration));
    require(it.train_groups.size() == 7, "70% of 10 groups must be 7 groups");
  }

  SplitPlan eight = monte_carlo_splits(index, ds.shares, c, 100, bundle.seed, 8);
  require(eight.iterations.size() == one.iterations.size(), "thread-count changed the plan size");
  for (std::size_t i = 0; i < one.iterations.size(); ++i) {
    const auto& a = one.iterations[i];
    const auto& b = eight.iterations[i];
    require(a.train_groups == b.train_groups && a.train_units == b.train_units &&
                a.train_unit_frac == b.train_unit_frac && a.train_pop_frac == b.train_pop_frac,
            "iteration " + std::to_string(i) + " differs between 1 and 8 threads");
  }
}

void criterion_linkage() {
  MatchConfig cfg;
  require_close(jaro("martha", "marhta"), 0.94444, 1e-5, "jaro(martha, marhta)");
  require_close(jaro_winkler("martha", "marhta", cfg), 0.96111, 1e-5, "jw(martha, marhta)");
  require_close(jaro_winkler("dwayne", "duane", cfg), 0.84000, 1e-5, "jw(dwayne, duane)");

  Grid20 grid;
  // Each record sits at the center of its cell but is named after its right
  // neighbour (last column: after itself).
  std::vector<PlaceRecord> records;
  for (int k = 0; k < 20; ++k) {
    int col = k % 5, row = k / 5;
    int named_after = col < 4 ? k + 1 : k;
    records.push_back(Grid20::place("r" + std::to_string(k),
                                    grid.names[static_cast<std::size_t>(named_after)],
                                    col + 0.5, row + 0.5));
  }
  MatchConfig zero_margin = cfg;
  zero_margin.similarity_margin = 0.0;
  MatchBatch by_name = match_all(records, grid.geoms, grid.units, zero_margin);
  MatchConfig inf_margin = cfg;
  inf_margin.similarity_margin = std::numeric_limits<double>::infinity();
  MatchBatch by_place = match_all(records, grid.geoms, grid.units, inf_margin);
  for (int k = 0; k < 20; ++k) {
    int col = k % 5;
    int named_after = col < 4 ? k + 1 : k;
    require(by_name.results[static_cast<std::size_t>(k)].matched_unit ==
                grid.units[static_cast<std::size_t>(named_after)].id,
            "zero margin: any name edge must move record " + std::to_string(k));
    require(by_place.results[static_cast<std::size_t>(k)].matched_unit ==
                grid.units[static_cast<std::size_t>(k)].id,
            "infinite margin: the containing cell must keep record " + std::to_string(k));
    if (named_after != k) {
      require(by_name.results[static_cast<std::size_t>(k)].name_similarity == 1.0,
              "zero margin: the exact-name neighbour must score 1.0");
    }
  }

  // QA flags: planted misspellings and out-of-polygon points, nearest-locked.
  std::vector<PlaceRecord> qa;
  for (int k = 0; k < 20; ++k) {
    int col = k % 5, row = k / 5;
    qa.push_back(Grid20::place("c" + std::to_string(k),
                               grid.names[static_cast<std::size_t>(k)], col + 0.5, row + 0.5));
  }
  qa.push_back(Grid20::place("low", "xq zv wf", 2.5, 1.5));      // inside u07, garbled name
  qa.push_back(Grid20::place("out", grid.names[0], -0.7, 0.35)); // left of u00, exact name
  qa.push_back(Grid20::place("both", "xq zv wf", -0.7, 3.6));    // left of u15, garbled
  MatchBatch batch = match_all(qa, grid.geoms, grid.units, inf_margin);

  std::size_t n_low = 0, n_out = 0, n_both = 0;
  std::map<std::string, const MatchResult*> by_id;
  for (const auto& r : batch.results) {
    by_id[r.record_id] = &r;
    bool low = r.has_flag(MatchFlag::kLowSimilarity);
    bool outside = r.has_flag(MatchFlag::kOutsidePolygon);
    require(low == (r.name_similarity < cfg.low_similarity_threshold),
            "low-similarity flag must mirror the threshold rule for " + r.record_id);
    const AdminUnit* unit = nullptr;
    for (const auto& u : grid.units) {
      if (u.id == r.matched_unit) unit = &u;
    }
    require(unit != nullptr, "matched unit must exist");
    const PlaceRecord* rec = nullptr;
    for (const auto& q : qa) {
      if (q.record_id == r.record_id) rec = &q;
    }
    bool inside = point_in_multipolygon(*rec->coordinates, grid.geoms.polygons.at(unit->id));
    require(outside == !inside, "outside-polygon flag must mirror containment for " +
                                    r.record_id);
    n_low += low;
    n_out += outside;
    n_both += low && outside;
  }
  require(by_id.at("low")->matched_unit == "u07", "garbled in-cell record must stay put");
  require(by_id.at("out")->matched_unit == "u00", "offset record must match the nearest cell");
  require(by_id.at("both")->matched_unit == "u15", "offset garbled record must match nearest");
  require(batch.summary.n_low_similarity == n_low && n_low == 2, "low-similarity count");
  require(batch.summary.n_outside_polygon == n_out && n_out == 2, "outside-polygon count");
  require(batch.summary.n_both == n_both && n_both == 1, "both-flags count");
}

void criterion_importance() {
  // A feature that is constant on the training side of a fold is never used
  // by the forest, so permuting it must change nothing: delta exactly 0.
  Dataset ds;
  ds.country_tag = "DEAD";
  FeatureTable emb;
  emb.family = FeatureFamily::kEmbeddings;
  emb.feature_names = {"dead", "sig"};
  Rng rng(5);
  int k = 0;
  for (const std::string& g : {"gA", "gB", "gC"}) {
    for (int i = 0; i < 6; ++i) {
      AdminUnit u;
      u.id = "u" + std::to_string(10 + k++);
      u.name = u.id;
      u.group_id = g;
      u.area_km2 = 1.0;
      double z = rng.next_normal();
      ds.population.counts[u.id] = std::llround(1000.0 * std::exp(z)) + 1;
      emb.rows[u.id] = {g == "gC" ? rng.next_normal() : 0.0, z};
      ds.units.push_back(std::move(u));
    }
  }
  std::sort(ds.units.begin(), ds.units.end(),
            [](const AdminUnit& a, const AdminUnit& b) { return a.id < b.id; });
  ds.families[FeatureFamily::kEmbeddings] = std::move(emb);
  ds.shares = compute_shares(ds.population);

  SplitPlan logo = leave_one_group_out(make_grouped_index(ds.units), ds.shares);
  ModelSpec spec = ModelSpec::random_forest();
  spec.rf.n_trees = 50;
  spec.rf.mtry = 2;
  ImportanceTable dead_table = permutation_importance(ds, FeatureFamily::kEmbeddings, spec,
                                                      logo, 31);
  bool saw_dead = false;
  for (const auto& rec : dead_table.records) {
    if (rec.iteration == 2 && rec.feature == "dead") {  // the leave-gC-out fold
      require(rec.delta_r2 == 0.0, "unused feature must score exactly zero");
      saw_dead = true;
    }
  }
  require(saw_dead, "expected an importance record for the dead feature");

  // A lone informative feature keeps a strictly positive median over 100
  // Monte Carlo iterations.
  ToyDatasetParams p;
  p.emb_dim = 1;
  Dataset stump = toy_dataset(p);
  SplitPlan plan = monte_carlo_splits(make_grouped_index(stump.units), stump.shares,
                                      SplitConstraints{}, 100, 3);
  ImportanceTable table = permutation_importance(stump, FeatureFamily::kEmbeddings,
                                                 ModelSpec::random_forest(), plan, 17);
  require(table.records.size() == 100, "one record per iteration expected");
  std::vector<double> deltas;
  for (const auto& rec : table.records) deltas.push_back(rec.delta_r2);
  require(vec_median(deltas) > 0.0, "median importance of the lone signal must be positive");
}

void criterion_ols() {
  OlsFit f = ols_univariate({1, 2, 3}, {1, 2, 4});
  double se = std::sqrt(1.0 / 12.0);
  double t = 1.5 / se;
  require_close(f.estimate, 1.5, 1e-9, "slope");
  require_close(f.std_error, se, 1e-9, "standard error");
  require_close(f.p_value, 1.0 - 2.0 * std::atan(t) / M_PI, 1e-9, "p-value (t with df=1)");
  double t_crit = std::tan(0.475 * M_PI);
  require_close(f.ci_low, 1.5 - t_crit * se, 1e-9, "CI lower bound");
  require_close(f.ci_high, 1.5 + t_crit * se, 1e-9, "CI upper bound");
  require(f.n == 3, "n recorded on the fit");

  auto dir = fresh_dir("accept_ols");
  OlsRow row;
  row.scope = "pooled";
  row.metric = "delta_r2";
  row.variable = "area_km2";
  row.fit = f;
  write_ols_csv({row}, (dir / "ols.csv").string());
  CsvTable csv = read_csv((dir / "ols.csv").string());
  std::vector<std::string> want = {"scope",  "metric",  "variable",  "estimate",
                                   "ci_low", "ci_high", "std_error", "p_value"};
  require(csv.header == want, "ols.csv column set");
}

void run_discrimination(double emb_share, double cov_share, const std::string& tag,
                        bool embeddings_should_win) {
  SynthParams params;  // 200 units, 10 groups, 16+8 features
  params.signal_share_embeddings = emb_share;
  params.signal_share_covariates = cov_share;
  params.seed = 7771;
  LoadedBundle bundle = load_synth(tag, params);
  const Dataset& ds = bundle.country.dataset;
  SplitPlan plan = monte_carlo_splits(make_grouped_index(ds.units), ds.shares,
                                      SplitConstraints{}, 100, bundle.seed);
  std::vector<MetricRecord> records =
      run_benchmark(ds, {FeatureFamily::kEmbeddings, FeatureFamily::kCovariates},
                    all_model_specs(), plan, bundle.seed);
  require(records.size() == 100 * 2 * 3, "expected one record per iteration/family/model");

  std::map<std::string, std::map<std::string, std::vector<double>>> r2s;  // model -> family
  std::map<int, std::map<std::string, double>> rf_by_iter;                // iter -> family r2
  for (const auto& r : records) {
    r2s[r.model_kind][r.family].push_back(r.r2);
    if (r.model_kind == "random_forest") rf_by_iter[r.iteration][r.family] = r.r2;
  }
  for (const auto& [model, fams] : r2s) {
    double emb_med = vec_median(fams.at("embeddings"));
    double cov_med = vec_median(fams.at("covariates"));
    bool emb_won = emb_med > cov_med;
    require(emb_won == embeddings_should_win,
            tag + ": " + model + " medians (embeddings " + std::to_string(emb_med) +
                ", covariates " + std::to_string(cov_med) + ") on the wrong side");
  }
  int favorable = 0;
  for (const auto& [iter, fams] : rf_by_iter) {
    double delta = fams.at("embeddings") - fams.at("covariates");
    if (embeddings_should_win ? delta > 0.0 : delta < 0.0) ++favorable;
  }
  require(static_cast<int>(rf_by_iter.size()) == 100, "expected 100 forest iterations");
  require(favorable >= 90, tag + ": the stronger family won only " + std::to_string(favorable) +
                               "/100 forest iterations");
}

void criterion_end_to_end() {
  run_discrimination(0.9, 0.1, "accept_e2e_emb", true);
  run_discrimination(0.1, 0.9, "accept_e2e_cov", false);
}

void criterion_aggregation() {
  SynthParams params;  // 10 groups over 5 supergroups
  params.seed = 31;
  LoadedBundle bundle = load_synth("accept_agg", params);
  const Dataset& ds = bundle.country.dataset;

  Dataset grouped = aggregate_dataset(ds, AggregationLevel::kGroup);
  require(grouped.units.size() == 10, "group-level dataset must have one unit per group");
  require(grouped.population.total() == ds.population.total(),
          "aggregation must conserve total population exactly");

  ModelSpec rf = ModelSpec::random_forest();
  rf.rf.n_trees = 60;
  SensitivityResult result = run_sensitivity(ds, rf, AggregationRules{}, bundle.seed);
  require(result.skipped.empty(), "no supergroup fold should be skipped");
  require(result.transfers.size() == 5, "one fold per supergroup expected");
  require(result.metrics.size() == 10, "each fold must carry both family records");
  std::set<std::string> regions;
  for (std::size_t f = 0; f < result.transfers.size(); ++f) {
    const TransferRecord& t = result.transfers[f];
    regions.insert(t.region_id);
    require(t.n_val == 2, "each supergroup holds two groups");
    require(std::isfinite(t.r2_embeddings) && std::isfinite(t.r2_covariates) &&
                std::isfinite(t.kl_embeddings) && std::isfinite(t.kl_covariates),
            "fold metrics must be finite");
    require(t.delta_r2 == t.r2_embeddings - t.r2_covariates,
            "delta R2 must be the family difference");
    require(t.delta_kl == t.kl_covariates - t.kl_embeddings,
            "delta KL must favor lower embedding divergence");
    const MetricRecord& emb = result.metrics[2 * f];
    const MetricRecord& cov = result.metrics[2 * f + 1];
    require(emb.family == "embeddings" && cov.family == "covariates",
            "fold records must come in family pairs");
    require(emb.r2 == t.r2_embeddings && cov.r2 == t.r2_covariates,
            "per-fold metric records must match the transfer record");
  }
  require(regions.size() == 5, "fold regions must be the five supergroups");
}

void criterion_reproducibility() {
  auto dir = cli_bundle("accept_repro", 30);
  std::string cfg = (dir / "run.toml").string();
  auto run_pipeline = [&](const std::string& out) {
    for (const char* sub : {"benchmark", "importance", "ablate", "transfer"}) {
      int code = quiet_cli({"popbench", sub, "--config", cfg, "--out-dir", out});
      require(code == 0, std::string(sub) + " exited with code " + std::to_string(code));
    }
  };
  std::string out_a = (dir / "out_a").string();
  std::string out_b = (dir / "out_b").string();
  run_pipeline(out_a);
  run_pipeline(out_b);
  for (const char* name : {"metrics.csv", "splits.csv", "importance.csv", "ablation.csv",
                           "transfer.csv", "ols.csv"}) {
    std::string a = read_file(out_a + "/" + name);
    std::string b = read_file(out_b + "/" + name);
    require(!a.empty(), std::string(name) + " must not be empty");
    require(a == b, std::string(name) + " differs between identical runs");
  }
}

}  // namespace

int main() {
  struct Criterion {
    std::string label;
    std::function<void()> body;
  };
  const std::vector<Criterion> criteria = {
      {"R2/KL hand oracles; KL non-negative and zero iff equal", criterion_metric_oracles},
      {"mass-preserving rescale; KL invariant to positive scaling", criterion_mass_preservation},
      {"elastic net at zero penalty matches normal equations", criterion_elastic_net_closed_form},
      {"boosting error monotone; forest fits a step function", criterion_tree_ensembles},
      {"split windows hold on every iteration; thread invariant", criterion_split_constraints},
      {"name-similarity oracles, margin limits, QA flag invariants", criterion_linkage},
      {"unused feature importance exactly zero; lone signal positive", criterion_importance},
      {"univariate OLS closed forms and regression CSV schema", criterion_ols},
      {"synthetic end to end: stronger family wins, swap reverses", criterion_end_to_end},
      {"aggregation conserves population; one fold per supergroup", criterion_aggregation},
      {"repeat runs produce byte-identical result CSVs", criterion_reproducibility},
  };

  bool all_ok = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    auto start = std::chrono::steady_clock::now();
    std::string failure;
    try {
      criteria[i].body();
    } catch (const std::exception& e) {
      failure = e.what();
      all_ok = false;
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s  %2zu/11  %s (%.1fs)%s%s\n", failure.empty() ? "PASS" : "FAIL", i + 1,
                criteria[i].label.c_str(), secs, failure.empty() ? "" : " — ",
                failure.c_str());
    std::fflush(stdout);
  }
  std::printf("%s\n", all_ok ? "acceptance: all criteria passed" : "acceptance: FAILURES above");
  return all_ok ? 0 : 1;
}
