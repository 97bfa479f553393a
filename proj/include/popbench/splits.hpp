#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "popbench/csv.hpp"
#include "popbench/datamodel.hpp"
#include "popbench/rng.hpp"
#include "popbench/util.hpp"

namespace popbench {

struct GroupedIndex {
  std::map<std::string, std::vector<UnitId>> groups;

  std::size_t n_units() const {
    std::size_t n = 0;
    for (const auto& [g, units] : groups) n += units.size();
    return n;
  }
};

inline GroupedIndex make_grouped_index(const std::vector<AdminUnit>& units) {
  GroupedIndex index;
  for (const auto& u : units) index.groups[u.group_id].push_back(u.id);
  for (auto& [g, ids] : index.groups) std::sort(ids.begin(), ids.end());
  if (index.groups.empty()) throw std::invalid_argument("make_grouped_index: no units");
  return index;
}

// Grouping by the supergroup level (e.g. state above county); units without a
// supergroup are rejected.
inline GroupedIndex make_supergrouped_index(const std::vector<AdminUnit>& units) {
  GroupedIndex index;
  for (const auto& u : units) {
    if (!u.supergroup_id) {
      throw std::invalid_argument("unit '" + u.id + "' has no supergroup_id");
    }
    index.groups[*u.supergroup_id].push_back(u.id);
  }
  for (auto& [g, ids] : index.groups) std::sort(ids.begin(), ids.end());
  if (index.groups.empty()) throw std::invalid_argument("make_supergrouped_index: no units");
  return index;
}

struct SplitConstraints {
  double group_sample_frac = 0.70;
  double unit_frac_low = 0.60;
  double unit_frac_high = 0.80;
  double pop_frac_low = 0.65;
  double pop_frac_high = 0.75;
  int max_attempts = 1000;
};

struct SplitIteration {
  int iteration = 0;
  std::set<std::string> train_groups;
  std::set<UnitId> train_units;
  double train_unit_frac = 0.0;
  double train_pop_frac = 0.0;
};

struct SplitPlan {
  std::vector<SplitIteration> iterations;
};

namespace detail {

inline double index_share_total(const GroupedIndex& index, const ShareVector& shares) {
  std::vector<double> vals;
  vals.reserve(index.n_units());
  for (const auto& [g, units] : index.groups) {
    for (const auto& id : units) {
      auto it = shares.shares.find(id);
      if (it == shares.shares.end()) {
        throw std::invalid_argument("unit '" + id + "' has no population share");
      }
      vals.push_back(it->second);
    }
  }
  double total = stable_sum(vals);
  if (!(total > 0.0)) throw std::invalid_argument("grouped units carry zero population");
  return total;
}

inline std::pair<double, double> split_fractions(const GroupedIndex& index,
                                                 const ShareVector& shares,
                                                 const std::set<std::string>& train_groups,
                                                 double share_total) {
  std::size_t n_train_units = 0;
  std::vector<double> train_shares;
  for (const auto& g : train_groups) {
    const auto& units = index.groups.at(g);
    n_train_units += units.size();
    for (const auto& id : units) train_shares.push_back(shares.shares.at(id));
  }
  double unit_frac = static_cast<double>(n_train_units) / static_cast<double>(index.n_units());
  double pop_frac = stable_sum(train_shares) / share_total;
  return {unit_frac, pop_frac};
}

}  // namespace detail

// Rejection-sampled group splits: each iteration draws ⌈group_sample_frac·G⌉
// groups from an iteration-derived stream until both acceptance windows hold.
inline SplitPlan monte_carlo_splits(const GroupedIndex& index, const ShareVector& shares,
                                    const SplitConstraints& constraints, int n_iter,
                                    std::uint64_t seed, unsigned n_threads = 1) {
  if (index.groups.size() < 3) {
    throw std::invalid_argument("monte_carlo_splits: need at least 3 groups");
  }
  if (n_iter < 1) throw std::invalid_argument("monte_carlo_splits: n_iter must be >= 1");
  if (constraints.max_attempts < 1) {
    throw std::invalid_argument("monte_carlo_splits: max_attempts must be >= 1");
  }

  std::vector<std::string> group_ids;
  for (const auto& [g, units] : index.groups) {
    if (units.empty()) throw std::invalid_argument("empty group '" + g + "'");
    group_ids.push_back(g);
  }
  std::size_t n_sample = static_cast<std::size_t>(
      std::ceil(constraints.group_sample_frac * static_cast<double>(group_ids.size())));
  n_sample = std::min(std::max<std::size_t>(n_sample, 1), group_ids.size());
  double share_total = detail::index_share_total(index, shares);

  SplitPlan plan;
  plan.iterations.resize(static_cast<std::size_t>(n_iter));
  parallel_for(static_cast<std::size_t>(n_iter), n_threads, [&](std::size_t it) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(it)));
    double best_miss = -1.0, best_unit = 0.0, best_pop = 0.0;
    for (int attempt = 0; attempt < constraints.max_attempts; ++attempt) {
      std::vector<std::size_t> picks =
          rng.sample_without_replacement(group_ids.size(), n_sample);
      std::set<std::string> train_groups;
      for (std::size_t p : picks) train_groups.insert(group_ids[p]);
      auto [unit_frac, pop_frac] =
          detail::split_fractions(index, shares, train_groups, share_total);
      bool ok_units = unit_frac >= constraints.unit_frac_low && unit_frac <= constraints.unit_frac_high;
      bool ok_pop = pop_frac >= constraints.pop_frac_low && pop_frac <= constraints.pop_frac_high;
      if (ok_units && ok_pop) {
        SplitIteration& out = plan.iterations[it];
        out.iteration = static_cast<int>(it);
        out.train_groups = std::move(train_groups);
        for (const auto& g : out.train_groups) {
          for (const auto& id : index.groups.at(g)) out.train_units.insert(id);
        }
        out.train_unit_frac = unit_frac;
        out.train_pop_frac = pop_frac;
        return;
      }
      auto window_miss = [](double f, double lo, double hi) {
        return std::max(0.0, lo - f) + std::max(0.0, f - hi);
      };
      double miss = window_miss(unit_frac, constraints.unit_frac_low, constraints.unit_frac_high) +
                    window_miss(pop_frac, constraints.pop_frac_low, constraints.pop_frac_high);
      if (best_miss < 0.0 || miss < best_miss) {
        best_miss = miss;
        best_unit = unit_frac;
        best_pop = pop_frac;
      }
    }
    std::ostringstream os;
    os << "monte_carlo_splits: iteration " << it << " found no acceptable split in "
       << constraints.max_attempts << " attempts; closest miss had unit_frac=" << best_unit
       << ", pop_frac=" << best_pop;
    throw std::runtime_error(os.str());
  });
  return plan;
}

// One iteration per group in lexicographic order; that group is held out.
inline SplitPlan leave_one_group_out(const GroupedIndex& index, const ShareVector& shares) {
  if (index.groups.size() < 2) {
    throw std::invalid_argument("leave_one_group_out: need at least 2 groups");
  }
  double share_total = detail::index_share_total(index, shares);
  SplitPlan plan;
  int it = 0;
  for (const auto& [held_out, units] : index.groups) {
    SplitIteration iter;
    iter.iteration = it++;
    for (const auto& [g, ids] : index.groups) {
      if (g == held_out) continue;
      iter.train_groups.insert(g);
      for (const auto& id : ids) iter.train_units.insert(id);
    }
    auto [unit_frac, pop_frac] =
        detail::split_fractions(index, shares, iter.train_groups, share_total);
    iter.train_unit_frac = unit_frac;
    iter.train_pop_frac = pop_frac;
    plan.iterations.push_back(std::move(iter));
  }
  return plan;
}

inline std::vector<UnitId> validation_units(const SplitIteration& iter, const GroupedIndex& index) {
  std::vector<UnitId> out;
  for (const auto& [g, units] : index.groups) {
    if (iter.train_groups.count(g)) continue;
    out.insert(out.end(), units.begin(), units.end());
  }
  return out;
}

struct SplitReport {
  bool valid = true;
  std::string message = "ok";
};

inline SplitReport validate_split(const SplitPlan& plan, const GroupedIndex& index,
                                  const ShareVector& shares, const SplitConstraints& constraints) {
  auto fail = [](std::string msg) { return SplitReport{false, std::move(msg)}; };
  double share_total = detail::index_share_total(index, shares);
  std::set<UnitId> all_units;
  for (const auto& [g, units] : index.groups) all_units.insert(units.begin(), units.end());

  for (const auto& iter : plan.iterations) {
    std::string tag = "iteration " + std::to_string(iter.iteration) + ": ";
    if (iter.train_groups.empty() || iter.train_groups.size() == index.groups.size()) {
      return fail(tag + "train groups must be a proper non-empty subset");
    }
    std::set<UnitId> expected;
    for (const auto& g : iter.train_groups) {
      auto it = index.groups.find(g);
      if (it == index.groups.end()) return fail(tag + "unknown group '" + g + "'");
      expected.insert(it->second.begin(), it->second.end());
    }
    if (expected != iter.train_units) {
      for (const auto& id : iter.train_units) {
        if (!expected.count(id)) return fail(tag + "unit '" + id + "' breaks group atomicity");
      }
      for (const auto& id : expected) {
        if (!iter.train_units.count(id)) return fail(tag + "unit '" + id + "' missing from train set");
      }
    }
    for (const auto& id : iter.train_units) {
      if (!all_units.count(id)) return fail(tag + "unit '" + id + "' not in index");
    }
    auto [unit_frac, pop_frac] =
        detail::split_fractions(index, shares, iter.train_groups, share_total);
    if (std::abs(unit_frac - iter.train_unit_frac) > 1e-12 ||
        std::abs(pop_frac - iter.train_pop_frac) > 1e-12) {
      return fail(tag + "recorded fractions disagree with recomputation");
    }
    if (unit_frac < constraints.unit_frac_low || unit_frac > constraints.unit_frac_high) {
      std::ostringstream os;
      os << tag << "train_unit_frac " << unit_frac << " outside [" << constraints.unit_frac_low
         << ", " << constraints.unit_frac_high << "]";
      return fail(os.str());
    }
    if (pop_frac < constraints.pop_frac_low || pop_frac > constraints.pop_frac_high) {
      std::ostringstream os;
      os << tag << "train_pop_frac " << pop_frac << " outside [" << constraints.pop_frac_low
         << ", " << constraints.pop_frac_high << "]";
      return fail(os.str());
    }
  }
  return {};
}

inline void write_split_plan(const SplitPlan& plan, const GroupedIndex& index,
                             const std::string& path) {
  CsvWriter out(path);
  out.row({"iteration", "group_id", "is_train"});
  for (const auto& iter : plan.iterations) {
    for (const auto& [g, units] : index.groups) {
      out.row({std::to_string(iter.iteration), g, iter.train_groups.count(g) ? "1" : "0"});
    }
  }
  out.close();
}

}  // namespace popbench
