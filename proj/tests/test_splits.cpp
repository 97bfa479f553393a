#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "popbench/splits.hpp"

using namespace popbench;
using testutil::fresh_dir;
using testutil::read_file;

namespace {

// n_groups groups of equal unit count; per-unit share weights supplied per group.
struct HandIndex {
  GroupedIndex index;
  ShareVector shares;
};

HandIndex make_hand_index(const std::vector<std::pair<std::string, std::vector<double>>>& spec) {
  HandIndex h;
  double total = 0.0;
  for (const auto& [g, weights] : spec) {
    for (double w : weights) total += w;
  }
  int k = 0;
  for (const auto& [g, weights] : spec) {
    for (double w : weights) {
      std::string id = "u" + std::to_string(100 + k++);
      h.index.groups[g].push_back(id);
      h.shares.shares[id] = w / total;
    }
  }
  return h;
}

bool same_plan(const SplitPlan& a, const SplitPlan& b) {
  if (a.iterations.size() != b.iterations.size()) return false;
  for (std::size_t i = 0; i < a.iterations.size(); ++i) {
    const auto& x = a.iterations[i];
    const auto& y = b.iterations[i];
    if (x.iteration != y.iteration || x.train_groups != y.train_groups ||
        x.train_units != y.train_units || x.train_unit_frac != y.train_unit_frac ||
        x.train_pop_frac != y.train_pop_frac) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("grouped index construction and supergroup variant") {
  auto ds = testutil::toy_dataset({.with_supergroups = true});
  GroupedIndex gi = make_grouped_index(ds.units);
  CHECK(gi.groups.size() == 10);
  CHECK(gi.n_units() == ds.units.size());
  for (const auto& [g, ids] : gi.groups) {
    CHECK(std::is_sorted(ids.begin(), ids.end()));
  }
  GroupedIndex si = make_supergrouped_index(ds.units);
  CHECK(si.groups.size() == 5);
  CHECK(si.n_units() == ds.units.size());

  auto flat = testutil::toy_dataset();  // no supergroups
  CHECK_THROWS_AS(make_supergrouped_index(flat.units), std::invalid_argument);
  CHECK_THROWS_AS(make_grouped_index({}), std::invalid_argument);
}

TEST_CASE("ten equal groups sample exactly seven with 0.7 fractions") {
  std::vector<std::pair<std::string, std::vector<double>>> spec;
  for (int g = 0; g < 10; ++g) {
    spec.push_back({"g" + std::to_string(g), {1.0, 1.0}});
  }
  HandIndex h = make_hand_index(spec);
  SplitConstraints c;
  SplitPlan plan = monte_carlo_splits(h.index, h.shares, c, 25, 7);
  REQUIRE(plan.iterations.size() == 25);
  for (const auto& it : plan.iterations) {
    CHECK(it.train_groups.size() == 7);  // ceil(0.70 * 10)
    CHECK(it.train_units.size() == 14);
    CHECK(it.train_unit_frac == 0.7);
    CHECK(it.train_pop_frac == Catch::Approx(0.7).margin(1e-12));
  }
  SplitReport rep = validate_split(plan, h.index, h.shares, c);
  CHECK(rep.valid);
  CHECK(rep.message == "ok");
}

TEST_CASE("infeasible constraints exhaust attempts with a diagnostic") {
  // One group holds 60% of the population; any 4-of-5 sample lands at >= 90%
  // or <= 40%, never inside [0.65, 0.75].
  HandIndex h = make_hand_index({{"gA", {60.0}},
                                 {"gB", {10.0}},
                                 {"gC", {10.0}},
                                 {"gD", {10.0}},
                                 {"gE", {10.0}}});
  SplitConstraints c;
  c.unit_frac_low = 0.0;
  c.unit_frac_high = 1.0;
  c.max_attempts = 5;
  CHECK_THROWS_WITH(monte_carlo_splits(h.index, h.shares, c, 3, 42),
                    Catch::Matchers::ContainsSubstring("5 attempts") &&
                        Catch::Matchers::ContainsSubstring("closest miss") &&
                        Catch::Matchers::ContainsSubstring("pop_frac"));
}

TEST_CASE("guard rails on inputs") {
  HandIndex two = make_hand_index({{"gA", {1.0}}, {"gB", {1.0}}});
  SplitConstraints c;
  CHECK_THROWS_AS(monte_carlo_splits(two.index, two.shares, c, 1, 1), std::invalid_argument);
  HandIndex three = make_hand_index({{"gA", {1.0}}, {"gB", {1.0}}, {"gC", {1.0}}});
  CHECK_THROWS_AS(monte_carlo_splits(three.index, three.shares, c, 0, 1), std::invalid_argument);
  SplitConstraints bad = c;
  bad.max_attempts = 0;
  CHECK_THROWS_AS(monte_carlo_splits(three.index, three.shares, bad, 1, 1), std::invalid_argument);
}

TEST_CASE("a hundred iterations on the toy dataset all satisfy both windows") {
  auto ds = testutil::toy_dataset();
  GroupedIndex gi = make_grouped_index(ds.units);
  SplitConstraints c;
  SplitPlan plan = monte_carlo_splits(gi, ds.shares, c, 100, 20240101);
  REQUIRE(plan.iterations.size() == 100);
  for (const auto& it : plan.iterations) {
    CHECK(it.iteration == &it - plan.iterations.data());
    CHECK(it.train_groups.size() == 7);
    CHECK(it.train_unit_frac >= c.unit_frac_low);
    CHECK(it.train_unit_frac <= c.unit_frac_high);
    CHECK(it.train_pop_frac >= c.pop_frac_low);
    CHECK(it.train_pop_frac <= c.pop_frac_high);
    // group atomicity: held-out units are exactly the complement
    auto val = validation_units(it, gi);
    CHECK(val.size() + it.train_units.size() == gi.n_units());
    for (const auto& id : val) CHECK_FALSE(it.train_units.count(id));
  }
  CHECK(validate_split(plan, gi, ds.shares, c).valid);

  // same seed reproduces; thread count is irrelevant; other seeds differ
  CHECK(same_plan(plan, monte_carlo_splits(gi, ds.shares, c, 100, 20240101)));
  CHECK(same_plan(plan, monte_carlo_splits(gi, ds.shares, c, 100, 20240101, 8)));
  CHECK_FALSE(same_plan(plan, monte_carlo_splits(gi, ds.shares, c, 100, 20240102)));
}

TEST_CASE("leave-one-group-out holds out each group once, lexicographically") {
  HandIndex h = make_hand_index({{"gA", {1.0, 2.0}},
                                 {"gB", {3.0}},
                                 {"gC", {4.0}},
                                 {"gD", {5.0}},
                                 {"gE", {6.0}}});
  SplitPlan plan = leave_one_group_out(h.index, h.shares);
  REQUIRE(plan.iterations.size() == 5);
  std::vector<std::string> held{"gA", "gB", "gC", "gD", "gE"};
  for (std::size_t i = 0; i < plan.iterations.size(); ++i) {
    const auto& it = plan.iterations[i];
    CHECK(it.iteration == static_cast<int>(i));
    CHECK(it.train_groups.size() == 4);
    CHECK_FALSE(it.train_groups.count(held[i]));
    auto val = validation_units(it, h.index);
    CHECK(val == h.index.groups.at(held[i]));
    CHECK(val.size() + it.train_units.size() == h.index.n_units());
  }

  HandIndex two = make_hand_index({{"gA", {1.0}}, {"gB", {1.0}}});
  CHECK(leave_one_group_out(two.index, two.shares).iterations.size() == 2);
  HandIndex one = make_hand_index({{"gA", {1.0}}});
  CHECK_THROWS_AS(leave_one_group_out(one.index, one.shares), std::invalid_argument);
}

TEST_CASE("validate_split rejects tampered plans with named reasons") {
  HandIndex h = make_hand_index({{"gA", {1.0, 1.0}},
                                 {"gB", {1.0, 1.0}},
                                 {"gC", {1.0, 1.0}},
                                 {"gD", {1.0, 1.0}}});
  SplitConstraints open;
  open.unit_frac_low = 0.0;
  open.unit_frac_high = 1.0;
  open.pop_frac_low = 0.0;
  open.pop_frac_high = 1.0;

  SplitIteration it;
  it.iteration = 0;
  it.train_groups = {"gA", "gB"};
  for (const auto& g : it.train_groups) {
    for (const auto& id : h.index.groups.at(g)) it.train_units.insert(id);
  }
  it.train_unit_frac = 0.5;
  it.train_pop_frac = 0.5;
  SplitPlan plan;
  plan.iterations.push_back(it);
  CHECK(validate_split(plan, h.index, h.shares, open).valid);

  // moving a single unit across the group boundary breaks atomicity
  SplitPlan moved = plan;
  UnitId stray = h.index.groups.at("gC")[0];
  moved.iterations[0].train_units.insert(stray);
  SplitReport rep = validate_split(moved, h.index, h.shares, open);
  CHECK_FALSE(rep.valid);
  CHECK(rep.message.find(stray) != std::string::npos);
  CHECK(rep.message.find("atomicity") != std::string::npos);

  // empty and all-group train sets are rejected
  SplitPlan empty = plan;
  empty.iterations[0].train_groups.clear();
  empty.iterations[0].train_units.clear();
  CHECK_FALSE(validate_split(empty, h.index, h.shares, open).valid);

  // recorded fractions must match recomputation
  SplitPlan fudged = plan;
  fudged.iterations[0].train_pop_frac = 0.51;
  CHECK_FALSE(validate_split(fudged, h.index, h.shares, open).valid);
}

TEST_CASE("validate_split enforces the inclusive acceptance windows") {
  // train group at exactly 80% of units is allowed; 80% of population is not
  HandIndex h = make_hand_index({{"gA", {20.0, 20.0, 20.0, 20.0}}, {"gB", {20.0}}});
  SplitConstraints c;  // unit [0.60, 0.80], pop [0.65, 0.75]
  SplitIteration it;
  it.iteration = 0;
  it.train_groups = {"gA"};
  for (const auto& id : h.index.groups.at("gA")) it.train_units.insert(id);
  it.train_unit_frac = 0.8;
  it.train_pop_frac = 0.8;
  SplitPlan plan;
  plan.iterations.push_back(it);
  SplitReport rep = validate_split(plan, h.index, h.shares, c);
  CHECK_FALSE(rep.valid);
  CHECK(rep.message.find("train_pop_frac") != std::string::npos);

  // shrink gA's population weight so pop_frac drops inside the window
  HandIndex ok = make_hand_index({{"gA", {17.5, 17.5, 17.5, 17.5}}, {"gB", {30.0}}});
  SplitIteration it2;
  it2.iteration = 0;
  it2.train_groups = {"gA"};
  for (const auto& id : ok.index.groups.at("gA")) it2.train_units.insert(id);
  it2.train_unit_frac = 0.8;
  it2.train_pop_frac = 0.7;
  SplitPlan plan2;
  plan2.iterations.push_back(it2);
  CHECK(validate_split(plan2, ok.index, ok.shares, c).valid);
}

TEST_CASE("write_split_plan emits one row per iteration and group") {
  HandIndex h = make_hand_index({{"g1", {1.0, 1.0}}, {"g2", {1.0}}, {"g3", {1.0}}});
  SplitPlan plan;
  SplitIteration a;
  a.iteration = 0;
  a.train_groups = {"g1", "g3"};
  SplitIteration b;
  b.iteration = 1;
  b.train_groups = {"g2"};
  plan.iterations = {a, b};
  auto dir = fresh_dir("split_plan");
  write_split_plan(plan, h.index, (dir / "splits.csv").string());
  CHECK(read_file(dir / "splits.csv") ==
        "iteration,group_id,is_train\n"
        "0,g1,1\n0,g2,0\n0,g3,1\n"
        "1,g1,0\n1,g2,1\n1,g3,0\n");
}
