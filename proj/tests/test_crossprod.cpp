#include <doctest.h>

#include <set>
#include <tuple>

#include "helpers.hpp"
#include "symcov/crossprod.hpp"
#include "symcov/errors.hpp"

using namespace symcov;

namespace {

ModelSpec crossed_spec(Method method = Method::TriConstr) {
  ModelSpec spec = ModelSpec::independent({3, 5, 2});
  RandomEffectTermSpec b, c;
  b.name = "B";
  b.grouping = "B";
  b.marginal_basis = {3, 4, 2};
  c.name = "C";
  c.grouping = "C";
  c.marginal_basis = {3, 4, 2};
  spec.terms.insert(spec.terms.begin(), {b, c});
  spec.method = method;
  return spec;
}

ObservationTable table_from(const std::vector<std::tuple<std::string, double, std::vector<std::string>>>& rows,
                            std::vector<std::string> groupings = {}) {
  ObservationTable::Builder builder(std::move(groupings), {});
  double y = 0.1;
  for (const auto& [id, t, levels] : rows) {
    builder.add_row(id, t, y, levels, {});
    y += 0.37;
  }
  return std::move(builder).build(Domain{0.0, 1.0});
}

}  // namespace

TEST_CASE("independent single curve gives D(D+1)/2 pairs") {
  const auto table = table_from({{"a", 0.1, {}}, {"a", 0.5, {}}, {"a", 0.9, {}}});
  const auto pairs = enumerate_pairs(table, ModelSpec::independent());
  CHECK(pairs.size() == 6);
  int same_point = 0;
  for (const auto& p : pairs) {
    CHECK(p.same_curve);
    same_point += p.same_point;
    CHECK(table.t()[p.row] <= table.t()[p.row_p]);
  }
  CHECK(same_point == 3);
}

TEST_CASE("shared fRI level adds cross-curve pairs") {
  const auto table = table_from({{"a", 0.1, {"s"}}, {"a", 0.6, {"s"}}, {"b", 0.3, {"s"}}, {"b", 0.8, {"s"}}}, {"g"});
  ModelSpec spec = ModelSpec::independent({3, 5, 2});
  RandomEffectTermSpec g;
  g.name = "G";
  g.grouping = "g";
  g.marginal_basis = {3, 5, 2};
  spec.terms.insert(spec.terms.begin(), g);
  const auto pairs = enumerate_pairs(table, spec);
  // brute force over unordered point pairs
  std::size_t expected = 0;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t q = r; q < 4; ++q) ++expected;
  CHECK(expected == 10);
  CHECK(pairs.size() == expected);
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  for (const auto& p : pairs) {
    CHECK(seen.insert({std::min(p.row, p.row_p), std::max(p.row, p.row_p)}).second);
    CHECK(table.t()[p.row] <= table.t()[p.row_p]);
    if (p.same_point) CHECK(p.same_curve);
  }
}

TEST_CASE("crossed curves sharing no level are pruned") {
  const auto table = table_from({{"a", 0.2, {"b1", "c1"}}, {"a", 0.4, {"b1", "c1"}}, {"b", 0.3, {"b2", "c2"}},
                                 {"c", 0.6, {"b1", "c2"}}},
                                {"B", "C"});
  const auto pairs = enumerate_pairs(table, crossed_spec());
  for (const auto& p : pairs) {
    const bool ab = (p.i == 0 && p.ip == 1) || (p.i == 1 && p.ip == 0);
    CHECK_FALSE(ab);
  }
  // a-c share B (2 pairs), b-c share C (1 pair), within-curve 3+1+1
  CHECK(pairs.size() == 2 + 1 + 5);
}

TEST_CASE("pruning soundness and uniqueness on random crossed data") {
  testing::Gen gen(21);
  for (int trial = 0; trial < 5; ++trial) {
    const auto table = testing::random_table(gen, 12, 1, 5, {"B", "C"}, {3, 4});
    const auto spec = crossed_spec();
    const auto terms = resolve_terms(table, spec);
    const auto pairs = enumerate_pairs(table, spec);
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    for (const auto& p : pairs) CHECK(seen.insert({std::min(p.row, p.row_p), std::max(p.row, p.row_p)}).second);
    std::size_t expected = 0;
    for (std::size_t r = 0; r < table.row_count(); ++r) {
      for (std::size_t q = r; q < table.row_count(); ++q) {
        const auto i = table.curve_of_row(r), ip = table.curve_of_row(q);
        const bool keep = i == ip || shared_term_mask(terms, i, ip) != 0;
        expected += keep;
        if (!keep) CHECK(seen.count({static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(q)}) == 0);
      }
    }
    CHECK(pairs.size() == expected);
  }
}

TEST_CASE("whole method emits both orientations") {
  testing::Gen gen(2);
  const auto table = testing::random_table(gen, 5, 2, 6);
  ModelSpec tri = ModelSpec::independent({3, 5, 2});
  ModelSpec whole = tri;
  whole.method = Method::Whole;
  const auto a = enumerate_pairs(table, tri);
  const auto b = enumerate_pairs(table, whole);
  std::size_t diag = 0;
  for (const auto& p : a) diag += p.same_point;
  CHECK(b.size() == 2 * a.size() - diag);
  std::size_t cap = 0;
  for (std::size_t i = 0; i < table.curve_count(); ++i) cap += table.curve_size(i) * (table.curve_size(i) + 1) / 2;
  CHECK(a.size() == cap);
}

TEST_CASE("dense independent design has the expected row count") {
  testing::Gen gen(3);
  const auto table = testing::random_table(gen, 100, 40, 60);
  const auto terms = resolve_terms(table, ModelSpec::independent());
  const PairEnumerator pe(table, terms, false);
  CHECK(pe.pair_count() >= 100u * 820u);
  CHECK(pe.pair_count() <= 100u * 1830u);
}

TEST_CASE("assembled rows match a nested-loop oracle") {
  testing::Gen gen(31);
  for (Method method : {Method::TriConstr, Method::TriConstrW, Method::Tri, Method::Whole}) {
    const auto table = testing::random_table(gen, 6, 1, 4, {"B", "C"}, {2, 2});
    const auto spec = crossed_spec(method);
    const auto model = build_covariance_model(table, spec);
    const auto sys = assemble_system(table, model);
    REQUIRE(static_cast<std::size_t>(sys.c.size()) == sys.pairs.size());
    const Eigen::MatrixXd design = Eigen::MatrixXd(sys.design);
    CHECK(design.cols() == static_cast<Eigen::Index>(model.column_count));
    for (std::size_t r = 0; r < sys.pairs.size(); ++r) {
      const auto& p = sys.pairs[r];
      const auto ri = static_cast<Eigen::Index>(r);
      const double t = table.t()[p.row], tp = table.t()[p.row_p];
      CHECK(sys.c(ri) == table.y()[p.row] * table.y()[p.row_p]);
      CHECK(sys.w(ri) == (method == Method::TriConstrW && p.same_point ? 0.5 : 1.0));
      CHECK(design(ri, static_cast<Eigen::Index>(model.sigma_column)) == (p.same_point ? 1.0 : 0.0));
      for (std::size_t g = 0; g < model.terms.size(); ++g) {
        const auto& sm = model.smooths[g];
        const int f = sm.dimension();
        Eigen::VectorXd expected = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(sm.coefficient_count()));
        const bool active = model.terms[g].scope == TermScope::Curve ? p.same_curve : p.same_level(g);
        if (active) {
          const Eigen::RowVectorXd bt = sm.basis().row(t), btp = sm.basis().row(tp);
          for (int b = 0; b < f; ++b)
            for (int bp = 0; bp < f; ++bp) expected(sm.column_for(b, bp)) += bt(b) * btp(bp);
        }
        const Eigen::VectorXd got =
            design.row(ri).segment(static_cast<Eigen::Index>(model.offsets[g]), expected.size()).transpose();
        CHECK((got - expected).norm() < 1e-14);
      }
    }
  }
}

TEST_CASE("independent model design is the plain tensor design") {
  const auto table = table_from({{"a", 0.1, {}}, {"a", 0.5, {}}});
  ModelSpec spec = ModelSpec::independent({2, 3, 1});
  spec.method = Method::Tri;
  const auto model = build_covariance_model(table, spec);
  const auto sys = assemble_system(table, model);
  const Eigen::MatrixXd design = Eigen::MatrixXd(sys.design);
  const auto& sm = model.smooths[0];
  for (std::size_t r = 0; r < sys.pairs.size(); ++r) {
    const auto& p = sys.pairs[r];
    const Eigen::VectorXd tensor =
        tensor_design_rows(sm.basis().row(table.t()[p.row]).transpose(), sm.basis().row(table.t()[p.row_p]).transpose());
    for (int b = 0; b < 3; ++b)
      for (int bp = 0; bp < 3; ++bp) CHECK(design(static_cast<Eigen::Index>(r), sm.column_for(b, bp)) == tensor(b * 3 + bp));
  }
}

TEST_CASE("streamed normal equations match the materialized system for any thread count") {
  testing::Gen gen(41);
  const auto table = testing::random_table(gen, 40, 2, 9, {"B", "C"}, {3, 3});
  for (Method method : {Method::TriConstrW, Method::Whole}) {
    const auto model = build_covariance_model(table, crossed_spec(method));
    const auto dense = normal_equations(assemble_system(table, model));
    const auto one = accumulate_normal_equations(table, model, 1);
    const auto three = accumulate_normal_equations(table, model, 3);
    CHECK((one.gram - dense.gram).norm() < 1e-10 * dense.gram.norm());
    CHECK((one.rhs - dense.rhs).norm() < 1e-10 * (1.0 + dense.rhs.norm()));
    CHECK(one.yy == doctest::Approx(dense.yy));
    CHECK(one.weight_sum == doctest::Approx(dense.weight_sum));
    CHECK(one.rows == dense.rows);
    CHECK(one.gram == three.gram);
    CHECK(one.rhs == three.rhs);
    CHECK(one.yy == three.yy);
  }
}

TEST_CASE("whole rows predict the same value in both orientations") {
  testing::Gen gen(5);
  const auto table = testing::random_table(gen, 4, 2, 5);
  ModelSpec spec = ModelSpec::independent({3, 5, 2});
  spec.method = Method::Whole;
  spec.whole_constrained = true;
  const auto model = build_covariance_model(table, spec);
  const auto sys = assemble_system(table, model);
  const Eigen::VectorXd pred = Eigen::MatrixXd(sys.design) * gen.vector(static_cast<Eigen::Index>(model.column_count));
  for (std::size_t r = 0; r + 1 < sys.pairs.size(); ++r) {
    const auto& p = sys.pairs[r];
    const auto& q = sys.pairs[r + 1];
    if (!p.same_point && p.row == q.row_p && p.row_p == q.row) {
      CHECK(pred(static_cast<Eigen::Index>(r)) == doctest::Approx(pred(static_cast<Eigen::Index>(r + 1))).epsilon(1e-12));
    }
  }
}

TEST_CASE("unknown grouping column is rejected") {
  const auto table = table_from({{"a", 0.1, {}}});
  CHECK_THROWS_AS((void)build_covariance_model(table, crossed_spec()), InputError);
}

TEST_CASE("Isserlis variance closed forms") {
  const auto table = table_from({{"a", 0.2, {}}, {"a", 0.7, {}}});
  const auto terms = resolve_terms(table, ModelSpec::independent());
  const TermKernel kernel = [](std::size_t, double t, double tp) { return 1.0 + t * tp; };
  const double s2 = 0.3;
  const auto pairs = enumerate_pairs(table, ModelSpec::independent());
  for (const auto& p : pairs) {
    const double t = table.t()[p.row], tp = table.t()[p.row_p];
    const double v1 = kernel(0, t, t) + s2, v2 = kernel(0, tp, tp) + s2;
    const double expected = p.same_point ? 2.0 * v1 * v1 : v1 * v2 + kernel(0, t, tp) * kernel(0, t, tp);
    CHECK(crossprod_variance(table, terms, p, kernel, s2) == doctest::Approx(expected).epsilon(1e-14));
  }
  const auto all = crossprod_variance(table, terms, pairs, kernel, s2);
  CHECK(all.size() == pairs.size());
  for (double v : all) CHECK(v > 0.0);
}

TEST_CASE("observation covariance adds shared terms only") {
  const auto table = table_from({{"a", 0.2, {"b1", "c1"}}, {"b", 0.5, {"b1", "c2"}}, {"c", 0.9, {"b2", "c2"}}},
                                {"B", "C"});
  const auto terms = resolve_terms(table, crossed_spec());
  REQUIRE(terms.size() == 3);
  const TermKernel kernel = [&](std::size_t g, double, double) { return terms[g].name == "B" ? 1.0 : terms[g].name == "C" ? 10.0 : 100.0; };
  CHECK(observation_covariance(table, terms, 0, 1, kernel, 0.5) == 1.0);
  CHECK(observation_covariance(table, terms, 1, 2, kernel, 0.5) == 10.0);
  CHECK(observation_covariance(table, terms, 0, 2, kernel, 0.5) == 0.0);
  CHECK(observation_covariance(table, terms, 1, 1, kernel, 0.5) == 111.5);
}
