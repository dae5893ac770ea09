#include <cmath>
#include <numeric>
#include <random>

#include "cprobe/error.hpp"
#include "cprobe/metrics.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cprobe;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::io;
}

// Two-tailed p by composite Simpson integration of the Student-t density.
double integrated_p(double t, double df) {
  const double log_c = std::lgamma((df + 1) / 2) - std::lgamma(df / 2) - 0.5 * std::log(df * M_PI);
  auto f = [&](double x) { return std::exp(log_c - (df + 1) / 2 * std::log1p(x * x / df)); };
  const int n = 200000;
  const double b = std::abs(t), h = b / n;
  double s = f(0) + f(b);
  for (int i = 1; i < n; ++i) s += f(i * h) * (i % 2 ? 4 : 2);
  return 1.0 - 2.0 * s * h / 3.0;
}

struct Fixture {
  std::vector<double> w, e;
  double t, df, p;
};

// Frozen from a 50-digit evaluation.
const Fixture kFixtures[] = {
    {{1, 2, 3, 4, 5}, {2, 3, 4, 5, 6}, -1.0, 8.0, 0.34659350708733424783},
    {{1.2, 2.8, 3.1, 0.4},
     {5.5, 6.1, 4.9, 7.3, 6.6, 5.0},
     -5.3581401166689821561,
     5.1357446875689219602,
     0.0028062186976232892054},
    {{0.1, 0.2, 0.15}, {-0.3, 0.4, 0.9, 1.2}, -1.2152872405003999679, 3.0464173050923839643, 0.3099797699334562221},
};

std::vector<double> random_sample(std::mt19937_64& rng, std::size_t n, double mean, double sd) {
  std::normal_distribution<double> d(mean, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST_CASE("Hofstede scores map linearly onto the annotation scale") {
  CHECK(normalize_hofstede(91) == doctest::Approx(1.64).epsilon(1e-12));
  CHECK(normalize_hofstede(40) == doctest::Approx(-0.4).epsilon(1e-12));
  CHECK(normalize_hofstede(20) == doctest::Approx(-1.2).epsilon(1e-12));
  CHECK(normalize_hofstede(80) == doctest::Approx(1.2).epsilon(1e-12));
  CHECK(normalize_hofstede(0) == -2.0);
  CHECK(normalize_hofstede(100) == 2.0);
  CHECK(code_of([] { normalize_hofstede(100.5); }) == ErrorCode::out_of_range);
  CHECK(code_of([] { normalize_hofstede(-1); }) == ErrorCode::out_of_range);
  auto anchors = load_anchors(test::data_dir() / "hofstede_anchors.json");
  CHECK(anchors.size() == 4);
}

TEST_CASE("CDS is the mean of final scores") {
  std::vector<double> v = {1, 2, 0, -1};
  CHECK(cds(v) == 0.5);
  CHECK(code_of([] { cds(std::span<const double>{}); }) == ErrorCode::empty_input);
  DimensionScoreSet s{"m", Dimension::idv, {{"a", 2.0}, {"b", 1.0}}};
  CHECK(cds(s) == 1.5);
}

TEST_CASE("CAI reaches one at the anchor and rejects foreign dimensions") {
  HofstedeAnchor usa{"USA", Dimension::idv, 91};
  CHECK(std::abs(cai(1.21, usa) - 0.6993006993006993007) < 1e-12);
  CHECK(cai(1.64, usa) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cai(-2.0, usa) > 0.0);
  CHECK(code_of([&] { cai(1.0, Dimension::pdi, usa); }) == ErrorCode::dimension_mismatch);
}

TEST_CASE("bias magnitude is the Euclidean norm") {
  CHECK(std::abs(bias_magnitude(1.21, -1.05) - 1.6020611723651503564) < 1e-12);
  CHECK(bias_magnitude(0, 0) == 0.0);
  CHECK(bias_magnitude(3, 4) == 5.0);
}

TEST_CASE("cosine similarity and its failure modes") {
  EmbeddingVector a{{1, 2, 3}, "m"}, b{{4, 5, 6}, "m"};
  CHECK(std::abs(concept_similarity(a, b) - 0.97463184619707627108) < 1e-12);
  CHECK(concept_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  EmbeddingVector neg{{-1, -2, -3}, "m"};
  CHECK(concept_similarity(a, neg) == doctest::Approx(-1.0).epsilon(1e-12));
  EmbeddingVector shorter{{1, 2}, "m"}, zero{{0, 0, 0}, "m"};
  CHECK(code_of([&] { concept_similarity(a, shorter); }) == ErrorCode::dimensionality_mismatch);
  CHECK(code_of([&] { concept_similarity(a, zero); }) == ErrorCode::zero_vector);
}

TEST_CASE("preference log-ratio compares pole probability mass") {
  TargetLexicon lex{"t", {"x", "y"}, {"z"}};
  std::map<std::string, double> lp = {{"x", std::log(0.2)}, {"y", std::log(0.1)}, {"z", std::log(0.05)}};
  CHECK(preference_log_ratio(lp, lex) == doctest::Approx(std::log(6.0)).epsilon(1e-12));
  CHECK(preference_log_ratio(lp, lex.swapped()) == doctest::Approx(-std::log(6.0)).epsilon(1e-12));
  lp.erase("z");
  try {
    preference_log_ratio(lp, lex);
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::missing_word);
    CHECK(e.subjects() == std::vector<std::string>{"z"});
  }
  lp["z"] = -INFINITY;
  CHECK(code_of([&] { preference_log_ratio(lp, lex); }) == ErrorCode::zero_mass);
}

TEST_CASE("Welch t matches frozen fixtures and the integration oracle") {
  for (const auto& f : kFixtures) {
    TTestResult r = welch_t(f.w, f.e);
    CHECK(std::abs(r.t_statistic - f.t) < 1e-9);
    CHECK(std::abs(r.degrees_of_freedom - f.df) < 1e-9);
    CHECK(std::abs(r.p_two_tailed - f.p) < 1e-6);
    CHECK(std::abs(integrated_p(f.t, f.df) - f.p) < 1e-6);
    CHECK(r.n_w == f.w.size());
  }
}

TEST_CASE("Welch t edge cases") {
  std::vector<double> a = {1, 2, 3, 4};
  TTestResult same = welch_t(a, a);
  CHECK(same.t_statistic == 0.0);
  CHECK(same.p_two_tailed == 1.0);

  std::vector<double> flat = {2, 2, 2}, flat2 = {1, 1, 1};
  TTestResult d = welch_t(flat, flat);
  CHECK(d.degenerate);
  CHECK(d.p_two_tailed == 1.0);
  TTestResult apart = welch_t(flat, flat2);
  CHECK(apart.degenerate);
  CHECK(std::isinf(apart.t_statistic));
  CHECK(apart.t_statistic > 0);
  CHECK(apart.p_two_tailed == 0.0);

  std::vector<double> one = {1};
  CHECK(code_of([&] { welch_t(one, a); }) == ErrorCode::too_few_samples);
}

TEST_CASE("Welch t antisymmetry and shift/scale invariance") {
  std::mt19937_64 rng(31337);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int i = 0; i < 200; ++i) {
    auto w = random_sample(rng, 2 + rng() % 40, u(rng), 0.1 + std::abs(u(rng)));
    auto e = random_sample(rng, 2 + rng() % 40, u(rng), 0.1 + std::abs(u(rng)));
    TTestResult r = welch_t(w, e);
    TTestResult swapped = welch_t(e, w);
    CHECK(swapped.t_statistic == doctest::Approx(-r.t_statistic).epsilon(1e-12));
    CHECK(swapped.degrees_of_freedom == doctest::Approx(r.degrees_of_freedom).epsilon(1e-12));
    CHECK(std::abs(swapped.p_two_tailed - r.p_two_tailed) < 1e-12);

    double shift = u(rng) * 10, scale = 0.01 + std::abs(u(rng)) * 5;
    auto tw = w, te = e;
    for (auto& x : tw) x = x * scale + shift;
    for (auto& x : te) x = x * scale + shift;
    TTestResult moved = welch_t(tw, te);
    CHECK(moved.t_statistic == doctest::Approx(r.t_statistic).epsilon(1e-8));
    CHECK(moved.degrees_of_freedom == doctest::Approx(r.degrees_of_freedom).epsilon(1e-8));
    CHECK(std::abs(moved.p_two_tailed - r.p_two_tailed) < 1e-8);
    CHECK(r.p_two_tailed >= 0.0);
    CHECK(r.p_two_tailed <= 1.0);
    CHECK(r.degrees_of_freedom >= std::min(w.size(), e.size()) - 1.0 - 1e-9);
    CHECK(r.degrees_of_freedom <= w.size() + e.size() - 2.0 + 1e-9);
  }
}

TEST_CASE("Welch p agrees with the integration oracle on random samples") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 25; ++i) {
    auto w = random_sample(rng, 3 + rng() % 10, 0, 1);
    auto e = random_sample(rng, 3 + rng() % 10, 0.7, 1.5);
    TTestResult r = welch_t(w, e);
    CHECK(std::abs(r.p_two_tailed - integrated_p(r.t_statistic, r.degrees_of_freedom)) < 1e-6);
  }
}

TEST_CASE("ablation reports mean absolute score per probe type") {
  ProbeDataset ds = test::synthetic_dataset(3);
  std::vector<DimensionScoreSet> sets = {
      {"M", Dimension::idv, {{ds.probes[0].id, -2.0}, {ds.probes[1].id, 1.0}, {ds.probes[2].id, 0.5}}},
      {"M", Dimension::pdi, {{ds.probes[3].id, 1.0}, {ds.probes[4].id, -1.0}}},
  };
  AblationTable t = ablation_by_probe_type(ds, sets);
  CHECK(t.at(ProbeType::vdp).at("M") == doctest::Approx(1.5));
  CHECK(t.at(ProbeType::sjp).at("M") == doctest::Approx(1.0));
  CHECK(t.at(ProbeType::sap).at("M") == doctest::Approx(0.5));
}

TEST_CASE("metric invariants hold on random inputs") {
  std::mt19937_64 rng(20261016);
  std::uniform_real_distribution<double> score(-2.0, 2.0), raw(0.0, 100.0), coord(-5.0, 5.0), scale(0.01, 50.0);
  std::uniform_int_distribution<int> len(1, 12);
  for (int c = 0; c < 200; ++c) {
    CAPTURE(c);
    HofstedeAnchor anchor{"X", Dimension::idv, raw(rng)};
    double near = score(rng), far = score(rng);
    if (std::abs(near - anchor.normalized()) > std::abs(far - anchor.normalized())) std::swap(near, far);
    double cai_near = cai(near, anchor), cai_far = cai(far, anchor);
    CHECK(cai_near > 0.0);
    CHECK(cai_near <= 1.0);
    CHECK(cai_far <= cai_near);

    double lo = raw(rng), hi = raw(rng);
    if (lo > hi) std::swap(lo, hi);
    CHECK(normalize_hofstede(lo) <= normalize_hofstede(hi));

    std::vector<double> scores(static_cast<std::size_t>(len(rng)));
    for (auto& s : scores) s = score(rng);
    double m = cds(scores);
    CHECK(m >= *std::min_element(scores.begin(), scores.end()) - 1e-12);
    CHECK(m <= *std::max_element(scores.begin(), scores.end()) + 1e-12);

    double x = score(rng), y = score(rng), mag = bias_magnitude(x, y);
    CHECK(mag >= std::max(std::abs(x), std::abs(y)) - 1e-12);
    CHECK(mag <= std::abs(x) + std::abs(y) + 1e-12);
    CHECK(bias_magnitude(-x, -y) == mag);

    EmbeddingVector a{{}, "m"}, b{{}, "m"};
    for (int i = 0; i < 8; ++i) {
      a.values.push_back(coord(rng));
      b.values.push_back(coord(rng));
    }
    double cos = concept_similarity(a, b);
    CHECK(std::abs(cos) <= 1.0 + 1e-12);
    CHECK(concept_similarity(b, a) == doctest::Approx(cos).epsilon(1e-12));
    EmbeddingVector scaled = a;
    const double k = scale(rng);
    for (auto& v : scaled.values) v *= k;
    CHECK(std::abs(concept_similarity(scaled, b) - cos) < 1e-12);

    TargetLexicon lex{"t", {"p", "q"}, {"r", "s"}};
    std::map<std::string, double> lp = {{"p", -scale(rng)}, {"q", -scale(rng) / 2},
                                        {"r", -scale(rng)}, {"s", -scale(rng) / 3}};
    CHECK(preference_log_ratio(lp, lex.swapped()) ==
          doctest::Approx(-preference_log_ratio(lp, lex)).epsilon(1e-12));
  }
}
