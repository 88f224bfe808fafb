#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "expanel/errors.hpp"
#include "expanel/io.hpp"
#include "support.hpp"

using namespace expanel;

namespace {

PanelData parse(const std::string& text, const std::map<std::string, Transform>& transforms = {}) {
  std::istringstream in(text);
  return parse_panel_csv(in, transforms);
}

std::string parse_error(const std::string& text, const std::map<std::string, Transform>& transforms = {}) {
  try {
    parse(text, transforms);
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

// Two groups with far-apart locations, one covariate.
PanelData two_group_panel(int n, int t, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> noise(0, 1);
  Eigen::MatrixXd y(n, t);
  std::vector<Eigen::MatrixXd> x;
  for (int i = 0; i < n; ++i) {
    Eigen::MatrixXd xi(t, 1);
    for (int s = 0; s < t; ++s) {
      xi(s, 0) = noise(eng);
      y(i, s) = testing::gev_draw(eng, (i % 2 == 0 ? 0.0 : 20.0) + 0.5 * xi(s, 0), 1.0, 0.1);
    }
    x.push_back(xi);
  }
  return PanelData(y, x, {"x1"});
}

EmOptions quick_options(int restarts, std::uint64_t seed) {
  EmOptions o;
  o.n_restarts = restarts;
  o.seed = seed;
  return o;
}

bool same_bits(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

void check_same(const FitResult& a, const FitResult& b) {
  CHECK(a.family == b.family);
  CHECK(a.spec == b.spec);
  CHECK(a.coefficients == b.coefficients);
  CHECK(a.assignment == b.assignment);
  CHECK(same_bits(a.loglik, b.loglik));
  REQUIRE(a.covariance.size() == b.covariance.size());
  for (std::size_t g = 0; g < a.covariance.size(); ++g) CHECK(a.covariance[g] == b.covariance[g]);
  REQUIRE(a.std_errors.size() == b.std_errors.size());
  for (std::size_t g = 0; g < a.std_errors.size(); ++g) CHECK(a.std_errors[g] == b.std_errors[g]);
  CHECK(a.n_iterations == b.n_iterations);
  CHECK(a.converged == b.converged);
  CHECK(a.diagnostics == b.diagnostics);
}

void check_same(const EmTrace& a, const EmTrace& b) {
  REQUIRE(a.loglik.size() == b.loglik.size());
  for (std::size_t k = 0; k < a.loglik.size(); ++k) CHECK(same_bits(a.loglik[k], b.loglik[k]));
  CHECK(a.assignment_changes == b.assignment_changes);
  CHECK(a.notes == b.notes);
  CHECK(a.failed == b.failed);
  CHECK(a.failure == b.failure);
}

void check_same(const EmFit& a, const EmFit& b) {
  check_same(a.result, b.result);
  check_same(a.trace, b.trace);
  CHECK(a.best_chain == b.best_chain);
  REQUIRE(a.chains.size() == b.chains.size());
  for (std::size_t c = 0; c < a.chains.size(); ++c) check_same(a.chains[c], b.chains[c]);
}

}  // namespace

TEST_CASE("complete two-by-three panel") {
  const PanelData d = parse(
      "id,time,y,x1\n"
      "a,1,1.5,0.1\n"
      "a,2,2.5,0.2\n"
      "a,3,3.5,0.3\n"
      "b,1,4.5,1.1\n"
      "b,2,5.5,1.2\n"
      "b,3,6.5,1.3\n");
  CHECK(d.n_individuals() == 2);
  CHECK(d.n_periods() == 3);
  CHECK(d.n_observed() == 6);
  CHECK(d.column_names() == std::vector<std::string>{"x1"});
  CHECK(d.individual_ids() == std::vector<std::string>{"a", "b"});
  CHECK(d.period_labels() == std::vector<std::string>{"1", "2", "3"});
  CHECK(d.y(1, 2) == 6.5);
  CHECK(d.covariates(1)(2, 0) == 1.3);
  CHECK(d.covariates(0)(0, 0) == 0.1);
}

TEST_CASE("missing responses keep their covariates") {
  const PanelData d = parse(
      "id,time,y,x1\n"
      "1,1,1.0,5\n"
      "1,2,,6\n"
      "2,1,NA,7\n"
      "2,2,2.0,8\n");
  CHECK(d.missing(0, 1));
  CHECK(d.missing(1, 0));
  CHECK_FALSE(d.missing(0, 0));
  CHECK(d.n_observed() == 2);
  CHECK(d.covariates(0)(1, 0) == 6.0);
  CHECK(d.covariates(1)(0, 0) == 7.0);

  // An (id, time) pair absent from the file is missing as well.
  const PanelData gap = parse("id,time,y\n1,1,1\n1,3,2\n2,2,3\n");
  CHECK(gap.n_periods() == 3);
  CHECK(gap.missing(0, 1));
  CHECK(gap.missing(1, 0));
  CHECK(gap.n_observed() == 3);
}

TEST_CASE("transforms applied at ingestion") {
  const std::string csv = "id,time,y,x1\n1,1,2.0,4.0\n1,2,3.0,1.0\n";
  const PanelData d = parse(csv, {{"x1", Transform::Log}, {"y", Transform::Log}});
  CHECK(d.covariates(0)(0, 0) == std::log(4.0));
  CHECK(d.covariates(0)(1, 0) == 0.0);
  CHECK(d.y(0, 0) == std::log(2.0));
  CHECK(parse(csv, {{"x1", Transform::None}}).covariates(0)(0, 0) == 4.0);

  const std::string msg = parse_error("id,time,y,x1\n1,1,2.0,4.0\n1,2,3.0,0\n", {{"x1", Transform::Log}});
  CHECK(msg.find("row 3") != std::string::npos);
  CHECK(msg.find("x1") != std::string::npos);
  CHECK(parse_error("id,time,y\n1,1,-1\n", {{"y", Transform::Log}}).find("row 2") != std::string::npos);
  CHECK_THROWS_AS(parse(csv, {{"nope", Transform::Log}}), ConfigError);
}

TEST_CASE("malformed input names the row") {
  CHECK(parse_error("id,time,y,x1\n1,1,2.0,4.0\n1,2,3.0\n").find("row 3") != std::string::npos);
  CHECK(parse_error("id,time,y,x1\n1,1,2.0,4.0\n1,2,3.0,4,5\n").find("row 3") != std::string::npos);
  CHECK(parse_error("id,time,y\n1,1,abc\n").find("row 2") != std::string::npos);
  CHECK(parse_error("id,time,y,x1\n1,1,2,1\n1,2,3,1e\n").find("row 3") != std::string::npos);
  CHECK(parse_error("id,time,y\n1,1,2\n1,1,3\n").find("duplicate") != std::string::npos);
  CHECK(parse_error("id,time,y\n1,1,2\n1,1,3\n").find("row 3") != std::string::npos);
  CHECK(parse_error("id,time,y,x1\n1,1,2,\n").find("row 2") != std::string::npos);
  CHECK(parse_error("id,time,y\n1,1,inf\n").find("row 2") != std::string::npos);
  CHECK_FALSE(parse_error("id,time\n").empty());
  CHECK_FALSE(parse_error("id,time,y,y\n1,1,1,1\n").empty());
  CHECK_FALSE(parse_error("id,time,y\n").empty());
  CHECK_THROWS_AS(read_panel_csv("/nonexistent/panel.csv"), IoError);
}

TEST_CASE("numeric labels sort numerically, text labels lexically") {
  const PanelData d = parse("id,time,y\n10,2,1\n9,10,2\n10,10,3\n9,2,4\n");
  CHECK(d.individual_ids() == std::vector<std::string>{"9", "10"});
  CHECK(d.period_labels() == std::vector<std::string>{"2", "10"});
  CHECK(d.y(0, 0) == 4.0);
  CHECK(d.y(1, 1) == 3.0);
  const PanelData t = parse("id,time,y\nb,x,1\na,y,2\n");
  CHECK(t.individual_ids() == std::vector<std::string>{"a", "b"});
}

TEST_CASE("csv write and read back") {
  const PanelData d = two_group_panel(4, 12, 3);
  std::ostringstream out;
  write_panel_csv(d, out);
  const PanelData back = parse(out.str());
  CHECK(back.y() == d.y());
  for (int i = 0; i < 4; ++i) CHECK(back.covariates(i) == d.covariates(i));
  CHECK(back.column_names() == d.column_names());
}

TEST_CASE("ingestion is insensitive to row order") {
  const PanelData d = two_group_panel(6, 30, 5);
  std::ostringstream out;
  write_panel_csv(d, out);
  std::istringstream lines(out.str());
  std::string header, line;
  std::getline(lines, header);
  std::vector<std::string> rows;
  while (std::getline(lines, line)) rows.push_back(line);
  std::mt19937_64 eng(6);
  std::shuffle(rows.begin(), rows.end(), eng);
  std::string shuffled = header + "\n";
  for (const auto& r : rows) shuffled += r + "\n";

  const PanelData a = parse(out.str());
  const PanelData b = parse(shuffled);
  CHECK(a.y() == b.y());
  CHECK(a.individual_ids() == b.individual_ids());
  CHECK(a.period_labels() == b.period_labels());
  for (int i = 0; i < 6; ++i) CHECK(a.covariates(i) == b.covariates(i));

  LinkSpec spec;
  spec.mu_terms = {0};
  const EmFit fa = em_fit(a, 2, spec, quick_options(4, 9));
  const EmFit fb = em_fit(b, 2, spec, quick_options(4, 9));
  check_same(fa, fb);
}

TEST_CASE("model config") {
  const Json j = Json::parse(R"({
    "mode": "gev-panel",
    "links": {"mu": "exp", "sigma": "exp", "xi": "identity"},
    "terms": {"mu": ["x1"], "sigma": [], "xi": []},
    "transforms": {"x1": "log"},
    "em": {"restarts": 7, "seed": 3, "max_iterations": 40, "tolerance": 1e-8},
    "g_max": 4
  })");
  const ModelConfig c = model_config_from_json(j);
  CHECK(c.mu_link == LinkKind::Exp);
  CHECK(c.mu_terms == std::vector<std::string>{"x1"});
  CHECK(c.transforms.at("x1") == Transform::Log);
  CHECK(c.em.n_restarts == 7);
  CHECK(c.em.seed == 3);
  CHECK(c.em.max_em_iterations == 40);
  CHECK(c.em.loglik_tolerance == 1e-8);
  CHECK(c.g_max == 4);
  CHECK(c.family() == Family::Gev);

  const ModelConfig again = model_config_from_json(to_json(c));
  CHECK(to_json(again) == to_json(c));

  const LinkSpec spec = c.link_spec({"x0", "x1"});
  CHECK(spec.mu_terms == std::vector<int>{1});
  CHECK_THROWS_AS(c.link_spec({"x0"}), ConfigError);

  CHECK_THROWS_AS(model_config_from_json(Json::parse(R"({"lnks": {}})")), ConfigError);
  CHECK_THROWS_AS(model_config_from_json(Json::parse(R"({"em": {"restart": 3}})")), ConfigError);
  CHECK_THROWS_AS(model_config_from_json(Json::parse(R"({"links": {"mu": "logit"}})")), ConfigError);
  CHECK_THROWS_AS(model_config_from_json(Json::parse(R"({"transforms": {"x1": "sqrt"}})")), ConfigError);
  CHECK_THROWS_AS(model_config_from_json(Json::parse(R"({"mode": "gp-panel", "p0": 1.5})")), ConfigError);
  CHECK_THROWS_AS(model_config_from_json(Json::parse(R"({"mode": "gp-panel", "terms": {"mu": ["x1"]}})")),
                  ConfigError);
  CHECK_THROWS_AS(model_config_from_json(Json::parse(R"({"g_max": "six"})")), ConfigError);
  CHECK(model_config_from_json(Json::parse(R"({"mode": "gp-panel", "p0": 0.9})")).family() == Family::Gp);
}

TEST_CASE("dgp config") {
  const DgpConfig c = dgp_config_from_json(Json::parse(R"({"N": 24, "T": 20,
      "copula": {"kind": "gumbel", "alpha": 2}, "seed": 4})"));
  CHECK(c.n_periods == 20);
  CHECK(c.copula.kind == CopulaSpec::Kind::Gumbel);
  CHECK(c.copula.alpha == 2.0);
  CHECK(c.groups.size() == 4);
  const DgpConfig again = dgp_config_from_json(to_json(c));
  CHECK(to_json(again) == to_json(c));
  CHECK(dgp_config_from_json(Json::parse(R"({"copula": "independence"})")).copula.kind ==
        CopulaSpec::Kind::Independence);
  CHECK_THROWS_AS(dgp_config_from_json(Json::parse(R"({"copula": {"kind": "clayton"}})")), ConfigError);
  CHECK_THROWS_AS(dgp_config_from_json(Json::parse(R"({"n": 24})")), ConfigError);
  CHECK_THROWS_AS(dgp_config_from_json(Json::parse(R"({"groups": [{"kappa0": 1}]})")), ConfigError);
}

TEST_CASE("non-finite numbers survive serialization") {
  for (double v : {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::infinity(),
                   -std::numeric_limits<double>::infinity()}) {
    const Json j = Json::parse(Json{{"v", number(v)}}.dump());
    CHECK(same_bits(to_double(j.at("v")), v));
  }
  std::mt19937_64 eng(8);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int k = 0; k < 2000; ++k) {
    const double v = u(eng) * std::pow(10.0, 40 * u(eng));
    CHECK(to_double(Json::parse(Json(number(v)).dump())) == v);
  }
  CHECK(to_double(Json::parse(Json(number(5e-324)).dump())) == 5e-324);
  CHECK_THROWS_AS(to_double(Json("text")), ParseError);
}

TEST_CASE("fit report round trip") {
  const auto dir = testing::scratch_dir("io-fit");
  const PanelData d = two_group_panel(6, 25, 11);
  LinkSpec spec;
  spec.mu_terms = {0};
  const EmFit fit = em_fit(d, 2, spec, quick_options(3, 2));
  ReportContext ctx;
  ctx.seed = 2;
  ctx.config = {{"groups", 2}};
  ctx.individual_ids = d.individual_ids();
  ctx.column_names = d.column_names();
  const auto path = (dir / "fit.json").string();
  write_fit_report(fit, path, ctx);
  check_same(read_fit_report(path), fit);

  const Json report = read_report(path);
  CHECK(report.at("kind") == "fit");
  CHECK(report.at("seed") == 2);
  CHECK(report.at("software").at("name") == "extreme-panel");
  CHECK(report.at("config").at("groups") == 2);
  CHECK(report.at("columns") == Json{"x1"});
  // Labels are written 1-based.
  for (const auto& g : report.at("result").at("fit").at("assignment")) CHECK((g == 1 || g == 2));

  // Writing the read-back result reproduces the file byte for byte.
  const auto again = (dir / "again.json").string();
  write_fit_report(read_fit_report(path), again, ctx);
  CHECK(testing::slurp(path) == testing::slurp(again));

  CHECK_THROWS_AS(read_sweep_report(path), ParseError);
  CHECK_THROWS_AS(write_fit_report(fit, (dir / "missing" / "x.json").string()), IoError);
  testing::spit(dir / "bad.json", "{\"kind\": ");
  CHECK_THROWS_AS(read_report((dir / "bad.json").string()), ParseError);
  CHECK_THROWS_AS(read_report((dir / "absent.json").string()), IoError);
}

TEST_CASE("fit result with failed pieces") {
  FitResult r;
  r.family = Family::Gp;
  r.coefficients = {{Eigen::VectorXd(0), Eigen::VectorXd::Constant(1, 0.3), Eigen::VectorXd::Constant(1, -0.1)}};
  r.assignment = GroupAssignment::single(3);
  r.loglik = -std::numeric_limits<double>::infinity();
  r.diagnostics = {"covariance unavailable"};
  const FitResult back = fit_result_from_json(Json::parse(to_json(r).dump()));
  check_same(back, r);
  CHECK(back.covariance.empty());
  r.covariance = {Eigen::MatrixXd()};
  r.std_errors = {Eigen::VectorXd()};
  check_same(fit_result_from_json(Json::parse(to_json(r).dump())), r);

  Json broken = to_json(r);
  broken["assignment"] = Json{1, 3, 1};
  CHECK_THROWS_AS(fit_result_from_json(broken), ParseError);
  broken = to_json(r);
  broken.erase("groups");
  CHECK_THROWS_AS(fit_result_from_json(broken), ParseError);
}

TEST_CASE("selection report") {
  const auto dir = testing::scratch_dir("io-sweep");
  const PanelData d = two_group_panel(6, 25, 12);
  LinkSpec spec;
  const SweepResult sweep = select_groups(d, spec, 3, quick_options(3, 4));
  const auto path = (dir / "sweep.json").string();
  write_fit_report(sweep, path);
  const Json report = read_report(path);
  CHECK(report.at("kind") == "selection");
  const Json& table = report.at("result").at("bic_table");
  REQUIRE(table.size() == 3);
  for (int g = 1; g <= 3; ++g) {
    const auto& row = table[static_cast<std::size_t>(g - 1)];
    CHECK(row.at("groups") == g);
    CHECK(to_double(row.at("bic")) == sweep.entry(g).bic);
  }
  CHECK(report.at("result").at("g_star") == sweep.g_star);

  const SweepResult back = read_sweep_report(path);
  CHECK(back.g_star == sweep.g_star);
  REQUIRE(back.entries.size() == sweep.entries.size());
  for (std::size_t k = 0; k < back.entries.size(); ++k) {
    CHECK(back.entries[k].n_groups == sweep.entries[k].n_groups);
    CHECK(back.entries[k].failed == sweep.entries[k].failed);
    CHECK(same_bits(back.entries[k].bic, sweep.entries[k].bic));
    if (!sweep.entries[k].failed) check_same(back.entries[k].fit, sweep.entries[k].fit);
  }
}

TEST_CASE("study report") {
  const auto dir = testing::scratch_dir("io-study");
  const DgpConfig config = DgpConfig::benchmark(20, CopulaSpec::gaussian(0.5), 3);
  const StudySummary s = run_study(config, 3, 2, quick_options(2, 1));
  const auto path = (dir / "study.json").string();
  write_fit_report(s, path);
  const Json result = read_report(path).at("result");
  CHECK(result.at("selection_fraction").size() == 3);
  CHECK(result.at("median_mrae").size() == 3);
  CHECK(result.contains("mean_rand"));
  CHECK(result.at("replications").size() == 2);

  const StudySummary back = read_study_report(path);
  CHECK(to_json(back.config) == to_json(s.config));
  CHECK(back.g_max == s.g_max);
  CHECK(back.n_replications == s.n_replications);
  CHECK(back.n_failed == s.n_failed);
  CHECK(back.selection_fraction == s.selection_fraction);
  CHECK(same_bits(back.mean_rand, s.mean_rand));
  CHECK(same_bits(back.fraction_selecting_true_g, s.fraction_selecting_true_g));
  CHECK(back.median_mrae == s.median_mrae);
  CHECK(same_bits(back.median_mrae_selected, s.median_mrae_selected));
  REQUIRE(back.replications.size() == s.replications.size());
  for (std::size_t r = 0; r < s.replications.size(); ++r) {
    const auto& a = back.replications[r];
    const auto& b = s.replications[r];
    CHECK(a.replication == b.replication);
    CHECK(a.g_star == b.g_star);
    CHECK(same_bits(a.rand_at_true_g, b.rand_at_true_g));
    CHECK(a.bic == b.bic);
    CHECK(a.mrae == b.mrae);
    CHECK(same_bits(a.mrae_selected, b.mrae_selected));
  }
}
