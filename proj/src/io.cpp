#include "expanel/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <set>

#include "expanel/errors.hpp"

namespace expanel {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// Strict decimal parse of the whole field; nullopt on any leftover text.
std::optional<double> parse_number(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

bool is_missing_token(const std::string& s) { return s.empty() || s == "NA"; }

std::string format_number(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// Labels sort numerically when all of them are numbers, else as text.
std::vector<std::string> ordered_labels(const std::set<std::string>& labels) {
  std::vector<std::string> out(labels.begin(), labels.end());
  const bool numeric = std::all_of(out.begin(), out.end(), [](const std::string& s) {
    const auto v = parse_number(s);
    return v && std::isfinite(*v);
  });
  if (numeric) {
    std::stable_sort(out.begin(), out.end(), [](const std::string& a, const std::string& b) {
      return *parse_number(a) < *parse_number(b);
    });
  }
  return out;
}

Transform parse_transform(const std::string& name) {
  if (name == "none") return Transform::None;
  if (name == "log") return Transform::Log;
  throw ConfigError("unknown transform '" + name + "' (expected none or log)");
}

ModelMode parse_mode(const std::string& name) {
  if (name == "gev-panel") return ModelMode::GevPanel;
  if (name == "gp-panel") return ModelMode::GpPanel;
  throw ConfigError("unknown mode '" + name + "' (expected gev-panel or gp-panel)");
}

Family parse_family(const std::string& name) {
  if (name == to_string(Family::Gev)) return Family::Gev;
  if (name == to_string(Family::Gp)) return Family::Gp;
  throw ParseError("unknown family '" + name + "'");
}

void reject_unknown_keys(const Json& j, std::initializer_list<std::string_view> allowed,
                         const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("key '") + key + "' has the wrong type");
  }
}

std::vector<std::string> string_list(const Json& j, const char* key) {
  return get_or<std::vector<std::string>>(j, key, {});
}

Json vec_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) out.push_back(number(v(k)));
  return out;
}

Eigen::VectorXd json_vec(const Json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v(static_cast<Eigen::Index>(k)) = to_double(j[k]);
  return v;
}

Json mat_json(const Eigen::MatrixXd& m) {
  Json out = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(vec_json(m.row(r).transpose()));
  return out;
}

Eigen::MatrixXd json_mat(const Json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[static_cast<std::size_t>(r)].size()) != cols)
      throw ParseError("ragged matrix in report");
    m.row(r) = json_vec(j[static_cast<std::size_t>(r)]).transpose();
  }
  return m;
}

Json double_list(const std::vector<double>& v) {
  Json out = Json::array();
  for (double x : v) out.push_back(number(x));
  return out;
}

std::vector<double> json_double_list(const Json& j) {
  std::vector<double> out;
  for (const auto& x : j) out.push_back(to_double(x));
  return out;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

const Json& report_result(const Json& report, const char* kind) {
  if (!report.contains("kind") || report.at("kind") != kind)
    throw ParseError(std::string("report is not of kind '") + kind + "'");
  return report.at("result");
}

}  // namespace

std::string_view to_string(ModelMode mode) {
  return mode == ModelMode::GpPanel ? "gp-panel" : "gev-panel";
}

Json number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  return value;
}

double to_double(const Json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto& s = j.get_ref<const std::string&>();
    if (s == "nan") return kNaN;
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  if (j.is_null()) return kNaN;
  throw ParseError("expected a number, found " + j.dump());
}

void ModelConfig::validate() const {
  em.validate();
  if (!(p0 > 0 && p0 < 1)) throw ConfigError("p0 must lie in (0, 1)");
  if (g_max < 1) throw ConfigError("g_max must be >= 1");
  if (mode == ModelMode::GpPanel && !mu_terms.empty())
    throw ConfigError("gp-panel models have no location terms");
}

LinkSpec ModelConfig::link_spec(const std::vector<std::string>& columns) const {
  auto resolve = [&](const std::vector<std::string>& names) {
    std::vector<int> out;
    for (const auto& name : names) {
      const auto it = std::find(columns.begin(), columns.end(), name);
      if (it == columns.end()) throw ConfigError("model references unknown column '" + name + "'");
      out.push_back(static_cast<int>(it - columns.begin()));
    }
    return out;
  };
  LinkSpec spec;
  spec.mu_link = mu_link;
  spec.sigma_link = sigma_link;
  spec.xi_link = xi_link;
  spec.mu_terms = resolve(mu_terms);
  spec.sigma_terms = resolve(sigma_terms);
  spec.xi_terms = resolve(xi_terms);
  return spec;
}

ModelConfig model_config_from_json(const Json& j) {
  reject_unknown_keys(j, {"mode", "links", "terms", "transforms", "p0", "em", "g_max"}, "model config");
  ModelConfig c;
  c.mode = parse_mode(get_or<std::string>(j, "mode", "gev-panel"));
  if (j.contains("links")) {
    const Json& l = j.at("links");
    reject_unknown_keys(l, {"mu", "sigma", "xi"}, "links");
    c.mu_link = parse_link_kind(get_or<std::string>(l, "mu", "identity"));
    c.sigma_link = parse_link_kind(get_or<std::string>(l, "sigma", "exp"));
    c.xi_link = parse_link_kind(get_or<std::string>(l, "xi", "identity"));
  }
  if (j.contains("terms")) {
    const Json& t = j.at("terms");
    reject_unknown_keys(t, {"mu", "sigma", "xi"}, "terms");
    c.mu_terms = string_list(t, "mu");
    c.sigma_terms = string_list(t, "sigma");
    c.xi_terms = string_list(t, "xi");
  }
  if (j.contains("transforms")) {
    const Json& t = j.at("transforms");
    if (!t.is_object()) throw ConfigError("transforms must be an object");
    for (const auto& [column, name] : t.items()) {
      if (!name.is_string()) throw ConfigError("transform of '" + column + "' must be a string");
      c.transforms[column] = parse_transform(name.get<std::string>());
    }
  }
  c.p0 = get_or<double>(j, "p0", c.p0);
  c.g_max = get_or<int>(j, "g_max", c.g_max);
  if (j.contains("em")) {
    const Json& e = j.at("em");
    reject_unknown_keys(e, {"max_iterations", "restarts", "seed", "tolerance", "simplex_stage"}, "em");
    c.em.max_em_iterations = get_or<int>(e, "max_iterations", c.em.max_em_iterations);
    c.em.n_restarts = get_or<int>(e, "restarts", c.em.n_restarts);
    c.em.seed = get_or<std::uint64_t>(e, "seed", c.em.seed);
    c.em.loglik_tolerance = get_or<double>(e, "tolerance", c.em.loglik_tolerance);
    c.em.optim.simplex_stage = get_or<bool>(e, "simplex_stage", c.em.optim.simplex_stage);
  }
  c.validate();
  return c;
}

Json to_json(const ModelConfig& c) {
  Json j;
  j["mode"] = to_string(c.mode);
  j["links"] = {{"mu", to_string(c.mu_link)}, {"sigma", to_string(c.sigma_link)}, {"xi", to_string(c.xi_link)}};
  j["terms"] = {{"mu", c.mu_terms}, {"sigma", c.sigma_terms}, {"xi", c.xi_terms}};
  Json transforms = Json::object();
  for (const auto& [column, t] : c.transforms) transforms[column] = t == Transform::Log ? "log" : "none";
  j["transforms"] = transforms;
  j["p0"] = c.p0;
  j["em"] = {{"max_iterations", c.em.max_em_iterations},
             {"restarts", c.em.n_restarts},
             {"seed", c.em.seed},
             {"tolerance", c.em.loglik_tolerance},
             {"simplex_stage", c.em.optim.simplex_stage}};
  j["g_max"] = c.g_max;
  return j;
}

ModelConfig read_model_config(const std::string& path) {
  try {
    return model_config_from_json(read_json(path));
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
}

PanelData parse_panel_csv(std::istream& in, const std::map<std::string, Transform>& transforms) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("row 1: missing header");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const std::vector<std::string> header = split_fields(line);
  if (header.size() < 3) throw ParseError("row 1: header needs at least id, time and y columns");
  const std::vector<std::string> columns(header.begin() + 3, header.end());
  {
    std::set<std::string> seen;
    for (const auto& c : header) {
      if (c.empty()) throw ParseError("row 1: empty column name");
      if (!seen.insert(c).second) throw ParseError("row 1: duplicate column '" + c + "'");
    }
  }
  const auto k_count = columns.size();
  std::vector<bool> log_column(k_count, false);
  bool log_y = false;
  for (const auto& [name, t] : transforms) {
    if (t != Transform::Log) continue;
    if (name == header[2]) {
      log_y = true;
      continue;
    }
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw ConfigError("transform references unknown column '" + name + "'");
    log_column[static_cast<std::size_t>(it - columns.begin())] = true;
  }

  struct Row {
    std::string id, time;
    double y;
    std::vector<double> x;
    long line;
  };
  std::vector<Row> rows;
  std::set<std::string> ids, times;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    const std::string where = "row " + std::to_string(line_no);
    if (fields.size() != header.size())
      throw ParseError(where + ": expected " + std::to_string(header.size()) + " fields, found " +
                       std::to_string(fields.size()));
    Row r{fields[0], fields[1], kNaN, std::vector<double>(k_count, kNaN), line_no};
    if (r.id.empty()) throw ParseError(where + ": empty id");
    if (r.time.empty()) throw ParseError(where + ": empty time");
    const bool y_missing = is_missing_token(fields[2]);
    if (!y_missing) {
      const auto v = parse_number(fields[2]);
      if (!v || !std::isfinite(*v)) throw ParseError(where + ": non-numeric response '" + fields[2] + "'");
      if (log_y && !(*v > 0)) throw ParseError(where + ": log transform of nonpositive response");
      r.y = log_y ? std::log(*v) : *v;
    }
    for (std::size_t k = 0; k < k_count; ++k) {
      const std::string& f = fields[k + 3];
      if (is_missing_token(f)) {
        if (!y_missing)
          throw ParseError(where + ": missing value in column '" + columns[k] + "' of an observed cell");
        continue;
      }
      const auto v = parse_number(f);
      if (!v || !std::isfinite(*v))
        throw ParseError(where + ": non-numeric value '" + f + "' in column '" + columns[k] + "'");
      if (log_column[k] && !(*v > 0))
        throw ParseError(where + ": log transform of nonpositive value in column '" + columns[k] + "'");
      r.x[k] = log_column[k] ? std::log(*v) : *v;
    }
    ids.insert(r.id);
    times.insert(r.time);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ParseError("no data rows");

  const std::vector<std::string> id_order = ordered_labels(ids);
  const std::vector<std::string> time_order = ordered_labels(times);
  std::map<std::string, int> id_index, time_index;
  for (std::size_t k = 0; k < id_order.size(); ++k) id_index[id_order[k]] = static_cast<int>(k);
  for (std::size_t k = 0; k < time_order.size(); ++k) time_index[time_order[k]] = static_cast<int>(k);

  const auto n = static_cast<Eigen::Index>(id_order.size());
  const auto t_len = static_cast<Eigen::Index>(time_order.size());
  Eigen::MatrixXd y = Eigen::MatrixXd::Constant(n, t_len, kNaN);
  std::vector<Eigen::MatrixXd> x(static_cast<std::size_t>(n),
                                 Eigen::MatrixXd::Constant(t_len, static_cast<Eigen::Index>(k_count), kNaN));
  std::map<std::pair<int, int>, long> seen;
  for (const auto& r : rows) {
    const int i = id_index.at(r.id);
    const int t = time_index.at(r.time);
    const auto [it, inserted] = seen.emplace(std::pair(i, t), r.line);
    if (!inserted)
      throw ParseError("row " + std::to_string(r.line) + ": duplicate (id, time) = (" + r.id + ", " +
                       r.time + "), first seen in row " + std::to_string(it->second));
    y(i, t) = r.y;
    for (std::size_t k = 0; k < k_count; ++k)
      x[static_cast<std::size_t>(i)](t, static_cast<Eigen::Index>(k)) = r.x[k];
  }
  PanelData data(std::move(y), std::move(x), columns);
  data.set_labels(id_order, time_order);
  return data;
}

PanelData read_panel_csv(const std::string& path, const std::map<std::string, Transform>& transforms) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return parse_panel_csv(in, transforms);
}

PanelData read_panel_csv(const std::string& path, const ModelConfig& config) {
  return read_panel_csv(path, config.transforms);
}

void write_panel_csv(const PanelData& data, std::ostream& out) {
  out << "id,time,y";
  for (const auto& c : data.column_names()) out << ',' << c;
  out << '\n';
  for (int i = 0; i < data.n_individuals(); ++i) {
    for (int t = 0; t < data.n_periods(); ++t) {
      out << data.individual_ids()[static_cast<std::size_t>(i)] << ','
          << data.period_labels()[static_cast<std::size_t>(t)] << ',';
      if (!data.missing(i, t)) out << format_number(data.y(i, t));
      const auto& x = data.covariates(i);
      for (Eigen::Index k = 0; k < x.cols(); ++k) out << ',' << format_number(x(t, k));
      out << '\n';
    }
  }
}

void write_panel_csv(const PanelData& data, const std::string& path) {
  std::ofstream out = open_output(path);
  write_panel_csv(data, out);
  if (!out) throw IoError("failed writing '" + path + "'");
}

DgpConfig dgp_config_from_json(const Json& j) {
  reject_unknown_keys(j, {"groups", "covariates", "u_bounds", "copula", "N", "T", "seed"}, "DGP config");
  DgpConfig c = DgpConfig::benchmark(get_or<int>(j, "T", 50));
  c.n_individuals = get_or<int>(j, "N", c.n_individuals);
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  if (j.contains("groups")) {
    c.groups.clear();
    for (const auto& g : j.at("groups")) {
      reject_unknown_keys(g, {"kappa0", "kappa1", "kappa2", "gamma0", "gamma1", "gamma2", "delta0"}, "DGP group");
      auto req = [&](const char* key) {
        if (!g.contains(key)) throw ConfigError(std::string("DGP group lacks '") + key + "'");
        return get_or<double>(g, key, 0.0);
      };
      c.groups.push_back({req("kappa0"), req("kappa1"), req("kappa2"), req("gamma0"), req("gamma1"),
                          req("gamma2"), req("delta0")});
    }
  }
  if (j.contains("covariates")) {
    const Json& v = j.at("covariates");
    reject_unknown_keys(v, {"omega", "lambda", "beta", "nu_f", "nu_i"}, "covariates");
    auto& p = c.covariates;
    p.omega = get_or<double>(v, "omega", p.omega);
    p.lambda = get_or<double>(v, "lambda", p.lambda);
    p.beta = get_or<double>(v, "beta", p.beta);
    p.nu_f = get_or<double>(v, "nu_f", p.nu_f);
    p.nu_i = get_or<double>(v, "nu_i", p.nu_i);
  }
  if (j.contains("u_bounds")) {
    const auto b = get_or<std::vector<double>>(j, "u_bounds", {});
    if (b.size() != 2) throw ConfigError("u_bounds must be [lower, upper]");
    c.u_lower = b[0];
    c.u_upper = b[1];
  }
  if (j.contains("copula")) {
    const Json& cj = j.at("copula");
    const Json spec = cj.is_string() ? Json{{"kind", cj}} : cj;
    reject_unknown_keys(spec, {"kind", "rho", "alpha"}, "copula");
    const auto kind = get_or<std::string>(spec, "kind", "independence");
    if (kind == "independence")
      c.copula = CopulaSpec::independence();
    else if (kind == "gaussian")
      c.copula = CopulaSpec::gaussian(get_or<double>(spec, "rho", 0.5));
    else if (kind == "gumbel")
      c.copula = CopulaSpec::gumbel(get_or<double>(spec, "alpha", 2.0));
    else
      throw ConfigError("unknown copula '" + kind + "'");
  }
  c.validate();
  return c;
}

Json to_json(const DgpConfig& c) {
  Json j;
  Json groups = Json::array();
  for (const auto& g : c.groups) {
    groups.push_back({{"kappa0", g.kappa0}, {"kappa1", g.kappa1}, {"kappa2", g.kappa2},
                      {"gamma0", g.gamma0}, {"gamma1", g.gamma1}, {"gamma2", g.gamma2},
                      {"delta0", g.delta0}});
  }
  j["groups"] = groups;
  const auto& p = c.covariates;
  j["covariates"] = {{"omega", p.omega}, {"lambda", p.lambda}, {"beta", p.beta}, {"nu_f", p.nu_f}, {"nu_i", p.nu_i}};
  j["u_bounds"] = {c.u_lower, c.u_upper};
  Json copula = {{"kind", c.copula.name()}};
  if (c.copula.kind == CopulaSpec::Kind::Gaussian) copula["rho"] = c.copula.rho;
  if (c.copula.kind == CopulaSpec::Kind::Gumbel) copula["alpha"] = c.copula.alpha;
  j["copula"] = copula;
  j["N"] = c.n_individuals;
  j["T"] = c.n_periods;
  j["seed"] = c.seed;
  return j;
}

DgpConfig read_dgp_config(const std::string& path) {
  try {
    return dgp_config_from_json(read_json(path));
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
}

Json to_json(const GroupCoefficients& coeffs) {
  return {{"kappa", vec_json(coeffs.kappa)}, {"gamma", vec_json(coeffs.gamma)}, {"delta", vec_json(coeffs.delta)}};
}

Json to_json(const FitResult& r) {
  Json j;
  j["family"] = to_string(r.family);
  j["links"] = {{"mu", to_string(r.spec.mu_link)},
                {"sigma", to_string(r.spec.sigma_link)},
                {"xi", to_string(r.spec.xi_link)}};
  // Zero-based positions in the covariate column list.
  j["terms"] = {{"mu", r.spec.mu_terms}, {"sigma", r.spec.sigma_terms}, {"xi", r.spec.xi_terms}};
  j["n_groups"] = r.n_groups();
  j["loglik"] = number(r.loglik);
  j["n_iterations"] = r.n_iterations;
  j["converged"] = r.converged;
  Json labels = Json::array();
  for (int g : r.assignment.labels) labels.push_back(g + 1);
  j["assignment"] = labels;
  Json groups = Json::array();
  for (int g = 0; g < static_cast<int>(r.coefficients.size()); ++g) {
    const auto k = static_cast<std::size_t>(g);
    Json e = {{"label", g + 1}, {"size", r.assignment.size(g)}};
    e.update(to_json(r.coefficients[k]));
    const bool has_se = k < r.std_errors.size() && r.std_errors[k].size() > 0;
    const bool has_cov = k < r.covariance.size() && r.covariance[k].size() > 0;
    e["std_errors"] = has_se ? vec_json(r.std_errors[k]) : Json();
    e["covariance"] = has_cov ? mat_json(r.covariance[k]) : Json();
    groups.push_back(std::move(e));
  }
  j["groups"] = groups;
  j["covariance_attempted"] = !r.covariance.empty();
  j["diagnostics"] = r.diagnostics;
  return j;
}

FitResult fit_result_from_json(const Json& j) {
  try {
    FitResult r;
    r.family = parse_family(j.at("family").get<std::string>());
    const Json& l = j.at("links");
    r.spec.mu_link = parse_link_kind(l.at("mu").get<std::string>());
    r.spec.sigma_link = parse_link_kind(l.at("sigma").get<std::string>());
    r.spec.xi_link = parse_link_kind(l.at("xi").get<std::string>());
    const Json& t = j.at("terms");
    r.spec.mu_terms = t.at("mu").get<std::vector<int>>();
    r.spec.sigma_terms = t.at("sigma").get<std::vector<int>>();
    r.spec.xi_terms = t.at("xi").get<std::vector<int>>();
    r.assignment.n_groups = j.at("n_groups").get<int>();
    for (int g : j.at("assignment").get<std::vector<int>>()) r.assignment.labels.push_back(g - 1);
    r.loglik = to_double(j.at("loglik"));
    r.n_iterations = j.at("n_iterations").get<int>();
    r.converged = j.at("converged").get<bool>();
    const bool attempted = j.at("covariance_attempted").get<bool>();
    for (const auto& g : j.at("groups")) {
      r.coefficients.push_back({json_vec(g.at("kappa")), json_vec(g.at("gamma")), json_vec(g.at("delta"))});
      const Json& se = g.at("std_errors");
      const Json& cov = g.at("covariance");
      r.std_errors.push_back(se.is_null() ? Eigen::VectorXd() : json_vec(se));
      r.covariance.push_back(cov.is_null() ? Eigen::MatrixXd() : json_mat(cov));
    }
    if (!attempted) {
      r.std_errors.clear();
      r.covariance.clear();
    }
    r.diagnostics = j.at("diagnostics").get<std::vector<std::string>>();
    r.assignment.validate(static_cast<int>(r.assignment.labels.size()));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed fit result: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(std::string("malformed fit result: ") + e.what());
  }
}

Json to_json(const EmTrace& t) {
  Json j;
  j["loglik"] = double_list(t.loglik);
  j["assignment_changes"] = t.assignment_changes;
  j["notes"] = t.notes;
  j["failed"] = t.failed;
  j["failure"] = t.failure;
  return j;
}

EmTrace em_trace_from_json(const Json& j) {
  try {
    EmTrace t;
    t.loglik = json_double_list(j.at("loglik"));
    t.assignment_changes = j.at("assignment_changes").get<std::vector<int>>();
    t.notes = j.at("notes").get<std::vector<std::string>>();
    t.failed = j.at("failed").get<bool>();
    t.failure = j.at("failure").get<std::string>();
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed EM trace: ") + e.what());
  }
}

Json to_json(const EmFit& fit) {
  Json j;
  j["fit"] = to_json(fit.result);
  j["best_chain"] = fit.best_chain + 1;
  j["trace"] = to_json(fit.trace);
  Json chains = Json::array();
  for (const auto& c : fit.chains) chains.push_back(to_json(c));
  j["chains"] = chains;
  return j;
}

EmFit em_fit_from_json(const Json& j) {
  try {
    EmFit fit;
    fit.result = fit_result_from_json(j.at("fit"));
    fit.best_chain = j.at("best_chain").get<int>() - 1;
    fit.trace = em_trace_from_json(j.at("trace"));
    for (const auto& c : j.at("chains")) fit.chains.push_back(em_trace_from_json(c));
    return fit;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed EM fit: ") + e.what());
  }
}

Json to_json(const SweepResult& sweep) {
  Json j;
  j["g_star"] = sweep.g_star;
  Json table = Json::array();
  Json fits = Json::array();
  for (const auto& e : sweep.entries) {
    Json row;
    row["groups"] = e.n_groups;
    row["failed"] = e.failed;
    row["failure"] = e.failure;
    row["realized_groups"] = e.failed ? 0 : e.fit.result.n_groups();
    row["loglik"] = number(e.failed ? std::numeric_limits<double>::quiet_NaN() : e.fit.result.loglik);
    row["bic"] = number(e.bic);
    table.push_back(row);
    fits.push_back(e.failed ? Json() : to_json(e.fit));
  }
  j["bic_table"] = table;
  j["fits"] = fits;
  return j;
}

SweepResult sweep_result_from_json(const Json& j) {
  try {
    SweepResult s;
    s.g_star = j.at("g_star").get<int>();
    const Json& table = j.at("bic_table");
    const Json& fits = j.at("fits");
    if (table.size() != fits.size()) throw ParseError("BIC table and fits differ in length");
    for (std::size_t k = 0; k < table.size(); ++k) {
      SweepEntry e;
      e.n_groups = table[k].at("groups").get<int>();
      e.failed = table[k].at("failed").get<bool>();
      e.failure = table[k].at("failure").get<std::string>();
      e.bic = to_double(table[k].at("bic"));
      if (!fits[k].is_null()) e.fit = em_fit_from_json(fits[k]);
      s.entries.push_back(std::move(e));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed sweep result: ") + e.what());
  }
}

Json to_json(const StudySummary& s) {
  Json j;
  j["config"] = to_json(s.config);
  j["g_max"] = s.g_max;
  j["n_replications"] = s.n_replications;
  j["n_failed"] = s.n_failed;
  j["selection_fraction"] = double_list(s.selection_fraction);
  j["fraction_selecting_true_g"] = number(s.fraction_selecting_true_g);
  j["mean_rand"] = number(s.mean_rand);
  j["median_mrae"] = double_list(s.median_mrae);
  j["median_mrae_selected"] = number(s.median_mrae_selected);
  Json reps = Json::array();
  for (const auto& r : s.replications) {
    reps.push_back({{"replication", r.replication + 1},
                    {"failed", r.failed},
                    {"failure", r.failure},
                    {"g_star", r.g_star},
                    {"rand_at_true_g", number(r.rand_at_true_g)},
                    {"bic", double_list(r.bic)},
                    {"mrae", double_list(r.mrae)},
                    {"mrae_selected", number(r.mrae_selected)}});
  }
  j["replications"] = reps;
  return j;
}

StudySummary study_summary_from_json(const Json& j) {
  try {
    StudySummary s;
    s.config = dgp_config_from_json(j.at("config"));
    s.g_max = j.at("g_max").get<int>();
    s.n_replications = j.at("n_replications").get<int>();
    s.n_failed = j.at("n_failed").get<int>();
    s.selection_fraction = json_double_list(j.at("selection_fraction"));
    s.fraction_selecting_true_g = to_double(j.at("fraction_selecting_true_g"));
    s.mean_rand = to_double(j.at("mean_rand"));
    s.median_mrae = json_double_list(j.at("median_mrae"));
    s.median_mrae_selected = to_double(j.at("median_mrae_selected"));
    for (const auto& r : j.at("replications")) {
      ReplicationRecord rec;
      rec.replication = r.at("replication").get<int>() - 1;
      rec.failed = r.at("failed").get<bool>();
      rec.failure = r.at("failure").get<std::string>();
      rec.g_star = r.at("g_star").get<int>();
      rec.rand_at_true_g = to_double(r.at("rand_at_true_g"));
      rec.bic = json_double_list(r.at("bic"));
      rec.mrae = json_double_list(r.at("mrae"));
      rec.mrae_selected = to_double(r.at("mrae_selected"));
      s.replications.push_back(std::move(rec));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed study summary: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(std::string("malformed study summary: ") + e.what());
  }
}

Json make_report(std::string_view kind, Json result, const ReportContext& context) {
  Json j;
  j["software"] = {{"name", "extreme-panel"}, {"version", EXPANEL_VERSION}};
  j["kind"] = kind;
  j["seed"] = context.seed;
  j["config"] = context.config;
  if (!context.column_names.empty()) j["columns"] = context.column_names;
  if (!context.individual_ids.empty()) j["individual_ids"] = context.individual_ids;
  if (!context.extra.empty()) j["extra"] = context.extra;
  j["result"] = std::move(result);
  return j;
}

void write_json(const Json& j, const std::string& path) {
  std::ofstream out = open_output(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

Json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_fit_report(const EmFit& fit, const std::string& path, const ReportContext& context) {
  write_json(make_report("fit", to_json(fit), context), path);
}

void write_fit_report(const SweepResult& sweep, const std::string& path, const ReportContext& context) {
  write_json(make_report("selection", to_json(sweep), context), path);
}

void write_fit_report(const StudySummary& summary, const std::string& path,
                      const ReportContext& context) {
  write_json(make_report("study", to_json(summary), context), path);
}

Json read_report(const std::string& path) { return read_json(path); }

EmFit read_fit_report(const std::string& path) {
  return em_fit_from_json(report_result(read_json(path), "fit"));
}

SweepResult read_sweep_report(const std::string& path) {
  return sweep_result_from_json(report_result(read_json(path), "selection"));
}

StudySummary read_study_report(const std::string& path) {
  return study_summary_from_json(report_result(read_json(path), "study"));
}

}  // namespace expanel
