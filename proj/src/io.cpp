#include "sser/io.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sser {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

namespace {

double bound_or(const Json& j, double fallback) { return j.is_null() ? fallback : j.get<double>(); }

const Json& require(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw std::invalid_argument(where + ": missing '" + key + "'");
  return j.at(key);
}

std::vector<double> to_vector(const Json& j) { return j.get<std::vector<double>>(); }

Json matrix_rows(const PointMatrix& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

PointMatrix rows_matrix(const Json& j, std::size_t cols) {
  PointMatrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto row = to_vector(j[r]);
    if (row.size() != cols) throw std::invalid_argument("tree design: row width mismatch");
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
  }
  return m;
}

Json vector_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vector json_vector(const Json& j) {
  const auto v = to_vector(j);
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

Json input_model_to_json(const InputModel& model) {
  Json vars = Json::array();
  for (std::size_t i = 0; i < model.dim(); ++i) {
    const auto& m = model.marginals()[i];
    Json v;
    v["name"] = i < model.names().size() ? model.names()[i] : "X" + std::to_string(i + 1);
    v["family"] = to_string(m.family());
    if (m.family() == Family::Uniform) {
      v["bounds"] = {*m.lower(), *m.upper()};
    } else {
      v["mean"] = m.mean();
      v["std"] = m.std();
    }
    if (m.family() == Family::TruncatedGaussian) {
      v["truncation"] = {number_or_null(*m.lower()), number_or_null(*m.upper())};
    }
    vars.push_back(std::move(v));
  }
  Json j;
  j["variables"] = std::move(vars);
  if (!model.independent()) {
    const auto& r = model.copula().correlation;
    Json rows = Json::array();
    for (Eigen::Index a = 0; a < r.rows(); ++a) {
      Json row = Json::array();
      for (Eigen::Index b = 0; b < r.cols(); ++b) row.push_back(r(a, b));
      rows.push_back(std::move(row));
    }
    j["correlation"] = std::move(rows);
  }
  return j;
}

InputModel input_model_from_json(const Json& j) {
  const Json& vars = require(j, "variables", "input_model");
  if (!vars.is_array() || vars.empty()) throw std::invalid_argument("input_model: 'variables' must be a nonempty array");
  std::vector<Marginal> marginals;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const Json& v = vars[i];
    const std::string where = "input_model.variables[" + std::to_string(i) + "]";
    names.push_back(v.value("name", "X" + std::to_string(i + 1)));
    const Family f = family_from_string(require(v, "family", where).get<std::string>());
    switch (f) {
      case Family::Gaussian:
        marginals.push_back(Marginal::gaussian(require(v, "mean", where).get<double>(), require(v, "std", where).get<double>()));
        break;
      case Family::Lognormal:
        marginals.push_back(Marginal::lognormal(require(v, "mean", where).get<double>(), require(v, "std", where).get<double>()));
        break;
      case Family::Uniform:
        if (v.contains("bounds")) {
          const auto b = to_vector(v.at("bounds"));
          if (b.size() != 2) throw std::invalid_argument(where + ": 'bounds' needs two entries");
          marginals.push_back(Marginal::uniform(b[0], b[1]));
        } else {
          marginals.push_back(
              Marginal::uniform_moments(require(v, "mean", where).get<double>(), require(v, "std", where).get<double>()));
        }
        break;
      case Family::TruncatedGaussian: {
        const Json& t = require(v, "truncation", where);
        if (!t.is_array() || t.size() != 2) throw std::invalid_argument(where + ": 'truncation' needs two entries");
        marginals.push_back(Marginal::truncated_gaussian(require(v, "mean", where).get<double>(),
                                                         require(v, "std", where).get<double>(),
                                                         bound_or(t[0], -std::numeric_limits<double>::infinity()),
                                                         bound_or(t[1], std::numeric_limits<double>::infinity())));
        break;
      }
    }
  }
  CopulaModel copula;
  if (j.contains("correlation") && !j.at("correlation").is_null()) {
    const Json& rows = j.at("correlation");
    const auto m = static_cast<Eigen::Index>(marginals.size());
    if (!rows.is_array() || static_cast<Eigen::Index>(rows.size()) != m) {
      throw std::invalid_argument("input_model: correlation must be an M x M array");
    }
    Eigen::MatrixXd r(m, m);
    for (Eigen::Index a = 0; a < m; ++a) {
      const auto row = to_vector(rows[static_cast<std::size_t>(a)]);
      if (static_cast<Eigen::Index>(row.size()) != m) throw std::invalid_argument("input_model: correlation row width mismatch");
      for (Eigen::Index b = 0; b < m; ++b) r(a, b) = row[static_cast<std::size_t>(b)];
    }
    copula = CopulaModel::gaussian(std::move(r));
  }
  return InputModel(std::move(marginals), std::move(copula), std::move(names));
}

Json node_key_to_json(NodeKey k) { return Json::array({k.level, k.index}); }

NodeKey node_key_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 2) throw std::invalid_argument("node key must be [level, index]");
  return {j[0].get<int>(), j[1].get<int>()};
}

Json failure_estimate_to_json(const FailureEstimate& e) {
  Json j;
  j["pf"] = e.pf;
  j["variance"] = e.variance;
  j["pf_lo"] = e.pf_lo;
  j["pf_hi"] = e.pf_hi;
  j["beta"] = number_or_null(e.beta);
  j["beta_lo"] = number_or_null(e.beta_lo);
  j["beta_hi"] = number_or_null(e.beta_hi);
  j["beta_defined"] = e.beta_defined;
  j["bounds_widened"] = e.bounds_widened;
  j["evaluations"] = e.evaluations;
  return j;
}

Json tree_to_json(const SseTree& tree, const std::map<NodeKey, ConditionalEstimate>* conditionals,
                  bool include_replications) {
  Json j;
  j["schema"] = kTreeSchema;
  j["replications"] = tree.replications();
  j["input_model"] = input_model_to_json(tree.model());
  Json nodes = Json::array();
  for (const auto& [key, n] : tree.nodes()) {
    Json o;
    o["key"] = node_key_to_json(key);
    o["parent"] = n.parent ? node_key_to_json(*n.parent) : Json(nullptr);
    Json children = Json::array();
    for (NodeKey c : n.children) children.push_back(node_key_to_json(c));
    o["children"] = std::move(children);
    o["terminal"] = n.terminal;
    o["mass"] = n.mass;
    o["box"] = {{"lo", n.box.lo}, {"hi", n.box.hi}};
    o["split"] = n.split ? Json{{"dim", n.split->dim}, {"location", n.split->location}} : Json(nullptr);
    o["design_points"] = n.design_point_ids;
    if (n.ensemble) {
      const auto& e = n.ensemble->mean_expansion;
      Json ex;
      ex["space"] = e.basis.space() == ExpansionSpace::RealEnvelope ? "real_envelope" : "quantile";
      ex["center"] = e.basis.center();
      ex["half_width"] = e.basis.half_width();
      ex["multi_indices"] = e.basis.multi_indices();
      ex["coefficients"] = vector_json(e.coefficients);
      ex["loo_error"] = number_or_null(e.loo_error);
      Json reps = Json::array();
      if (include_replications) {
        const auto& c = n.ensemble->replication_coefficients;
        for (Eigen::Index b = 0; b < c.cols(); ++b) reps.push_back(vector_json(c.col(b)));
      }
      ex["replication_coefficients"] = std::move(reps);
      o["expansion"] = std::move(ex);
    } else {
      o["expansion"] = nullptr;
    }
    if (conditionals && conditionals->count(key)) {
      const auto& c = conditionals->at(key);
      o["conditional"] = {{"pf", c.mean_pf}, {"variance", c.variance()}, {"estimator", to_string(c.estimator)},
                          {"mcs_samples", c.mcs_samples}, {"escalated", c.escalated}};
    }
    nodes.push_back(std::move(o));
  }
  j["nodes"] = std::move(nodes);
  Json terminals = Json::array();
  for (NodeKey t : tree.terminals()) terminals.push_back(node_key_to_json(t));
  j["terminals"] = std::move(terminals);
  const auto& d = tree.design();
  j["design"] = {{"u", matrix_rows(d.u)}, {"x", matrix_rows(d.x)}, {"g", d.g}, {"residual", d.residual},
                 {"step", d.step_added}};
  return j;
}

LoadedTree tree_from_json(const Json& j) {
  if (!j.is_object() || j.value("schema", "") != kTreeSchema) {
    throw std::invalid_argument(std::string("tree file: expected schema '") + kTreeSchema + "'");
  }
  try {
    auto model = std::make_shared<const InputModel>(input_model_from_json(require(j, "input_model", "tree")));
    const auto b_count = require(j, "replications", "tree").get<std::size_t>();
    const std::size_t m = model->dim();

    std::map<NodeKey, DomainNode> nodes;
    std::map<NodeKey, double> cond;
    for (const Json& o : require(j, "nodes", "tree")) {
      DomainNode n;
      n.key = node_key_from_json(require(o, "key", "node"));
      if (!o.at("parent").is_null()) n.parent = node_key_from_json(o.at("parent"));
      for (const Json& c : o.at("children")) n.children.push_back(node_key_from_json(c));
      n.terminal = o.at("terminal").get<bool>();
      n.mass = o.at("mass").get<double>();
      n.box = {to_vector(o.at("box").at("lo")), to_vector(o.at("box").at("hi"))};
      if (n.box.lo.size() != m || n.box.hi.size() != m) throw std::invalid_argument("node box dimension mismatch");
      if (!o.at("split").is_null()) {
        n.split = SplitInfo{o.at("split").at("dim").get<std::size_t>(), o.at("split").at("location").get<double>()};
      }
      n.design_point_ids = o.at("design_points").get<std::vector<std::size_t>>();
      const Json& ex = o.at("expansion");
      if (!ex.is_null()) {
        const auto space = ex.at("space").get<std::string>() == "real_envelope" ? ExpansionSpace::RealEnvelope
                                                                                 : ExpansionSpace::QuantileSpace;
        BasisSpec basis(ex.at("multi_indices").get<std::vector<MultiIndex>>(), to_vector(ex.at("center")),
                        to_vector(ex.at("half_width")), space);
        Vector coef = json_vector(ex.at("coefficients"));
        if (static_cast<std::size_t>(coef.size()) != basis.size()) throw std::invalid_argument("coefficient count mismatch");
        BootstrapEnsemble ens;
        ens.mean_expansion = {std::move(basis), coef, ex.at("loo_error").is_null() ? 0.0 : ex.at("loo_error").get<double>()};
        const Json& reps = ex.at("replication_coefficients");
        if (reps.empty()) {
          ens.replication_coefficients = n.terminal ? Matrix(coef.replicate(1, static_cast<Eigen::Index>(b_count)))
                                                    : Matrix(coef.size(), 0);
        } else {
          ens.replication_coefficients.resize(coef.size(), static_cast<Eigen::Index>(reps.size()));
          for (std::size_t b = 0; b < reps.size(); ++b) {
            const Vector col = json_vector(reps[b]);
            if (col.size() != coef.size()) throw std::invalid_argument("replication coefficient count mismatch");
            ens.replication_coefficients.col(static_cast<Eigen::Index>(b)) = col;
          }
        }
        n.ensemble = std::move(ens);
      }
      if (o.contains("conditional")) cond[n.key] = o.at("conditional").at("pf").get<double>();
      const NodeKey key = n.key;
      nodes.emplace(key, std::move(n));
    }
    std::vector<NodeKey> terminals;
    for (const Json& t : require(j, "terminals", "tree")) terminals.push_back(node_key_from_json(t));

    ExperimentalDesign d;
    const Json& dj = require(j, "design", "tree");
    d.u = rows_matrix(dj.at("u"), m);
    d.x = rows_matrix(dj.at("x"), m);
    d.g = dj.at("g").get<std::vector<double>>();
    d.residual = dj.at("residual").get<std::vector<double>>();
    d.step_added = dj.at("step").get<std::vector<int>>();
    if (d.g.size() != static_cast<std::size_t>(d.u.rows()) || d.residual.size() != d.g.size() ||
        d.step_added.size() != d.g.size()) {
      throw std::invalid_argument("tree design arrays are not aligned");
    }
    return {SseTree::from_parts(std::move(model), b_count, std::move(nodes), std::move(terminals), std::move(d)),
            std::move(cond)};
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("tree file: ") + e.what());
  }
}

}  // namespace sser
