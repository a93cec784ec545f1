#include "symcov/funcdata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "symcov/errors.hpp"

namespace symcov {

namespace {

using nlohmann::json;

std::string upper(std::string_view text) {
  std::string out(text);
  for (char& c : out) {
    c = c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void invalid(const std::string& message) {
  throw InputError(InputErrorKind::InvalidArgument, message);
}

bool parse_number(std::string_view text, double& value) {
  text = trim(text);
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  return ec == std::errc() && ptr == end;
}

MarginalSpec parse_marginal(const json& j, MarginalSpec fallback) {
  MarginalSpec m = fallback;
  if (j.contains("degree")) m.degree = j.at("degree").get<int>();
  if (j.contains("dimension")) m.dimension = j.at("dimension").get<int>();
  if (j.contains("penalty_order")) m.penalty_order = j.at("penalty_order").get<int>();
  return m;
}

json marginal_json(const MarginalSpec& m) {
  return json{{"degree", m.degree}, {"dimension", m.dimension}, {"penalty_order", m.penalty_order}};
}

ComponentSpec parse_component(const json& j) {
  if (j.is_string()) {
    const std::string text = upper(j.get<std::string>());
    if (text == "INTERCEPT") return {};
    if (text.rfind("SLOPE(", 0) == 0 && text.back() == ')') {
      // keep the covariate's original spelling
      const std::string raw = j.get<std::string>();
      return {ComponentKind::Slope, raw.substr(6, raw.size() - 7)};
    }
    invalid("unknown component descriptor '" + j.get<std::string>() + "'");
  }
  const std::string kind = upper(j.at("kind").get<std::string>());
  if (kind == "INTERCEPT") return {};
  if (kind == "SLOPE") return {ComponentKind::Slope, j.at("covariate").get<std::string>()};
  invalid("unknown component kind '" + kind + "'");
}

}  // namespace

// ---------------------------------------------------------------------------
// Spec enums
// ---------------------------------------------------------------------------

std::string_view to_string(Method method) noexcept {
  switch (method) {
    case Method::TriConstr: return "TRI_CONSTR";
    case Method::TriConstrW: return "TRI_CONSTR_W";
    case Method::Tri: return "TRI";
    case Method::Whole: return "WHOLE";
  }
  return "?";
}

Method parse_method(std::string_view text) {
  const std::string u = upper(trim(text));
  if (u == "TRI_CONSTR") return Method::TriConstr;
  if (u == "TRI_CONSTR_W") return Method::TriConstrW;
  if (u == "TRI") return Method::Tri;
  if (u == "WHOLE") return Method::Whole;
  invalid("unknown method '" + std::string(text) + "'");
}

std::string_view to_string(PenaltyKind kind) noexcept {
  return kind == PenaltyKind::KronSum ? "KRON_SUM" : "KRON_PROD";
}

PenaltyKind parse_penalty_kind(std::string_view text) {
  const std::string u = upper(trim(text));
  if (u == "KRON_SUM") return PenaltyKind::KronSum;
  if (u == "KRON_PROD") return PenaltyKind::KronProd;
  invalid("unknown penalty kind '" + std::string(text) + "'");
}

std::string_view to_string(PveBase base) noexcept {
  return base == PveBase::Process ? "process" : "observation";
}

PveBase parse_pve_base(std::string_view text) {
  const std::string u = upper(trim(text));
  if (u == "PROCESS") return PveBase::Process;
  if (u == "OBSERVATION") return PveBase::Observation;
  invalid("unknown pve base '" + std::string(text) + "'");
}

void RandomEffectTermSpec::validate() const {
  if (name.empty()) invalid("term without a name");
  if (components.empty()) invalid("term '" + name + "' has no components");
  const auto& mb = marginal_basis;
  if (mb.degree < 1 || mb.dimension <= mb.degree) {
    invalid("term '" + name + "': marginal basis needs dimension > degree >= 1");
  }
  if (mb.penalty_order < 1 || mb.penalty_order >= mb.dimension) {
    invalid("term '" + name + "': penalty order must be in [1, dimension)");
  }
  if (is_curve_term() && rho() != 1) invalid("the CURVE term must have exactly one component");
}

void ModelSpec::validate() const {
  std::size_t curve_terms = 0;
  for (const auto& term : terms) {
    term.validate();
    if (term.is_curve_term()) ++curve_terms;
    const auto same = std::count_if(terms.begin(), terms.end(),
                                    [&](const auto& other) { return other.name == term.name; });
    if (same > 1) invalid("duplicate term name '" + term.name + "'");
  }
  if (curve_terms != 1) invalid("the model needs exactly one CURVE term");
  if (grid_size < 2) invalid("grid_size must be >= 2");
  if (!(pve > 0.0 && pve <= 1.0)) invalid("pve must be in (0, 1]");
  if (!(diag_weight > 0.0 && diag_weight <= 1.0)) invalid("diag_weight must be in (0, 1]");
  if (mean_spec.degree < 0 || mean_spec.dimension <= mean_spec.degree ||
      mean_spec.penalty_order < 1 || mean_spec.penalty_order >= mean_spec.dimension) {
    invalid("invalid mean_spec");
  }
  if (domain && !(domain->upper > domain->lower)) invalid("domain must have upper > lower");
  for (const auto& [name, level] : truncation) {
    if (level < 0) invalid("negative truncation level for '" + name + "'");
    if (std::none_of(terms.begin(), terms.end(), [&](const auto& t) { return t.name == name; })) {
      invalid("truncation given for unknown term '" + name + "'");
    }
  }
}

std::size_t ModelSpec::curve_term_index() const {
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].is_curve_term()) return i;
  }
  invalid("the model needs exactly one CURVE term");
}

const RandomEffectTermSpec& ModelSpec::curve_term() const { return terms[curve_term_index()]; }

ModelSpec ModelSpec::independent(MarginalSpec cov_basis, MarginalSpec mean_basis) {
  ModelSpec spec;
  RandomEffectTermSpec e;
  e.name = "E";
  e.marginal_basis = cov_basis;
  spec.terms.push_back(e);
  spec.mean_spec = mean_basis;
  return spec;
}

ModelSpec parse_model_spec(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw InputError(InputErrorKind::Parse, std::string("model spec: ") + e.what());
  }
  ModelSpec spec;
  try {
    if (j.contains("domain") && !j.at("domain").is_null()) {
      const auto& d = j.at("domain");
      spec.domain = Domain{d.at(0).get<double>(), d.at(1).get<double>()};
    }
    for (const auto& jt : j.at("terms")) {
      RandomEffectTermSpec term;
      term.name = jt.at("name").get<std::string>();
      if (jt.contains("grouping")) {
        term.grouping = jt.at("grouping").get<std::string>();
        const std::string u = upper(term.grouping);
        if (u == kCurveGrouping || u == kNoGrouping) term.grouping = u;
      }
      if (jt.contains("components")) {
        term.components.clear();
        for (const auto& jc : jt.at("components")) term.components.push_back(parse_component(jc));
      }
      if (jt.contains("marginal_basis")) {
        term.marginal_basis = parse_marginal(jt.at("marginal_basis"), term.marginal_basis);
      }
      if (jt.contains("penalty_kind")) {
        term.penalty_kind = parse_penalty_kind(jt.at("penalty_kind").get<std::string>());
      }
      spec.terms.push_back(std::move(term));
    }
    if (j.contains("mean_spec")) spec.mean_spec = parse_marginal(j.at("mean_spec"), spec.mean_spec);
    if (j.contains("pve")) spec.pve = j.at("pve").get<double>();
    if (j.contains("grid_size")) spec.grid_size = j.at("grid_size").get<int>();
    if (j.contains("method")) spec.method = parse_method(j.at("method").get<std::string>());
    if (j.contains("diag_weight")) spec.diag_weight = j.at("diag_weight").get<double>();
    if (j.contains("pve_base")) spec.pve_base = parse_pve_base(j.at("pve_base").get<std::string>());
    if (j.contains("truncation")) {
      for (const auto& [name, level] : j.at("truncation").items()) spec.truncation[name] = level.get<int>();
    }
    if (j.contains("weighted_refit")) spec.weighted_refit = j.at("weighted_refit").get<bool>();
    if (j.contains("whole_constrained")) spec.whole_constrained = j.at("whole_constrained").get<bool>();
  } catch (const json::exception& e) {
    throw InputError(InputErrorKind::Schema, std::string("model spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

std::string model_spec_to_json(const ModelSpec& spec) {
  json j;
  if (spec.domain) j["domain"] = {spec.domain->lower, spec.domain->upper};
  json terms = json::array();
  for (const auto& term : spec.terms) {
    json comps = json::array();
    for (const auto& c : term.components) {
      comps.push_back(c.kind == ComponentKind::Intercept ? std::string("INTERCEPT")
                                                         : "SLOPE(" + c.covariate + ")");
    }
    terms.push_back(json{{"name", term.name},
                         {"grouping", term.grouping},
                         {"components", comps},
                         {"marginal_basis", marginal_json(term.marginal_basis)},
                         {"penalty_kind", std::string(to_string(term.penalty_kind))}});
  }
  j["terms"] = terms;
  j["mean_spec"] = marginal_json(spec.mean_spec);
  j["pve"] = spec.pve;
  j["grid_size"] = spec.grid_size;
  j["method"] = std::string(to_string(spec.method));
  j["diag_weight"] = spec.diag_weight;
  j["pve_base"] = std::string(to_string(spec.pve_base));
  if (!spec.truncation.empty()) j["truncation"] = spec.truncation;
  j["weighted_refit"] = spec.weighted_refit;
  if (spec.whole_constrained) j["whole_constrained"] = true;
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// ObservationTable
// ---------------------------------------------------------------------------

std::size_t ObservationTable::curve_of_row(std::size_t row) const { return row_curve_.at(row); }

std::optional<std::size_t> ObservationTable::grouping_index(std::string_view name) const {
  for (std::size_t g = 0; g < group_names_.size(); ++g) {
    if (group_names_[g] == name) return g;
  }
  return std::nullopt;
}

std::optional<std::size_t> ObservationTable::slope_index(std::string_view name) const {
  for (std::size_t s = 0; s < slope_names_.size(); ++s) {
    if (slope_names_[s] == name) return s;
  }
  return std::nullopt;
}

ObservationTable ObservationTable::with_responses(std::vector<double> y) const {
  if (y.size() != y_.size()) {
    throw InputError(InputErrorKind::Dimension, "response vector length does not match table");
  }
  ObservationTable out = *this;
  out.y_ = std::move(y);
  return out;
}

ObservationTable ObservationTable::with_domain(Domain domain) const {
  for (double t : t_) {
    if (!domain.contains(t)) {
      throw InputError(InputErrorKind::Domain, "declared domain clips observation at t=" + format_double(t));
    }
  }
  ObservationTable out = *this;
  out.domain_ = domain;
  return out;
}

ObservationTable::Builder::Builder(std::vector<std::string> grouping_names,
                                   std::vector<std::string> slope_names)
    : group_names_(std::move(grouping_names)), slope_names_(std::move(slope_names)) {}

void ObservationTable::Builder::add_row(std::string_view curve_id, double t, double y,
                                        std::span<const std::string> levels,
                                        std::span<const double> slopes, std::size_t row_number) {
  const std::string where = row_number ? " (row " + std::to_string(row_number) + ")" : std::string();
  if (!std::isfinite(t) || !std::isfinite(y)) {
    throw InputError(InputErrorKind::Parse, "non-finite t or y" + where);
  }
  if (levels.size() != group_names_.size() || slopes.size() != slope_names_.size()) {
    throw InputError(InputErrorKind::Schema, "row has the wrong number of grouping/slope values" + where);
  }
  auto it = index_.find(curve_id);
  if (it == index_.end()) {
    it = index_.emplace(std::string(curve_id), curves_.size()).first;
    CurveRows rows;
    rows.id = std::string(curve_id);
    rows.levels.assign(levels.begin(), levels.end());
    rows.slopes.assign(slopes.begin(), slopes.end());
    for (const auto& level : rows.levels) {
      if (level.empty()) throw InputError(InputErrorKind::Schema, "missing grouping level" + where);
    }
    curves_.push_back(std::move(rows));
  }
  CurveRows& curve = curves_[it->second];
  for (std::size_t g = 0; g < levels.size(); ++g) {
    if (levels[g] != curve.levels[g]) {
      throw InputError(InputErrorKind::Schema, "grouping '" + group_names_[g] +
                                                   "' changes within curve '" + curve.id + "'" + where);
    }
  }
  for (std::size_t s = 0; s < slopes.size(); ++s) {
    if (slopes[s] != curve.slopes[s]) {
      throw InputError(InputErrorKind::Schema, "slope covariate '" + slope_names_[s] +
                                                   "' changes within curve '" + curve.id + "'" + where);
    }
  }
  curve.t.push_back(t);
  curve.y.push_back(y);
}

ObservationTable ObservationTable::Builder::build(std::optional<Domain> declared) && {
  if (curves_.empty()) throw InputError(InputErrorKind::EmptyInput, "no observations");
  ObservationTable table;
  table.group_names_ = group_names_;
  table.slope_names_ = slope_names_;
  table.group_levels_.assign(group_names_.size(), {});
  table.level_names_.assign(group_names_.size(), {});
  table.slope_values_.assign(slope_names_.size(), {});
  std::vector<std::map<std::string, std::uint32_t>> level_index(group_names_.size());

  double lo = curves_.front().t.front();
  double hi = lo;
  for (std::size_t c = 0; c < curves_.size(); ++c) {
    auto& curve = curves_[c];
    table.curve_ids_.push_back(curve.id);
    for (std::size_t r = 0; r < curve.t.size(); ++r) {
      table.t_.push_back(curve.t[r]);
      table.y_.push_back(curve.y[r]);
      table.row_curve_.push_back(static_cast<std::uint32_t>(c));
      lo = std::min(lo, curve.t[r]);
      hi = std::max(hi, curve.t[r]);
    }
    table.offsets_.push_back(table.t_.size());
    for (std::size_t g = 0; g < group_names_.size(); ++g) {
      auto [it, inserted] = level_index[g].emplace(
          curve.levels[g], static_cast<std::uint32_t>(table.level_names_[g].size()));
      if (inserted) table.level_names_[g].push_back(curve.levels[g]);
      table.group_levels_[g].push_back(it->second);
    }
    for (std::size_t s = 0; s < slope_names_.size(); ++s) table.slope_values_[s].push_back(curve.slopes[s]);
  }

  if (declared) {
    if (!(declared->upper > declared->lower)) {
      throw InputError(InputErrorKind::Domain, "declared domain must have upper > lower");
    }
    if (lo < declared->lower || hi > declared->upper) {
      throw InputError(InputErrorKind::Domain, "declared domain [" + format_double(declared->lower) + ", " +
                                                   format_double(declared->upper) + "] clips the data range [" +
                                                   format_double(lo) + ", " + format_double(hi) + "]");
    }
    table.domain_ = *declared;
  } else {
    table.domain_ = Domain{lo, hi > lo ? hi : lo + 1.0};
  }
  return table;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

CsvSchema CsvSchema::from_header(std::span<const std::string> header) {
  CsvSchema schema;
  for (const auto& col : header) {
    if (col.size() > 2 && col.rfind("g_", 0) == 0) schema.groupings[col.substr(2)] = col;
    if (col.size() > 2 && col.rfind("w_", 0) == 0) schema.slopes[col.substr(2)] = col;
  }
  return schema;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    fields.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

ObservationTable load_long_table(std::istream& source, const std::optional<CsvSchema>& schema_in,
                                 std::optional<Domain> domain) {
  std::string line;
  std::size_t line_number = 0;
  bool have_header = false;
  while (std::getline(source, line)) {
    ++line_number;
    if (!trim(line).empty()) {
      have_header = true;
      break;
    }
  }
  if (!have_header) throw InputError(InputErrorKind::EmptyInput, "empty CSV input");

  const auto header = split_csv_line(line);
  const CsvSchema schema = schema_in ? *schema_in : CsvSchema::from_header(header);
  auto column = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw InputError(InputErrorKind::Schema, "missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_id = column(schema.curve_id);
  const std::size_t c_t = column(schema.t);
  const std::size_t c_y = column(schema.y);
  std::vector<std::string> group_names, slope_names;
  std::vector<std::size_t> group_cols, slope_cols;
  for (const auto& [name, col] : schema.groupings) {
    group_names.push_back(name);
    group_cols.push_back(column(col));
  }
  for (const auto& [name, col] : schema.slopes) {
    slope_names.push_back(name);
    slope_cols.push_back(column(col));
  }

  ObservationTable::Builder builder(group_names, slope_names);
  std::vector<std::string> levels(group_cols.size());
  std::vector<double> slopes(slope_cols.size());
  std::size_t data_rows = 0;
  while (std::getline(source, line)) {
    ++line_number;
    if (trim(line).empty()) continue;
    ++data_rows;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw InputError(InputErrorKind::Parse, "row " + std::to_string(line_number) + ": expected " +
                                                  std::to_string(header.size()) + " fields, got " +
                                                  std::to_string(fields.size()));
    }
    double t = 0.0, y = 0.0;
    if (!parse_number(fields[c_t], t)) {
      throw InputError(InputErrorKind::Parse, "row " + std::to_string(line_number) + ": t is not numeric ('" +
                                                  fields[c_t] + "')");
    }
    if (!parse_number(fields[c_y], y)) {
      throw InputError(InputErrorKind::Parse, "row " + std::to_string(line_number) + ": y is not numeric ('" +
                                                  fields[c_y] + "')");
    }
    for (std::size_t g = 0; g < group_cols.size(); ++g) levels[g] = fields[group_cols[g]];
    for (std::size_t s = 0; s < slope_cols.size(); ++s) {
      if (!parse_number(fields[slope_cols[s]], slopes[s])) {
        throw InputError(InputErrorKind::Parse, "row " + std::to_string(line_number) + ": slope '" +
                                                    slope_names[s] + "' is not numeric");
      }
    }
    if (fields[c_id].empty()) {
      throw InputError(InputErrorKind::Parse, "row " + std::to_string(line_number) + ": empty curve id");
    }
    builder.add_row(fields[c_id], t, y, levels, slopes, line_number);
  }
  if (data_rows == 0) throw InputError(InputErrorKind::EmptyInput, "CSV has a header but no rows");
  return std::move(builder).build(domain);
}

ObservationTable load_long_table_file(const std::string& path, std::optional<Domain> domain) {
  std::ifstream in(path);
  if (!in) throw InputError(InputErrorKind::Schema, "cannot open data file '" + path + "'");
  return load_long_table(in, std::nullopt, domain);
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ec == std::errc() ? ptr : buf);
}

void write_long_table(std::ostream& out, const ObservationTable& table) {
  out << "curve_id,t,y";
  for (const auto& g : table.grouping_names()) out << ",g_" << g;
  for (const auto& s : table.slope_names()) out << ",w_" << s;
  out << '\n';
  for (std::size_t c = 0; c < table.curve_count(); ++c) {
    for (std::size_t r = table.curve_begin(c); r < table.curve_end(c); ++r) {
      out << table.curve_ids()[c] << ',' << format_double(table.t()[r]) << ',' << format_double(table.y()[r]);
      for (std::size_t g = 0; g < table.grouping_names().size(); ++g) {
        out << ',' << table.level_names(g)[table.levels(g)[c]];
      }
      for (std::size_t s = 0; s < table.slope_names().size(); ++s) out << ',' << format_double(table.slope(s)[c]);
      out << '\n';
    }
  }
}

ObservationTable center_responses(const ObservationTable& table, std::span<const double> mean_values) {
  if (mean_values.size() != table.row_count()) {
    throw InputError(InputErrorKind::Dimension, "mean evaluations do not match the number of rows");
  }
  std::vector<double> y(table.y().begin(), table.y().end());
  for (std::size_t r = 0; r < y.size(); ++r) y[r] -= mean_values[r];
  return table.with_responses(std::move(y));
}

}  // namespace symcov
