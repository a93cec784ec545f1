#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace symcov {

struct Domain {
  double lower = 0.0;
  double upper = 1.0;

  [[nodiscard]] double length() const noexcept { return upper - lower; }
  [[nodiscard]] bool contains(double t) const noexcept { return t >= lower && t <= upper; }
};

// ---------------------------------------------------------------------------
// Model specification
// ---------------------------------------------------------------------------

// Grouping value that marks the smooth curve-level residual process E_i.
inline constexpr std::string_view kCurveGrouping = "CURVE";
// Grouping value for a process shared by every curve (a single level).
inline constexpr std::string_view kNoGrouping = "NONE";

enum class ComponentKind { Intercept, Slope };

struct ComponentSpec {
  ComponentKind kind = ComponentKind::Intercept;
  std::string covariate;  // slope covariate name, empty for intercepts
};

struct MarginalSpec {
  int degree = 3;
  int dimension = 10;
  int penalty_order = 3;
};

enum class PenaltyKind { KronSum, KronProd };

struct RandomEffectTermSpec {
  std::string name;
  std::string grouping{kCurveGrouping};
  std::vector<ComponentSpec> components{ComponentSpec{}};
  MarginalSpec marginal_basis;
  PenaltyKind penalty_kind = PenaltyKind::KronSum;

  [[nodiscard]] bool is_curve_term() const noexcept { return grouping == kCurveGrouping; }
  [[nodiscard]] std::size_t rho() const noexcept { return components.size(); }
  void validate() const;
};

enum class Method { TriConstr, TriConstrW, Tri, Whole };
enum class PveBase { Process, Observation };

struct ModelSpec {
  std::optional<Domain> domain;
  std::vector<RandomEffectTermSpec> terms;
  MarginalSpec mean_spec{3, 10, 2};
  double pve = 0.95;
  int grid_size = 100;
  Method method = Method::TriConstr;
  double diag_weight = 0.5;
  PveBase pve_base = PveBase::Process;
  // Optional fixed truncation levels by term name; overrides the PVE rule.
  std::map<std::string, int> truncation;
  // One re-fit with inverse cross-product variances as row weights.
  bool weighted_refit = false;
  // WHOLE normally estimates all F^2 coefficients per term; this applies the
  // symmetry constraint to it instead.
  bool whole_constrained = false;

  void validate() const;
  [[nodiscard]] const RandomEffectTermSpec& curve_term() const;
  [[nodiscard]] std::size_t curve_term_index() const;

  // The standard model with independent curves: one CURVE term.
  static ModelSpec independent(MarginalSpec cov_basis = {}, MarginalSpec mean_basis = {3, 10, 2});
};

[[nodiscard]] std::string_view to_string(Method method) noexcept;
[[nodiscard]] Method parse_method(std::string_view text);
[[nodiscard]] std::string_view to_string(PenaltyKind kind) noexcept;
[[nodiscard]] PenaltyKind parse_penalty_kind(std::string_view text);
[[nodiscard]] std::string_view to_string(PveBase base) noexcept;
[[nodiscard]] PveBase parse_pve_base(std::string_view text);

[[nodiscard]] ModelSpec parse_model_spec(std::string_view json_text);
[[nodiscard]] std::string model_spec_to_json(const ModelSpec& spec);

// ---------------------------------------------------------------------------
// Observations
// ---------------------------------------------------------------------------

// Long-format functional observations. Rows are stored grouped by curve in
// order of first appearance; within a curve the input order is kept. Curve
// ids and group levels are mapped to dense indices, with the original labels
// kept for output. Grouping levels and slope covariates are per-curve
// properties.
class ObservationTable {
 public:
  class Builder;

  [[nodiscard]] std::size_t curve_count() const noexcept { return curve_ids_.size(); }
  [[nodiscard]] std::size_t row_count() const noexcept { return t_.size(); }
  [[nodiscard]] std::size_t curve_begin(std::size_t curve) const { return offsets_[curve]; }
  [[nodiscard]] std::size_t curve_end(std::size_t curve) const { return offsets_[curve + 1]; }
  [[nodiscard]] std::size_t curve_size(std::size_t curve) const {
    return offsets_[curve + 1] - offsets_[curve];
  }
  [[nodiscard]] std::size_t curve_of_row(std::size_t row) const;

  [[nodiscard]] std::span<const double> t() const noexcept { return t_; }
  [[nodiscard]] std::span<const double> y() const noexcept { return y_; }
  [[nodiscard]] const std::vector<std::string>& curve_ids() const noexcept { return curve_ids_; }
  [[nodiscard]] const Domain& domain() const noexcept { return domain_; }

  [[nodiscard]] const std::vector<std::string>& grouping_names() const noexcept { return group_names_; }
  [[nodiscard]] std::optional<std::size_t> grouping_index(std::string_view name) const;
  [[nodiscard]] std::span<const std::uint32_t> levels(std::size_t grouping) const {
    return group_levels_.at(grouping);
  }
  [[nodiscard]] const std::vector<std::string>& level_names(std::size_t grouping) const {
    return level_names_.at(grouping);
  }

  [[nodiscard]] const std::vector<std::string>& slope_names() const noexcept { return slope_names_; }
  [[nodiscard]] std::optional<std::size_t> slope_index(std::string_view name) const;
  [[nodiscard]] std::span<const double> slope(std::size_t covariate) const {
    return slope_values_.at(covariate);
  }

  // Same table with the responses replaced; `y` must have row_count() entries.
  [[nodiscard]] ObservationTable with_responses(std::vector<double> y) const;
  // Same table on a different (containing) domain.
  [[nodiscard]] ObservationTable with_domain(Domain domain) const;

 private:
  std::vector<std::string> curve_ids_;
  std::vector<std::size_t> offsets_{0};
  std::vector<double> t_;
  std::vector<double> y_;
  std::vector<std::uint32_t> row_curve_;
  Domain domain_;
  std::vector<std::string> group_names_;
  std::vector<std::vector<std::uint32_t>> group_levels_;  // [grouping][curve]
  std::vector<std::vector<std::string>> level_names_;     // [grouping][level]
  std::vector<std::string> slope_names_;
  std::vector<std::vector<double>> slope_values_;  // [covariate][curve]
};

class ObservationTable::Builder {
 public:
  Builder(std::vector<std::string> grouping_names, std::vector<std::string> slope_names);

  // Adds one row. `levels` and `slopes` follow the order given at
  // construction. Row numbers are only used in error messages.
  void add_row(std::string_view curve_id, double t, double y, std::span<const std::string> levels,
               std::span<const double> slopes, std::size_t row_number = 0);

  // Validates and assembles the table. Without a declared domain the data
  // range is used; a declared domain that clips data is an error.
  [[nodiscard]] ObservationTable build(std::optional<Domain> declared = std::nullopt) &&;

 private:
  struct CurveRows {
    std::string id;
    std::vector<double> t, y;
    std::vector<std::string> levels;
    std::vector<double> slopes;
  };
  std::vector<std::string> group_names_;
  std::vector<std::string> slope_names_;
  std::vector<CurveRows> curves_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Column mapping for CSV ingestion.
struct CsvSchema {
  std::string curve_id = "curve_id";
  std::string t = "t";
  std::string y = "y";
  std::map<std::string, std::string> groupings;  // grouping name -> column
  std::map<std::string, std::string> slopes;     // covariate name -> column

  // Required columns plus every `g_<name>` and `w_<name>` column of a header.
  [[nodiscard]] static CsvSchema from_header(std::span<const std::string> header);
};

[[nodiscard]] std::vector<std::string> split_csv_line(std::string_view line);

// Reads a header-first CSV. With no schema the header decides the columns.
[[nodiscard]] ObservationTable load_long_table(std::istream& source,
                                               const std::optional<CsvSchema>& schema = std::nullopt,
                                               std::optional<Domain> domain = std::nullopt);
[[nodiscard]] ObservationTable load_long_table_file(const std::string& path,
                                                    std::optional<Domain> domain = std::nullopt);

// Writes `curve_id,t,y,g_*,w_*` with shortest round-trip number formatting.
void write_long_table(std::ostream& out, const ObservationTable& table);

// Shortest decimal representation that parses back to the same double.
[[nodiscard]] std::string format_double(double value);

// Replaces y by y - mean_values (one value per row).
[[nodiscard]] ObservationTable center_responses(const ObservationTable& table,
                                                std::span<const double> mean_values);

}  // namespace symcov
