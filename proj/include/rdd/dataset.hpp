#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rdd {

enum class TreatedSide { AtOrAbove, Below };
enum class Compliance { Sharp, Fuzzy };

struct RDDesign {
    double cutoff = 0.0;
    TreatedSide treated_side = TreatedSide::AtOrAbove;
    Compliance compliance = Compliance::Sharp;
};

struct Covariate {
    std::string name;
    std::vector<double> values;  // NaN marks a missing cell
};

// Immutable after construction. Rows missing score or outcome never make it
// in; covariate cells may be NaN and are dropped per covariate downstream.
class RDDataset {
public:
    RDDataset(std::vector<double> score, std::vector<double> outcome,
              std::optional<std::vector<double>> received = std::nullopt,
              std::vector<Covariate> covariates = {}, std::size_t dropped_rows = 0);

    std::size_t size() const noexcept { return score_.size(); }
    const std::vector<double>& score() const noexcept { return score_; }
    const std::vector<double>& outcome() const noexcept { return outcome_; }
    bool has_received() const noexcept { return received_.has_value(); }
    const std::vector<double>& received() const;
    const std::vector<Covariate>& covariates() const noexcept { return covariates_; }
    const Covariate& covariate(const std::string& name) const;
    std::size_t dropped_rows() const noexcept { return dropped_rows_; }

    // Same rows, outcome column replaced.
    RDDataset with_outcome(std::vector<double> outcome) const;
    // Rows for which keep[i] is true, in original order.
    RDDataset filter(const std::vector<bool>& keep) const;

private:
    std::vector<double> score_;
    std::vector<double> outcome_;
    std::optional<std::vector<double>> received_;
    std::vector<Covariate> covariates_;
    std::size_t dropped_rows_ = 0;
};

struct ColumnMap {
    std::string score;
    std::string outcome;  // empty: no outcome column, outcome set to 0
    std::optional<std::string> received;
    std::vector<std::string> covariates;
};

RDDataset load_csv(const std::string& path, const ColumnMap& columns);
RDDataset parse_csv(const std::string& text, const ColumnMap& columns);

// Writes score, outcome, received (if any) and covariates with round-trip
// precision; header names follow `columns`.
std::string to_csv(const RDDataset& data, const ColumnMap& columns);

// 1 iff the score falls on the treated side. Scores equal to the cutoff are
// treated when the treated side is AtOrAbove and control otherwise.
std::vector<std::uint8_t> derive_assignment(const RDDataset& data, const RDDesign& design);
std::vector<std::uint8_t> derive_assignment(const std::vector<double>& score, const RDDesign& design);

// Scores at or above the cutoff regardless of the treated side. Reported
// effects are always the right limit minus the left limit.
inline bool is_above(double x, double cutoff) noexcept { return x >= cutoff; }

struct ScoreProfile {
    std::vector<double> distinct_values;
    std::size_t n = 0;
    std::size_t K = 0;
    std::size_t K_minus = 0;
    std::size_t K_plus = 0;
    std::size_t max_multiplicity = 0;

    bool has_mass_points() const noexcept { return max_multiplicity > 1; }
};

ScoreProfile score_profile(const std::vector<double>& score, double cutoff);
inline ScoreProfile score_profile(const RDDataset& data, const RDDesign& design) {
    return score_profile(data.score(), design.cutoff);
}

}  // namespace rdd
