#include "rdd/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "rdd/error.hpp"

namespace rdd {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::InvalidInput: return "InvalidInput";
        case ErrorKind::MissingFile: return "MissingFile";
        case ErrorKind::MissingColumn: return "MissingColumn";
        case ErrorKind::DuplicateColumn: return "DuplicateColumn";
        case ErrorKind::NonNumericCell: return "NonNumericCell";
        case ErrorKind::InsufficientObservations: return "InsufficientObservations";
        case ErrorKind::SingularDesign: return "SingularDesign";
        case ErrorKind::DegenerateCurvature: return "DegenerateCurvature";
        case ErrorKind::BandwidthTooSmall: return "BandwidthTooSmall";
        case ErrorKind::ZeroFirstStage: return "ZeroFirstStage";
        case ErrorKind::EmptySide: return "EmptySide";
        case ErrorKind::EmptyGrid: return "EmptyGrid";
        case ErrorKind::EmptyWindow: return "EmptyWindow";
        case ErrorKind::NoBalancedWindow: return "NoBalancedWindow";
        case ErrorKind::DiscreteScore: return "DiscreteScore";
        case ErrorKind::InsufficientBins: return "InsufficientBins";
        case ErrorKind::CutoffOutsideSupport: return "CutoffOutsideSupport";
        case ErrorKind::SideAmbiguous: return "SideAmbiguous";
        case ErrorKind::TooFewObservations: return "TooFewObservations";
        case ErrorKind::InvalidSpec: return "InvalidSpec";
    }
    return "Unknown";
}

RDDataset::RDDataset(std::vector<double> score, std::vector<double> outcome,
                     std::optional<std::vector<double>> received,
                     std::vector<Covariate> covariates, std::size_t dropped_rows)
    : score_(std::move(score)),
      outcome_(std::move(outcome)),
      received_(std::move(received)),
      covariates_(std::move(covariates)),
      dropped_rows_(dropped_rows) {
    const std::size_t n = score_.size();
    if (n == 0) throw Error(ErrorKind::InvalidInput, "dataset has no rows");
    if (outcome_.size() != n) throw Error(ErrorKind::InvalidInput, "outcome length differs from score length");
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(score_[i]) || !std::isfinite(outcome_[i]))
            throw Error(ErrorKind::InvalidInput, "non-finite score or outcome at row " + std::to_string(i));
    }
    if (received_) {
        if (received_->size() != n) throw Error(ErrorKind::InvalidInput, "received length differs from score length");
        for (std::size_t i = 0; i < n; ++i) {
            const double d = (*received_)[i];
            if (d != 0.0 && d != 1.0)
                throw Error(ErrorKind::InvalidInput, "received treatment must be 0 or 1 (row " + std::to_string(i) + ")");
        }
    }
    for (const auto& cov : covariates_) {
        if (cov.values.size() != n)
            throw Error(ErrorKind::InvalidInput, "covariate '" + cov.name + "' length differs from score length");
    }
}

const std::vector<double>& RDDataset::received() const {
    if (!received_) throw Error(ErrorKind::MissingColumn, "dataset has no received-treatment column");
    return *received_;
}

const Covariate& RDDataset::covariate(const std::string& name) const {
    for (const auto& c : covariates_)
        if (c.name == name) return c;
    throw Error(ErrorKind::MissingColumn, "no covariate named '" + name + "'");
}

RDDataset RDDataset::with_outcome(std::vector<double> outcome) const {
    return RDDataset(score_, std::move(outcome), received_, covariates_, dropped_rows_);
}

RDDataset RDDataset::filter(const std::vector<bool>& keep) const {
    if (keep.size() != size()) throw Error(ErrorKind::InvalidInput, "filter mask length mismatch");
    std::vector<double> s, y, d;
    std::vector<Covariate> covs;
    for (const auto& c : covariates_) covs.push_back({c.name, {}});
    for (std::size_t i = 0; i < size(); ++i) {
        if (!keep[i]) continue;
        s.push_back(score_[i]);
        y.push_back(outcome_[i]);
        if (received_) d.push_back((*received_)[i]);
        for (std::size_t k = 0; k < covs.size(); ++k) covs[k].values.push_back(covariates_[k].values[i]);
    }
    std::optional<std::vector<double>> rec;
    if (received_) rec = std::move(d);
    return RDDataset(std::move(s), std::move(y), std::move(rec), std::move(covs), dropped_rows_);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool is_missing_token(const std::string& s) {
    return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "." || s == "null";
}

// NaN for missing tokens; throws on anything else that is not a number.
double parse_cell(const std::string& raw, std::size_t row, const std::string& column) {
    const std::string s = trim(raw);
    if (is_missing_token(s)) return std::numeric_limits<double>::quiet_NaN();
    double value = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last)
        throw Error(ErrorKind::NonNumericCell,
                    "column '" + column + "' row " + std::to_string(row) + ": '" + s + "' is not numeric");
    return value;
}

}  // namespace

RDDataset parse_csv(const std::string& text, const ColumnMap& columns) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::InvalidInput, "empty CSV: header row required");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
        static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF)
        line.erase(0, 3);

    std::map<std::string, std::size_t> index;
    {
        const auto header = split_csv_line(line);
        for (std::size_t j = 0; j < header.size(); ++j) {
            const std::string name = trim(header[j]);
            if (!index.emplace(name, j).second)
                throw Error(ErrorKind::DuplicateColumn, "column '" + name + "' appears twice in header");
        }
    }
    auto locate = [&](const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw Error(ErrorKind::MissingColumn, "column '" + name + "' not found in header");
        return it->second;
    };
    {
        std::vector<std::string> mapped{columns.score};
        if (!columns.outcome.empty()) mapped.push_back(columns.outcome);
        if (columns.received) mapped.push_back(*columns.received);
        mapped.insert(mapped.end(), columns.covariates.begin(), columns.covariates.end());
        std::vector<std::string> sorted = mapped;
        std::sort(sorted.begin(), sorted.end());
        if (auto dup = std::adjacent_find(sorted.begin(), sorted.end()); dup != sorted.end())
            throw Error(ErrorKind::DuplicateColumn, "column '" + *dup + "' is bound more than once");
    }
    const std::size_t js = locate(columns.score);
    std::optional<std::size_t> jy;
    if (!columns.outcome.empty()) jy = locate(columns.outcome);
    std::optional<std::size_t> jd;
    if (columns.received) jd = locate(*columns.received);
    std::vector<std::size_t> jc;
    for (const auto& c : columns.covariates) jc.push_back(locate(c));

    std::vector<double> score, outcome, received;
    std::vector<Covariate> covs;
    for (const auto& c : columns.covariates) covs.push_back({c, {}});
    std::size_t dropped = 0;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const auto f = split_csv_line(line);
        auto cell = [&](std::size_t j, const std::string& name) {
            if (j >= f.size()) return std::numeric_limits<double>::quiet_NaN();
            return parse_cell(f[j], row, name);
        };
        const double x = cell(js, columns.score);
        const double y = jy ? cell(*jy, columns.outcome) : 0.0;
        double d = 0.0;
        if (jd) d = cell(*jd, *columns.received);
        std::vector<double> zs;
        for (std::size_t k = 0; k < jc.size(); ++k) zs.push_back(cell(jc[k], columns.covariates[k]));
        if (!std::isfinite(x) || !std::isfinite(y) || (jd && !std::isfinite(d))) {
            ++dropped;
            continue;
        }
        if (jd && d != 0.0 && d != 1.0)
            throw Error(ErrorKind::InvalidInput,
                        "column '" + *columns.received + "' row " + std::to_string(row) + " must be 0 or 1");
        score.push_back(x);
        outcome.push_back(y);
        if (jd) received.push_back(d);
        for (std::size_t k = 0; k < zs.size(); ++k)
            covs[k].values.push_back(std::isfinite(zs[k]) ? zs[k] : std::numeric_limits<double>::quiet_NaN());
    }
    std::optional<std::vector<double>> rec;
    if (jd) rec = std::move(received);
    return RDDataset(std::move(score), std::move(outcome), std::move(rec), std::move(covs), dropped);
}

RDDataset load_csv(const std::string& path, const ColumnMap& columns) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::MissingFile, "cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_csv(buf.str(), columns);
}

namespace {

std::string format_cell(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::string quote_name(const std::string& s) {
    if (s.find_first_of(",\"") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out.push_back('"');
        out.push_back(ch);
    }
    out.push_back('"');
    return out;
}

}  // namespace

std::string to_csv(const RDDataset& data, const ColumnMap& columns) {
    std::ostringstream out;
    out << quote_name(columns.score) << ',' << quote_name(columns.outcome);
    if (data.has_received()) out << ',' << quote_name(columns.received.value_or("received"));
    for (const auto& c : data.covariates()) out << ',' << quote_name(c.name);
    out << '\n';
    for (std::size_t i = 0; i < data.size(); ++i) {
        out << format_cell(data.score()[i]) << ',' << format_cell(data.outcome()[i]);
        if (data.has_received()) out << ',' << format_cell(data.received()[i]);
        for (const auto& c : data.covariates()) out << ',' << format_cell(c.values[i]);
        out << '\n';
    }
    return out.str();
}

std::vector<std::uint8_t> derive_assignment(const std::vector<double>& score, const RDDesign& design) {
    std::vector<std::uint8_t> t(score.size());
    for (std::size_t i = 0; i < score.size(); ++i) {
        const bool above = is_above(score[i], design.cutoff);
        t[i] = (design.treated_side == TreatedSide::AtOrAbove) == above ? 1 : 0;
    }
    return t;
}

std::vector<std::uint8_t> derive_assignment(const RDDataset& data, const RDDesign& design) {
    return derive_assignment(data.score(), design);
}

ScoreProfile score_profile(const std::vector<double>& score, double cutoff) {
    ScoreProfile prof;
    prof.n = score.size();
    std::vector<double> sorted = score;
    std::sort(sorted.begin(), sorted.end());
    std::size_t run = 0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (i == 0 || sorted[i] != sorted[i - 1]) {
            prof.distinct_values.push_back(sorted[i]);
            run = 1;
        } else {
            ++run;
        }
        prof.max_multiplicity = std::max(prof.max_multiplicity, run);
    }
    prof.K = prof.distinct_values.size();
    prof.K_minus = static_cast<std::size_t>(
        std::lower_bound(prof.distinct_values.begin(), prof.distinct_values.end(), cutoff) -
        prof.distinct_values.begin());
    prof.K_plus = prof.K - prof.K_minus;
    return prof;
}

}  // namespace rdd
