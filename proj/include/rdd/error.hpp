#pragma once

#include <stdexcept>
#include <string>

namespace rdd {

enum class ErrorKind {
    InvalidInput,
    MissingFile,
    MissingColumn,
    DuplicateColumn,
    NonNumericCell,
    InsufficientObservations,
    SingularDesign,
    DegenerateCurvature,
    BandwidthTooSmall,
    ZeroFirstStage,
    EmptySide,
    EmptyGrid,
    EmptyWindow,
    NoBalancedWindow,
    DiscreteScore,
    InsufficientBins,
    CutoffOutsideSupport,
    SideAmbiguous,
    TooFewObservations,
    InvalidSpec,
};

const char* to_string(ErrorKind kind) noexcept;

// Every failure raised by the library carries a kind so callers (and the CLI)
// can map it to an exit status without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace rdd
