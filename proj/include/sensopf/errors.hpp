#pragma once

#include <stdexcept>
#include <string>

namespace sensopf {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Feeder / topology
struct NotATree : Error {
    explicit NotATree(const std::string& msg) : Error(msg) {}
};
struct NonPositiveImpedance : Error {
    explicit NonPositiveImpedance(const std::string& msg) : Error(msg) {}
};
struct InvalidFeeder : Error {
    explicit InvalidFeeder(const std::string& msg) : Error(msg) {}
};
struct NotPositiveDefinite : Error {
    explicit NotPositiveDefinite(const std::string& msg) : Error(msg) {}
};

// Generic numeric plumbing
struct DimensionMismatch : Error {
    explicit DimensionMismatch(const std::string& msg) : Error(msg) {}
};
struct SchemaError : Error {
    explicit SchemaError(const std::string& msg) : Error(msg) {}
};
struct IndexOutOfRange : Error {
    explicit IndexOutOfRange(const std::string& msg) : Error(msg) {}
};

// QP / sensitivity
struct InfeasibleQp : Error {
    explicit InfeasibleQp(const std::string& msg) : Error(msg) {}
};
struct AmbiguousActivity : Error {
    explicit AmbiguousActivity(const std::string& msg) : Error(msg) {}
};
struct DegenerateDuals : Error {
    explicit DegenerateDuals(const std::string& msg) : Error(msg) {}
};

// Neural network / training
struct BadDimensions : Error {
    explicit BadDimensions(const std::string& msg) : Error(msg) {}
};
struct EmptyBatch : Error {
    explicit EmptyBatch(const std::string& msg) : Error(msg) {}
};
struct NonFiniteLoss : Error {
    NonFiniteLoss(const std::string& msg, int at_epoch) : Error(msg), epoch(at_epoch) {}
    int epoch;
};

// Scenario generation
struct BadConfig : Error {
    explicit BadConfig(const std::string& msg) : Error(msg) {}
};
struct DegenerateProfile : Error {
    explicit DegenerateProfile(const std::string& msg) : Error(msg) {}
};
struct EmptySet : Error {
    explicit EmptySet(const std::string& msg) : Error(msg) {}
};

}  // namespace sensopf
