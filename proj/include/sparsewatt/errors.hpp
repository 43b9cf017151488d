#pragma once

#include <stdexcept>
#include <string>

namespace sparsewatt {

/// Base class for every error thrown by the library.
struct error : std::runtime_error {
    explicit error(const std::string& what) : std::runtime_error(what) {}
};

// Input violates a documented precondition (bad index, bad dimension, ...).
struct domain_error : error {
    using error::error;
};

// A local index or buffer would exceed its representable range.
struct capacity_error : error {
    using error::error;
};

// Row ranges do not form a valid partition, or a column has no owner.
struct partition_error : error {
    using error::error;
};

// Transport-level failure: mismatched message size, peer gone, aborted group.
struct protocol_error : error {
    using error::error;
};

// An API contract was broken by the caller (e.g. stale halo passed to spmv).
struct contract_error : error {
    using error::error;
};

// Requested experiment size cannot be mapped onto a mesh/task grid.
struct sizing_error : error {
    using error::error;
};

// Krylov breakdown: the operator is not SPD or a denominator vanished.
struct breakdown_error : error {
    using error::error;
};

// A named feature exists in the interface but is intentionally not provided.
struct capability_error : error {
    using error::error;
};

// Malformed input file; message carries the offending line number.
struct parse_error : error {
    using error::error;
};

// A sampling backend could not start (missing counter files etc.).
struct startup_error : error {
    using error::error;
};

// Marker stream is not properly bracketed.
struct nesting_error : error {
    using error::error;
};

// Idle-transition detection found no activity above the baseline.
struct no_activity_error : error {
    using error::error;
};

// Static-power estimation had no idle samples to work with.
struct estimation_error : error {
    using error::error;
};

// Fewer counter readings than the computation needs.
struct insufficient_data_error : error {
    using error::error;
};

// Invalid experiment/solver configuration.
struct config_error : error {
    using error::error;
};

// Filesystem-level failure while reading or writing artifacts.
struct io_error : error {
    using error::error;
};

} // namespace sparsewatt
