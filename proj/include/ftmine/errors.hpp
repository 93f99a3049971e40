#pragma once

#include <stdexcept>
#include <string>

namespace ftmine {

// Base for all runtime errors raised by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Target (or peer) rank has fail-stopped. Once raised for a rank, every
// later operation involving that rank raises it again.
struct RankDeadError : Error {
    explicit RankDeadError(int rank)
        : Error("rank " + std::to_string(rank) + " is dead"), rank(rank) {}
    int rank;
};

struct OutOfBoundsError : Error {
    using Error::Error;
};

struct InvalidScheduleError : Error {
    using Error::Error;
};

struct InvalidRangeError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct CorruptBufferError : Error {
    using Error::Error;
};

struct OrderMismatchError : Error {
    using Error::Error;
};

struct DimMismatchError : Error {
    using Error::Error;
};

struct CapacityMismatchError : Error {
    using Error::Error;
};

struct MissingCheckpointError : Error {
    using Error::Error;
};

struct UsageError : Error {
    using Error::Error;
};

struct TooLargeForOracleError : Error {
    using Error::Error;
};

}  // namespace ftmine
