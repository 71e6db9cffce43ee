#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace entropy {

enum class ErrorCode {
    // context broker
    MalformedId,
    UnknownEntityType,
    AttributeWithoutUnit,
    UnknownEntity,
    StaleTimestamp,
    FutureTimestamp,
    UnknownSubscription,
    // timeseries store
    UnitMismatch,
    NonFiniteValue,
    InvalidRange,
    ZeroBucketWidth,
    UnknownSeries,
    UnsupportedBucketWidth,
    // stream processor
    UnknownSensor,
    UnknownStream,
    UnknownCondition,
    InvalidSpec,
    // composite entities
    CycleDetected,
    UnknownComposite,
    // semantic fusion
    UnknownTerm,
    MissingRequiredField,
    UnmappedField,
    InvalidDocument,
    UnknownRule,
    // recommender
    UnsupportedExpressionShape,
    MissingTemplate,
    TaskWithoutValidationSpec,
    UnexpectedValidationSpec,
    UnknownRecommendation,
    WrongState,
    NoValidationSpec,
    NoMatchingTemplate,
    UnknownUser,
    // analytics
    UnknownField,
    MalformedTree,
    InvalidConfig,
    EmptyInput,
    DimensionMismatch,
    KTooLarge,
    UnknownTemplate,
    UnknownAnalysis,
    // platform
    UnknownCampaign,
    UnknownSpace,
    CampaignNotActive,
    Unauthorized,
    BadRequest,
    NotFound,
    ConnectionFailure,
};

/// Machine-readable kebab-case code, e.g. "stale-timestamp".
std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

} // namespace entropy
