#include "entropy/core/error.hpp"

namespace entropy {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::MalformedId: return "malformed-id";
    case ErrorCode::UnknownEntityType: return "unknown-entity-type";
    case ErrorCode::AttributeWithoutUnit: return "attribute-without-unit";
    case ErrorCode::UnknownEntity: return "unknown-entity";
    case ErrorCode::StaleTimestamp: return "stale-timestamp";
    case ErrorCode::FutureTimestamp: return "future-timestamp";
    case ErrorCode::UnknownSubscription: return "unknown-subscription";
    case ErrorCode::UnitMismatch: return "unit-mismatch";
    case ErrorCode::NonFiniteValue: return "non-finite-value";
    case ErrorCode::InvalidRange: return "invalid-range";
    case ErrorCode::ZeroBucketWidth: return "zero-bucket-width";
    case ErrorCode::UnknownSeries: return "unknown-series";
    case ErrorCode::UnsupportedBucketWidth: return "unsupported-bucket-width";
    case ErrorCode::UnknownSensor: return "unknown-sensor";
    case ErrorCode::UnknownStream: return "unknown-stream";
    case ErrorCode::UnknownCondition: return "unknown-condition";
    case ErrorCode::InvalidSpec: return "invalid-spec";
    case ErrorCode::CycleDetected: return "cycle-detected";
    case ErrorCode::UnknownComposite: return "unknown-composite";
    case ErrorCode::UnknownTerm: return "unknown-term";
    case ErrorCode::MissingRequiredField: return "missing-required-field";
    case ErrorCode::UnmappedField: return "unmapped-field";
    case ErrorCode::InvalidDocument: return "invalid-document";
    case ErrorCode::UnknownRule: return "unknown-rule";
    case ErrorCode::UnsupportedExpressionShape: return "unsupported-expression-shape";
    case ErrorCode::MissingTemplate: return "missing-template";
    case ErrorCode::TaskWithoutValidationSpec: return "task-without-validation-spec";
    case ErrorCode::UnexpectedValidationSpec: return "unexpected-validation-spec";
    case ErrorCode::UnknownRecommendation: return "unknown-recommendation";
    case ErrorCode::WrongState: return "wrong-state";
    case ErrorCode::NoValidationSpec: return "no-validation-spec";
    case ErrorCode::NoMatchingTemplate: return "no-matching-template";
    case ErrorCode::UnknownUser: return "unknown-user";
    case ErrorCode::UnknownField: return "unknown-field";
    case ErrorCode::MalformedTree: return "malformed-tree";
    case ErrorCode::InvalidConfig: return "invalid-config";
    case ErrorCode::EmptyInput: return "empty-input";
    case ErrorCode::DimensionMismatch: return "dimension-mismatch";
    case ErrorCode::KTooLarge: return "k-too-large";
    case ErrorCode::UnknownTemplate: return "unknown-template";
    case ErrorCode::UnknownAnalysis: return "unknown-analysis";
    case ErrorCode::UnknownCampaign: return "unknown-campaign";
    case ErrorCode::UnknownSpace: return "unknown-space";
    case ErrorCode::CampaignNotActive: return "campaign-not-active";
    case ErrorCode::Unauthorized: return "unauthorized";
    case ErrorCode::BadRequest: return "bad-request";
    case ErrorCode::NotFound: return "not-found";
    case ErrorCode::ConnectionFailure: return "connection-failure";
    }
    return "unknown-error";
}

} // namespace entropy
