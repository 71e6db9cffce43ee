#pragma once

#include "entropy/analytics/analytics.hpp"
#include "entropy/broker/context_broker.hpp"
#include "entropy/composite/composite_engine.hpp"
#include "entropy/fusion/document_store.hpp"
#include "entropy/fusion/mapping.hpp"
#include "entropy/platform/config.hpp"
#include "entropy/recommender/recommender.hpp"
#include "entropy/stream/stream_processor.hpp"
#include "entropy/tsdb/timeseries_store.hpp"

#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace entropy::platform {

enum class CampaignStatus { Draft, Active, Ended };

std::string_view to_string(CampaignStatus s);

struct Campaign {
    std::string id;
    std::string name;
    std::vector<std::string> spaces;
    std::vector<std::string> users;
    TimePoint start{};
    std::optional<TimePoint> end;
    CampaignStatus status = CampaignStatus::Draft;
    /// Series attribute summed for consumption figures.
    std::string energy_attribute = "energy";
    std::string energy_unit = "kWh";
    std::vector<std::string> streams;
    std::vector<std::string> rules;
};

void to_json(json& j, const Campaign& c);
/// Reads the creation body; status and attachments are not taken from input.
Campaign campaign_from_json(const json& j);

struct SpaceConsumption {
    std::string space;
    double current = 0.0;
    double previous = 0.0;
    std::optional<double> delta_percent;
};

struct DashboardSummary {
    std::string campaign_id;
    CampaignStatus status = CampaignStatus::Draft;
    TimePoint from{}, to{};
    TimePoint previous_from{};
    double current = 0.0;
    double previous = 0.0;
    std::size_t current_samples = 0;
    std::size_t previous_samples = 0;
    /// Absent when the previous period holds no consumption.
    std::optional<double> delta_percent;
    std::string attribute;
    std::string unit;
    std::vector<SpaceConsumption> spaces;
    std::size_t active_streams = 0;
    std::size_t delivered = 0;
    std::size_t accepted = 0;
    std::size_t validated = 0;
    TimePoint computed_at{};
};

void to_json(json& j, const DashboardSummary& d);

enum class ItemStatus { Accepted, DroppedAsOutlier, Error };

std::string_view to_string(ItemStatus s);

struct IngestItem {
    std::size_t index = 0;
    ItemStatus status = ItemStatus::Accepted;
    std::optional<std::string> verdict;
    std::optional<std::string> code;
    std::optional<std::string> message;
};

struct IngestReport {
    std::size_t accepted = 0;
    std::size_t dropped = 0;
    std::size_t errors = 0;
    std::vector<IngestItem> items;
};

void to_json(json& j, const IngestReport& r);

/// Single-process wiring of every module behind one clock.
class Platform {
public:
    explicit Platform(const PlatformConfig& config);
    ~Platform();
    Platform(const Platform&) = delete;
    Platform& operator=(const Platform&) = delete;

    const PlatformConfig& config() const { return config_; }
    const Clock& clock() const { return *clock_; }
    bool simulated() const { return manual_ != nullptr; }

    broker::ContextBroker& broker() { return *broker_; }
    tsdb::TimeSeriesStore& store() { return *store_; }
    stream::StreamProcessor& processor() { return *processor_; }
    composite::CompositeEngine& composites() { return *composites_; }
    const fusion::Enricher& enricher() const { return *enricher_; }
    fusion::DocumentStore& documents() { return *documents_; }
    recommender::Recommender& recommender() { return *recommender_; }
    analytics::AnalyticsEngine& analytics() { return *analytics_; }

    /// Simulated mode only: moves time forward and runs every due tick and sweep.
    void advance_clock(TimePoint to);
    /// Runs ticks and sweeps due at the current clock time.
    void tick();
    /// Simulated mode: lets the clock follow a data timestamp, running ticks strictly before it.
    void follow(TimePoint t);

    /// Simulated mode advances the clock to each item; ticks run strictly before the newest item time.
    /// A repeated idempotency key returns the stored report without ingesting.
    IngestReport ingest(const json& items, const std::optional<std::string>& idempotency_key = std::nullopt);

    Campaign create_campaign(Campaign c);
    Campaign campaign(const std::string& id) const;
    std::vector<Campaign> campaigns() const;
    /// Raises unknown-space when a space is not a broker entity.
    Campaign activate_campaign(const std::string& id);
    /// Stores the final summary over [start, end).
    Campaign end_campaign(const std::string& id);
    /// Defaults to [start, now) or [start, end) for an ended campaign, whose stored summary is returned.
    DashboardSummary dashboard(const std::string& id, std::optional<TimePoint> from = std::nullopt,
                               std::optional<TimePoint> to = std::nullopt) const;

    /// A campaign id attaches the stream; the campaign must be Active.
    std::string register_stream(stream::StreamSpec spec, const std::optional<std::string>& campaign, bool activate);
    std::string register_rule(recommender::RuleSpec spec, const std::optional<std::string>& campaign);

private:
    void attach(const std::optional<std::string>& campaign, const std::string& id, bool is_stream);
    DashboardSummary compute_summary(const Campaign& c, TimePoint from, TimePoint to) const;
    void run_due(TimePoint now);
    void follow_locked(TimePoint t);

    PlatformConfig config_;
    std::unique_ptr<Clock> clock_;
    ManualClock* manual_ = nullptr;
    std::unique_ptr<broker::ContextBroker> broker_;
    std::unique_ptr<tsdb::TimeSeriesStore> store_;
    std::unique_ptr<stream::StreamProcessor> processor_;
    std::unique_ptr<composite::CompositeEngine> composites_;
    std::unique_ptr<fusion::Enricher> enricher_;
    std::unique_ptr<fusion::DocumentStore> documents_;
    std::unique_ptr<recommender::Recommender> recommender_;
    std::unique_ptr<analytics::AnalyticsEngine> analytics_;

    std::mutex ingest_mu_;
    std::map<std::string, IngestReport> idempotent_reports_;
    std::deque<std::string> idempotency_order_;

    mutable std::mutex campaigns_mu_;
    std::map<std::string, Campaign> campaigns_;
    std::map<std::string, DashboardSummary> final_summaries_;
    std::uint64_t next_campaign_ = 1;
};

} // namespace entropy::platform
