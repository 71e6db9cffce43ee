#include "entropy/platform/platform.hpp"

#include "entropy/core/error.hpp"

#include <algorithm>

namespace entropy::platform {

namespace {

constexpr std::size_t kIdempotencyCapacity = 10'000;

std::optional<TimePoint> optional_time(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return time_from_json(j.at(key));
}

std::optional<double> percent_delta(double current, double previous, std::size_t previous_samples) {
    if (previous_samples == 0) return std::nullopt;
    auto d = analytics::relative_delta(current, previous);
    if (!d) return std::nullopt;
    return *d * 100.0;
}

} // namespace

std::string_view to_string(CampaignStatus s) {
    switch (s) {
    case CampaignStatus::Draft: return "Draft";
    case CampaignStatus::Active: return "Active";
    case CampaignStatus::Ended: return "Ended";
    }
    return "Draft";
}

void to_json(json& j, const Campaign& c) {
    j = json{{"id", c.id},
             {"name", c.name},
             {"spaces", c.spaces},
             {"users", c.users},
             {"start", format_iso8601(c.start)},
             {"end", c.end ? json(format_iso8601(*c.end)) : json(nullptr)},
             {"status", to_string(c.status)},
             {"energy_attribute", c.energy_attribute},
             {"energy_unit", c.energy_unit},
             {"streams", c.streams},
             {"rules", c.rules}};
}

Campaign campaign_from_json(const json& j) {
    if (!j.is_object()) fail(ErrorCode::BadRequest, "campaign must be an object");
    Campaign c;
    try {
        c.id = j.value("id", std::string{});
        c.name = j.value("name", std::string{});
        c.spaces = j.value("spaces", std::vector<std::string>{});
        c.users = j.value("users", std::vector<std::string>{});
        if (auto s = optional_time(j, "start")) c.start = *s;
        c.end = optional_time(j, "end");
        c.energy_attribute = j.value("energy_attribute", c.energy_attribute);
        c.energy_unit = j.value("energy_unit", c.energy_unit);
    } catch (const json::exception& e) {
        fail(ErrorCode::BadRequest, e.what());
    }
    return c;
}

void to_json(json& j, const DashboardSummary& d) {
    json spaces = json::array();
    for (const auto& s : d.spaces) {
        spaces.push_back(json{{"space", s.space},
                              {"current", s.current},
                              {"previous", s.previous},
                              {"delta_percent", s.delta_percent ? json(*s.delta_percent) : json(nullptr)}});
    }
    j = json{{"campaign", d.campaign_id},
             {"status", to_string(d.status)},
             {"period", {{"from", format_iso8601(d.from)}, {"to", format_iso8601(d.to)}}},
             {"previous_period", {{"from", format_iso8601(d.previous_from)}, {"to", format_iso8601(d.from)}}},
             {"consumption",
              {{"attribute", d.attribute},
               {"unit", d.unit},
               {"current", d.current},
               {"previous", d.previous},
               {"current_samples", d.current_samples},
               {"previous_samples", d.previous_samples}}},
             {"spaces", std::move(spaces)},
             {"active_streams", d.active_streams},
             {"recommendations", {{"delivered", d.delivered}, {"accepted", d.accepted}, {"validated", d.validated}}},
             {"computed_at", format_iso8601(d.computed_at)}};
    if (d.delta_percent) j["delta_percent"] = *d.delta_percent;
}

std::string_view to_string(ItemStatus s) {
    switch (s) {
    case ItemStatus::Accepted: return "accepted";
    case ItemStatus::DroppedAsOutlier: return "dropped-as-outlier";
    case ItemStatus::Error: return "error";
    }
    return "error";
}

void to_json(json& j, const IngestReport& r) {
    json items = json::array();
    for (const auto& it : r.items) {
        json o{{"index", it.index}, {"status", to_string(it.status)}};
        if (it.verdict) o["verdict"] = *it.verdict;
        if (it.code) o["code"] = *it.code;
        if (it.message) o["message"] = *it.message;
        items.push_back(std::move(o));
    }
    j = json{{"accepted", r.accepted}, {"dropped", r.dropped}, {"errors", r.errors}, {"items", std::move(items)}};
}

Platform::Platform(const PlatformConfig& config) : config_(config) {
    const auto vocab = fusion::Vocabulary::standard();
    if (config_.vocabulary_version != vocab.version()) {
        fail(ErrorCode::InvalidConfig, "vocabulary version " + config_.vocabulary_version + " is not available (have " +
                                           vocab.version() + ")");
    }
    if (config_.clock == ClockMode::Simulated) {
        auto m = std::make_unique<ManualClock>(config_.simulated_start);
        manual_ = m.get();
        clock_ = std::move(m);
    } else {
        clock_ = std::make_unique<SystemClock>();
    }
    broker_ = std::make_unique<broker::ContextBroker>(*clock_);
    tsdb::StoreOptions so;
    if (!config_.data_dir.empty()) {
        so.data_dir = config_.data_dir;
        so.background_flush = true;
    }
    so.flush_window = config_.flush_window;
    store_ = std::make_unique<tsdb::TimeSeriesStore>(so);
    processor_ = std::make_unique<stream::StreamProcessor>(*clock_, *broker_, *store_);
    composites_ = std::make_unique<composite::CompositeEngine>(*broker_);
    enricher_ = std::make_unique<fusion::Enricher>(vocab);
    documents_ = std::make_unique<fusion::DocumentStore>(enricher_->vocabulary());
    recommender::RecommenderConfig rc;
    rc.gamer_type_precedence = config_.gamer_type_precedence;
    rc.validation_window = config_.validation_window;
    recommender_ =
        std::make_unique<recommender::Recommender>(*broker_, *processor_, rc, enricher_.get(), documents_.get());
    analytics_ = std::make_unique<analytics::AnalyticsEngine>(*broker_, *store_, *recommender_, *clock_,
                                                              enricher_.get(), documents_.get());
}

Platform::~Platform() {
    // Listeners into the recommender must go before the processor and broker.
    analytics_.reset();
    recommender_.reset();
    composites_.reset();
    processor_.reset();
    store_.reset();
}

void Platform::run_due(TimePoint now) {
    processor_->advance_to(now);
    recommender_->sweep(now);
}

void Platform::advance_clock(TimePoint to) {
    if (!manual_) fail(ErrorCode::WrongState, "the platform runs on the system clock");
    std::lock_guard lock(ingest_mu_);
    manual_->advance_to(to);
    run_due(manual_->now());
}

void Platform::tick() { run_due(clock_->now()); }

void Platform::follow(TimePoint t) {
    std::lock_guard lock(ingest_mu_);
    follow_locked(t);
}

void Platform::follow_locked(TimePoint t) {
    if (!manual_ || t <= manual_->now()) return;
    run_due(t - Duration{1});
    manual_->advance_to(t);
}

IngestReport Platform::ingest(const json& body, const std::optional<std::string>& idempotency_key) {
    const json* items = &body;
    if (body.is_object() && body.contains("measurements")) items = &body.at("measurements");
    if (!items->is_array()) fail(ErrorCode::BadRequest, "expected an array of measurements");

    std::lock_guard lock(ingest_mu_);
    if (idempotency_key) {
        if (auto it = idempotent_reports_.find(*idempotency_key); it != idempotent_reports_.end()) {
            return it->second;
        }
    }

    IngestReport report;
    std::size_t index = 0;
    for (const auto& raw : *items) {
        IngestItem item;
        item.index = index++;
        try {
            Measurement m;
            try {
                m = raw.get<Measurement>();
            } catch (const json::exception& e) {
                fail(ErrorCode::BadRequest, e.what());
            }
            if (config_.require_registered_sensors && !broker_->find_entity(m.sensor_id)) {
                fail(ErrorCode::UnknownSensor, "sensor '" + m.sensor_id + "' is not registered");
            }
            follow_locked(m.observed_at);
            const auto ev = processor_->ingest(m);
            if (ev.kind == stream::EventKind::CleanedMeasurement) {
                item.status = ItemStatus::Accepted;
                ++report.accepted;
            } else {
                item.status = ItemStatus::DroppedAsOutlier;
                if (ev.verdict) item.verdict = std::string(stream::to_string(*ev.verdict));
                ++report.dropped;
            }
        } catch (const Error& e) {
            item.status = ItemStatus::Error;
            item.code = std::string(to_string(e.code()));
            item.message = e.what();
            ++report.errors;
        }
        report.items.push_back(std::move(item));
    }
    if (!manual_) run_due(clock_->now());

    if (idempotency_key) {
        idempotent_reports_[*idempotency_key] = report;
        idempotency_order_.push_back(*idempotency_key);
        if (idempotency_order_.size() > kIdempotencyCapacity) {
            idempotent_reports_.erase(idempotency_order_.front());
            idempotency_order_.pop_front();
        }
    }
    return report;
}

Campaign Platform::create_campaign(Campaign c) {
    if (c.end && !(c.start < *c.end)) fail(ErrorCode::InvalidRange, "campaign must start before it ends");
    std::lock_guard lock(campaigns_mu_);
    if (c.id.empty()) c.id = "campaign-" + std::to_string(next_campaign_++);
    if (campaigns_.count(c.id)) fail(ErrorCode::BadRequest, "campaign '" + c.id + "' exists");
    if (c.start == TimePoint{}) c.start = clock_->now();
    c.status = CampaignStatus::Draft;
    c.streams.clear();
    c.rules.clear();
    campaigns_[c.id] = c;
    return c;
}

Campaign Platform::campaign(const std::string& id) const {
    std::lock_guard lock(campaigns_mu_);
    auto it = campaigns_.find(id);
    if (it == campaigns_.end()) fail(ErrorCode::UnknownCampaign, "no campaign '" + id + "'");
    return it->second;
}

std::vector<Campaign> Platform::campaigns() const {
    std::lock_guard lock(campaigns_mu_);
    std::vector<Campaign> out;
    for (const auto& [id, c] : campaigns_) out.push_back(c);
    return out;
}

Campaign Platform::activate_campaign(const std::string& id) {
    std::lock_guard lock(campaigns_mu_);
    auto it = campaigns_.find(id);
    if (it == campaigns_.end()) fail(ErrorCode::UnknownCampaign, "no campaign '" + id + "'");
    auto& c = it->second;
    if (c.status != CampaignStatus::Draft) fail(ErrorCode::WrongState, "campaign '" + id + "' is not a draft");
    for (const auto& s : c.spaces) {
        if (!broker_->find_entity(s)) fail(ErrorCode::UnknownSpace, "space '" + s + "' is not registered");
    }
    c.status = CampaignStatus::Active;
    return c;
}

Campaign Platform::end_campaign(const std::string& id) {
    Campaign c;
    {
        std::lock_guard lock(campaigns_mu_);
        auto it = campaigns_.find(id);
        if (it == campaigns_.end()) fail(ErrorCode::UnknownCampaign, "no campaign '" + id + "'");
        if (it->second.status != CampaignStatus::Active) {
            fail(ErrorCode::CampaignNotActive, "campaign '" + id + "' is not active");
        }
        auto& stored = it->second;
        stored.status = CampaignStatus::Ended;
        if (!stored.end || *stored.end > clock_->now()) stored.end = std::max(clock_->now(), stored.start + Duration{1});
        c = stored;
    }
    for (const auto& s : c.streams) processor_->deactivate(s);
    auto summary = compute_summary(c, c.start, *c.end);
    std::lock_guard lock(campaigns_mu_);
    final_summaries_[id] = std::move(summary);
    return c;
}

DashboardSummary Platform::dashboard(const std::string& id, std::optional<TimePoint> from,
                                     std::optional<TimePoint> to) const {
    const auto c = campaign(id);
    if (c.status == CampaignStatus::Ended) {
        std::lock_guard lock(campaigns_mu_);
        return final_summaries_.at(id);
    }
    const TimePoint f = from.value_or(c.start);
    const TimePoint t = to.value_or(std::max(clock_->now(), f + Duration{1}));
    if (!(f < t)) fail(ErrorCode::InvalidRange, "period must satisfy from < to");
    return compute_summary(c, f, t);
}

DashboardSummary Platform::compute_summary(const Campaign& c, TimePoint from, TimePoint to) const {
    DashboardSummary d;
    d.campaign_id = c.id;
    d.status = c.status;
    d.from = from;
    d.to = to;
    d.previous_from = from - (to - from);
    d.attribute = c.energy_attribute;
    d.unit = c.energy_unit;
    d.computed_at = clock_->now();

    const auto sum_over = [&](const std::set<std::string>& sensors, TimePoint a, TimePoint b, std::size_t& n) {
        double total = 0;
        for (const auto& key : store_->series()) {
            if (key.attribute != c.energy_attribute || !sensors.count(key.sensor_id)) continue;
            tsdb::SeriesQuery q;
            q.key = key;
            q.t0 = a;
            q.t1 = b;
            q.quality = Quality::Cleaned;
            for (const auto& m : store_->query_raw(q)) {
                total += m.value;
                ++n;
            }
        }
        return total;
    };

    for (const auto& space : c.spaces) {
        const auto sensors = analytics_->sensors_in({space});
        SpaceConsumption s;
        s.space = space;
        std::size_t cur_n = 0, prev_n = 0;
        s.current = sum_over(sensors, from, to, cur_n);
        s.previous = sum_over(sensors, d.previous_from, from, prev_n);
        s.delta_percent = percent_delta(s.current, s.previous, prev_n);
        d.current += s.current;
        d.previous += s.previous;
        d.current_samples += cur_n;
        d.previous_samples += prev_n;
        d.spaces.push_back(std::move(s));
    }
    d.delta_percent = percent_delta(d.current, d.previous, d.previous_samples);

    for (const auto& sid : c.streams) {
        if (processor_->stream(sid).active) ++d.active_streams;
    }
    const std::set<std::string> spaces(c.spaces.begin(), c.spaces.end());
    for (const auto& r : recommender_->recommendations()) {
        if (!spaces.count(r.space) || !r.delivered_at || *r.delivered_at < from || !(*r.delivered_at < to)) continue;
        ++d.delivered;
        if (r.feedback && r.feedback->kind == recommender::FeedbackKind::Accept) ++d.accepted;
        if (r.state == recommender::RecState::Validated) ++d.validated;
    }
    return d;
}

void Platform::attach(const std::optional<std::string>& campaign, const std::string& id, bool is_stream) {
    if (!campaign) return;
    std::lock_guard lock(campaigns_mu_);
    auto it = campaigns_.find(*campaign);
    if (it == campaigns_.end()) fail(ErrorCode::UnknownCampaign, "no campaign '" + *campaign + "'");
    (is_stream ? it->second.streams : it->second.rules).push_back(id);
}

std::string Platform::register_stream(stream::StreamSpec spec, const std::optional<std::string>& campaign,
                                      bool activate) {
    if (campaign && this->campaign(*campaign).status != CampaignStatus::Active) {
        fail(ErrorCode::CampaignNotActive, "campaign '" + *campaign + "' is not active");
    }
    const auto id = processor_->register_stream(std::move(spec));
    if (activate) processor_->activate(id);
    attach(campaign, id, true);
    return id;
}

std::string Platform::register_rule(recommender::RuleSpec spec, const std::optional<std::string>& campaign) {
    if (campaign && this->campaign(*campaign).status != CampaignStatus::Active) {
        fail(ErrorCode::CampaignNotActive, "campaign '" + *campaign + "' is not active");
    }
    const auto id = recommender_->register_rule(std::move(spec));
    attach(campaign, id, false);
    return id;
}

} // namespace entropy::platform
