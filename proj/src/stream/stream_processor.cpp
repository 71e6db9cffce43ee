#include "entropy/stream/stream_processor.hpp"

#include "entropy/core/error.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <tuple>

namespace entropy::stream {

std::string_view to_string(MeasurementType t) {
    switch (t) {
    case MeasurementType::LastValue: return "LastValue";
    case MeasurementType::WindowAvg: return "WindowAvg";
    case MeasurementType::WindowMin: return "WindowMin";
    case MeasurementType::WindowMax: return "WindowMax";
    }
    return "LastValue";
}

MeasurementType measurement_type_from_string(std::string_view s) {
    if (s == "LastValue") return MeasurementType::LastValue;
    if (s == "WindowAvg") return MeasurementType::WindowAvg;
    if (s == "WindowMin") return MeasurementType::WindowMin;
    if (s == "WindowMax") return MeasurementType::WindowMax;
    fail(ErrorCode::InvalidSpec, "unknown measurement type '" + std::string(s) + "'");
}

std::string_view to_string(EventKind k) {
    switch (k) {
    case EventKind::CleanedMeasurement: return "CleanedMeasurement";
    case EventKind::OutlierDropped: return "OutlierDropped";
    case EventKind::TickSample: return "TickSample";
    case EventKind::ContextChange: return "ContextChange";
    }
    return "TickSample";
}

std::string_view to_string(Trigger t) { return t == Trigger::Level ? "Level" : "Edge"; }

Trigger trigger_from_string(std::string_view s) {
    if (s == "Level" || s == "level") return Trigger::Level;
    if (s == "Edge" || s == "edge") return Trigger::Edge;
    fail(ErrorCode::InvalidSpec, "unknown trigger '" + std::string(s) + "'");
}

void to_json(json& j, const StreamSpec& s) {
    j = json{{"selector", s.selector},
             {"attribute", s.attribute},
             {"frequency", duration_to_json(s.frequency)},
             {"measurement_type", to_string(s.type)}};
    if (s.cleaning) j["cleaning"] = *s.cleaning;
    if (s.staleness_horizon) j["staleness_horizon"] = duration_to_json(*s.staleness_horizon);
}

void from_json(const json& j, StreamSpec& s) {
    s.selector = j.at("selector").get<std::string>();
    s.attribute = j.at("attribute").get<std::string>();
    if (j.contains("frequency")) s.frequency = duration_from_json(j.at("frequency"));
    if (j.contains("measurement_type")) s.type = measurement_type_from_string(j.at("measurement_type").get<std::string>());
    if (j.contains("cleaning") && !j.at("cleaning").is_null()) {
        OutlierPolicy p = default_policy_for(s.attribute);
        from_json(j.at("cleaning"), p);
        s.cleaning = p;
    }
    if (j.contains("staleness_horizon")) s.staleness_horizon = duration_from_json(j.at("staleness_horizon"));
}

void to_json(json& j, const StreamInfo& s) {
    j = json{{"id", s.id}, {"spec", s.spec}, {"active", s.active}, {"ticks", s.ticks}};
    j["activated_at"] = s.activated_at ? json(format_iso8601(*s.activated_at)) : json(nullptr);
    j["next_tick"] = s.next_tick ? json(format_iso8601(*s.next_tick)) : json(nullptr);
}

void to_json(json& j, const StreamEvent& e) {
    j = json{{"seq", e.seq}, {"stream_id", e.stream_id}, {"kind", to_string(e.kind)}, {"at", format_iso8601(e.at)}};
    if (e.measurement) j["measurement"] = *e.measurement;
    if (e.kind == EventKind::TickSample || e.value) j["value"] = e.value ? json(*e.value) : json(nullptr);
    if (e.verdict) j["verdict"] = to_string(*e.verdict);
    if (e.score) j["score"] = *e.score;
    if (!e.source_id.empty()) j["source_id"] = e.source_id;
}

void to_json(json& j, const ConditionSpec& c) {
    j = json{{"stream_id", c.stream_id},
             {"comparator", to_string(c.comparator)},
             {"threshold", c.threshold},
             {"trigger", to_string(c.trigger)}};
    if (c.cooldown) j["cooldown"] = duration_to_json(*c.cooldown);
}

void from_json(const json& j, ConditionSpec& c) {
    c.stream_id = j.at("stream_id").get<std::string>();
    c.comparator = comparator_from_string(j.at("comparator").get<std::string>());
    c.threshold = j.at("threshold").get<double>();
    if (j.contains("trigger")) c.trigger = trigger_from_string(j.at("trigger").get<std::string>());
    if (j.contains("cooldown") && !j.at("cooldown").is_null()) c.cooldown = duration_from_json(j.at("cooldown"));
}

void to_json(json& j, const PatternSpec& p) {
    j = json{{"conditions", p.condition_ids}, {"span", duration_to_json(p.span)}, {"ordered", p.ordered}};
}

void from_json(const json& j, PatternSpec& p) {
    p.condition_ids = j.at("conditions").get<std::vector<std::string>>();
    if (j.contains("span")) p.span = duration_from_json(j.at("span"));
    p.ordered = j.value("ordered", true);
}

void to_json(json& j, const ContextChange& c) {
    j = json{{"source_id", c.source_id},
             {"from_pattern", c.from_pattern},
             {"stream_id", c.stream_id},
             {"at", format_iso8601(c.at)}};
    j["value"] = c.value ? json(*c.value) : json(nullptr);
}

bool evaluate_condition(const ConditionSpec& cond, Duration cooldown, const TickSample& tick, ConditionState& state) {
    if (!tick.value) return false;
    const bool holds = compare(*tick.value, cond.comparator, cond.threshold);
    const bool cooled = !state.last_fired || tick.at - *state.last_fired >= cooldown;
    const bool fired = holds && cooled && (cond.trigger == Trigger::Level || !state.was_true);
    state.was_true = holds;
    if (fired) state.last_fired = tick.at;
    return fired;
}

StreamProcessor::StreamProcessor(const Clock& clock, broker::ContextBroker& broker, tsdb::TimeSeriesStore& store)
    : clock_(clock), broker_(broker), store_(store) {}

StreamProcessor::~StreamProcessor() {
    std::unique_lock lock(streams_mu_);
    for (auto& [id, s] : streams_) broker_.unsubscribe(s->subscription);
}

void StreamProcessor::set_policy(const SeriesKey& key, OutlierPolicy policy) {
    policy.validate();
    std::unique_lock lock(cleaners_mu_);
    policies_[key] = policy;
    cleaners_.erase(key);
}

OutlierPolicy StreamProcessor::policy_for(const SeriesKey& key) const {
    std::shared_lock lock(cleaners_mu_);
    auto it = policies_.find(key);
    return it != policies_.end() ? it->second : default_policy_for(key.attribute);
}

std::shared_ptr<StreamProcessor::Cleaner> StreamProcessor::cleaner_for(const SeriesKey& key) {
    {
        std::shared_lock lock(cleaners_mu_);
        if (auto it = cleaners_.find(key); it != cleaners_.end()) return it->second;
    }
    std::unique_lock lock(cleaners_mu_);
    auto& slot = cleaners_[key];
    if (!slot) {
        auto it = policies_.find(key);
        slot = std::make_shared<Cleaner>(it != policies_.end() ? it->second : default_policy_for(key.attribute));
    }
    return slot;
}

StreamEvent StreamProcessor::ingest(const Measurement& m) {
    const SeriesKey key{m.sensor_id, m.attribute};
    if (auto unit = store_.series_unit(key); unit && *unit != m.unit) {
        fail(ErrorCode::UnitMismatch, "series " + key.str() + " stores '" + *unit + "', got '" + m.unit + "'");
    }
    auto cleaner = cleaner_for(key);
    StreamEvent ev;
    {
        std::lock_guard lock(cleaner->mu);
        const auto decision = cleaner->detector.offer(m.value);
        Measurement stored = m;
        stored.quality = decision.accepted() ? Quality::Cleaned : Quality::Raw;
        store_.append(stored);
        if (decision.accepted()) {
            try {
                broker_.update_attributes(m.sensor_id,
                                          {{m.attribute, broker::AttributeValue{m.value, m.unit, m.observed_at,
                                                                                Quality::Cleaned}}});
            } catch (const Error& e) {
                // Late samples stay in history only; unregistered sensors are tsdb-only.
                if (e.code() != ErrorCode::StaleTimestamp && e.code() != ErrorCode::UnknownEntity) throw;
            }
        }
        ev.seq = next_seq();
        ev.stream_id = key.str();
        ev.kind = decision.accepted() ? EventKind::CleanedMeasurement : EventKind::OutlierDropped;
        ev.at = m.observed_at;
        ev.measurement = stored;
        ev.verdict = decision.verdict;
        ev.score = decision.score;
    }
    if (ev.kind == EventKind::CleanedMeasurement) {
        ++cleaned_;
    } else {
        ++dropped_;
    }

    std::vector<std::shared_ptr<Stream>> targets;
    {
        std::shared_lock lock(streams_mu_);
        if (auto it = streams_by_series_.find(key); it != streams_by_series_.end()) {
            for (const auto& id : it->second) targets.push_back(streams_.at(id));
        }
    }
    for (const auto& s : targets) {
        StreamEvent copy = ev;
        copy.stream_id = s->id;
        std::lock_guard lock(s->mu);
        s->log.push_back(std::move(copy));
    }
    return ev;
}

CleaningStats StreamProcessor::cleaning_stats() const { return {cleaned_.load(), dropped_.load()}; }

std::shared_ptr<StreamProcessor::Stream> StreamProcessor::find_stream(const std::string& id) const {
    std::shared_lock lock(streams_mu_);
    auto it = streams_.find(id);
    return it == streams_.end() ? nullptr : it->second;
}

std::shared_ptr<StreamProcessor::Stream> StreamProcessor::require_stream(const std::string& id) const {
    auto s = find_stream(id);
    if (!s) fail(ErrorCode::UnknownStream, "no stream '" + id + "'");
    return s;
}

void StreamProcessor::buffer_sample(Stream& s, TimePoint t, double v) {
    auto it = std::upper_bound(s.buffer.begin(), s.buffer.end(), t,
                               [](TimePoint x, const auto& sample) { return x < sample.first; });
    if (it != s.buffer.begin() && std::prev(it)->first == t && std::prev(it)->second == v) return;
    s.buffer.insert(it, {t, v});
    const Duration retention = std::max<Duration>(std::chrono::hours(24), 3 * s.spec.frequency);
    const TimePoint newest = s.buffer.back().first;
    while (s.buffer.size() > 1 && s.buffer.front().first < newest - retention) s.buffer.pop_front();
}

void StreamProcessor::on_notification(const std::shared_ptr<Stream>& s, const broker::Notification& n) {
    if (n.attribute != s->spec.attribute || !n.new_value || n.new_value->quality == Quality::Raw) return;
    const auto v = as_number(n.new_value->value);
    if (!v) return;
    std::lock_guard lock(s->mu);
    buffer_sample(*s, n.new_value->observed_at, *v);
}

std::string StreamProcessor::register_stream(StreamSpec spec) {
    if (spec.frequency <= Duration::zero()) fail(ErrorCode::InvalidSpec, "stream frequency must be positive");
    if (spec.staleness_horizon && *spec.staleness_horizon <= Duration::zero()) {
        fail(ErrorCode::InvalidSpec, "staleness horizon must be positive");
    }
    const auto entity = broker_.find_entity(spec.selector);
    if (!entity) fail(ErrorCode::UnknownSensor, "no sensor or composite '" + spec.selector + "'");
    if (spec.cleaning) spec.cleaning->validate();

    auto s = std::make_shared<Stream>();
    {
        std::unique_lock lock(streams_mu_);
        for (const auto& [id, other] : streams_) {
            const auto& o = other->spec;
            if (o.selector == spec.selector && o.attribute == spec.attribute && o.frequency == spec.frequency &&
                o.type == spec.type) {
                return id;
            }
        }
        s->id = "stream-" + std::to_string(next_stream_++);
        s->spec = spec;
        streams_[s->id] = s;
        streams_by_series_[SeriesKey{spec.selector, spec.attribute}].push_back(s->id);
    }
    if (spec.cleaning) set_policy({spec.selector, spec.attribute}, *spec.cleaning);

    broker::Subscription sub;
    sub.selector.ids = std::set<std::string>{spec.selector};
    sub.selector.attributes = {spec.attribute};
    sub.sink_name = "stream-processor/" + s->id;
    std::weak_ptr<Stream> weak = s;
    sub.sink = [this, weak](const broker::Notification& n) {
        if (auto locked = weak.lock()) on_notification(locked, n);
    };
    const auto sub_id = broker_.subscribe(std::move(sub));
    {
        std::lock_guard lock(s->mu);
        s->subscription = sub_id;
    }
    if (auto current = broker_.find_entity(spec.selector)) {
        auto it = current->attributes.find(spec.attribute);
        if (it != current->attributes.end() && it->second.quality != Quality::Raw) {
            if (auto v = as_number(it->second.value)) {
                std::lock_guard lock(s->mu);
                buffer_sample(*s, it->second.observed_at, *v);
            }
        }
    }
    return s->id;
}

void StreamProcessor::activate(const std::string& id) {
    auto s = require_stream(id);
    std::lock_guard lock(s->mu);
    if (s->active) return;
    s->active = true;
    s->activated_at = clock_.now();
    s->next_tick = *s->activated_at + s->spec.frequency;
}

void StreamProcessor::deactivate(const std::string& id) {
    auto s = require_stream(id);
    std::lock_guard lock(s->mu);
    s->active = false;
    s->next_tick.reset();
}

StreamInfo StreamProcessor::stream(const std::string& id) const {
    auto s = require_stream(id);
    std::lock_guard lock(s->mu);
    return {s->id, s->spec, s->active, s->activated_at, s->next_tick, s->ticks};
}

std::vector<StreamInfo> StreamProcessor::streams() const {
    std::vector<std::string> ids;
    {
        std::shared_lock lock(streams_mu_);
        for (const auto& [id, s] : streams_) ids.push_back(id);
    }
    std::vector<StreamInfo> out;
    for (const auto& id : ids) out.push_back(stream(id));
    return out;
}

std::optional<TickSample> StreamProcessor::tick_locked(const Stream& s, TimePoint now) {
    TickSample tick{s.id, now, std::nullopt, 0};
    const auto end = std::upper_bound(s.buffer.begin(), s.buffer.end(), now,
                                      [](TimePoint x, const auto& sample) { return x < sample.first; });
    if (s.spec.type == MeasurementType::LastValue) {
        if (end == s.buffer.begin()) return tick;
        const auto& last = *std::prev(end);
        const Duration horizon = s.spec.staleness_horizon.value_or(2 * s.spec.frequency);
        if (now - last.first > horizon) return tick;
        tick.value = last.second;
        tick.sample_count = 1;
        return tick;
    }
    const TimePoint from = now - s.spec.frequency;
    double acc = 0;
    for (auto it = end; it != s.buffer.begin();) {
        --it;
        if (it->first <= from) break;
        const double v = it->second;
        if (tick.sample_count == 0) {
            acc = v;
        } else if (s.spec.type == MeasurementType::WindowAvg) {
            acc += v;
        } else if (s.spec.type == MeasurementType::WindowMin) {
            acc = std::min(acc, v);
        } else {
            acc = std::max(acc, v);
        }
        ++tick.sample_count;
    }
    if (tick.sample_count > 0) {
        tick.value = s.spec.type == MeasurementType::WindowAvg ? acc / static_cast<double>(tick.sample_count) : acc;
    }
    return tick;
}

std::optional<TickSample> StreamProcessor::evaluate_tick(const std::string& id, TimePoint now) const {
    auto s = require_stream(id);
    std::lock_guard lock(s->mu);
    auto tick = tick_locked(*s, now);
    if (!tick || !tick->value) return std::nullopt;
    return tick;
}

std::vector<std::pair<TimePoint, double>> StreamProcessor::samples(const std::string& id, TimePoint t0,
                                                                   TimePoint t1) const {
    auto s = require_stream(id);
    std::lock_guard lock(s->mu);
    std::vector<std::pair<TimePoint, double>> out;
    for (const auto& sample : s->buffer) {
        if (sample.first >= t0 && sample.first <= t1) out.push_back(sample);
    }
    return out;
}

std::string StreamProcessor::register_condition(ConditionSpec spec) {
    auto s = require_stream(spec.stream_id);
    if (spec.cooldown && *spec.cooldown < Duration::zero()) fail(ErrorCode::InvalidSpec, "cooldown must be >= 0");
    Condition c;
    c.spec = spec;
    c.cooldown = spec.cooldown.value_or(s->spec.frequency);
    std::lock_guard lock(tick_mu_);
    c.id = "cond-" + std::to_string(next_condition_++);
    const auto id = c.id;
    conditions_.emplace(id, std::move(c));
    std::lock_guard slock(s->mu);
    s->condition_ids.push_back(id);
    return id;
}

ConditionSpec StreamProcessor::condition(const std::string& id) const {
    std::lock_guard lock(tick_mu_);
    auto it = conditions_.find(id);
    if (it == conditions_.end()) fail(ErrorCode::UnknownCondition, "no condition '" + id + "'");
    return it->second.spec;
}

std::string StreamProcessor::register_pattern(PatternSpec spec) {
    if (spec.condition_ids.empty()) fail(ErrorCode::InvalidSpec, "pattern needs at least one condition");
    if (spec.span <= Duration::zero()) fail(ErrorCode::InvalidSpec, "pattern span must be positive");
    const std::set<std::string> unique(spec.condition_ids.begin(), spec.condition_ids.end());
    if (unique.size() != spec.condition_ids.size()) fail(ErrorCode::InvalidSpec, "pattern lists a condition twice");
    std::lock_guard lock(tick_mu_);
    for (const auto& c : spec.condition_ids) {
        if (!conditions_.count(c)) fail(ErrorCode::UnknownCondition, "no condition '" + c + "'");
    }
    Pattern p;
    p.id = "pattern-" + std::to_string(next_pattern_++);
    p.spec = std::move(spec);
    const auto id = p.id;
    patterns_.emplace(id, std::move(p));
    return id;
}

void StreamProcessor::on_context_change(ContextListener listener) {
    std::lock_guard lock(tick_mu_);
    listeners_.push_back(std::move(listener));
}

bool StreamProcessor::pattern_satisfied(const Pattern& p) const {
    const auto& ids = p.spec.condition_ids;
    for (const auto& c : ids) {
        auto it = p.history.find(c);
        if (it == p.history.end() || it->second.empty()) return false;
    }
    if (!p.spec.ordered) return true;
    // Greedy chain: earliest successor of each member after the previous one.
    for (const TimePoint start : p.history.at(ids.front())) {
        TimePoint prev = start;
        bool complete = true;
        for (std::size_t i = 1; i < ids.size() && complete; ++i) {
            const auto& hist = p.history.at(ids[i]);
            auto next = std::lower_bound(hist.begin(), hist.end(), prev);
            if (next == hist.end()) {
                complete = false;
            } else {
                prev = *next;
            }
        }
        if (complete) return true;
    }
    return false;
}

std::size_t StreamProcessor::advance_to(TimePoint now) {
    std::lock_guard advance(advance_mu_);
    std::vector<std::tuple<TimePoint, std::string, std::shared_ptr<Stream>>> due;
    {
        std::shared_lock lock(streams_mu_);
        for (const auto& [id, s] : streams_) {
            std::lock_guard slock(s->mu);
            if (!s->active || !s->next_tick) continue;
            for (auto t = *s->next_tick; t <= now; t += s->spec.frequency) due.emplace_back(t, id, s);
        }
    }
    std::sort(due.begin(), due.end(),
              [](const auto& a, const auto& b) { return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b)); });

    std::vector<ContextChange> changes;
    std::vector<ContextListener> listeners;
    std::size_t evaluated = 0;
    {
        std::lock_guard tick_lock(tick_mu_);
        for (const auto& [t, id, s] : due) {
            TickSample tick;
            std::vector<std::string> cond_ids;
            {
                std::lock_guard slock(s->mu);
                if (!s->active || s->next_tick != t) continue;
                tick = *tick_locked(*s, t);
                s->next_tick = t + s->spec.frequency;
                ++s->ticks;
                StreamEvent ev;
                ev.seq = next_seq();
                ev.stream_id = s->id;
                ev.kind = EventKind::TickSample;
                ev.at = t;
                ev.value = tick.value;
                s->log.push_back(std::move(ev));
                cond_ids = s->condition_ids;
            }
            ++evaluated;
            for (const auto& cid : cond_ids) {
                auto& c = conditions_.at(cid);
                if (!evaluate_condition(c.spec, c.cooldown, tick, c.state)) continue;
                std::vector<ContextChange> fired{{cid, false, s->id, t, tick.value}};
                for (auto& [pid, p] : patterns_) {
                    const auto& members = p.spec.condition_ids;
                    if (std::find(members.begin(), members.end(), cid) == members.end()) continue;
                    p.history[cid].push_back(t);
                    for (auto& [member, hist] : p.history) {
                        while (!hist.empty() && hist.front() < t - p.spec.span) hist.pop_front();
                    }
                    if (pattern_satisfied(p)) {
                        fired.push_back({pid, true, s->id, t, tick.value});
                        p.history.clear();
                    }
                }
                std::lock_guard slock(s->mu);
                for (const auto& change : fired) {
                    StreamEvent ev;
                    ev.seq = next_seq();
                    ev.stream_id = s->id;
                    ev.kind = EventKind::ContextChange;
                    ev.at = t;
                    ev.value = change.value;
                    ev.source_id = change.source_id;
                    s->log.push_back(std::move(ev));
                    changes.push_back(change);
                }
            }
        }
        listeners = listeners_;
    }
    for (const auto& change : changes) {
        for (const auto& l : listeners) l(change);
    }
    return evaluated;
}

std::vector<StreamEvent> StreamProcessor::events(const std::string& stream_id) const {
    auto s = require_stream(stream_id);
    std::lock_guard lock(s->mu);
    return s->log;
}

std::string StreamProcessor::export_events_jsonl(const std::string& stream_id) const {
    std::ostringstream out;
    for (const auto& e : events(stream_id)) out << json(e).dump() << '\n';
    return out.str();
}

} // namespace entropy::stream
