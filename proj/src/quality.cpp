#include "convrec/quality.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace convrec {

using nlohmann::json;

// --- alignment ---------------------------------------------------------------

AlignmentReport align_dialog(const Transcript& transcript, const DialogPlan& plan,
                             int max_violations) {
    AlignmentReport report;
    std::set<int> executed;
    for (const DialogTurn& t : transcript.turns) {
        const IntentVertex* match = nullptr;
        for (int id : frontier(plan, executed)) {
            const IntentVertex& v = plan.vertex(id);
            if (v.role == t.speaker && v.act == t.act && v.target == t.target) {
                match = &v;
                break;
            }
        }
        if (match != nullptr) {
            executed.insert(match->id);
            if (match->act == Act::Close) report.terminal = true;
        } else {
            ++report.violations;
        }
    }
    for (const IntentVertex& v : plan.vertices) {
        if (executed.count(v.id) == 0) report.uncovered.push_back(v.id);
    }
    report.accepted =
        report.violations <= max_violations && report.uncovered.empty() && report.terminal;
    return report;
}

// --- negatives ------------------------------------------------------------------

NegativeSelection select_negatives(const CorpusIndex& index, ItemProfileCache& profiles,
                                   const UserProfile& user_profile, const std::string& positive,
                                   const std::set<std::string>& history, std::int64_t t, int n) {
    std::optional<std::string> category;
    if (const CatalogEntry* entry = index.find_item(positive);
        entry != nullptr && !entry->synthetic) {
        category = entry->meta.category;
    }

    const int k = static_cast<int>(user_profile.weights.size());
    std::vector<int> top;
    {
        std::vector<int> order(static_cast<std::size_t>(k));
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&user_profile](int a, int b) {
            if (user_profile.weights[a] != user_profile.weights[b]) {
                return user_profile.weights[a] > user_profile.weights[b];
            }
            return a < b;
        });
        top.assign(order.begin(), order.begin() + std::min<std::size_t>(3, order.size()));
    }
    double total = 0.0;
    for (int a : top) total += user_profile.weights[a];
    std::vector<double> alpha(top.size());
    for (std::size_t i = 0; i < top.size(); ++i) {
        alpha[i] = total > 0.0 ? user_profile.weights[top[i]] / total
                               : 1.0 / static_cast<double>(top.size());
    }

    std::vector<std::pair<double, std::string>> scored;
    for (const std::string& candidate : index.item_ids()) {
        if (candidate == positive || history.count(candidate) > 0) continue;
        const CatalogEntry* entry = index.find_item(candidate);
        if (entry == nullptr || entry->synthetic) continue;
        if (category && entry->meta.category != category) continue;

        const ItemProfile& profile = profiles.at(candidate, t);
        double score = 0.0;
        for (std::size_t i = 0; i < top.size(); ++i) {
            if (profile.defined[static_cast<std::size_t>(top[i])]) {
                score += -profile.polarity[top[i]] * alpha[i];
            }
        }
        scored.emplace_back(score, candidate);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });

    NegativeSelection result;
    result.short_pool = scored.size() < static_cast<std::size_t>(n);
    const std::size_t take = std::min<std::size_t>(scored.size(), static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < take; ++i) result.items.push_back(scored[i].second);
    return result;
}

// --- records -------------------------------------------------------------------

std::string DatasetRecord::to_json() const {
    json j;
    j["dialog_id"] = dialog_id;
    j["user_id"] = user_id;
    j["domain"] = domain;
    j["plan_id"] = plan_id;
    j["timestamp"] = timestamp;
    json turns_json = json::array();
    for (const RecordTurn& t : turns) {
        turns_json.push_back(json{{"speaker", role_name(t.speaker)}, {"text", t.text}});
    }
    j["turns"] = std::move(turns_json);
    json history_json = json::array();
    for (const HistoryEntry& h : history) {
        history_json.push_back(json{{"item_id", h.item_id}, {"timestamp", h.timestamp}});
    }
    j["history"] = std::move(history_json);
    j["positive"] = positive;
    j["negatives"] = negatives;
    j["short_negative_pool"] = short_negative_pool;
    j["provenance"] = provenance;
    return j.dump();
}

DatasetRecord DatasetRecord::from_json(const std::string& text) {
    json j = json::parse(text);
    DatasetRecord r;
    r.dialog_id = j.at("dialog_id").get<std::string>();
    r.user_id = j.at("user_id").get<std::string>();
    r.domain = j.at("domain").get<std::string>();
    r.plan_id = j.at("plan_id").get<std::string>();
    r.timestamp = j.at("timestamp").get<std::int64_t>();
    for (const auto& tj : j.at("turns")) {
        const auto speaker = parse_role(tj.at("speaker").get<std::string>());
        if (!speaker) throw ArtifactError("record turn with unknown speaker");
        r.turns.push_back({*speaker, tj.at("text").get<std::string>()});
    }
    for (const auto& hj : j.at("history")) {
        r.history.push_back(
            {hj.at("item_id").get<std::string>(), hj.at("timestamp").get<std::int64_t>()});
    }
    r.positive = j.at("positive").get<std::string>();
    r.negatives = j.at("negatives").get<std::vector<std::string>>();
    r.short_negative_pool = j.value("short_negative_pool", false);
    if (j.contains("provenance")) {
        r.provenance = j.at("provenance").get<std::map<std::string, std::string>>();
    }
    return r;
}

std::optional<std::string> validate_record(const DatasetRecord& record) {
    if (record.positive.empty()) return "empty positive item";
    std::set<std::string> history_items;
    std::int64_t previous = std::numeric_limits<std::int64_t>::min();
    for (const HistoryEntry& h : record.history) {
        if (h.timestamp < previous) return "history out of chronological order";
        previous = h.timestamp;
        if (h.timestamp >= record.timestamp) return "history entry not before the interaction";
        history_items.insert(h.item_id);
    }
    if (history_items.count(record.positive) > 0) return "positive item appears in history";
    std::set<std::string> seen_negatives;
    for (const std::string& neg : record.negatives) {
        if (neg == record.positive) return "negative equals the positive";
        if (history_items.count(neg) > 0) return "negative appears in history";
        if (!seen_negatives.insert(neg).second) return "duplicate negative";
    }
    return std::nullopt;
}

DatasetStats compute_stats(const std::vector<DatasetRecord>& records) {
    DatasetStats stats;
    std::set<std::string> users;
    std::set<std::string> items;
    for (const DatasetRecord& r : records) {
        ++stats.dialog_count;
        stats.turn_count += r.turns.size();
        users.insert(r.user_id);
        items.insert(r.positive);
        for (const std::string& n : r.negatives) items.insert(n);
        for (const HistoryEntry& h : r.history) items.insert(h.item_id);
        ++stats.dialogs_by_domain[r.domain];
    }
    stats.user_count = users.size();
    stats.item_count = items.size();
    return stats;
}

std::string DatasetStats::to_json() const {
    json j;
    j["dialog_count"] = dialog_count;
    j["turn_count"] = turn_count;
    j["user_count"] = user_count;
    j["item_count"] = item_count;
    j["dialogs_by_domain"] = dialogs_by_domain;
    return j.dump();
}

DatasetStats DatasetStats::from_json(const std::string& text) {
    json j = json::parse(text);
    DatasetStats s;
    s.dialog_count = j.at("dialog_count").get<std::size_t>();
    s.turn_count = j.at("turn_count").get<std::size_t>();
    s.user_count = j.at("user_count").get<std::size_t>();
    s.item_count = j.at("item_count").get<std::size_t>();
    s.dialogs_by_domain = j.at("dialogs_by_domain").get<std::map<std::string, std::size_t>>();
    return s;
}

EmitResult emit_records(
    const std::vector<std::pair<const Transcript*, const DialogPlan*>>& dialogs,
    const CorpusIndex& index, const AnnotationStore& annotations, const DecayParams& decay,
    int k, const EmitParams& params) {
    EmitResult result;
    ItemProfileCache profiles(index, annotations, decay, k);
    for (const auto& [transcript, plan] : dialogs) {
        DatasetRecord record;
        record.dialog_id = plan->plan_id;
        record.user_id = plan->user_id;
        record.domain = params.domain;
        record.plan_id = plan->plan_id;
        record.timestamp = plan->timestamp;
        record.positive = plan->item_id;
        record.provenance = params.provenance;
        record.provenance["plan_seed"] = hex64(plan->seed);
        for (const DialogTurn& t : transcript->turns) {
            record.turns.push_back({t.speaker, t.text});
        }
        std::set<std::string> history_items;
        for (const Interaction& d : index.user_history(plan->user_id, plan->timestamp)) {
            record.history.push_back({d.item_id, d.timestamp});
            history_items.insert(d.item_id);
        }
        const UserProfile user_profile =
            compute_user_profile(index, annotations, plan->user_id, plan->timestamp, decay, k);
        NegativeSelection negatives =
            select_negatives(index, profiles, user_profile, plan->item_id, history_items,
                             plan->timestamp, params.negatives);
        record.negatives = std::move(negatives.items);
        record.short_negative_pool = negatives.short_pool;

        if (const auto violation = validate_record(record)) {
            throw QualityError("record " + record.dialog_id + ": " + *violation);
        }
        result.records.push_back(std::move(record));
    }
    result.stats = compute_stats(result.records);
    return result;
}

// --- judging -------------------------------------------------------------------

std::string JudgeScore::to_json() const {
    json j;
    j["dialog_id"] = dialog_id;
    j["naturalness"] = naturalness;
    j["coherence"] = coherence;
    j["groundedness"] = groundedness;
    j["rater"] = rater;
    return j.dump();
}

JudgeScore JudgeScore::from_json(const std::string& text) {
    json j = json::parse(text);
    JudgeScore s;
    s.dialog_id = j.at("dialog_id").get<std::string>();
    s.naturalness = j.at("naturalness").get<int>();
    s.coherence = j.at("coherence").get<int>();
    s.groundedness = j.at("groundedness").get<int>();
    s.rater = j.value("rater", "auto");
    return s;
}

std::string judge_prompt(const DatasetRecord& record) {
    std::ostringstream out;
    out << "You are evaluating a recommendation dialog between a User and a System.\n";
    out << "Step 1: silently extract each turn's communicative intent "
           "(greeting, preference question, preference answer, clarification, "
           "recommendation, information request, acceptance, rejection, closing).\n";
    out << "Step 2: rate the whole dialog on three axes, each an integer 1-5:\n";
    out << "  naturalness: linguistic fluency of the utterances\n";
    out << "  coherence: logical flow and consistency across turns\n";
    out << "  groundedness: consistency with the stated preferences and item facts\n";
    out << "Reply with strict JSON only, no prose: "
           "{\"naturalness\":N,\"coherence\":N,\"groundedness\":N}\n";
    out << "Dialog " << record.dialog_id << ":\n";
    for (const RecordTurn& t : record.turns) {
        out << role_name(t.speaker) << ": " << t.text << "\n";
    }
    return out.str();
}

namespace {

std::optional<JudgeScore> parse_judge_reply(const std::string& reply,
                                            const std::string& dialog_id) {
    const auto open = reply.find('{');
    const auto close = reply.rfind('}');
    if (open == std::string::npos || close == std::string::npos || close < open) {
        return std::nullopt;
    }
    json j = json::parse(reply.substr(open, close - open + 1), nullptr, false);
    if (j.is_discarded() || !j.is_object()) return std::nullopt;
    JudgeScore score;
    score.dialog_id = dialog_id;
    const auto read_axis = [&j](const char* key, int& out) {
        if (!j.contains(key) || !j[key].is_number_integer()) return false;
        out = j[key].get<int>();
        return out >= 1 && out <= 5;
    };
    if (!read_axis("naturalness", score.naturalness)) return std::nullopt;
    if (!read_axis("coherence", score.coherence)) return std::nullopt;
    if (!read_axis("groundedness", score.groundedness)) return std::nullopt;
    return score;
}

}  // namespace

std::optional<JudgeScore> judge_dialog(ChatProvider& judge, const DatasetRecord& record) {
    std::vector<ChatMessage> messages{{ChatRole::User, judge_prompt(record)}};
    for (int attempt = 0; attempt < 2; ++attempt) {
        std::string reply;
        try {
            reply = judge.chat_complete(messages, 0.0);
        } catch (const ProviderError&) {
            return std::nullopt;
        }
        if (auto score = parse_judge_reply(reply, record.dialog_id)) return score;
        messages.push_back({ChatRole::Assistant, reply});
        messages.push_back(
            {ChatRole::User,
             "That reply was not valid. Respond with exactly the JSON object "
             "{\"naturalness\":N,\"coherence\":N,\"groundedness\":N} with integers 1-5."});
    }
    return std::nullopt;
}

std::string ScriptedJudge::chat_complete(const std::vector<ChatMessage>& messages,
                                         double /*temperature*/) {
    const std::uint64_t h = fnv1a(messages.back().content);
    const int naturalness = 3 + static_cast<int>(h % 3);
    const int coherence = 3 + static_cast<int>((h >> 8) % 3);
    const int groundedness = 3 + static_cast<int>((h >> 16) % 3);
    json j{{"naturalness", naturalness}, {"coherence", coherence}, {"groundedness", groundedness}};
    return j.dump();
}

// --- rank correlation ------------------------------------------------------------

namespace {

std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&values](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

std::optional<double> spearman_rho(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ConfigError("spearman_rho: length mismatch");
    if (x.size() < 2) throw ConfigError("spearman_rho: need at least two pairs");
    const std::vector<double> rx = average_ranks(x);
    const std::vector<double> ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mean = (n + 1.0) / 2.0;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = rx[i] - mean;
        const double dy = ry[i] - mean;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace convrec
