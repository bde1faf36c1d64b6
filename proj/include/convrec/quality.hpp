#pragma once
// Post-hoc validation and packaging: alignment of transcripts against their
// plans, negative-item selection, dataset record emission with invariant
// enforcement, judge scoring, and rank correlation.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "convrec/planning.hpp"
#include "convrec/simulation.hpp"

namespace convrec {

struct AlignmentReport {
    int violations = 0;          // acts unmatched under greedy frontier replay
    std::vector<int> uncovered;  // vertex ids never matched, ascending
    bool terminal = false;       // Close matched
    bool accepted = false;       // violations <= limit, nothing uncovered, terminal
};

// Greedy frontier replay of the turn sequence; every act that matches no
// frontier vertex at its position counts one violation and is skipped.
AlignmentReport align_dialog(const Transcript& transcript, const DialogPlan& plan,
                             int max_violations = 3);

struct NegativeSelection {
    std::vector<std::string> items;
    bool short_pool = false;  // pool was smaller than requested
};

// The n candidates most sign-mismatched with the user's dominant aspects:
// candidates share the positive's category when it has one, never overlap
// history or the positive, and score Sum(-mu * normalized alpha) over the
// user's top-3 aspects. Ties break to the smaller item id.
NegativeSelection select_negatives(const CorpusIndex& index, ItemProfileCache& profiles,
                                   const UserProfile& user_profile, const std::string& positive,
                                   const std::set<std::string>& history, std::int64_t t, int n);

struct HistoryEntry {
    std::string item_id;
    std::int64_t timestamp = 0;
};

struct RecordTurn {
    Role speaker = Role::System;
    std::string text;
};

struct DatasetRecord {
    std::string dialog_id;
    std::string user_id;
    std::string domain;
    std::string plan_id;
    std::int64_t timestamp = 0;  // of the ground-truth interaction
    std::vector<RecordTurn> turns;
    std::vector<HistoryEntry> history;  // chronological, all before timestamp
    std::string positive;
    std::vector<std::string> negatives;
    bool short_negative_pool = false;
    std::map<std::string, std::string> provenance;  // seeds, model names

    std::string to_json() const;
    static DatasetRecord from_json(const std::string& text);
};

// First violated record invariant, or nullopt.
std::optional<std::string> validate_record(const DatasetRecord& record);

struct DatasetStats {
    std::size_t dialog_count = 0;
    std::size_t turn_count = 0;
    std::size_t user_count = 0;
    std::size_t item_count = 0;  // distinct items across positives, negatives, histories
    std::map<std::string, std::size_t> dialogs_by_domain;

    std::string to_json() const;
    static DatasetStats from_json(const std::string& text);
};

DatasetStats compute_stats(const std::vector<DatasetRecord>& records);

struct EmitParams {
    int negatives = 4;
    std::string domain = "toy";
    std::map<std::string, std::string> provenance;
};

struct EmitResult {
    std::vector<DatasetRecord> records;
    DatasetStats stats;
};

// One record per (transcript, plan) pair. Throws QualityError naming the
// record on any invariant breach; a breach is a generation bug, never data
// to drop silently.
EmitResult emit_records(
    const std::vector<std::pair<const Transcript*, const DialogPlan*>>& dialogs,
    const CorpusIndex& index, const AnnotationStore& annotations, const DecayParams& decay,
    int k, const EmitParams& params);

struct JudgeScore {
    std::string dialog_id;
    int naturalness = 0;
    int coherence = 0;
    int groundedness = 0;
    std::string rater = "auto";

    std::string to_json() const;
    static JudgeScore from_json(const std::string& text);
};

std::string judge_prompt(const DatasetRecord& record);

// Scores one dialog on the three 1-5 axes via a strict-JSON reply; one re-ask
// on a malformed or out-of-range reply, then unscored (nullopt). Provider
// failures also yield nullopt.
std::optional<JudgeScore> judge_dialog(ChatProvider& judge, const DatasetRecord& record);

// Deterministic judge for offline runs: scores derive from a hash of the
// prompt, always in range.
class ScriptedJudge : public ChatProvider {
public:
    std::string chat_complete(const std::vector<ChatMessage>& messages,
                              double temperature) override;
    std::string model_name() const override { return "scripted-judge"; }
};

// Spearman rank correlation with average ranks on ties; nullopt when either
// side has zero rank variance. Throws ConfigError on length mismatch or n<2.
std::optional<double> spearman_rho(std::span<const double> x, std::span<const double> y);

}  // namespace convrec
