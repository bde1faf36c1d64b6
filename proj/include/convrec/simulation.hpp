#pragma once
// Plan-constrained dialog execution: two chat agents realize a plan's intent
// vertices turn by turn under frontier, grounding, and budget constraints.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "convrec/planning.hpp"
#include "convrec/providers.hpp"

namespace convrec {

// Agent reply header, resolved against the vocabulary and catalog.
struct ParsedReply {
    Role role = Role::System;
    Act act = Act::Greet;
    VertexTarget target;
    std::optional<std::string> polarity_tag;  // TAG line, System Inform answers
    std::string text;                         // surface utterance, headers stripped
};

// Parses the mandatory `ACT <Role>|<Act>|<target>` first line, an optional
// `TAG polarity=<...>` second line, and the remaining surface text. Aspect
// targets resolve against vocabulary labels, item targets against catalog
// titles (both case-insensitive); `-` is the empty target. Returns nullopt on
// any malformed or unresolvable header and stores the reason in `error`.
std::optional<ParsedReply> parse_act(const std::string& utterance, const AspectVocabulary& vocab,
                                     const CorpusIndex& index, std::string* error = nullptr);

inline constexpr double kMixedPolarityBand = 0.2;

// Qualitative tag for an item's crowd polarity on one aspect:
// undefined -> "unknown", > band -> "positive", < -band -> "negative",
// otherwise "mixed".
std::string polarity_tag_for(const ItemProfile& profile, int aspect);

// Phrases that let a user answer an aspect they have no recorded weight for.
const std::vector<std::string>& underspecification_markers();

struct SimParams {
    double initial_temperature = 0.9;
    double temperature_decrement = 0.1;  // per rejection
    double temperature_floor = 0.1;
    int max_consecutive_rejections = 4;  // abort threshold
    int max_turns = 30;                  // accepted turns
    std::uint64_t seed = 0;
};

enum class SimStatus { Completed, DiscardedRejections, DiscardedBudget, InfrastructureFailure };

const char* sim_status_name(SimStatus status);
std::optional<SimStatus> parse_sim_status(const std::string& text);

struct DialogTurn {
    int index = 0;
    Role speaker = Role::System;
    Act act = Act::Greet;
    VertexTarget target;
    std::optional<std::string> polarity_tag;
    std::string text;        // surface utterance
    int vertex_id = -1;
    double temperature = 0.0;     // at which the accepted sample was drawn
    int rejections_before = 0;    // resamples burned before acceptance
};

struct Transcript {
    std::string plan_id;
    SimStatus status = SimStatus::Completed;
    std::vector<DialogTurn> turns;

    std::string to_json() const;
    static Transcript from_json(const std::string& text);
};

struct SimulationOutcome {
    SimStatus status = SimStatus::Completed;
    Transcript transcript;
    std::map<int, int> rejections_by_vertex;
    std::string failure;  // InfrastructureFailure detail
};

// Everything the harness needs to prompt agents and check grounding.
struct SimContext {
    const CorpusIndex& index;
    const AspectVocabulary& vocab;
    const DialogPlan& plan;
    const UserProfile& user_profile;
    ItemProfileCache& item_profiles;
};

// Collects every prompt message content issued during a dialog, in order.
// Exists so tests can scan serialized agent context for leaked identifiers.
struct PromptLog {
    std::vector<std::string> messages;
};

// First grounding rule the reply violates, or nullopt. `vertex` is the
// frontier vertex the reply matched; `executed` is consulted for the
// no-reveal window (rule applies until the ground-truth Recommend runs).
std::optional<std::string> grounding_violation(const ParsedReply& reply,
                                               const IntentVertex& vertex, SimContext& ctx,
                                               const std::set<int>& executed);

// Executes the plan: repeatedly picks the next frontier vertex (preferring a
// speaker change, then lowest id), prompts that role's agent, and accepts the
// reply iff it parses, matches a same-role frontier vertex, and passes
// grounding. Rejections resample at a reduced temperature; a run of
// max_consecutive_rejections aborts the dialog, as does exhausting max_turns
// before the plan completes. Provider failures abort this dialog only.
SimulationOutcome run_dialog(SimContext& ctx, ChatProvider& user_agent,
                             ChatProvider& system_agent, const SimParams& params,
                             PromptLog* log = nullptr);

// --- scripted agents ---------------------------------------------------------

// Plays whatever the prompt marks eligible: picks the first ELIGIBLE line,
// emits a well-formed header, echoes CROWD tags, and uses an
// underspecification marker when the prompt shows no profile weight.
class CompliantAgent : public ChatProvider {
public:
    std::string chat_complete(const std::vector<ChatMessage>& messages,
                              double temperature) override;
    std::string model_name() const override { return "scripted-compliant"; }
};

// Always replies with the same off-plan act; every sample gets rejected.
class AdversarialAgent : public ChatProvider {
public:
    std::string chat_complete(const std::vector<ChatMessage>& messages,
                              double temperature) override;
    std::string model_name() const override { return "scripted-adversarial"; }
};

}  // namespace convrec
