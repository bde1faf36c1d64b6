#pragma once
// Dialog planning: weighted interaction selection and construction of the
// per-interaction plan DAG (Greet -> AspectEx -> Recommend -> Close).

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "convrec/corpus.hpp"
#include "convrec/profiling.hpp"
#include "convrec/rng.hpp"

namespace convrec {

enum class Role { System, User };
enum class Act { Greet, Request, Inform, Clarify, Recommend, RequestInfo, Accept, Reject, Close };
enum class SuperNodeKind { Greet = 0, AspectEx = 1, Recommend = 2, Close = 3 };

const char* role_name(Role role);
const char* act_name(Act act);
const char* super_node_name(SuperNodeKind kind);
std::optional<Role> parse_role(const std::string& text);
std::optional<Act> parse_act_name(const std::string& text);

// An act's argument: nothing, an aspect index, or a catalog item.
struct VertexTarget {
    enum class Kind { None, Aspect, Item };
    Kind kind = Kind::None;
    int aspect = -1;
    std::string item_id;

    static VertexTarget none() { return {}; }
    static VertexTarget for_aspect(int a) { return {Kind::Aspect, a, {}}; }
    static VertexTarget for_item(std::string id) { return {Kind::Item, -1, std::move(id)}; }

    bool operator==(const VertexTarget&) const = default;
};

struct IntentVertex {
    int id = 0;
    Role role = Role::System;
    Act act = Act::Greet;
    VertexTarget target;
    std::vector<int> depends_on;  // sorted, all ids < id
    SuperNodeKind super_node = SuperNodeKind::Greet;
};

struct DialogPlan {
    std::string plan_id;
    std::string user_id;
    std::string item_id;  // ground truth, target of the final Accept
    std::int64_t timestamp = 0;
    std::uint64_t seed = 0;
    std::vector<int> aspects;                          // elicitation order
    std::vector<std::string> rejected_items;           // rejection script, size <= 2
    std::vector<std::pair<int, int>> request_info;     // (recommend round, aspect)
    std::vector<IntentVertex> vertices;                // ids == positions

    const IntentVertex& vertex(int id) const;

    std::string to_json() const;
    static DialogPlan from_json(const std::string& text);
};

struct PlanParams {
    int k = 20;
    double epsilon = 1e-4;          // aspect sampling smoothing
    double clarify_prob = 0.15;     // Clarify attachment on low-mass aspects
    double reject_prob = 0.5;       // per-round scripted rejection
    double request_info_prob = 0.3; // per-recommendation inquiry
    double tau_b = 0.0;             // sparsity threshold on crowd mass
    int min_aspects = 2;
    int max_aspects = 4;
    int max_rejections = 2;
};

// Lazily computed item profiles for one corpus, cached per (item, as-of time).
class ItemProfileCache {
public:
    ItemProfileCache(const CorpusIndex& index, const AnnotationStore& annotations,
                     const DecayParams& decay, int k)
        : index_(index), annotations_(annotations), decay_(decay), k_(k) {}

    const ItemProfile& at(const std::string& item_id, std::int64_t t);

    int k() const { return k_; }

private:
    const CorpusIndex& index_;
    const AnnotationStore& annotations_;
    DecayParams decay_;
    int k_;
    std::map<std::pair<std::string, std::int64_t>, ItemProfile> cache_;
};

// Sampling weight of one review:
//   (min(|r|, L_max)/L_max)^2 * exp(H(pi)) * (1 + (mean_polarity+1)/2)
// where |r| counts whitespace tokens, pi is the review's aspect distribution
// and H its natural-log entropy. Reviews without aspect-bearing sentences
// weigh 0.
double interaction_weight(const Interaction& d, const AnnotationStore& annotations,
                          const ItemProfile& item_profile, std::size_t max_review_tokens);

struct SampleResult {
    std::vector<std::size_t> indices;  // draw order
    bool exhausted = false;            // n exceeded the positive-weight count
};

// n weighted draws without replacement. Throws CorpusError when no weight is
// positive.
SampleResult sample_interactions(std::span<const double> weights, std::size_t n, Rng& rng);

// m aspects (m uniform in [min_aspects, max_aspects]) without replacement,
// each draw proportional to (alpha + epsilon) over the remaining aspects.
std::vector<int> sample_aspects(const UserProfile& profile, const PlanParams& params, Rng& rng);

// The candidate item whose defined-polarity vector is farthest (by cosine
// distance over its defined aspects) from the user's weights. Pool: same
// category as ground_truth_item when the catalog has one, else the whole
// catalog; synthetic entries and `exclude` are skipped, as are candidates
// with no defined aspects. Ties break to the lexicographically smaller id.
// Throws PlanError when the pool is empty.
std::string select_alternate_item(const CorpusIndex& index, ItemProfileCache& profiles,
                                  const UserProfile& user_profile,
                                  const std::string& ground_truth_item,
                                  const std::set<std::string>& exclude, std::int64_t t);

// Nearest-rank 20th percentile of the positive crowd masses over every
// (item, aspect) at corpus end; 0 when nothing has mass.
double default_tau_b(const CorpusIndex& index, const AnnotationStore& annotations,
                     const DecayParams& decay, int k);

std::uint64_t plan_seed(std::uint64_t corpus_seed, const std::string& user_id,
                        const std::string& item_id, std::int64_t timestamp);

// Deterministic plan construction from the profiles as of d.timestamp.
DialogPlan build_plan(const Interaction& d, const UserProfile& user_profile,
                      ItemProfileCache& item_profiles, const CorpusIndex& index,
                      const PlanParams& params, std::uint64_t seed);

// Executable vertices: unexecuted, dependencies satisfied, and members of the
// earliest super-node that still has unexecuted vertices. Sorted by id.
std::vector<int> frontier(const DialogPlan& plan, const std::set<int>& executed);

// First violated plan invariant, or nullopt when the plan is well-formed.
// Checks id/dependency structure, acyclicity, the role/act table, super-node
// ordering, reachability from Greet, rejection bounds, and the single
// Accept/Close on the ground truth.
std::optional<std::string> validate_plan(const DialogPlan& plan, int k);

}  // namespace convrec
