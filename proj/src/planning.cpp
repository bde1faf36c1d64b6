#include "convrec/planning.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace convrec {

using nlohmann::json;

// --- names ------------------------------------------------------------------

const char* role_name(Role role) { return role == Role::System ? "System" : "User"; }

const char* act_name(Act act) {
    switch (act) {
        case Act::Greet: return "Greet";
        case Act::Request: return "Request";
        case Act::Inform: return "Inform";
        case Act::Clarify: return "Clarify";
        case Act::Recommend: return "Recommend";
        case Act::RequestInfo: return "RequestInfo";
        case Act::Accept: return "Accept";
        case Act::Reject: return "Reject";
        case Act::Close: return "Close";
    }
    return "?";
}

const char* super_node_name(SuperNodeKind kind) {
    switch (kind) {
        case SuperNodeKind::Greet: return "Greet";
        case SuperNodeKind::AspectEx: return "AspectEx";
        case SuperNodeKind::Recommend: return "Recommend";
        case SuperNodeKind::Close: return "Close";
    }
    return "?";
}

std::optional<Role> parse_role(const std::string& text) {
    if (text == "System") return Role::System;
    if (text == "User") return Role::User;
    return std::nullopt;
}

std::optional<Act> parse_act_name(const std::string& text) {
    static const std::pair<const char*, Act> table[] = {
        {"Greet", Act::Greet},         {"Request", Act::Request},
        {"Inform", Act::Inform},       {"Clarify", Act::Clarify},
        {"Recommend", Act::Recommend}, {"RequestInfo", Act::RequestInfo},
        {"Accept", Act::Accept},       {"Reject", Act::Reject},
        {"Close", Act::Close},
    };
    for (const auto& [name, act] : table) {
        if (text == name) return act;
    }
    return std::nullopt;
}

namespace {

std::optional<SuperNodeKind> parse_super_node(const std::string& text) {
    if (text == "Greet") return SuperNodeKind::Greet;
    if (text == "AspectEx") return SuperNodeKind::AspectEx;
    if (text == "Recommend") return SuperNodeKind::Recommend;
    if (text == "Close") return SuperNodeKind::Close;
    return std::nullopt;
}

json target_to_json(const VertexTarget& t) {
    switch (t.kind) {
        case VertexTarget::Kind::None: return nullptr;
        case VertexTarget::Kind::Aspect: return t.aspect;
        case VertexTarget::Kind::Item: return t.item_id;
    }
    return nullptr;
}

VertexTarget target_from_json(const json& j) {
    if (j.is_null()) return VertexTarget::none();
    if (j.is_number_integer()) return VertexTarget::for_aspect(j.get<int>());
    if (j.is_string()) return VertexTarget::for_item(j.get<std::string>());
    throw ArtifactError("plan vertex target must be null, integer, or string");
}

}  // namespace

// --- DialogPlan --------------------------------------------------------------

const IntentVertex& DialogPlan::vertex(int id) const {
    if (id < 0 || id >= static_cast<int>(vertices.size())) {
        throw Error("plan " + plan_id + ": no vertex " + std::to_string(id));
    }
    return vertices[static_cast<std::size_t>(id)];
}

std::string DialogPlan::to_json() const {
    json j;
    j["plan_id"] = plan_id;
    j["user_id"] = user_id;
    j["item_id"] = item_id;
    j["timestamp"] = timestamp;
    j["seed"] = seed;
    j["aspects"] = aspects;
    j["rejected_items"] = rejected_items;
    json ri = json::array();
    for (const auto& [round, aspect] : request_info) ri.push_back(json::array({round, aspect}));
    j["request_info"] = std::move(ri);
    json verts = json::array();
    for (const IntentVertex& v : vertices) {
        verts.push_back(json{{"id", v.id},
                             {"role", role_name(v.role)},
                             {"act", act_name(v.act)},
                             {"target", target_to_json(v.target)},
                             {"depends_on", v.depends_on},
                             {"super_node", super_node_name(v.super_node)}});
    }
    j["vertices"] = std::move(verts);
    return j.dump();
}

DialogPlan DialogPlan::from_json(const std::string& text) {
    json j = json::parse(text);
    DialogPlan p;
    p.plan_id = j.at("plan_id").get<std::string>();
    p.user_id = j.at("user_id").get<std::string>();
    p.item_id = j.at("item_id").get<std::string>();
    p.timestamp = j.at("timestamp").get<std::int64_t>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.aspects = j.at("aspects").get<std::vector<int>>();
    p.rejected_items = j.at("rejected_items").get<std::vector<std::string>>();
    for (const auto& pair : j.at("request_info")) {
        p.request_info.emplace_back(pair.at(0).get<int>(), pair.at(1).get<int>());
    }
    for (const auto& vj : j.at("vertices")) {
        IntentVertex v;
        v.id = vj.at("id").get<int>();
        const auto role = parse_role(vj.at("role").get<std::string>());
        const auto act = parse_act_name(vj.at("act").get<std::string>());
        const auto super = parse_super_node(vj.at("super_node").get<std::string>());
        if (!role || !act || !super) throw ArtifactError("plan vertex with unknown role/act/super");
        v.role = *role;
        v.act = *act;
        v.super_node = *super;
        v.target = target_from_json(vj.at("target"));
        v.depends_on = vj.at("depends_on").get<std::vector<int>>();
        p.vertices.push_back(std::move(v));
    }
    return p;
}

// --- ItemProfileCache ----------------------------------------------------------

const ItemProfile& ItemProfileCache::at(const std::string& item_id, std::int64_t t) {
    const auto key = std::make_pair(item_id, t);
    auto it = cache_.find(key);
    if (it == cache_.end()) {
        it = cache_.emplace(key, compute_item_profile(index_, annotations_, item_id, t, decay_, k_))
                 .first;
    }
    return it->second;
}

// --- interaction sampling -------------------------------------------------------

double interaction_weight(const Interaction& d, const AnnotationStore& annotations,
                          const ItemProfile& item_profile, std::size_t max_review_tokens) {
    if (max_review_tokens == 0) return 0.0;
    std::map<int, std::size_t> aspect_counts;
    std::size_t total = 0;
    for (const SentenceUnit& s :
         annotations.for_interaction(d.user_id, d.item_id, d.timestamp)) {
        if (s.aspect == kNeutralAspect) continue;
        ++aspect_counts[s.aspect];
        ++total;
    }
    if (total == 0) return 0.0;

    double entropy = 0.0;
    for (const auto& [aspect, count] : aspect_counts) {
        const double p = static_cast<double>(count) / static_cast<double>(total);
        entropy -= p * std::log(p);
    }

    const double length = static_cast<double>(
        std::min(whitespace_token_count(d.review_text), max_review_tokens));
    const double ratio = length / static_cast<double>(max_review_tokens);
    const double sigma = (item_profile.mean_defined_polarity() + 1.0) / 2.0;
    return ratio * ratio * std::exp(entropy) * (1.0 + sigma);
}

SampleResult sample_interactions(std::span<const double> weights, std::size_t n, Rng& rng) {
    std::vector<double> remaining(weights.begin(), weights.end());
    std::size_t positive = 0;
    for (double w : remaining) {
        if (w < 0.0) throw ConfigError("interaction weight must be non-negative");
        if (w > 0.0) ++positive;
    }
    if (positive == 0) throw CorpusError("no interaction has positive sampling weight");

    SampleResult result;
    result.exhausted = n > positive;
    const std::size_t draws = std::min(n, positive);
    for (std::size_t i = 0; i < draws; ++i) {
        const std::size_t pick = rng.discrete(remaining);
        result.indices.push_back(pick);
        remaining[pick] = 0.0;
    }
    return result;
}

std::vector<int> sample_aspects(const UserProfile& profile, const PlanParams& params, Rng& rng) {
    const int k = static_cast<int>(profile.weights.size());
    if (k == 0) throw ConfigError("aspect sampling needs a non-empty profile");
    const int hi = std::min(params.max_aspects, k);
    const int lo = std::min(params.min_aspects, hi);
    const int m = rng.uniform_int(lo, hi);

    std::vector<double> weights(static_cast<std::size_t>(k));
    for (int a = 0; a < k; ++a) {
        weights[static_cast<std::size_t>(a)] = profile.weights[a] + params.epsilon;
    }
    std::vector<int> chosen;
    for (int i = 0; i < m; ++i) {
        const std::size_t pick = rng.discrete(weights);
        chosen.push_back(static_cast<int>(pick));
        weights[pick] = 0.0;
    }
    return chosen;
}

// --- alternate items --------------------------------------------------------------

std::string select_alternate_item(const CorpusIndex& index, ItemProfileCache& profiles,
                                  const UserProfile& user_profile,
                                  const std::string& ground_truth_item,
                                  const std::set<std::string>& exclude, std::int64_t t) {
    std::optional<std::string> category;
    if (const CatalogEntry* entry = index.find_item(ground_truth_item);
        entry != nullptr && !entry->synthetic) {
        category = entry->meta.category;
    }

    std::string best_id;
    double best_distance = -1.0;
    for (const std::string& candidate : index.item_ids()) {
        if (candidate == ground_truth_item || exclude.count(candidate) > 0) continue;
        const CatalogEntry* entry = index.find_item(candidate);
        if (entry == nullptr || entry->synthetic) continue;
        if (category && entry->meta.category != category) continue;

        const ItemProfile& profile = profiles.at(candidate, t);
        std::vector<int> defined;
        for (int a = 0; a < profile.polarity.size(); ++a) {
            if (profile.defined[static_cast<std::size_t>(a)]) defined.push_back(a);
        }
        if (defined.empty()) continue;

        Vector mu(static_cast<Eigen::Index>(defined.size()));
        Vector alpha(static_cast<Eigen::Index>(defined.size()));
        for (std::size_t i = 0; i < defined.size(); ++i) {
            mu[static_cast<Eigen::Index>(i)] = profile.polarity[defined[i]];
            alpha[static_cast<Eigen::Index>(i)] = user_profile.weights[defined[i]];
        }
        const double distance = cosine_distance(mu, alpha);
        if (distance > best_distance) {
            best_distance = distance;
            best_id = candidate;
        }
    }
    if (best_id.empty()) {
        throw PlanError("no alternate item available for " + ground_truth_item);
    }
    return best_id;
}

double default_tau_b(const CorpusIndex& index, const AnnotationStore& annotations,
                     const DecayParams& decay, int k) {
    std::int64_t t_end = 0;
    for (const Interaction& d : index.interactions()) t_end = std::max(t_end, d.timestamp);

    std::vector<double> masses;
    for (const std::string& item : index.item_ids()) {
        const ItemProfile profile =
            compute_item_profile(index, annotations, item, t_end, decay, k,
                                 /*include_boundary=*/true);
        for (int a = 0; a < k; ++a) {
            if (profile.mass[a] > 0.0) masses.push_back(profile.mass[a]);
        }
    }
    if (masses.empty()) return 0.0;
    std::sort(masses.begin(), masses.end());
    const std::size_t rank = static_cast<std::size_t>(
        std::ceil(0.20 * static_cast<double>(masses.size())));
    return masses[rank == 0 ? 0 : rank - 1];
}

std::uint64_t plan_seed(std::uint64_t corpus_seed, const std::string& user_id,
                        const std::string& item_id, std::int64_t timestamp) {
    std::uint64_t h = fnv1a_u64(corpus_seed);
    h = fnv1a(user_id, h);
    h = fnv1a("\x1f", h);
    h = fnv1a(item_id, h);
    return fnv1a_u64(static_cast<std::uint64_t>(timestamp), h);
}

// --- plan construction --------------------------------------------------------------

DialogPlan build_plan(const Interaction& d, const UserProfile& user_profile,
                      ItemProfileCache& item_profiles, const CorpusIndex& index,
                      const PlanParams& params, std::uint64_t seed) {
    Rng rng(seed);

    DialogPlan plan;
    plan.plan_id = "plan-" + hex64(seed);
    plan.user_id = d.user_id;
    plan.item_id = d.item_id;
    plan.timestamp = d.timestamp;
    plan.seed = seed;

    // Draw order is part of the plan's determinism contract: aspects, clarify
    // flags, rejection script, request-info script. Alternates consume no
    // randomness.
    plan.aspects = sample_aspects(user_profile, params, rng);

    const ItemProfile& truth_profile = item_profiles.at(d.item_id, d.timestamp);
    std::vector<bool> clarify(plan.aspects.size(), false);
    for (std::size_t i = 0; i < plan.aspects.size(); ++i) {
        if (truth_profile.mass[plan.aspects[i]] < params.tau_b) {
            clarify[i] = rng.bernoulli(params.clarify_prob);
        }
    }

    int rejections = 0;
    while (rejections < params.max_rejections && rng.bernoulli(params.reject_prob)) {
        ++rejections;
    }

    const int rounds = rejections + 1;
    for (int round = 0; round < rounds; ++round) {
        if (!rng.bernoulli(params.request_info_prob)) continue;
        const int count = rng.uniform_int(1, 2);
        std::vector<double> weights(static_cast<std::size_t>(params.k));
        for (int a = 0; a < params.k; ++a) {
            weights[static_cast<std::size_t>(a)] = user_profile.weights[a] + params.epsilon;
        }
        for (int c = 0; c < count; ++c) {
            const std::size_t pick = rng.discrete(weights);
            plan.request_info.emplace_back(round, static_cast<int>(pick));
            weights[pick] = 0.0;
        }
    }

    std::set<std::string> exclude{d.item_id};
    for (int j = 0; j < rejections; ++j) {
        const std::string alt = select_alternate_item(index, item_profiles, user_profile,
                                                      d.item_id, exclude, d.timestamp);
        plan.rejected_items.push_back(alt);
        exclude.insert(alt);
    }

    auto add_vertex = [&plan](Role role, Act act, VertexTarget target, std::vector<int> deps,
                              SuperNodeKind super) {
        IntentVertex v;
        v.id = static_cast<int>(plan.vertices.size());
        v.role = role;
        v.act = act;
        v.target = std::move(target);
        std::sort(deps.begin(), deps.end());
        v.depends_on = std::move(deps);
        v.super_node = super;
        plan.vertices.push_back(std::move(v));
        return plan.vertices.back().id;
    };

    const int greet = add_vertex(Role::System, Act::Greet, VertexTarget::none(), {},
                                 SuperNodeKind::Greet);

    std::vector<int> elicitation_sinks;
    for (std::size_t i = 0; i < plan.aspects.size(); ++i) {
        const int a = plan.aspects[i];
        const int request = add_vertex(Role::System, Act::Request, VertexTarget::for_aspect(a),
                                       {greet}, SuperNodeKind::AspectEx);
        int sink = add_vertex(Role::User, Act::Inform, VertexTarget::for_aspect(a), {request},
                              SuperNodeKind::AspectEx);
        if (clarify[i]) {
            const int c = add_vertex(Role::System, Act::Clarify, VertexTarget::for_aspect(a),
                                     {sink}, SuperNodeKind::AspectEx);
            sink = add_vertex(Role::User, Act::Inform, VertexTarget::for_aspect(a), {c},
                              SuperNodeKind::AspectEx);
        }
        elicitation_sinks.push_back(sink);
    }

    int previous_decision = -1;
    for (int round = 0; round < rounds; ++round) {
        const bool final_round = round == rejections;
        const std::string& item =
            final_round ? d.item_id : plan.rejected_items[static_cast<std::size_t>(round)];

        std::vector<int> rec_deps =
            round == 0 ? elicitation_sinks : std::vector<int>{previous_decision};
        if (round == 0 && rec_deps.empty()) rec_deps.push_back(greet);
        const int rec = add_vertex(Role::System, Act::Recommend, VertexTarget::for_item(item),
                                   std::move(rec_deps), SuperNodeKind::Recommend);

        std::vector<int> decision_deps{rec};
        for (const auto& [ri_round, aspect] : plan.request_info) {
            if (ri_round != round) continue;
            const int ask = add_vertex(Role::User, Act::RequestInfo,
                                       VertexTarget::for_aspect(aspect), {rec},
                                       SuperNodeKind::Recommend);
            const int answer = add_vertex(Role::System, Act::Inform,
                                          VertexTarget::for_aspect(aspect), {ask},
                                          SuperNodeKind::Recommend);
            decision_deps.push_back(answer);
        }

        previous_decision = add_vertex(Role::User, final_round ? Act::Accept : Act::Reject,
                                       VertexTarget::for_item(item), std::move(decision_deps),
                                       SuperNodeKind::Recommend);
    }

    add_vertex(Role::System, Act::Close, VertexTarget::none(), {previous_decision},
               SuperNodeKind::Close);
    return plan;
}

// --- frontier -------------------------------------------------------------------------

std::vector<int> frontier(const DialogPlan& plan, const std::set<int>& executed) {
    int earliest = static_cast<int>(SuperNodeKind::Close) + 1;
    for (const IntentVertex& v : plan.vertices) {
        if (executed.count(v.id) > 0) continue;
        earliest = std::min(earliest, static_cast<int>(v.super_node));
    }

    std::vector<int> result;
    for (const IntentVertex& v : plan.vertices) {
        if (static_cast<int>(v.super_node) != earliest) continue;
        if (executed.count(v.id) > 0) continue;
        const bool ready = std::all_of(v.depends_on.begin(), v.depends_on.end(),
                                       [&executed](int dep) { return executed.count(dep) > 0; });
        if (ready) result.push_back(v.id);
    }
    return result;
}

// --- validation -------------------------------------------------------------------------

namespace {

bool role_act_allowed(const DialogPlan& plan, const IntentVertex& v) {
    if (v.role == Role::User) {
        return v.act == Act::Inform || v.act == Act::RequestInfo || v.act == Act::Accept ||
               v.act == Act::Reject;
    }
    switch (v.act) {
        case Act::Greet:
        case Act::Request:
        case Act::Clarify:
        case Act::Recommend:
        case Act::Close:
            return true;
        case Act::Inform:
            // System may inform only as the answer to a user inquiry.
            return std::any_of(v.depends_on.begin(), v.depends_on.end(), [&plan](int dep) {
                const IntentVertex& d = plan.vertex(dep);
                return d.role == Role::User && d.act == Act::RequestInfo;
            });
        default:
            return false;
    }
}

bool target_arity_ok(const IntentVertex& v, int k) {
    switch (v.act) {
        case Act::Greet:
        case Act::Close:
            return v.target.kind == VertexTarget::Kind::None;
        case Act::Request:
        case Act::Inform:
        case Act::Clarify:
        case Act::RequestInfo:
            return v.target.kind == VertexTarget::Kind::Aspect && v.target.aspect >= 0 &&
                   v.target.aspect < k;
        case Act::Recommend:
        case Act::Accept:
        case Act::Reject:
            return v.target.kind == VertexTarget::Kind::Item && !v.target.item_id.empty();
    }
    return false;
}

}  // namespace

std::optional<std::string> validate_plan(const DialogPlan& plan, int k) {
    const int n = static_cast<int>(plan.vertices.size());
    if (n == 0) return "plan has no vertices";
    for (int i = 0; i < n; ++i) {
        const IntentVertex& v = plan.vertices[static_cast<std::size_t>(i)];
        if (v.id != i) return "vertex ids are not sequential";
        for (int dep : v.depends_on) {
            if (dep < 0 || dep >= n) return "dependency outside the plan";
            if (dep == v.id) return "vertex depends on itself";
            const IntentVertex& d = plan.vertices[static_cast<std::size_t>(dep)];
            if (static_cast<int>(d.super_node) > static_cast<int>(v.super_node)) {
                return "dependency on a later super-node";
            }
        }
        if (!role_act_allowed(plan, v)) {
            return std::string("role/act pairing not allowed: ") + role_name(v.role) + "/" +
                   act_name(v.act);
        }
        if (!target_arity_ok(v, k)) {
            return std::string("bad target for act ") + act_name(v.act);
        }
    }

    // Cycle check (deps may come from a deserialized plan in any order).
    {
        std::vector<int> state(static_cast<std::size_t>(n), 0);  // 0 new, 1 open, 2 done
        std::vector<int> stack;
        for (int start = 0; start < n; ++start) {
            if (state[static_cast<std::size_t>(start)] != 0) continue;
            stack.push_back(start);
            while (!stack.empty()) {
                const int u = stack.back();
                auto& s = state[static_cast<std::size_t>(u)];
                if (s == 0) {
                    s = 1;
                    for (int dep : plan.vertices[static_cast<std::size_t>(u)].depends_on) {
                        if (state[static_cast<std::size_t>(dep)] == 1) return "dependency cycle";
                        if (state[static_cast<std::size_t>(dep)] == 0) stack.push_back(dep);
                    }
                } else {
                    s = 2;
                    stack.pop_back();
                }
            }
        }
    }

    int greets = 0, accepts = 0, rejects = 0, closes = 0;
    int accept_id = -1;
    for (const IntentVertex& v : plan.vertices) {
        switch (v.act) {
            case Act::Greet: ++greets; break;
            case Act::Accept: ++accepts; accept_id = v.id; break;
            case Act::Reject: ++rejects; break;
            case Act::Close: ++closes; break;
            default: break;
        }
    }
    if (greets != 1) return "plan must contain exactly one Greet";
    if (closes != 1) return "plan must contain exactly one Close";
    if (accepts != 1) return "plan must contain exactly one Accept";
    if (rejects > 2) return "more than two Reject vertices";

    const IntentVertex& accept = plan.vertex(accept_id);
    if (accept.target.item_id != plan.item_id) return "Accept does not target the ground truth";
    const bool accept_follows_recommend =
        std::any_of(accept.depends_on.begin(), accept.depends_on.end(), [&plan](int dep) {
            const IntentVertex& d = plan.vertex(dep);
            return d.act == Act::Recommend && d.target.item_id == plan.item_id;
        });
    if (!accept_follows_recommend) return "Accept without a ground-truth Recommend";

    // Reachability from the Greet root through dependency edges.
    std::vector<bool> reaches_root(static_cast<std::size_t>(n), false);
    for (const IntentVertex& v : plan.vertices) {
        if (v.act == Act::Greet) reaches_root[static_cast<std::size_t>(v.id)] = true;
    }
    bool changed = true;
    while (changed) {
        changed = false;
        for (const IntentVertex& v : plan.vertices) {
            if (reaches_root[static_cast<std::size_t>(v.id)]) continue;
            for (int dep : v.depends_on) {
                if (reaches_root[static_cast<std::size_t>(dep)]) {
                    reaches_root[static_cast<std::size_t>(v.id)] = true;
                    changed = true;
                    break;
                }
            }
        }
    }
    for (const IntentVertex& v : plan.vertices) {
        if (!reaches_root[static_cast<std::size_t>(v.id)]) {
            return "vertex unreachable from Greet: " + std::to_string(v.id);
        }
    }
    return std::nullopt;
}

}  // namespace convrec
