#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "convrec/common.hpp"
#include "convrec/corpus.hpp"
#include "convrec/planning.hpp"
#include "convrec/profiling.hpp"
#include "convrec/quality.hpp"
#include "convrec/rng.hpp"
#include "convrec/simulation.hpp"

using namespace convrec;

namespace {

constexpr std::int64_t kDay = 86400;

Interaction make_interaction(std::string user, std::string item, std::int64_t t,
                             std::string text = "fine product overall") {
    Interaction d;
    d.user_id = std::move(user);
    d.item_id = std::move(item);
    d.timestamp = t;
    d.review_text = std::move(text);
    return d;
}

SentenceUnit unit(const Interaction& d, int aspect, double sentiment) {
    SentenceUnit s;
    s.user_id = d.user_id;
    s.item_id = d.item_id;
    s.timestamp = d.timestamp;
    s.text = "s";
    s.sentiment = sentiment;
    s.aspect = aspect;
    return s;
}

UserProfile profile_with(const std::vector<double>& w) {
    UserProfile p;
    p.user_id = "u0";
    p.weights = Vector::Zero(static_cast<Eigen::Index>(w.size()));
    for (std::size_t i = 0; i < w.size(); ++i) p.weights[static_cast<Eigen::Index>(i)] = w[i];
    return p;
}

// Ten-vertex plan with one rejection round and one inquiry; matches the
// grounding fixture used by the simulation suite.
DialogPlan sample_plan() {
    DialogPlan plan;
    plan.plan_id = "plan-0000000000000bb8";
    plan.user_id = "u0";
    plan.item_id = "it-pos";
    plan.timestamp = 1'000'000 + 300 * kDay;
    plan.seed = 0xbb8;
    plan.rejected_items = {"it-n00"};
    plan.request_info = {{0, 1}};
    auto add = [&plan](Role role, Act act, VertexTarget target, std::vector<int> deps,
                       SuperNodeKind super) {
        IntentVertex v;
        v.id = static_cast<int>(plan.vertices.size());
        v.role = role;
        v.act = act;
        v.target = std::move(target);
        v.depends_on = std::move(deps);
        v.super_node = super;
        plan.vertices.push_back(std::move(v));
    };
    add(Role::System, Act::Greet, VertexTarget::none(), {}, SuperNodeKind::Greet);
    add(Role::System, Act::Request, VertexTarget::for_aspect(0), {0}, SuperNodeKind::AspectEx);
    add(Role::User, Act::Inform, VertexTarget::for_aspect(0), {1}, SuperNodeKind::AspectEx);
    add(Role::System, Act::Recommend, VertexTarget::for_item("it-n00"), {2},
        SuperNodeKind::Recommend);
    add(Role::User, Act::RequestInfo, VertexTarget::for_aspect(1), {3}, SuperNodeKind::Recommend);
    add(Role::System, Act::Inform, VertexTarget::for_aspect(1), {4}, SuperNodeKind::Recommend);
    add(Role::User, Act::Reject, VertexTarget::for_item("it-n00"), {3, 5},
        SuperNodeKind::Recommend);
    add(Role::System, Act::Recommend, VertexTarget::for_item("it-pos"), {6},
        SuperNodeKind::Recommend);
    add(Role::User, Act::Accept, VertexTarget::for_item("it-pos"), {7}, SuperNodeKind::Recommend);
    add(Role::System, Act::Close, VertexTarget::none(), {8}, SuperNodeKind::Close);
    return plan;
}

// A faithful linearization of the plan, lowest frontier id first.
Transcript scripted_transcript(const DialogPlan& plan) {
    Transcript t;
    t.plan_id = plan.plan_id;
    t.status = SimStatus::Completed;
    std::set<int> executed;
    while (executed.size() < plan.vertices.size()) {
        const std::vector<int> f = frontier(plan, executed);
        REQUIRE(!f.empty());
        const IntentVertex& v = plan.vertex(f.front());
        DialogTurn turn;
        turn.index = static_cast<int>(t.turns.size());
        turn.speaker = v.role;
        turn.act = v.act;
        turn.target = v.target;
        turn.text = "turn for vertex " + std::to_string(v.id);
        turn.vertex_id = v.id;
        turn.temperature = 0.9;
        t.turns.push_back(std::move(turn));
        executed.insert(v.id);
    }
    return t;
}

DialogTurn off_plan_turn() {
    DialogTurn turn;
    turn.speaker = Role::User;
    turn.act = Act::Accept;
    turn.target = VertexTarget::for_item("it-bogus");
    turn.text = "this matches nothing";
    turn.vertex_id = -1;
    return turn;
}

// Same-category catalog around positive "it-pos", with `candidates` crowd
// reviewed items it-nNN whose polarities are seeded. User u0 has two prior
// gear purchases; "it-misc" sits in another category.
struct QualityWorld {
    int k = 4;
    DecayParams decay;
    std::int64_t t0 = 1'000'000;
    std::int64_t t_h1 = 1'000'000 + 30 * kDay;
    std::int64_t t_h2 = 1'000'000 + 60 * kDay;
    std::int64_t t_plan = 1'000'000 + 300 * kDay;
    CorpusIndex index;
    AnnotationStore annotations;

    explicit QualityWorld(std::uint64_t seed, int candidates = 8,
                          bool positive_in_history = false) {
        Rng rng(seed);
        std::vector<Interaction> interactions;
        std::vector<ItemMeta> catalog;

        catalog.push_back({"it-pos", "Prime Pick", std::string("gear"), {}});
        catalog.push_back({"it-h1", "History One", std::string("gear"), {}});
        catalog.push_back({"it-h2", "History Two", std::string("gear"), {}});
        catalog.push_back({"it-misc", "Off Topic", std::string("misc"), {}});

        auto seed_crowd = [&](const std::string& id) {
            Interaction review = make_interaction("crowd", id, t0);
            interactions.push_back(review);
            bool any = false;
            for (int a = 0; a < k; ++a) {
                if (rng.uniform() < 0.75) {
                    annotations.add(unit(review, a, -1.0 + 2.0 * rng.uniform()));
                    any = true;
                }
            }
            if (!any) annotations.add(unit(review, 0, -0.5));
        };
        seed_crowd("it-pos");
        seed_crowd("it-h1");
        seed_crowd("it-h2");
        seed_crowd("it-misc");
        for (int c = 0; c < candidates; ++c) {
            char id[16];
            std::snprintf(id, sizeof id, "it-n%02d", c);
            catalog.push_back({id, std::string("Nominee ") + std::to_string(c),
                               std::string("gear"), {}});
            seed_crowd(id);
        }

        Interaction h1 = make_interaction("u0", "it-h1", t_h1);
        Interaction h2 = make_interaction("u0", "it-h2", t_h2);
        interactions.push_back(h1);
        interactions.push_back(h2);
        annotations.add(unit(h1, 0, 0.6));
        annotations.add(unit(h1, 0, 0.4));
        annotations.add(unit(h2, 1, 0.5));
        annotations.add(unit(h2, 3, -0.2));

        if (positive_in_history) {
            Interaction early = make_interaction("u0", "it-pos", t0 + 10 * kDay);
            interactions.push_back(early);
            annotations.add(unit(early, 0, 0.3));
        }

        interactions.push_back(make_interaction("u0", "it-pos", t_plan));
        index = CorpusIndex::build(std::move(interactions), std::move(catalog));
    }
};

class FixedJudge : public ChatProvider {
public:
    explicit FixedJudge(std::vector<std::string> replies) : replies_(std::move(replies)) {}

    std::string chat_complete(const std::vector<ChatMessage>& messages,
                              double /*temperature*/) override {
        transcripts.push_back(messages);
        const std::size_t i = std::min(calls, replies_.size() - 1);
        ++calls;
        return replies_[i];
    }
    std::string model_name() const override { return "scripted-fixed"; }

    std::size_t calls = 0;
    std::vector<std::vector<ChatMessage>> transcripts;

private:
    std::vector<std::string> replies_;
};

class OutageJudge : public ChatProvider {
public:
    std::string chat_complete(const std::vector<ChatMessage>&, double) override {
        throw ProviderError("judge endpoint down", true);
    }
    std::string model_name() const override { return "scripted-outage"; }
};

DatasetRecord small_record(const std::string& id, std::vector<std::string> texts) {
    DatasetRecord r;
    r.dialog_id = id;
    r.user_id = "u0";
    r.domain = "toy";
    r.plan_id = id;
    r.timestamp = 1000;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        r.turns.push_back({i % 2 == 0 ? Role::System : Role::User, std::move(texts[i])});
    }
    r.positive = "it-pos";
    return r;
}

}  // namespace

TEST_CASE("faithful transcripts align with zero violations") {
    const DialogPlan plan = sample_plan();
    REQUIRE(validate_plan(plan, 4) == std::nullopt);
    const Transcript transcript = scripted_transcript(plan);

    const AlignmentReport report = align_dialog(transcript, plan);
    CHECK(report.violations == 0);
    CHECK(report.uncovered.empty());
    CHECK(report.terminal);
    CHECK(report.accepted);
}

TEST_CASE("a transcript that never closes is rejected") {
    const DialogPlan plan = sample_plan();
    Transcript transcript = scripted_transcript(plan);
    transcript.turns.pop_back();  // drop the Close

    const AlignmentReport report = align_dialog(transcript, plan);
    CHECK(report.violations == 0);
    CHECK(report.uncovered == std::vector<int>{9});
    CHECK_FALSE(report.terminal);
    CHECK_FALSE(report.accepted);
}

TEST_CASE("the violation budget accepts three intrusions and rejects four") {
    const DialogPlan plan = sample_plan();
    const Transcript base = scripted_transcript(plan);

    Rng rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        for (int injected : {3, 4}) {
            Transcript mutated = base;
            for (int i = 0; i < injected; ++i) {
                const std::size_t pos = rng.uniform_index(mutated.turns.size() + 1);
                mutated.turns.insert(mutated.turns.begin() + static_cast<std::ptrdiff_t>(pos),
                                     off_plan_turn());
            }
            const AlignmentReport report = align_dialog(mutated, plan);
            CHECK(report.violations == injected);
            CHECK(report.uncovered.empty());
            CHECK(report.terminal);
            CHECK(report.accepted == (injected <= 3));
        }
    }
}

TEST_CASE("misdirected acts count as violations and leave vertices uncovered") {
    const DialogPlan plan = sample_plan();
    Transcript transcript = scripted_transcript(plan);
    // Right act, wrong aspect: the opening Request now targets aspect 1.
    // Nothing downstream of the real Request can execute after that.
    transcript.turns[1].target = VertexTarget::for_aspect(1);

    const AlignmentReport report = align_dialog(transcript, plan);
    CHECK(report.violations == 9);
    CHECK(report.uncovered == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9});
    CHECK_FALSE(report.terminal);
    CHECK_FALSE(report.accepted);
}

TEST_CASE("alignment accepts whatever the simulator completed") {
    QualityWorld world(77, 6);
    ItemProfileCache profiles(world.index, world.annotations, world.decay, world.k);
    AspectVocabulary vocab;
    vocab.k = world.k;
    vocab.dim = 4;
    vocab.labels = {"battery", "screen", "price", "weight"};
    vocab.centroids = Matrix::Identity(4, 4);

    const UserProfile user =
        compute_user_profile(world.index, world.annotations, "u0", world.t_plan, world.decay,
                             world.k);
    PlanParams params;
    params.k = world.k;
    params.tau_b = 1e9;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const Interaction target = make_interaction("u0", "it-pos", world.t_plan);
        const DialogPlan plan = build_plan(target, user, profiles, world.index, params, seed);
        SimContext ctx{world.index, vocab, plan, user, profiles};
        CompliantAgent user_agent, system_agent;
        SimParams sim;
        const SimulationOutcome outcome = run_dialog(ctx, user_agent, system_agent, sim);
        REQUIRE(outcome.status == SimStatus::Completed);
        const AlignmentReport report = align_dialog(outcome.transcript, plan);
        CHECK(report.accepted);
        CHECK(report.violations == 0);
    }
}

TEST_CASE("negative selection favors sign-mismatched candidates") {
    std::vector<Interaction> interactions;
    std::vector<ItemMeta> catalog;
    catalog.push_back({"it-pos", "Prime Pick", std::string("gear"), {}});
    catalog.push_back({"it-bad", "All Wrong", std::string("gear"), {}});
    catalog.push_back({"it-bad2", "All Wrong Too", std::string("gear"), {}});
    catalog.push_back({"it-good", "All Right", std::string("gear"), {}});
    catalog.push_back({"it-half", "Half Wrong", std::string("gear"), {}});
    catalog.push_back({"it-hist", "Seen Before", std::string("gear"), {}});
    catalog.push_back({"it-misc", "Off Topic", std::string("misc"), {}});

    AnnotationStore annotations;
    auto pin = [&](const std::string& id, std::vector<std::pair<int, double>> mu) {
        Interaction review = make_interaction("crowd", id, 1000);
        interactions.push_back(review);
        for (const auto& [aspect, sentiment] : mu) annotations.add(unit(review, aspect, sentiment));
    };
    pin("it-pos", {{0, 1.0}, {2, 1.0}, {3, 1.0}});
    pin("it-bad", {{0, -1.0}, {2, -1.0}, {3, -1.0}});
    pin("it-bad2", {{0, -1.0}, {2, -1.0}, {3, -1.0}});
    pin("it-good", {{0, 1.0}, {2, 1.0}, {3, 1.0}});
    pin("it-half", {{0, -1.0}});
    pin("it-hist", {{0, -1.0}, {2, -1.0}, {3, -1.0}});
    pin("it-misc", {{0, -1.0}, {2, -1.0}, {3, -1.0}});

    const std::int64_t t = 500000;
    const CorpusIndex index = CorpusIndex::build(std::move(interactions), std::move(catalog));
    const DecayParams decay;
    ItemProfileCache profiles(index, annotations, decay, 4);
    // Top aspects: 0 (weight 3), 2 (weight 2), 3 (weight 1); aspect 1 ignored.
    const UserProfile shopper = profile_with({3.0, 0.0, 2.0, 1.0});

    SUBCASE("extremes and ties") {
        const NegativeSelection sel =
            select_negatives(index, profiles, shopper, "it-pos", {"it-hist"}, t, 2);
        CHECK_FALSE(sel.short_pool);
        CHECK(sel.items == std::vector<std::string>{"it-bad", "it-bad2"});
    }

    SUBCASE("ranking spans the whole pool") {
        const NegativeSelection sel =
            select_negatives(index, profiles, shopper, "it-pos", {"it-hist"}, t, 4);
        CHECK(sel.items == std::vector<std::string>{"it-bad", "it-bad2", "it-half", "it-good"});
    }

    SUBCASE("a small pool is returned whole and flagged") {
        const NegativeSelection sel =
            select_negatives(index, profiles, shopper, "it-pos", {"it-hist"}, t, 10);
        CHECK(sel.short_pool);
        CHECK(sel.items == std::vector<std::string>{"it-bad", "it-bad2", "it-half", "it-good"});
    }
}

TEST_CASE("negative selection matches a from-scratch top-n scan") {
    for (std::uint64_t seed : {101ULL, 102ULL, 103ULL, 104ULL, 105ULL}) {
        QualityWorld world(seed, 30);
        ItemProfileCache profiles(world.index, world.annotations, world.decay, world.k);
        Rng rng(seed + 7);
        std::vector<double> weights(static_cast<std::size_t>(world.k));
        for (double& w : weights) w = rng.uniform() < 0.2 ? 0.0 : 4.0 * rng.uniform();
        const UserProfile user = profile_with(weights);
        const std::set<std::string> history{"it-h1", "it-h2"};
        const int n = 4;

        // Top three aspects by weight, index breaking ties.
        std::vector<int> order{0, 1, 2, 3};
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return weights[static_cast<std::size_t>(a)] > weights[static_cast<std::size_t>(b)];
        });
        order.resize(3);
        double total = 0.0;
        for (int a : order) total += weights[static_cast<std::size_t>(a)];

        std::vector<std::pair<double, std::string>> scored;
        for (const std::string& id : world.index.item_ids()) {
            if (id == "it-pos" || history.count(id) > 0 || id == "it-misc") continue;
            const ItemProfile& p = profiles.at(id, world.t_plan);
            double score = 0.0;
            for (std::size_t i = 0; i < order.size(); ++i) {
                const int a = order[i];
                const double share =
                    total > 0.0 ? weights[static_cast<std::size_t>(a)] / total : 1.0 / 3.0;
                if (p.defined[static_cast<std::size_t>(a)]) score -= p.polarity[a] * share;
            }
            scored.emplace_back(score, id);
        }
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        std::vector<std::string> expected;
        for (int i = 0; i < n; ++i) expected.push_back(scored[static_cast<std::size_t>(i)].second);

        const NegativeSelection sel =
            select_negatives(world.index, profiles, user, "it-pos", history, world.t_plan, n);
        CHECK(sel.items == expected);
        CHECK_FALSE(sel.short_pool);
    }
}

TEST_CASE("dataset records enforce their invariants") {
    DatasetRecord record = small_record("d1", {"hello", "hi"});
    record.history = {{"it-a", 100}, {"it-b", 100}, {"it-c", 500}};
    record.negatives = {"it-x", "it-y"};
    CHECK(validate_record(record) == std::nullopt);

    SUBCASE("empty positive") {
        record.positive.clear();
        CHECK(validate_record(record) == "empty positive item");
    }
    SUBCASE("history out of order") {
        std::swap(record.history[0], record.history[2]);
        CHECK(validate_record(record) == "history out of chronological order");
    }
    SUBCASE("history reaching the interaction time") {
        record.history.push_back({"it-d", record.timestamp});
        CHECK(validate_record(record) == "history entry not before the interaction");
    }
    SUBCASE("positive bought before") {
        record.history.push_back({record.positive, 600});
        CHECK(validate_record(record) == "positive item appears in history");
    }
    SUBCASE("negative equal to the positive") {
        record.negatives.push_back(record.positive);
        CHECK(validate_record(record) == "negative equals the positive");
    }
    SUBCASE("negative from history") {
        record.negatives.push_back("it-b");
        CHECK(validate_record(record) == "negative appears in history");
    }
    SUBCASE("duplicate negatives") {
        record.negatives.push_back("it-x");
        CHECK(validate_record(record) == "duplicate negative");
    }
}

TEST_CASE("records and stats survive serialization") {
    DatasetRecord record = small_record("d1", {"hello", "hi", "bye"});
    record.history = {{"it-a", 100}, {"it-b", 200}};
    record.negatives = {"it-x", "it-y"};
    record.short_negative_pool = true;
    record.provenance = {{"seed", "00ff"}, {"chat_model", "scripted-compliant"}};

    const DatasetRecord back = DatasetRecord::from_json(record.to_json());
    CHECK(back.dialog_id == record.dialog_id);
    CHECK(back.user_id == record.user_id);
    CHECK(back.domain == record.domain);
    CHECK(back.plan_id == record.plan_id);
    CHECK(back.timestamp == record.timestamp);
    REQUIRE(back.turns.size() == record.turns.size());
    for (std::size_t i = 0; i < back.turns.size(); ++i) {
        CHECK(back.turns[i].speaker == record.turns[i].speaker);
        CHECK(back.turns[i].text == record.turns[i].text);
    }
    REQUIRE(back.history.size() == record.history.size());
    for (std::size_t i = 0; i < back.history.size(); ++i) {
        CHECK(back.history[i].item_id == record.history[i].item_id);
        CHECK(back.history[i].timestamp == record.history[i].timestamp);
    }
    CHECK(back.positive == record.positive);
    CHECK(back.negatives == record.negatives);
    CHECK(back.short_negative_pool == record.short_negative_pool);
    CHECK(back.provenance == record.provenance);
    CHECK(back.to_json() == record.to_json());

    DatasetStats stats;
    stats.dialog_count = 3;
    stats.turn_count = 17;
    stats.user_count = 2;
    stats.item_count = 9;
    stats.dialogs_by_domain = {{"toy", 2}, {"gear", 1}};
    const DatasetStats stats_back = DatasetStats::from_json(stats.to_json());
    CHECK(stats_back.dialog_count == 3);
    CHECK(stats_back.turn_count == 17);
    CHECK(stats_back.user_count == 2);
    CHECK(stats_back.item_count == 9);
    CHECK(stats_back.dialogs_by_domain == stats.dialogs_by_domain);

    JudgeScore score{"d1", 5, 4, 4, "human"};
    const JudgeScore score_back = JudgeScore::from_json(score.to_json());
    CHECK(score_back.dialog_id == "d1");
    CHECK(score_back.naturalness == 5);
    CHECK(score_back.coherence == 4);
    CHECK(score_back.groundedness == 4);
    CHECK(score_back.rater == "human");
}

TEST_CASE("emission packages transcripts with history and negatives") {
    QualityWorld world(55, 8);
    const DialogPlan plan = sample_plan();
    const Transcript transcript = scripted_transcript(plan);

    EmitParams params;
    params.negatives = 3;
    params.domain = "gear";
    params.provenance = {{"seed", "002a"}, {"chat_model", "scripted-compliant"}};

    const EmitResult result = emit_records({{&transcript, &plan}}, world.index,
                                           world.annotations, world.decay, world.k, params);
    REQUIRE(result.records.size() == 1);
    const DatasetRecord& record = result.records[0];

    CHECK(record.dialog_id == plan.plan_id);
    CHECK(record.plan_id == plan.plan_id);
    CHECK(record.user_id == "u0");
    CHECK(record.domain == "gear");
    CHECK(record.timestamp == plan.timestamp);
    CHECK(record.positive == "it-pos");
    REQUIRE(record.turns.size() == transcript.turns.size());
    for (std::size_t i = 0; i < record.turns.size(); ++i) {
        CHECK(record.turns[i].speaker == transcript.turns[i].speaker);
        CHECK(record.turns[i].text == transcript.turns[i].text);
    }

    // History is the user's prior corpus activity, in order.
    REQUIRE(record.history.size() == 2);
    CHECK(record.history[0].item_id == "it-h1");
    CHECK(record.history[0].timestamp == world.t_h1);
    CHECK(record.history[1].item_id == "it-h2");
    CHECK(record.history[1].timestamp == world.t_h2);

    REQUIRE(record.negatives.size() == 3);
    for (const std::string& neg : record.negatives) {
        CHECK(neg != "it-pos");
        CHECK(neg != "it-h1");
        CHECK(neg != "it-h2");
        CHECK(neg != "it-misc");
    }

    CHECK(record.provenance.at("seed") == "002a");
    CHECK(record.provenance.at("chat_model") == "scripted-compliant");
    CHECK(record.provenance.at("plan_seed") == hex64(plan.seed));
    CHECK(validate_record(record) == std::nullopt);

    CHECK(result.stats.dialog_count == 1);
    CHECK(result.stats.turn_count == transcript.turns.size());
    CHECK(result.stats.user_count == 1);
}

TEST_CASE("emission handles first-time users and recounts exactly") {
    QualityWorld world(57, 8);

    std::vector<DialogPlan> plans;
    std::vector<Transcript> transcripts;
    for (int i = 0; i < 20; ++i) {
        DialogPlan plan = sample_plan();
        plan.plan_id = "plan-" + hex64(static_cast<std::uint64_t>(i));
        plan.seed = static_cast<std::uint64_t>(i);
        plan.user_id = i % 3 == 0 ? "u-ghost" : "u0";  // ghost: no corpus history
        plans.push_back(std::move(plan));
    }
    for (const DialogPlan& plan : plans) transcripts.push_back(scripted_transcript(plan));

    std::vector<std::pair<const Transcript*, const DialogPlan*>> pairs;
    for (std::size_t i = 0; i < plans.size(); ++i) pairs.emplace_back(&transcripts[i], &plans[i]);

    EmitParams params;
    params.negatives = 4;
    const EmitResult result = emit_records(pairs, world.index, world.annotations, world.decay,
                                           world.k, params);
    REQUIRE(result.records.size() == 20);
    for (const DatasetRecord& record : result.records) {
        if (record.user_id == "u-ghost") CHECK(record.history.empty());
        if (record.user_id == "u0") CHECK(record.history.size() == 2);
        CHECK(validate_record(record) == std::nullopt);
    }

    // Recount the stats from the emitted records alone.
    std::set<std::string> users, items;
    std::size_t turns = 0;
    std::map<std::string, std::size_t> by_domain;
    for (const DatasetRecord& r : result.records) {
        users.insert(r.user_id);
        items.insert(r.positive);
        for (const std::string& n : r.negatives) items.insert(n);
        for (const HistoryEntry& h : r.history) items.insert(h.item_id);
        turns += r.turns.size();
        ++by_domain[r.domain];
    }
    CHECK(result.stats.dialog_count == 20);
    CHECK(result.stats.turn_count == turns);
    CHECK(result.stats.user_count == users.size());
    CHECK(result.stats.item_count == items.size());
    CHECK(result.stats.dialogs_by_domain == by_domain);
}

TEST_CASE("emission refuses a record whose positive was already bought") {
    QualityWorld world(59, 8, /*positive_in_history=*/true);
    const DialogPlan plan = sample_plan();
    const Transcript transcript = scripted_transcript(plan);

    CHECK_THROWS_WITH_AS(
        emit_records({{&transcript, &plan}}, world.index, world.annotations, world.decay,
                     world.k, EmitParams{}),
        doctest::Contains("positive item appears in history"), QualityError);
}

TEST_CASE("judging parses strict replies and re-asks once") {
    const DatasetRecord record = small_record("d9", {"hello", "hi there", "goodbye"});

    SUBCASE("clean reply") {
        FixedJudge judge({R"({"naturalness":5,"coherence":4,"groundedness":4})"});
        const auto score = judge_dialog(judge, record);
        REQUIRE(score.has_value());
        CHECK(score->dialog_id == "d9");
        CHECK(score->naturalness == 5);
        CHECK(score->coherence == 4);
        CHECK(score->groundedness == 4);
        CHECK(score->rater == "auto");
        CHECK(judge.calls == 1);
        // The prompt asks for intent extraction before rating and carries
        // the dialog text.
        const std::string& prompt = judge.transcripts[0][0].content;
        CHECK(prompt.find("extract each turn's communicative intent") != std::string::npos);
        CHECK(prompt.find("hi there") != std::string::npos);
    }

    SUBCASE("json wrapped in prose still parses") {
        FixedJudge judge(
            {"Here you go: {\"naturalness\":3,\"coherence\":3,\"groundedness\":5} thanks"});
        const auto score = judge_dialog(judge, record);
        REQUIRE(score.has_value());
        CHECK(score->groundedness == 5);
    }

    SUBCASE("out-of-range score is re-asked, then unscored") {
        FixedJudge judge({R"({"naturalness":7,"coherence":4,"groundedness":4})"});
        const auto score = judge_dialog(judge, record);
        CHECK_FALSE(score.has_value());
        CHECK(judge.calls == 2);
        REQUIRE(judge.transcripts.size() == 2);
        REQUIRE(judge.transcripts[1].size() == 3);
        CHECK(judge.transcripts[1][2].content.find("integers 1-5") != std::string::npos);
    }

    SUBCASE("malformed reply recovers on the retry") {
        FixedJudge judge({"no json at all",
                          R"({"naturalness":2,"coherence":3,"groundedness":4})"});
        const auto score = judge_dialog(judge, record);
        REQUIRE(score.has_value());
        CHECK(score->naturalness == 2);
        CHECK(judge.calls == 2);
    }

    SUBCASE("non-integer axis is invalid") {
        FixedJudge judge({R"({"naturalness":4.5,"coherence":4,"groundedness":4})"});
        CHECK_FALSE(judge_dialog(judge, record).has_value());
    }

    SUBCASE("missing axis is invalid") {
        FixedJudge judge({R"({"naturalness":4,"coherence":4})"});
        CHECK_FALSE(judge_dialog(judge, record).has_value());
    }

    SUBCASE("provider outage leaves the dialog unscored") {
        OutageJudge judge;
        CHECK_FALSE(judge_dialog(judge, record).has_value());
    }
}

TEST_CASE("the offline judge is deterministic and in range") {
    ScriptedJudge judge;
    std::vector<DatasetRecord> records;
    for (int i = 0; i < 50; ++i) {
        records.push_back(small_record("d" + std::to_string(i),
                                       {"hello " + std::to_string(i), "hi", "bye"}));
    }

    double mean_naturalness = 0.0;
    for (const DatasetRecord& record : records) {
        const auto score = judge_dialog(judge, record);
        REQUIRE(score.has_value());
        CHECK(score->naturalness >= 3);
        CHECK(score->naturalness <= 5);
        CHECK(score->coherence >= 3);
        CHECK(score->coherence <= 5);
        CHECK(score->groundedness >= 3);
        CHECK(score->groundedness <= 5);

        // Re-derive the expected scores from the prompt hash.
        const std::uint64_t h = fnv1a(judge_prompt(record));
        CHECK(score->naturalness == 3 + static_cast<int>(h % 3));
        CHECK(score->coherence == 3 + static_cast<int>((h >> 8) % 3));
        CHECK(score->groundedness == 3 + static_cast<int>((h >> 16) % 3));

        const auto again = judge_dialog(judge, record);
        REQUIRE(again.has_value());
        CHECK(again->naturalness == score->naturalness);
        mean_naturalness += score->naturalness;
    }
    mean_naturalness /= 50.0;
    CHECK(mean_naturalness >= 3.0);
    CHECK(mean_naturalness <= 5.0);
}

TEST_CASE("rank correlation reproduces the reference fixtures") {
    const std::vector<double> base{1.0, 2.0, 3.0, 4.0};

    SUBCASE("perfect agreement and inversion") {
        CHECK(*spearman_rho(base, base) == 1.0);
        const std::vector<double> reversed{4.0, 3.0, 2.0, 1.0};
        CHECK(*spearman_rho(base, reversed) == -1.0);
    }

    SUBCASE("one swapped pair scores 0.8") {
        const std::vector<double> y{1.0, 3.0, 2.0, 4.0};
        CHECK(*spearman_rho(base, y) == 0.8);
    }

    SUBCASE("ties take average ranks") {
        // Ranks of x: 1, 2.5, 2.5, 4 -> rho = 3/sqrt(10).
        const std::vector<double> x{1.0, 2.0, 2.0, 3.0};
        CHECK(*spearman_rho(x, base) == doctest::Approx(3.0 / std::sqrt(10.0)).epsilon(1e-12));
    }

    SUBCASE("degenerate inputs") {
        const std::vector<double> flat{2.0, 2.0, 2.0, 2.0};
        CHECK_FALSE(spearman_rho(base, flat).has_value());
        CHECK_FALSE(spearman_rho(flat, base).has_value());
        const std::vector<double> shorter{1.0, 2.0};
        CHECK_THROWS_AS(spearman_rho(base, shorter), ConfigError);
        const std::vector<double> single{1.0};
        CHECK_THROWS_AS(spearman_rho(single, single), ConfigError);
    }
}

TEST_CASE("rank correlation is symmetric, monotone-invariant, and bounded") {
    Rng rng(303);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 3 + rng.uniform_index(10);
        std::vector<double> x(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = std::floor(rng.uniform() * 6.0);  // coarse values force ties
            y[i] = std::floor(rng.uniform() * 6.0);
        }
        const auto xy = spearman_rho(x, y);
        const auto yx = spearman_rho(y, x);
        REQUIRE(xy.has_value() == yx.has_value());
        if (!xy) continue;
        CHECK(*xy == doctest::Approx(*yx).epsilon(1e-12));
        CHECK(*xy >= -1.0 - 1e-12);
        CHECK(*xy <= 1.0 + 1e-12);

        // A strictly increasing transform of either side changes nothing.
        std::vector<double> y_scaled(n);
        for (std::size_t i = 0; i < n; ++i) y_scaled[i] = std::exp(y[i] / 2.0) + 5.0;
        CHECK(*spearman_rho(x, y_scaled) == doctest::Approx(*xy).epsilon(1e-12));
    }
}
