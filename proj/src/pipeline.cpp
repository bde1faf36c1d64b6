#include "convrec/pipeline.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "convrec/corpus.hpp"
#include "convrec/planning.hpp"
#include "convrec/profiling.hpp"
#include "convrec/quality.hpp"
#include "convrec/rng.hpp"
#include "convrec/simulation.hpp"

namespace convrec {

namespace fs = std::filesystem;
using nlohmann::json;

// --- configuration -----------------------------------------------------------

namespace {

json provider_to_json(const ProviderConfig& p) {
    return json{{"endpoint", p.endpoint},
                {"model", p.model},
                {"auth_env_var", p.auth_env_var},
                {"max_in_flight", p.max_in_flight},
                {"timeout_s", p.timeout_s},
                {"retry_attempts", p.retry.max_attempts},
                {"retry_backoff_s", p.retry.backoff_base_s}};
}

void provider_from_json(const json& j, ProviderConfig& p, const std::string& prefix) {
    static const std::set<std::string> known = {
        "endpoint",  "model",          "auth_env_var",   "max_in_flight",
        "timeout_s", "retry_attempts", "retry_backoff_s"};
    for (const auto& [key, _] : j.items()) {
        if (known.count(key) == 0) throw ConfigError("unknown config field: " + prefix + "." + key);
    }
    p.endpoint = j.value("endpoint", p.endpoint);
    p.model = j.value("model", p.model);
    p.auth_env_var = j.value("auth_env_var", p.auth_env_var);
    p.max_in_flight = j.value("max_in_flight", p.max_in_flight);
    p.timeout_s = j.value("timeout_s", p.timeout_s);
    p.retry.max_attempts = j.value("retry_attempts", p.retry.max_attempts);
    p.retry.backoff_base_s = j.value("retry_backoff_s", p.retry.backoff_base_s);
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ConfigError("config is not a JSON object");
    RunConfig c;
    for (const auto& [key, value] : j.items()) {
        if (key == "interactions_path") c.interactions_path = value.get<std::string>();
        else if (key == "catalog_path") c.catalog_path = value.get<std::string>();
        else if (key == "output_dir") c.output_dir = value.get<std::string>();
        else if (key == "domain") c.domain = value.get<std::string>();
        else if (key == "k") c.k = value.get<int>();
        else if (key == "tau") c.tau = value.get<double>();
        else if (key == "fixed_labels_path") c.fixed_labels_path = value.get<std::string>();
        else if (key == "half_life_days") c.half_life_days = value.get<double>();
        else if (key == "gamma_override") {
            if (!value.is_null()) c.gamma_override = value.get<double>();
        } else if (key == "refine_epochs") c.refine_epochs = value.get<int>();
        else if (key == "refine_temperature") c.refine_temperature = value.get<double>();
        else if (key == "refine_learning_rate") c.refine_learning_rate = value.get<double>();
        else if (key == "epsilon") c.epsilon = value.get<double>();
        else if (key == "clarify_prob") c.clarify_prob = value.get<double>();
        else if (key == "reject_prob") c.reject_prob = value.get<double>();
        else if (key == "request_info_prob") c.request_info_prob = value.get<double>();
        else if (key == "tau_b") {
            if (!value.is_null()) c.tau_b = value.get<double>();
        } else if (key == "min_aspects") c.min_aspects = value.get<int>();
        else if (key == "max_aspects") c.max_aspects = value.get<int>();
        else if (key == "max_rejections") c.max_rejections = value.get<int>();
        else if (key == "initial_temperature") c.initial_temperature = value.get<double>();
        else if (key == "temperature_decrement") c.temperature_decrement = value.get<double>();
        else if (key == "temperature_floor") c.temperature_floor = value.get<double>();
        else if (key == "max_consecutive_rejections")
            c.max_consecutive_rejections = value.get<int>();
        else if (key == "max_turns") c.max_turns = value.get<int>();
        else if (key == "negatives") c.negatives = value.get<int>();
        else if (key == "max_violations") c.max_violations = value.get<int>();
        else if (key == "seed") c.seed = value.get<std::uint64_t>();
        else if (key == "limit") c.limit = value.get<std::size_t>();
        else if (key == "mock_providers") c.mock_providers = value.get<bool>();
        else if (key == "force") c.force = value.get<bool>();
        else if (key == "workers") c.workers = value.get<int>();
        else if (key == "mock_embed_dimension") c.mock_embed_dimension = value.get<int>();
        else if (key == "embed_provider") provider_from_json(value, c.embed_provider, key);
        else if (key == "chat_provider") provider_from_json(value, c.chat_provider, key);
        else if (key == "judge_provider") provider_from_json(value, c.judge_provider, key);
        else throw ConfigError("unknown config field: " + key);
    }
    return c;
}

std::string RunConfig::to_json_text() const {
    json j;
    j["interactions_path"] = interactions_path;
    j["catalog_path"] = catalog_path;
    j["output_dir"] = output_dir;
    j["domain"] = domain;
    j["k"] = k;
    j["tau"] = tau;
    j["fixed_labels_path"] = fixed_labels_path;
    j["half_life_days"] = half_life_days;
    j["gamma_override"] = gamma_override ? json(*gamma_override) : json(nullptr);
    j["refine_epochs"] = refine_epochs;
    j["refine_temperature"] = refine_temperature;
    j["refine_learning_rate"] = refine_learning_rate;
    j["epsilon"] = epsilon;
    j["clarify_prob"] = clarify_prob;
    j["reject_prob"] = reject_prob;
    j["request_info_prob"] = request_info_prob;
    j["tau_b"] = tau_b ? json(*tau_b) : json(nullptr);
    j["min_aspects"] = min_aspects;
    j["max_aspects"] = max_aspects;
    j["max_rejections"] = max_rejections;
    j["initial_temperature"] = initial_temperature;
    j["temperature_decrement"] = temperature_decrement;
    j["temperature_floor"] = temperature_floor;
    j["max_consecutive_rejections"] = max_consecutive_rejections;
    j["max_turns"] = max_turns;
    j["negatives"] = negatives;
    j["max_violations"] = max_violations;
    j["seed"] = seed;
    j["limit"] = limit;
    j["mock_providers"] = mock_providers;
    j["force"] = force;
    j["workers"] = workers;
    j["mock_embed_dimension"] = mock_embed_dimension;
    j["embed_provider"] = provider_to_json(embed_provider);
    j["chat_provider"] = provider_to_json(chat_provider);
    j["judge_provider"] = provider_to_json(judge_provider);
    return j.dump();
}

void RunConfig::validate() const {
    const auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (k < 2) throw ConfigError("config field k must be >= 2");
    if (!(tau > 0.0 && tau <= 2.0)) throw ConfigError("config field tau must be in (0, 2]");
    if (!(half_life_days > 0.0)) throw ConfigError("config field half_life_days must be > 0");
    if (gamma_override && !(*gamma_override > 0.0)) {
        throw ConfigError("config field gamma_override must be > 0");
    }
    if (refine_epochs < 0) throw ConfigError("config field refine_epochs must be >= 0");
    if (!(refine_temperature > 0.0)) {
        throw ConfigError("config field refine_temperature must be > 0");
    }
    if (!(refine_learning_rate > 0.0)) {
        throw ConfigError("config field refine_learning_rate must be > 0");
    }
    if (!(epsilon > 0.0)) throw ConfigError("config field epsilon must be > 0");
    if (!in_unit(clarify_prob)) throw ConfigError("config field clarify_prob must be in [0, 1]");
    if (!in_unit(reject_prob)) throw ConfigError("config field reject_prob must be in [0, 1]");
    if (!in_unit(request_info_prob)) {
        throw ConfigError("config field request_info_prob must be in [0, 1]");
    }
    if (tau_b && *tau_b < 0.0) throw ConfigError("config field tau_b must be >= 0");
    if (min_aspects < 1) throw ConfigError("config field min_aspects must be >= 1");
    if (max_aspects < min_aspects) {
        throw ConfigError("config field max_aspects must be >= min_aspects");
    }
    if (max_rejections < 0 || max_rejections > 2) {
        throw ConfigError("config field max_rejections must be in [0, 2]");
    }
    if (!(initial_temperature > 0.0 && initial_temperature <= 2.0)) {
        throw ConfigError("config field initial_temperature must be in (0, 2]");
    }
    if (!(temperature_decrement > 0.0)) {
        throw ConfigError("config field temperature_decrement must be > 0");
    }
    if (temperature_floor < 0.0) throw ConfigError("config field temperature_floor must be >= 0");
    if (max_consecutive_rejections < 1) {
        throw ConfigError("config field max_consecutive_rejections must be >= 1");
    }
    if (max_turns < 1) throw ConfigError("config field max_turns must be >= 1");
    if (negatives < 1) throw ConfigError("config field negatives must be >= 1");
    if (max_violations < 0) throw ConfigError("config field max_violations must be >= 0");
    if (workers < 1) throw ConfigError("config field workers must be >= 1");
    if (mock_embed_dimension < 2) {
        throw ConfigError("config field mock_embed_dimension must be >= 2");
    }
}

std::string RunConfig::config_hash() const {
    json j = json::parse(to_json_text());
    // Execution-shape knobs do not change what an artifact means.
    j.erase("limit");
    j.erase("force");
    j.erase("workers");
    j.erase("output_dir");
    j.erase("seed");
    return hex64(fnv1a(j.dump()));
}

std::string RunConfig::artifact_path(const std::string& name) const {
    return (fs::path(output_dir) / (name + ".jsonl")).string();
}

// --- artifact io -----------------------------------------------------------------

void write_artifact(const std::string& path, const std::string& stage, const RunConfig& config,
                    const std::vector<std::string>& lines) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path partial = target.string() + ".partial";
    {
        std::ofstream out(partial);
        if (!out) throw Error("cannot write artifact: " + partial.string());
        json meta{{"config_hash", config.config_hash()},
                  {"seed", config.seed},
                  {"stage", stage},
                  {"tool", "convrec"}};
        out << "#meta " << meta.dump() << '\n';
        for (const std::string& line : lines) out << line << '\n';
    }
    fs::rename(partial, target);
}

std::vector<std::string> read_artifact(const std::string& path, const std::string& stage,
                                       const RunConfig& config) {
    if (!fs::exists(path)) throw ArtifactError("missing artifact: " + path);
    std::ifstream in(path);
    if (!in) throw ArtifactError("cannot open artifact: " + path);
    std::string first;
    if (!std::getline(in, first) || first.rfind("#meta ", 0) != 0) {
        throw ArtifactError("artifact without #meta header: " + path);
    }
    json meta = json::parse(first.substr(6), nullptr, false);
    if (meta.is_discarded() || !meta.is_object()) {
        throw ArtifactError("unreadable #meta header: " + path);
    }
    if (meta.value("stage", "") != stage) {
        throw ArtifactError("artifact " + path + " is stage '" + meta.value("stage", "?") +
                            "', expected '" + stage + "'");
    }
    if (meta.value("config_hash", "") != config.config_hash() && !config.force) {
        throw ArtifactError("config hash mismatch in " + path +
                            "; rerun the upstream stage or pass --force");
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        lines.push_back(line);
    }
    return lines;
}

// --- shared helpers -----------------------------------------------------------------

namespace {

struct ProviderBundle {
    std::unique_ptr<EmbeddingProvider> embed;
    std::unique_ptr<SentimentProvider> sentiment;
    std::unique_ptr<ChatProvider> user_agent;
    std::unique_ptr<ChatProvider> system_agent;
    std::unique_ptr<ChatProvider> judge;
};

ProviderBundle make_providers(const RunConfig& c) {
    ProviderBundle b;
    if (c.mock_providers) {
        b.embed = std::make_unique<HashEmbeddingProvider>(c.mock_embed_dimension, c.seed);
        b.sentiment = std::make_unique<LexiconSentimentProvider>();
        b.user_agent = std::make_unique<CompliantAgent>();
        b.system_agent = std::make_unique<CompliantAgent>();
        b.judge = std::make_unique<ScriptedJudge>();
        return b;
    }
    if (c.embed_provider.endpoint.empty()) {
        throw ConfigError("config field embed_provider.endpoint is required without mocks");
    }
    if (c.chat_provider.endpoint.empty()) {
        throw ConfigError("config field chat_provider.endpoint is required without mocks");
    }
    const ProviderConfig judge_cfg =
        c.judge_provider.endpoint.empty() ? c.chat_provider : c.judge_provider;
    b.embed = std::make_unique<HttpEmbeddingProvider>(c.embed_provider);
    b.sentiment =
        std::make_unique<ChatSentimentProvider>(std::make_shared<HttpChatProvider>(c.chat_provider));
    b.user_agent = std::make_unique<HttpChatProvider>(c.chat_provider);
    b.system_agent = std::make_unique<HttpChatProvider>(c.chat_provider);
    b.judge = std::make_unique<HttpChatProvider>(judge_cfg);
    return b;
}

CorpusIndex load_index(const RunConfig& c, std::size_t limit) {
    if (!fs::exists(c.interactions_path)) {
        throw ArtifactError("missing artifact: " + c.interactions_path);
    }
    if (!fs::exists(c.catalog_path)) throw ArtifactError("missing artifact: " + c.catalog_path);
    LoadedInteractions li = load_interactions_file(c.interactions_path);
    LoadedCatalog lc = load_catalog_file(c.catalog_path);
    std::vector<Interaction> interactions = std::move(li.interactions);
    if (limit > 0 && interactions.size() > limit) {
        std::sort(interactions.begin(), interactions.end(),
                  [](const Interaction& a, const Interaction& b) {
                      return std::tie(a.timestamp, a.item_id, a.user_id) <
                             std::tie(b.timestamp, b.item_id, b.user_id);
                  });
        interactions.resize(limit);
    }
    return CorpusIndex::build(std::move(interactions), std::move(lc.items));
}

DecayParams decay_of(const RunConfig& c) {
    DecayParams d;
    d.half_life_days = c.half_life_days;
    d.gamma_override = c.gamma_override;
    return d;
}

SentenceUnit unit_from_json(const json& j) {
    SentenceUnit u;
    u.user_id = j.at("user_id").get<std::string>();
    u.item_id = j.at("item_id").get<std::string>();
    u.timestamp = j.at("timestamp").get<std::int64_t>();
    u.text = j.at("text").get<std::string>();
    u.aspect = j.at("aspect").get<int>();
    u.sentiment = j.at("sentiment").get<double>();
    return u;
}

AnnotationStore annotations_from_lines(const std::vector<std::string>& lines) {
    AnnotationStore store;
    for (const std::string& line : lines) store.add(unit_from_json(json::parse(line)));
    return store;
}

AspectVocabulary vocabulary_from_artifact(const RunConfig& config) {
    const auto lines = read_artifact(config.artifact_path("vocabulary"), "vocabulary", config);
    if (lines.size() != 1) {
        throw ArtifactError("vocabulary artifact must hold exactly one record: " +
                            config.artifact_path("vocabulary"));
    }
    return AspectVocabulary::from_json(lines[0]);
}

std::map<std::string, std::string> generation_provenance(const RunConfig& config) {
    std::map<std::string, std::string> p;
    p["config_hash"] = config.config_hash();
    p["seed"] = hex64(config.seed);
    if (config.mock_providers) {
        p["embed_model"] = HashEmbeddingProvider(config.mock_embed_dimension, config.seed)
                               .model_name();
        p["chat_model"] = CompliantAgent().model_name();
        p["judge_model"] = ScriptedJudge().model_name();
    } else {
        p["embed_model"] = config.embed_provider.model;
        p["chat_model"] = config.chat_provider.model;
        p["judge_model"] = config.judge_provider.model.empty() ? config.chat_provider.model
                                                               : config.judge_provider.model;
    }
    return p;
}

}  // namespace

// --- profile ---------------------------------------------------------------------

StageSummary cmd_profile(const RunConfig& config) {
    config.validate();
    const CorpusIndex index = load_index(config, config.limit);
    ProviderBundle providers = make_providers(config);
    const std::string corpus_id = hex64(fnv1a(index.canonical_serialization()));

    std::vector<SentenceUnit> units;
    std::vector<std::string> texts;
    for (const Interaction& d : index.interactions()) {
        for (const std::string& sentence : segment_review(d.review_text)) {
            SentenceUnit u;
            u.user_id = d.user_id;
            u.item_id = d.item_id;
            u.timestamp = d.timestamp;
            u.text = sentence;
            units.push_back(std::move(u));
            texts.push_back(sentence);
        }
    }

    std::vector<Vector> embeddings;
    embeddings.reserve(texts.size());
    constexpr std::size_t kBatch = 256;
    for (std::size_t start = 0; start < texts.size(); start += kBatch) {
        const std::size_t count = std::min(kBatch, texts.size() - start);
        auto vectors =
            providers.embed->embed_batch(std::span<const std::string>(&texts[start], count));
        for (auto& v : vectors) embeddings.push_back(std::move(v));
    }
    const Eigen::Index dim =
        embeddings.empty() ? providers.embed->dimension() : embeddings.front().size();
    Matrix points(static_cast<Eigen::Index>(texts.size()), dim);
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        points.row(static_cast<Eigen::Index>(i)) = embeddings[i].transpose();
    }

    AspectVocabulary vocab;
    if (!config.fixed_labels_path.empty()) {
        if (!fs::exists(config.fixed_labels_path)) {
            throw ArtifactError("missing artifact: " + config.fixed_labels_path);
        }
        std::ifstream in(config.fixed_labels_path);
        std::ostringstream buffer;
        buffer << in.rdbuf();
        json doc = json::parse(buffer.str(), nullptr, false);
        if (doc.is_discarded() || !doc.is_object() || !doc.contains("labels") ||
            !doc["labels"].is_array()) {
            throw ConfigError("config field fixed_labels_path: file must hold a labels array");
        }
        const auto labels = doc["labels"].get<std::vector<std::string>>();
        if (labels.size() != static_cast<std::size_t>(config.k)) {
            throw ConfigError("config field k must equal the fixed label count (" +
                              std::to_string(labels.size()) + ")");
        }
        const auto embedded = providers.embed->embed_batch(labels);
        vocab.k = config.k;
        vocab.dim = static_cast<int>(embedded.front().size());
        vocab.tau = config.tau;
        vocab.seed = config.seed;
        vocab.corpus_id = corpus_id;
        vocab.labels = labels;
        vocab.centroids.resize(config.k, vocab.dim);
        for (int i = 0; i < config.k; ++i) {
            vocab.centroids.row(i) = l2_normalized(embedded[static_cast<std::size_t>(i)])
                                         .transpose();
        }
    } else {
        ClusterFitParams fit;
        fit.k = config.k;
        fit.tau = config.tau;
        fit.refine_epochs = config.refine_epochs;
        fit.refine_temperature = config.refine_temperature;
        fit.refine_learning_rate = config.refine_learning_rate;
        fit.seed = config.seed;
        fit.corpus_id = corpus_id;
        // Fits are capped at a uniform 200k-sentence sample; the centroids
        // generalize to the rest through assignment.
        constexpr std::size_t kFitCap = 200000;
        if (texts.size() > kFitCap) {
            Rng sample_rng(config.seed);
            std::vector<std::size_t> order(texts.size());
            std::iota(order.begin(), order.end(), 0);
            for (std::size_t i = 0; i < kFitCap; ++i) {
                std::swap(order[i], order[i + sample_rng.uniform_index(order.size() - i)]);
            }
            Matrix fit_points(static_cast<Eigen::Index>(kFitCap), points.cols());
            std::vector<std::string> fit_texts(kFitCap);
            for (std::size_t i = 0; i < kFitCap; ++i) {
                fit_points.row(static_cast<Eigen::Index>(i)) =
                    points.row(static_cast<Eigen::Index>(order[i]));
                fit_texts[i] = texts[order[i]];
            }
            vocab = induce_aspects(fit_points, fit_texts, fit);
        } else {
            vocab = induce_aspects(points, texts, fit);
        }
    }

    std::size_t neutral = 0;
    AnnotationStore store;
    for (std::size_t i = 0; i < units.size(); ++i) {
        units[i].sentiment = providers.sentiment->classify_sentiment(units[i].text);
        units[i].aspect =
            assign_sentence(vocab, points.row(static_cast<Eigen::Index>(i)).transpose());
        if (units[i].aspect == kNeutralAspect) ++neutral;
        store.add(std::move(units[i]));
    }

    write_artifact(config.artifact_path("vocabulary"), "vocabulary", config, {vocab.to_json()});

    std::vector<std::string> annotation_lines;
    annotation_lines.reserve(store.size());
    std::set<std::tuple<std::string, std::string, std::int64_t>> keys;
    for (const Interaction& d : index.interactions()) {
        keys.insert({d.user_id, d.item_id, d.timestamp});
    }
    for (const auto& key : keys) {
        for (const SentenceUnit& u :
             store.for_interaction(std::get<0>(key), std::get<1>(key), std::get<2>(key))) {
            annotation_lines.push_back(AnnotationStore::to_json_line(u));
        }
    }
    write_artifact(config.artifact_path("annotations"), "annotations", config, annotation_lines);

    json summary{{"stage", "profile"},
                 {"interactions", index.interactions().size()},
                 {"sentences", store.size()},
                 {"neutral_sentences", neutral},
                 {"clusters", vocab.k},
                 {"corpus_id", corpus_id},
                 {"embed_model", providers.embed->model_name()}};
    return {summary.dump(), 0};
}

// --- plan -------------------------------------------------------------------------

StageSummary cmd_plan(const RunConfig& config) {
    config.validate();
    const CorpusIndex index = load_index(config, 0);
    const AspectVocabulary vocab = vocabulary_from_artifact(config);
    const AnnotationStore store = annotations_from_lines(
        read_artifact(config.artifact_path("annotations"), "annotations", config));
    const DecayParams decay = decay_of(config);

    PlanParams params;
    params.k = vocab.k;
    params.epsilon = config.epsilon;
    params.clarify_prob = config.clarify_prob;
    params.reject_prob = config.reject_prob;
    params.request_info_prob = config.request_info_prob;
    params.tau_b =
        config.tau_b ? *config.tau_b : default_tau_b(index, store, decay, vocab.k);
    params.min_aspects = config.min_aspects;
    params.max_aspects = config.max_aspects;
    params.max_rejections = config.max_rejections;

    ItemProfileCache cache(index, store, decay, vocab.k);
    const auto& interactions = index.interactions();

    // Interactions repeating an item the user already touched would break the
    // positive-not-in-history record invariant downstream; they get weight 0.
    std::vector<char> repeat(interactions.size(), 0);
    for (const std::string& user : index.user_ids()) {
        std::set<std::string> seen;
        for (std::size_t idx : index.user_interactions(user)) {
            if (!seen.insert(interactions[idx].item_id).second) repeat[idx] = 1;
        }
    }

    std::vector<double> weights(interactions.size(), 0.0);
    std::size_t positive = 0;
    for (std::size_t i = 0; i < interactions.size(); ++i) {
        if (repeat[i] != 0) continue;
        const Interaction& d = interactions[i];
        weights[i] = interaction_weight(d, store, cache.at(d.item_id, d.timestamp),
                                        index.max_review_tokens());
        if (weights[i] > 0.0) ++positive;
    }

    const std::size_t n = config.limit > 0 ? config.limit : positive;
    Rng rng(config.seed);
    const SampleResult sample = sample_interactions(weights, n, rng);

    std::vector<std::string> lines;
    std::size_t failures = 0;
    for (std::size_t idx : sample.indices) {
        const Interaction& d = interactions[idx];
        const UserProfile profile =
            compute_user_profile(index, store, d.user_id, d.timestamp, decay, vocab.k);
        try {
            const DialogPlan plan =
                build_plan(d, profile, cache, index, params,
                           plan_seed(config.seed, d.user_id, d.item_id, d.timestamp));
            lines.push_back(plan.to_json());
        } catch (const PlanError&) {
            ++failures;
        }
    }
    write_artifact(config.artifact_path("plans"), "plans", config, lines);

    json summary{{"stage", "plan"},         {"requested", n},
                 {"planned", lines.size()}, {"failures", failures},
                 {"tau_b", params.tau_b},   {"positive_weight_interactions", positive},
                 {"exhausted", sample.exhausted}};
    return {summary.dump(), 0};
}

// --- simulate -----------------------------------------------------------------------

StageSummary cmd_simulate(const RunConfig& config) {
    config.validate();
    const CorpusIndex index = load_index(config, 0);
    const AspectVocabulary vocab = vocabulary_from_artifact(config);
    const AnnotationStore store = annotations_from_lines(
        read_artifact(config.artifact_path("annotations"), "annotations", config));
    const DecayParams decay = decay_of(config);

    std::vector<DialogPlan> plans;
    for (const std::string& line :
         read_artifact(config.artifact_path("plans"), "plans", config)) {
        plans.push_back(DialogPlan::from_json(line));
    }
    if (config.limit > 0 && plans.size() > config.limit) plans.resize(config.limit);

    ProviderBundle providers = make_providers(config);
    SimParams params;
    params.initial_temperature = config.initial_temperature;
    params.temperature_decrement = config.temperature_decrement;
    params.temperature_floor = config.temperature_floor;
    params.max_consecutive_rejections = config.max_consecutive_rejections;
    params.max_turns = config.max_turns;
    params.seed = config.seed;

    std::vector<SimulationOutcome> outcomes(plans.size());
    const int workers = std::max(1, config.workers);
    std::atomic<std::size_t> next{0};
    const auto worker = [&]() {
        ItemProfileCache cache(index, store, decay, vocab.k);
        for (std::size_t i = next.fetch_add(1); i < plans.size(); i = next.fetch_add(1)) {
            const UserProfile profile = compute_user_profile(index, store, plans[i].user_id,
                                                             plans[i].timestamp, decay, vocab.k);
            SimContext ctx{index, vocab, plans[i], profile, cache};
            outcomes[i] =
                run_dialog(ctx, *providers.user_agent, *providers.system_agent, params);
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    std::size_t completed = 0, rejections = 0, budget = 0, infrastructure = 0;
    std::vector<std::string> lines;
    for (const SimulationOutcome& o : outcomes) {
        switch (o.status) {
            case SimStatus::Completed: ++completed; break;
            case SimStatus::DiscardedRejections: ++rejections; break;
            case SimStatus::DiscardedBudget: ++budget; break;
            case SimStatus::InfrastructureFailure: ++infrastructure; break;
        }
        lines.push_back(o.transcript.to_json());
    }
    write_artifact(config.artifact_path("transcripts"), "transcripts", config, lines);

    json summary{{"stage", "simulate"},
                 {"dialogs", plans.size()},
                 {"completed", completed},
                 {"discarded_rejections", rejections},
                 {"discarded_budget", budget},
                 {"infrastructure_failures", infrastructure}};
    return {summary.dump(), infrastructure > 0 ? 4 : 0};
}

// --- validate ----------------------------------------------------------------------

StageSummary cmd_validate(const RunConfig& config, bool dataset_only) {
    config.validate();
    if (dataset_only) {
        std::size_t valid = 0, invalid = 0;
        for (const std::string& line :
             read_artifact(config.artifact_path("dataset"), "dataset", config)) {
            const DatasetRecord record = DatasetRecord::from_json(line);
            if (validate_record(record)) ++invalid;
            else ++valid;
        }
        json summary{{"stage", "validate"}, {"mode", "dataset-only"},
                     {"valid", valid},      {"invalid", invalid}};
        return {summary.dump(), invalid > 0 ? 1 : 0};
    }

    const CorpusIndex index = load_index(config, 0);
    const AspectVocabulary vocab = vocabulary_from_artifact(config);
    const AnnotationStore store = annotations_from_lines(
        read_artifact(config.artifact_path("annotations"), "annotations", config));
    const DecayParams decay = decay_of(config);

    std::map<std::string, DialogPlan> plans;
    for (const std::string& line :
         read_artifact(config.artifact_path("plans"), "plans", config)) {
        DialogPlan plan = DialogPlan::from_json(line);
        plans.emplace(plan.plan_id, std::move(plan));
    }

    std::vector<Transcript> transcripts;
    for (const std::string& line :
         read_artifact(config.artifact_path("transcripts"), "transcripts", config)) {
        transcripts.push_back(Transcript::from_json(line));
    }
    if (config.limit > 0 && transcripts.size() > config.limit) {
        transcripts.resize(config.limit);
    }

    std::vector<std::pair<const Transcript*, const DialogPlan*>> accepted;
    std::size_t discarded = 0, misaligned = 0, orphaned = 0;
    for (const Transcript& t : transcripts) {
        if (t.status != SimStatus::Completed) {
            ++discarded;
            continue;
        }
        const auto it = plans.find(t.plan_id);
        if (it == plans.end()) {
            ++orphaned;
            continue;
        }
        const AlignmentReport report = align_dialog(t, it->second, config.max_violations);
        if (report.accepted) accepted.emplace_back(&t, &it->second);
        else ++misaligned;
    }

    EmitParams params;
    params.negatives = config.negatives;
    params.domain = config.domain;
    params.provenance = generation_provenance(config);
    const EmitResult result = emit_records(accepted, index, store, decay, vocab.k, params);

    std::vector<std::string> lines;
    lines.reserve(result.records.size());
    for (const DatasetRecord& r : result.records) lines.push_back(r.to_json());
    write_artifact(config.artifact_path("dataset"), "dataset", config, lines);

    json summary{{"stage", "validate"},
                 {"transcripts", transcripts.size()},
                 {"discarded_simulations", discarded},
                 {"misaligned", misaligned},
                 {"orphaned", orphaned},
                 {"records", result.records.size()}};
    return {summary.dump(), 0};
}

// --- judge -----------------------------------------------------------------------

namespace {

std::map<std::string, std::array<double, 3>> read_human_scores(const std::string& path) {
    if (!fs::exists(path)) throw ArtifactError("missing artifact: " + path);
    std::ifstream in(path);
    if (!in) throw ArtifactError("cannot open human scores: " + path);
    std::map<std::string, std::array<double, 3>> scores;
    std::string line;
    bool header = true;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string trimmed = trim(line);
        if (trimmed.empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream stream(trimmed);
        while (std::getline(stream, cell, ',')) cells.push_back(trim(cell));
        if (header) {
            if (cells.size() != 4 || cells[0] != "dialog_id") {
                throw CorpusError("human scores need header dialog_id,naturalness,coherence,"
                                  "groundedness: " + path);
            }
            header = false;
            continue;
        }
        if (cells.size() != 4) {
            throw CorpusError("human scores line " + std::to_string(line_no) +
                              " does not have 4 columns");
        }
        scores[cells[0]] = {std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3])};
    }
    return scores;
}

json rho_to_json(const std::optional<double>& rho) {
    return rho ? json(*rho) : json("undefined");
}

}  // namespace

StageSummary cmd_judge(const RunConfig& config, const std::string& human_scores_csv) {
    config.validate();
    std::vector<DatasetRecord> records;
    for (const std::string& line :
         read_artifact(config.artifact_path("dataset"), "dataset", config)) {
        records.push_back(DatasetRecord::from_json(line));
    }
    if (config.limit > 0 && records.size() > config.limit) records.resize(config.limit);

    ProviderBundle providers = make_providers(config);
    std::vector<JudgeScore> scores;
    std::size_t unscored = 0;
    for (const DatasetRecord& record : records) {
        if (auto score = judge_dialog(*providers.judge, record)) scores.push_back(*score);
        else ++unscored;
    }

    std::vector<std::string> lines;
    lines.reserve(scores.size());
    for (const JudgeScore& s : scores) lines.push_back(s.to_json());
    write_artifact(config.artifact_path("scores"), "scores", config, lines);

    json summary{{"stage", "judge"},
                 {"records", records.size()},
                 {"scored", scores.size()},
                 {"unscored", unscored},
                 {"judge_model", providers.judge->model_name()}};

    if (!human_scores_csv.empty()) {
        const auto human = read_human_scores(human_scores_csv);
        std::vector<double> ax, ay, cx, cy, gx, gy;
        for (const JudgeScore& s : scores) {
            const auto it = human.find(s.dialog_id);
            if (it == human.end()) continue;
            ax.push_back(s.naturalness);
            ay.push_back(it->second[0]);
            cx.push_back(s.coherence);
            cy.push_back(it->second[1]);
            gx.push_back(s.groundedness);
            gy.push_back(it->second[2]);
        }
        json correlation;
        correlation["pairs"] = ax.size();
        if (ax.size() >= 2) {
            correlation["naturalness"] = rho_to_json(spearman_rho(ax, ay));
            correlation["coherence"] = rho_to_json(spearman_rho(cx, cy));
            correlation["groundedness"] = rho_to_json(spearman_rho(gx, gy));
        }
        summary["spearman"] = std::move(correlation);
    }
    return {summary.dump(), unscored == records.size() && !records.empty() ? 4 : 0};
}

// --- stats -----------------------------------------------------------------------

StageSummary cmd_stats(const RunConfig& config) {
    config.validate();
    std::vector<DatasetRecord> records;
    for (const std::string& line :
         read_artifact(config.artifact_path("dataset"), "dataset", config)) {
        records.push_back(DatasetRecord::from_json(line));
    }
    if (config.limit > 0 && records.size() > config.limit) records.resize(config.limit);
    const DatasetStats stats = compute_stats(records);
    write_artifact(config.artifact_path("stats"), "stats", config, {stats.to_json()});
    json summary = json::parse(stats.to_json());
    summary["stage"] = "stats";
    return {summary.dump(), 0};
}

// --- run_all ---------------------------------------------------------------------

std::vector<StageSummary> cmd_run_all(const RunConfig& config) {
    std::vector<StageSummary> out;
    RunConfig profile_config = config;
    profile_config.limit = 0;  // profiling always covers the whole corpus
    out.push_back(cmd_profile(profile_config));
    out.push_back(cmd_plan(config));
    out.push_back(cmd_simulate(config));
    out.push_back(cmd_validate(config, false));
    out.push_back(cmd_judge(config, ""));
    out.push_back(cmd_stats(config));
    return out;
}

// --- toy corpus --------------------------------------------------------------------

StageSummary cmd_gen_corpus(const GenCorpusParams& params) {
    if (params.users < 1 || params.items_per_category < 1 || params.interactions_per_user < 1) {
        throw ConfigError("config field users/items_per_category/interactions_per_user must be "
                          ">= 1");
    }
    Rng rng(params.seed);

    static const std::vector<std::pair<std::string, std::string>> kCategories = {
        {"audio", "Audio"},   {"camera", "Camera"}, {"laptop", "Laptop"},
        {"phone", "Phone"},   {"tablet", "Tablet"}, {"wearable", "Wearable"},
    };
    static const std::vector<std::string> kPhrases = {
        "battery life",   "sound quality", "build quality", "screen clarity", "price point",
        "customer support", "ease of use", "carrying case", "color accuracy", "noise isolation",
    };
    static const std::vector<std::string> kPositive = {"great", "excellent", "good", "amazing",
                                                       "nice"};
    static const std::vector<std::string> kNegative = {"poor", "terrible", "bad", "awful",
                                                       "slow"};
    static const std::vector<std::string> kFillers = {
        "I bought this last month.",
        "It arrived on a Tuesday.",
        "My cousin has one too.",
    };

    const auto pad3 = [](int v) {
        char buffer[16];
        std::snprintf(buffer, sizeof(buffer), "%03d", v);
        return std::string(buffer);
    };

    struct ToyItem {
        std::string id, title, category;
    };
    std::vector<ToyItem> items;
    for (std::size_t c = 0; c < kCategories.size(); ++c) {
        for (int i = 0; i < params.items_per_category; ++i) {
            const int n = static_cast<int>(c) * params.items_per_category + i;
            items.push_back({"it-" + kCategories[c].first + "-" + pad3(n),
                             kCategories[c].second + " Model " + pad3(n), kCategories[c].first});
        }
    }

    // Fixed per-(item, aspect) quality bias so crowd polarity is coherent.
    const auto item_likes_aspect = [&params](std::size_t item, std::size_t aspect) {
        const std::uint64_t h =
            fnv1a_u64(static_cast<std::uint64_t>(item) * 131 + aspect, fnv1a_u64(params.seed));
        return (h >> 8) % 100 < 70;
    };

    constexpr std::int64_t kBase = 1577836800;  // 2020-01-01T00:00:00Z
    std::vector<std::string> interaction_lines;
    for (int u = 0; u < params.users; ++u) {
        const std::string user_id = "user-" + pad3(u);
        // Each user cares about a fixed handful of aspects.
        const int aspect_count = 3 + static_cast<int>(rng.uniform_index(3));
        std::vector<std::size_t> preferred;
        {
            std::vector<std::size_t> all(kPhrases.size());
            std::iota(all.begin(), all.end(), 0);
            for (int i = 0; i < aspect_count; ++i) {
                const std::size_t pick = rng.uniform_index(all.size());
                preferred.push_back(all[pick]);
                all.erase(all.begin() + static_cast<std::ptrdiff_t>(pick));
            }
        }

        std::vector<std::size_t> chosen_items;
        {
            std::vector<std::size_t> all(items.size());
            std::iota(all.begin(), all.end(), 0);
            const int count = std::min<int>(params.interactions_per_user,
                                            static_cast<int>(items.size()));
            for (int i = 0; i < count; ++i) {
                const std::size_t pick = rng.uniform_index(all.size());
                chosen_items.push_back(all[pick]);
                all.erase(all.begin() + static_cast<std::ptrdiff_t>(pick));
            }
        }

        std::int64_t day = static_cast<std::int64_t>(rng.uniform_index(60));
        for (std::size_t item_index : chosen_items) {
            day += 3 + static_cast<std::int64_t>(rng.uniform_index(18));
            const std::int64_t timestamp = kBase + day * 86400;

            const int sentence_count =
                2 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(
                        std::min<int>(3, static_cast<int>(preferred.size()) - 1)) + 1));
            std::vector<std::size_t> aspects = preferred;
            std::string review;
            int positive_sentences = 0;
            for (int s = 0; s < sentence_count && !aspects.empty(); ++s) {
                const std::size_t pick = rng.uniform_index(aspects.size());
                const std::size_t aspect = aspects[pick];
                aspects.erase(aspects.begin() + static_cast<std::ptrdiff_t>(pick));
                const bool liked = item_likes_aspect(item_index, aspect);
                const auto& pool = liked ? kPositive : kNegative;
                if (liked) ++positive_sentences;
                if (!review.empty()) review += ' ';
                review += "The " + kPhrases[aspect] + " is " + pool[rng.uniform_index(pool.size())] +
                          ".";
            }
            if (rng.bernoulli(0.25)) {
                review += ' ';
                review += kFillers[rng.uniform_index(kFillers.size())];
            }
            const double rating =
                1.0 + 4.0 * static_cast<double>(positive_sentences) / sentence_count;

            json line{{"user_id", user_id},
                      {"item_id", items[item_index].id},
                      {"review_text", review},
                      {"timestamp", timestamp},
                      {"rating", rating}};
            interaction_lines.push_back(line.dump());
        }
    }

    const auto write_plain = [](const std::string& path, const std::vector<std::string>& lines) {
        const fs::path target(path);
        if (target.has_parent_path()) fs::create_directories(target.parent_path());
        const fs::path partial = target.string() + ".partial";
        {
            std::ofstream out(partial);
            if (!out) throw Error("cannot write: " + partial.string());
            for (const std::string& line : lines) out << line << '\n';
        }
        fs::rename(partial, target);
    };

    std::vector<std::string> catalog_lines;
    for (const ToyItem& item : items) {
        json line{{"item_id", item.id}, {"title", item.title}, {"category", item.category}};
        catalog_lines.push_back(line.dump());
    }
    write_plain(params.interactions_path, interaction_lines);
    write_plain(params.catalog_path, catalog_lines);

    json summary{{"stage", "gen-corpus"},
                 {"users", params.users},
                 {"items", items.size()},
                 {"interactions", interaction_lines.size()},
                 {"interactions_path", params.interactions_path},
                 {"catalog_path", params.catalog_path}};
    return {summary.dump(), 0};
}

}  // namespace convrec
