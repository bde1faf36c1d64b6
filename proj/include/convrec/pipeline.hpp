#pragma once
// Composition root: run configuration, stage artifact files, and the drivers
// behind the CLI subcommands. Artifacts are line-delimited JSON whose first
// line is `#meta {...}` carrying the config hash and seed; stages refuse
// inputs written under a different config unless forced.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "convrec/providers.hpp"

namespace convrec {

struct RunConfig {
    // inputs and outputs
    std::string interactions_path;
    std::string catalog_path;
    std::string output_dir = "out";
    std::string domain = "toy";

    // profiling
    int k = 20;
    double tau = 0.35;
    // When set, clustering is skipped: the file's labels are embedded and used
    // as centroids directly. Label count must equal k.
    std::string fixed_labels_path;
    double half_life_days = 365.0;
    std::optional<double> gamma_override;  // raw decay rate per day
    int refine_epochs = 5;
    double refine_temperature = 0.1;
    double refine_learning_rate = 0.05;

    // planning
    double epsilon = 1e-4;
    double clarify_prob = 0.15;
    double reject_prob = 0.5;
    double request_info_prob = 0.3;
    std::optional<double> tau_b;  // default: 20th percentile of positive masses
    int min_aspects = 2;
    int max_aspects = 4;
    int max_rejections = 2;

    // simulation
    double initial_temperature = 0.9;
    double temperature_decrement = 0.1;
    double temperature_floor = 0.1;
    int max_consecutive_rejections = 4;
    int max_turns = 30;

    // quality
    int negatives = 4;
    int max_violations = 3;

    // execution shape (not part of the config hash)
    std::uint64_t seed = 0;
    std::size_t limit = 0;  // 0 = unlimited; per-stage unit documented in README
    bool mock_providers = false;
    bool force = false;  // accept artifacts with a mismatched config hash
    int workers = 1;

    // providers
    int mock_embed_dimension = 64;
    ProviderConfig embed_provider;
    ProviderConfig chat_provider;
    ProviderConfig judge_provider;

    // Strict parse: unknown fields are config errors.
    static RunConfig from_json_text(const std::string& text);
    std::string to_json_text() const;

    // Throws ConfigError naming the offending field.
    void validate() const;

    // Hash of the semantic fields (execution-shape knobs excluded), so a
    // re-run with a different --limit can still consume earlier artifacts.
    std::string config_hash() const;

    std::string artifact_path(const std::string& name) const;
};

struct StageSummary {
    std::string line;   // one machine-readable JSON line
    int exit_code = 0;  // 0 ok; 4 when providers failed mid-batch
};

StageSummary cmd_profile(const RunConfig& config);
StageSummary cmd_plan(const RunConfig& config);
StageSummary cmd_simulate(const RunConfig& config);
StageSummary cmd_validate(const RunConfig& config, bool dataset_only = false);
StageSummary cmd_judge(const RunConfig& config, const std::string& human_scores_csv = "");
StageSummary cmd_stats(const RunConfig& config);

// Chains profile (unlimited), plan, simulate, validate, judge, stats.
// Returns one summary per stage; exit code is the first nonzero.
std::vector<StageSummary> cmd_run_all(const RunConfig& config);

struct GenCorpusParams {
    std::string interactions_path = "interactions.jsonl";
    std::string catalog_path = "catalog.jsonl";
    int users = 250;
    int items_per_category = 50;
    int interactions_per_user = 20;
    std::uint64_t seed = 0;
};

// Writes a deterministic synthetic review corpus for offline runs and tests.
StageSummary cmd_gen_corpus(const GenCorpusParams& params);

// Artifact plumbing, exposed for tests.
void write_artifact(const std::string& path, const std::string& stage, const RunConfig& config,
                    const std::vector<std::string>& lines);
std::vector<std::string> read_artifact(const std::string& path, const std::string& stage,
                                       const RunConfig& config);

}  // namespace convrec
