#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <vector>

#include <CLI11.hpp>

#include "convrec/common.hpp"
#include "convrec/pipeline.hpp"

namespace {

using convrec::RunConfig;

struct CommonOpts {
    std::string config_path;
    std::string interactions;
    std::string catalog;
    std::string out;
    std::string domain;
    std::uint64_t seed = 0;
    std::size_t limit = 0;
    bool mock_providers = false;
    bool force = false;
    int workers = 1;

    CLI::Option* interactions_opt = nullptr;
    CLI::Option* catalog_opt = nullptr;
    CLI::Option* out_opt = nullptr;
    CLI::Option* domain_opt = nullptr;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* limit_opt = nullptr;
    CLI::Option* mock_opt = nullptr;
    CLI::Option* force_opt = nullptr;
    CLI::Option* workers_opt = nullptr;
};

std::shared_ptr<CommonOpts> add_common(CLI::App* cmd) {
    auto opts = std::make_shared<CommonOpts>();
    cmd->add_option("--config", opts->config_path, "JSON config file");
    opts->interactions_opt =
        cmd->add_option("--interactions", opts->interactions, "interactions JSONL path");
    opts->catalog_opt = cmd->add_option("--catalog", opts->catalog, "catalog JSONL path");
    opts->out_opt = cmd->add_option("--out", opts->out, "artifact output directory");
    opts->domain_opt = cmd->add_option("--domain", opts->domain, "domain tag for records");
    opts->seed_opt = cmd->add_option("--seed", opts->seed, "run seed");
    opts->limit_opt = cmd->add_option("--limit", opts->limit, "cap per-stage work (0 = all)");
    opts->mock_opt =
        cmd->add_flag("--mock-providers", opts->mock_providers, "use offline providers");
    opts->force_opt =
        cmd->add_flag("--force", opts->force, "accept artifacts with mismatched config hash");
    opts->workers_opt = cmd->add_option("--workers", opts->workers, "simulation worker threads");
    return opts;
}

RunConfig resolve(const CommonOpts& opts) {
    RunConfig config;
    if (!opts.config_path.empty()) {
        std::ifstream in(opts.config_path);
        if (!in) throw convrec::ConfigError("cannot read config file: " + opts.config_path);
        std::ostringstream buffer;
        buffer << in.rdbuf();
        config = RunConfig::from_json_text(buffer.str());
    }
    if (opts.interactions_opt->count() > 0) config.interactions_path = opts.interactions;
    if (opts.catalog_opt->count() > 0) config.catalog_path = opts.catalog;
    if (opts.out_opt->count() > 0) config.output_dir = opts.out;
    if (opts.domain_opt->count() > 0) config.domain = opts.domain;
    if (opts.seed_opt->count() > 0) config.seed = opts.seed;
    if (opts.limit_opt->count() > 0) config.limit = opts.limit;
    if (opts.mock_opt->count() > 0) config.mock_providers = opts.mock_providers;
    if (opts.force_opt->count() > 0) config.force = opts.force;
    if (opts.workers_opt->count() > 0) config.workers = opts.workers;
    config.validate();
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"temporal profiling, dialog planning, and simulation pipeline"};
    app.require_subcommand(1);
    int exit_code = 0;
    const auto emit = [&exit_code](const convrec::StageSummary& summary) {
        std::cout << summary.line << '\n';
        if (exit_code == 0) exit_code = summary.exit_code;
    };

    {
        auto* cmd = app.add_subcommand("profile", "segment, embed, cluster, and annotate reviews");
        auto opts = add_common(cmd);
        cmd->callback([opts, &emit]() { emit(convrec::cmd_profile(resolve(*opts))); });
    }
    {
        auto* cmd = app.add_subcommand("plan", "sample interactions and build dialog plans");
        auto opts = add_common(cmd);
        cmd->callback([opts, &emit]() { emit(convrec::cmd_plan(resolve(*opts))); });
    }
    {
        auto* cmd = app.add_subcommand("simulate", "run planned dialogs between the two agents");
        auto opts = add_common(cmd);
        cmd->callback([opts, &emit]() { emit(convrec::cmd_simulate(resolve(*opts))); });
    }
    {
        auto* cmd = app.add_subcommand("validate", "align transcripts and emit dataset records");
        auto opts = add_common(cmd);
        auto dataset_only = std::make_shared<bool>(false);
        cmd->add_flag("--dataset-only", *dataset_only,
                      "recheck record invariants in an existing dataset");
        cmd->callback([opts, dataset_only, &emit]() {
            emit(convrec::cmd_validate(resolve(*opts), *dataset_only));
        });
    }
    {
        auto* cmd = app.add_subcommand("judge", "score dataset records on three quality axes");
        auto opts = add_common(cmd);
        auto human = std::make_shared<std::string>();
        cmd->add_option("--human-scores", *human,
                        "CSV of human ratings to correlate against (dialog_id,naturalness,"
                        "coherence,groundedness)");
        cmd->callback(
            [opts, human, &emit]() { emit(convrec::cmd_judge(resolve(*opts), *human)); });
    }
    {
        auto* cmd = app.add_subcommand("stats", "recompute dataset statistics");
        auto opts = add_common(cmd);
        cmd->callback([opts, &emit]() { emit(convrec::cmd_stats(resolve(*opts))); });
    }
    {
        auto* cmd = app.add_subcommand("run_all", "run every stage in order");
        auto opts = add_common(cmd);
        cmd->callback([opts, &emit]() {
            for (const convrec::StageSummary& summary : convrec::cmd_run_all(resolve(*opts))) {
                emit(summary);
            }
        });
    }
    {
        auto* cmd = app.add_subcommand("gen-corpus", "write a synthetic review corpus");
        auto params = std::make_shared<convrec::GenCorpusParams>();
        cmd->add_option("--interactions", params->interactions_path, "interactions output path");
        cmd->add_option("--catalog", params->catalog_path, "catalog output path");
        cmd->add_option("--users", params->users, "number of users");
        cmd->add_option("--items-per-category", params->items_per_category,
                        "items in each of the six categories");
        cmd->add_option("--interactions-per-user", params->interactions_per_user,
                        "reviews written by each user");
        cmd->add_option("--seed", params->seed, "corpus seed");
        cmd->callback([params, &emit]() { emit(convrec::cmd_gen_corpus(*params)); });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const convrec::ArtifactError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const convrec::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const convrec::ProviderError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return exit_code;
}
