#pragma once
// Ingest and index the raw user-item interaction data.
//
// Input files are line-delimited JSON (UTF-8): interactions carry user_id,
// item_id, review_text, timestamp (epoch seconds) and an optional rating;
// the catalog carries item_id, title, optional category and extra map.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "convrec/common.hpp"

namespace convrec {

struct Interaction {
    std::string user_id;
    std::string item_id;
    std::string review_text;
    std::int64_t timestamp = 0;  // epoch seconds, UTC
    std::optional<double> rating;
};

struct ItemMeta {
    std::string item_id;
    std::string title;
    std::optional<std::string> category;
    std::map<std::string, std::string> extra;
};

struct RejectedLine {
    std::size_t line_number;  // 1-based
    std::string reason;
};

struct LoadReport {
    std::size_t total_lines = 0;
    std::size_t accepted = 0;
    std::vector<RejectedLine> rejects;
};

struct LoadedInteractions {
    std::vector<Interaction> interactions;
    LoadReport report;
};

struct LoadedCatalog {
    std::vector<ItemMeta> items;
    LoadReport report;
};

// Catalog entry as stored in the index. Interactions referencing an item_id
// missing from the catalog are retained; such items get a synthetic title and
// are flagged so downstream pools can skip them.
struct CatalogEntry {
    ItemMeta meta;
    bool synthetic = false;
};

class CorpusIndex {
public:
    static CorpusIndex build(std::vector<Interaction> interactions,
                             std::vector<ItemMeta> catalog);

    const std::vector<Interaction>& interactions() const { return interactions_; }

    // The user's interactions strictly before `before`, chronologically
    // ascending. Unknown users yield an empty list (cold start).
    std::vector<Interaction> user_history(const std::string& user_id,
                                          std::int64_t before) const;

    // Indices into interactions() for one user, chronologically ascending.
    const std::vector<std::size_t>& user_interactions(const std::string& user_id) const;

    // Indices into interactions() for one item, chronologically ascending.
    const std::vector<std::size_t>& item_interactions(const std::string& item_id) const;

    const CatalogEntry* find_item(const std::string& item_id) const;

    std::vector<std::string> user_ids() const;

    // All item ids present in the catalog map, including synthetic entries.
    std::vector<std::string> item_ids() const;

    // Maximum whitespace token count over all reviews (the L_max normalizer).
    std::size_t max_review_tokens() const { return max_review_tokens_; }

    // Stable textual form for idempotence checks: same inputs, same bytes.
    std::string canonical_serialization() const;

private:
    std::vector<Interaction> interactions_;
    std::map<std::string, std::vector<std::size_t>> by_user_;
    std::map<std::string, std::vector<std::size_t>> by_item_;
    std::map<std::string, CatalogEntry> catalog_;
    std::size_t max_review_tokens_ = 0;
};

// Parse one interactions file. Malformed lines are reported, not dropped
// silently. Throws CorpusError on an unreadable file, zero valid records, or
// any duplicate (user_id, item_id, timestamp) triple.
LoadedInteractions load_interactions_file(const std::string& path);

// Parse one catalog file. Throws CorpusError on an unreadable file or a
// duplicate item_id.
LoadedCatalog load_catalog_file(const std::string& path);

struct LoadedCorpus {
    CorpusIndex index;
    LoadReport interaction_report;
    LoadReport catalog_report;
};

LoadedCorpus load_corpus(const std::string& interactions_path,
                         const std::string& catalog_path);

}  // namespace convrec
