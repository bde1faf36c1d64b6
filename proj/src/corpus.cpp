#include "convrec/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace convrec {

using nlohmann::json;

namespace {

// Single place for the record-level validity rules so both loaders and the
// test oracle agree on what "well-formed" means.
std::optional<std::string> validate_interaction(const json& j, Interaction* out) {
    if (!j.is_object()) return "not a JSON object";
    if (!j.contains("user_id") || !j["user_id"].is_string()) return "missing or non-string user_id";
    if (!j.contains("item_id") || !j["item_id"].is_string()) return "missing or non-string item_id";
    if (!j.contains("review_text") || !j["review_text"].is_string())
        return "missing or non-string review_text";
    if (!j.contains("timestamp") || !j["timestamp"].is_number_integer())
        return "missing or non-integer timestamp";

    Interaction it;
    it.user_id = j["user_id"].get<std::string>();
    it.item_id = j["item_id"].get<std::string>();
    it.review_text = j["review_text"].get<std::string>();
    it.timestamp = j["timestamp"].get<std::int64_t>();
    if (it.user_id.empty()) return "empty user_id";
    if (it.item_id.empty()) return "empty item_id";
    if (trim(it.review_text).empty()) return "empty review_text";
    if (it.timestamp <= 0) return "non-positive timestamp";
    if (j.contains("rating") && !j["rating"].is_null()) {
        if (!j["rating"].is_number()) return "non-numeric rating";
        const double r = j["rating"].get<double>();
        if (r < 1.0 || r > 5.0) return "rating outside [1,5]";
        it.rating = r;
    }
    *out = std::move(it);
    return std::nullopt;
}

std::optional<std::string> validate_item(const json& j, ItemMeta* out) {
    if (!j.is_object()) return "not a JSON object";
    if (!j.contains("item_id") || !j["item_id"].is_string()) return "missing or non-string item_id";
    if (!j.contains("title") || !j["title"].is_string()) return "missing or non-string title";

    ItemMeta m;
    m.item_id = j["item_id"].get<std::string>();
    m.title = j["title"].get<std::string>();
    if (m.item_id.empty()) return "empty item_id";
    if (trim(m.title).empty()) return "empty title";
    if (j.contains("category") && !j["category"].is_null()) {
        if (!j["category"].is_string()) return "non-string category";
        m.category = j["category"].get<std::string>();
    }
    if (j.contains("extra") && !j["extra"].is_null()) {
        if (!j["extra"].is_object()) return "non-object extra";
        for (const auto& [k, v] : j["extra"].items()) {
            if (!v.is_string()) return "non-string extra value";
            m.extra[k] = v.get<std::string>();
        }
    }
    *out = std::move(m);
    return std::nullopt;
}

bool is_skippable(const std::string& line) {
    const std::string t = trim(line);
    return t.empty() || t.rfind("#", 0) == 0;  // blank lines and #meta headers
}

}  // namespace

LoadedInteractions load_interactions_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CorpusError("cannot open interactions file: " + path);

    LoadedInteractions result;
    std::map<std::tuple<std::string, std::string, std::int64_t>, std::vector<std::size_t>> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_skippable(line)) continue;
        ++result.report.total_lines;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            result.report.rejects.push_back({line_no, "invalid JSON"});
            continue;
        }
        Interaction it;
        if (auto err = validate_interaction(j, &it)) {
            result.report.rejects.push_back({line_no, *err});
            continue;
        }
        seen[{it.user_id, it.item_id, it.timestamp}].push_back(line_no);
        result.interactions.push_back(std::move(it));
        ++result.report.accepted;
    }

    std::string offenders;
    for (const auto& [key, lines] : seen) {
        if (lines.size() < 2) continue;
        offenders += "\n  (" + std::get<0>(key) + ", " + std::get<1>(key) + ", " +
                     std::to_string(std::get<2>(key)) + ") at lines";
        for (std::size_t n : lines) offenders += " " + std::to_string(n);
    }
    if (!offenders.empty()) {
        throw CorpusError("duplicate (user, item, timestamp) triples in " + path + ":" + offenders);
    }
    if (result.report.accepted == 0) {
        throw CorpusError("no valid records in " + path);
    }
    return result;
}

LoadedCatalog load_catalog_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CorpusError("cannot open catalog file: " + path);

    LoadedCatalog result;
    std::map<std::string, std::size_t> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_skippable(line)) continue;
        ++result.report.total_lines;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            result.report.rejects.push_back({line_no, "invalid JSON"});
            continue;
        }
        ItemMeta m;
        if (auto err = validate_item(j, &m)) {
            result.report.rejects.push_back({line_no, *err});
            continue;
        }
        auto [it, inserted] = seen.emplace(m.item_id, line_no);
        if (!inserted) {
            throw CorpusError("duplicate item_id '" + m.item_id + "' in " + path + " at lines " +
                              std::to_string(it->second) + " and " + std::to_string(line_no));
        }
        result.items.push_back(std::move(m));
        ++result.report.accepted;
    }
    return result;
}

CorpusIndex CorpusIndex::build(std::vector<Interaction> interactions,
                               std::vector<ItemMeta> catalog) {
    CorpusIndex index;
    index.interactions_ = std::move(interactions);

    for (auto& m : catalog) {
        std::string id = m.item_id;
        index.catalog_.emplace(std::move(id), CatalogEntry{std::move(m), false});
    }

    std::vector<std::size_t> order(index.interactions_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    // Timestamp ties within one user are broken by item id so the chronology
    // is total and reruns index identically.
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const Interaction& x = index.interactions_[a];
        const Interaction& y = index.interactions_[b];
        return std::tie(x.timestamp, x.item_id, x.user_id) <
               std::tie(y.timestamp, y.item_id, y.user_id);
    });

    for (std::size_t i : order) {
        const Interaction& it = index.interactions_[i];
        index.by_user_[it.user_id].push_back(i);
        index.by_item_[it.item_id].push_back(i);
        index.max_review_tokens_ =
            std::max(index.max_review_tokens_, whitespace_token_count(it.review_text));
        if (index.catalog_.find(it.item_id) == index.catalog_.end()) {
            ItemMeta synthetic;
            synthetic.item_id = it.item_id;
            synthetic.title = "item " + it.item_id;
            index.catalog_.emplace(it.item_id, CatalogEntry{std::move(synthetic), true});
        }
    }
    return index;
}

std::vector<Interaction> CorpusIndex::user_history(const std::string& user_id,
                                                   std::int64_t before) const {
    std::vector<Interaction> out;
    auto it = by_user_.find(user_id);
    if (it == by_user_.end()) return out;
    for (std::size_t idx : it->second) {
        const Interaction& d = interactions_[idx];
        if (d.timestamp < before) out.push_back(d);
    }
    return out;
}

const std::vector<std::size_t>& CorpusIndex::user_interactions(const std::string& user_id) const {
    static const std::vector<std::size_t> empty;
    auto it = by_user_.find(user_id);
    return it == by_user_.end() ? empty : it->second;
}

const std::vector<std::size_t>& CorpusIndex::item_interactions(const std::string& item_id) const {
    static const std::vector<std::size_t> empty;
    auto it = by_item_.find(item_id);
    return it == by_item_.end() ? empty : it->second;
}

const CatalogEntry* CorpusIndex::find_item(const std::string& item_id) const {
    auto it = catalog_.find(item_id);
    return it == catalog_.end() ? nullptr : &it->second;
}

std::vector<std::string> CorpusIndex::user_ids() const {
    std::vector<std::string> out;
    out.reserve(by_user_.size());
    for (const auto& [id, _] : by_user_) out.push_back(id);
    return out;
}

std::vector<std::string> CorpusIndex::item_ids() const {
    std::vector<std::string> out;
    out.reserve(catalog_.size());
    for (const auto& [id, _] : catalog_) out.push_back(id);
    return out;
}

std::string CorpusIndex::canonical_serialization() const {
    json j;
    j["interactions"] = json::array();
    for (const auto& [user, idxs] : by_user_) {
        for (std::size_t i : idxs) {
            const Interaction& it = interactions_[i];
            json r{{"user_id", it.user_id},
                   {"item_id", it.item_id},
                   {"review_text", it.review_text},
                   {"timestamp", it.timestamp}};
            if (it.rating) r["rating"] = *it.rating;
            j["interactions"].push_back(std::move(r));
        }
    }
    j["catalog"] = json::array();
    for (const auto& [id, entry] : catalog_) {
        json r{{"item_id", entry.meta.item_id},
               {"title", entry.meta.title},
               {"synthetic", entry.synthetic}};
        if (entry.meta.category) r["category"] = *entry.meta.category;
        if (!entry.meta.extra.empty()) r["extra"] = entry.meta.extra;
        j["catalog"].push_back(std::move(r));
    }
    return j.dump();
}

LoadedCorpus load_corpus(const std::string& interactions_path, const std::string& catalog_path) {
    LoadedInteractions li = load_interactions_file(interactions_path);
    LoadedCatalog lc = load_catalog_file(catalog_path);
    LoadedCorpus out{CorpusIndex::build(std::move(li.interactions), std::move(lc.items)),
                     std::move(li.report), std::move(lc.report)};
    return out;
}

}  // namespace convrec
