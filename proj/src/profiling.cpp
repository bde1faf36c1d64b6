#include "convrec/profiling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "convrec/rng.hpp"

namespace convrec {

using nlohmann::json;

// --- decay kernel ---------------------------------------------------------------

double DecayParams::gamma() const {
    const double g = gamma_override ? *gamma_override : std::log(2.0) / half_life_days;
    if (!(g > 0.0)) throw ConfigError("decay rate must be positive");
    return g;
}

double decay_weight(double dt_days, const DecayParams& params) {
    if (dt_days < 0.0) {
        throw Error("decay_weight: negative age (future interaction leaked into a profile)");
    }
    return std::exp(-params.gamma() * dt_days);
}

// --- sentence segmentation --------------------------------------------------------

const std::vector<std::string>& segmentation_abbreviations() {
    static const std::vector<std::string> abbrevs = {
        "mr",  "mrs", "ms",  "dr",   "prof", "sr",   "jr",  "st", "vs",
        "etc", "e.g", "i.e", "eg",   "ie",   "inc",  "ltd", "co", "corp",
        "dept", "fig", "no",  "vol", "approx",
    };
    return abbrevs;
}

namespace {

bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }

bool guarded_abbreviation(const std::string& text, std::size_t period_pos) {
    // Word immediately before the period, back to the previous whitespace.
    std::size_t start = period_pos;
    while (start > 0 && !std::isspace(static_cast<unsigned char>(text[start - 1]))) --start;
    if (start == period_pos) return false;
    const std::string word = to_lower(text.substr(start, period_pos - start));
    const auto& abbrevs = segmentation_abbreviations();
    return std::find(abbrevs.begin(), abbrevs.end(), word) != abbrevs.end();
}

}  // namespace

std::vector<std::string> segment_review(const std::string& text) {
    std::vector<std::string> sentences;
    std::size_t begin = 0;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        if (!is_terminal(text[i])) {
            ++i;
            continue;
        }
        const std::size_t run_start = i;
        while (i < n && is_terminal(text[i])) ++i;
        const bool followed_by_space =
            i < n && std::isspace(static_cast<unsigned char>(text[i]));
        if (!followed_by_space) continue;
        const bool single_period = (i - run_start == 1) && text[run_start] == '.';
        if (single_period && guarded_abbreviation(text, run_start)) continue;
        const std::string sentence = trim(text.substr(begin, i - begin));
        if (!sentence.empty()) sentences.push_back(sentence);
        begin = i;
    }
    const std::string tail = trim(text.substr(begin));
    if (!tail.empty()) sentences.push_back(tail);
    if (sentences.empty()) sentences.push_back(trim(text));
    return sentences;
}

// --- AnnotationStore ---------------------------------------------------------------

void AnnotationStore::add(SentenceUnit unit) {
    Key key{unit.user_id, unit.item_id, unit.timestamp};
    by_interaction_[std::move(key)].push_back(std::move(unit));
    ++count_;
}

const std::vector<SentenceUnit>& AnnotationStore::for_interaction(const std::string& user_id,
                                                                  const std::string& item_id,
                                                                  std::int64_t timestamp) const {
    static const std::vector<SentenceUnit> empty;
    auto it = by_interaction_.find(Key{user_id, item_id, timestamp});
    return it == by_interaction_.end() ? empty : it->second;
}

std::string AnnotationStore::to_json_line(const SentenceUnit& unit) {
    json j{{"user_id", unit.user_id},   {"item_id", unit.item_id},
           {"timestamp", unit.timestamp}, {"text", unit.text},
           {"aspect", unit.aspect},     {"sentiment", unit.sentiment}};
    return j.dump();
}

void AnnotationStore::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write annotation store: " + path);
    for (const auto& [key, units] : by_interaction_) {
        for (const auto& u : units) out << to_json_line(u) << '\n';
    }
}

AnnotationStore AnnotationStore::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ArtifactError("cannot open annotation store: " + path);
    AnnotationStore store;
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty() || t.rfind("#", 0) == 0) continue;
        json j = json::parse(line);
        SentenceUnit u;
        u.user_id = j.at("user_id").get<std::string>();
        u.item_id = j.at("item_id").get<std::string>();
        u.timestamp = j.at("timestamp").get<std::int64_t>();
        u.text = j.at("text").get<std::string>();
        u.aspect = j.at("aspect").get<int>();
        u.sentiment = j.at("sentiment").get<double>();
        store.add(std::move(u));
    }
    return store;
}

// --- aspect vocabulary ---------------------------------------------------------------

std::optional<int> AspectVocabulary::label_index(const std::string& label) const {
    const std::string needle = to_lower(trim(label));
    for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
        if (to_lower(labels[static_cast<std::size_t>(i)]) == needle) return i;
    }
    return std::nullopt;
}

std::string AspectVocabulary::to_json() const {
    json j;
    j["k"] = k;
    j["dim"] = dim;
    j["tau"] = tau;
    j["seed"] = seed;
    j["corpus_id"] = corpus_id;
    j["labels"] = labels;
    json rows = json::array();
    for (int i = 0; i < centroids.rows(); ++i) {
        json row = json::array();
        for (int c = 0; c < centroids.cols(); ++c) row.push_back(centroids(i, c));
        rows.push_back(std::move(row));
    }
    j["centroids"] = std::move(rows);
    return j.dump();
}

AspectVocabulary AspectVocabulary::from_json(const std::string& text) {
    json j = json::parse(text);
    AspectVocabulary v;
    v.k = j.at("k").get<int>();
    v.dim = j.at("dim").get<int>();
    v.tau = j.at("tau").get<double>();
    v.seed = j.at("seed").get<std::uint64_t>();
    v.corpus_id = j.value("corpus_id", "");
    v.labels = j.at("labels").get<std::vector<std::string>>();
    const auto& rows = j.at("centroids");
    v.centroids = Matrix::Zero(v.k, v.dim);
    for (int i = 0; i < v.k; ++i) {
        for (int c = 0; c < v.dim; ++c) {
            v.centroids(i, c) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)]
                                    .get<double>();
        }
    }
    if (static_cast<int>(v.labels.size()) != v.k) {
        throw ArtifactError("vocabulary labels do not match k");
    }
    return v;
}

// --- clustering -----------------------------------------------------------------------

namespace {

std::vector<int> assign_all(const Matrix& points, const Matrix& centroids) {
    std::vector<int> assignment(static_cast<std::size_t>(points.rows()));
    for (int i = 0; i < points.rows(); ++i) {
        assignment[static_cast<std::size_t>(i)] = nearest_unit_row(centroids, points.row(i));
    }
    return assignment;
}

// Index of the point with the largest distance to its nearest centroid,
// skipping indices in `taken`.
int farthest_point(const Matrix& points, const Matrix& centroids, const std::set<int>& taken) {
    int best = -1;
    double best_dist = -1.0;
    for (int i = 0; i < points.rows(); ++i) {
        if (taken.count(i) > 0) continue;
        double d = 0.0;
        nearest_unit_row(centroids, points.row(i), &d);
        if (d > best_dist) {
            best_dist = d;
            best = i;
        }
    }
    return best;
}

Matrix kmeans_pp_init(const Matrix& points, int k, Rng& rng) {
    const int n = static_cast<int>(points.rows());
    Matrix centroids(k, points.cols());
    centroids.row(0) = points.row(static_cast<int>(rng.uniform_index(static_cast<std::size_t>(n))));
    std::vector<double> min_dist(static_cast<std::size_t>(n));
    for (int j = 1; j < k; ++j) {
        for (int i = 0; i < n; ++i) {
            double best = 2.0;
            for (int c = 0; c < j; ++c) {
                best = std::min(best, 1.0 - centroids.row(c).dot(points.row(i)));
            }
            best = std::max(best, 0.0);
            min_dist[static_cast<std::size_t>(i)] = best * best;
        }
        double total = 0.0;
        for (double d : min_dist) total += d;
        // All-zero distances happen only when every point coincides with a
        // chosen centroid; fall back to a uniform pick.
        const std::size_t pick = total > 0.0
                                     ? rng.discrete(min_dist)
                                     : rng.uniform_index(static_cast<std::size_t>(n));
        centroids.row(j) = points.row(static_cast<int>(pick));
    }
    return centroids;
}

}  // namespace

double info_nce_loss(const Matrix& points, const Matrix& centroids,
                     const std::vector<int>& assignment, double temperature) {
    double total = 0.0;
    for (int i = 0; i < points.rows(); ++i) {
        const Vector scores = centroids * points.row(i).transpose() / temperature;
        const double m = scores.maxCoeff();
        const double log_sum = m + std::log((scores.array() - m).exp().sum());
        total += log_sum - scores[assignment[static_cast<std::size_t>(i)]];
    }
    return total / static_cast<double>(points.rows());
}

AspectVocabulary induce_aspects(const Matrix& points, const std::vector<std::string>& texts,
                                const ClusterFitParams& params) {
    const int n = static_cast<int>(points.rows());
    const int k = params.k;
    if (k < 2) throw ConfigError("cluster count must be >= 2");
    if (static_cast<std::size_t>(n) != texts.size()) {
        throw Error("induce_aspects: points/texts size mismatch");
    }
    if (n < 10 * k) {
        throw CorpusError("clustering sample too small: " + std::to_string(n) + " sentences for " +
                          std::to_string(k) + " clusters (need >= 10x)");
    }
    {
        std::set<std::vector<double>> distinct;
        for (int i = 0; i < n && static_cast<int>(distinct.size()) < k; ++i) {
            std::vector<double> row(static_cast<std::size_t>(points.cols()));
            for (int c = 0; c < points.cols(); ++c) row[static_cast<std::size_t>(c)] = points(i, c);
            distinct.insert(std::move(row));
        }
        if (static_cast<int>(distinct.size()) < k) {
            throw CorpusError("fewer distinct points than clusters");
        }
    }

    Rng rng(params.seed);
    Matrix centroids = kmeans_pp_init(points, k, rng);

    std::vector<int> assignment(static_cast<std::size_t>(n), -1);
    for (int iter = 0; iter < params.max_lloyd_iterations; ++iter) {
        std::vector<int> next = assign_all(points, centroids);
        const bool converged = (next == assignment);
        assignment = std::move(next);
        if (converged) break;

        Matrix sums = Matrix::Zero(k, points.cols());
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (int i = 0; i < n; ++i) {
            const int a = assignment[static_cast<std::size_t>(i)];
            sums.row(a) += points.row(i);
            ++counts[static_cast<std::size_t>(a)];
        }
        std::set<int> reseeded;
        for (int c = 0; c < k; ++c) {
            const double norm = sums.row(c).norm();
            if (counts[static_cast<std::size_t>(c)] == 0 || norm == 0.0) {
                const int idx = farthest_point(points, centroids, reseeded);
                centroids.row(c) = points.row(idx);
                reseeded.insert(idx);
            } else {
                centroids.row(c) = sums.row(c) / norm;
            }
        }
    }

    // InfoNCE refinement over the fitted assignment: full-batch gradient per
    // epoch, rows renormalized after every update.
    const double t = params.refine_temperature;
    for (int epoch = 0; epoch < params.refine_epochs; ++epoch) {
        Matrix grad = Matrix::Zero(k, points.cols());
        for (int i = 0; i < n; ++i) {
            Vector scores = centroids * points.row(i).transpose() / t;
            const double m = scores.maxCoeff();
            Vector p = (scores.array() - m).exp();
            p /= p.sum();
            p[assignment[static_cast<std::size_t>(i)]] -= 1.0;
            grad += (p / t) * points.row(i);
        }
        Matrix updated = centroids - (params.refine_learning_rate / n) * grad;
        for (int c = 0; c < k; ++c) {
            const double norm = updated.row(c).norm();
            if (norm > 0.0) centroids.row(c) = updated.row(c) / norm;
        }
    }

    assignment = assign_all(points, centroids);

    AspectVocabulary vocab;
    vocab.k = k;
    vocab.dim = static_cast<int>(points.cols());
    vocab.tau = params.tau;
    vocab.seed = params.seed;
    vocab.corpus_id = params.corpus_id;
    vocab.centroids = std::move(centroids);
    vocab.labels = label_aspects(texts, assignment, k);
    // The vocabulary contract wants unique labels; suffix any repeats.
    std::set<std::string> used;
    for (std::size_t i = 0; i < vocab.labels.size(); ++i) {
        std::string base = vocab.labels[i];
        int suffix = 2;
        while (!used.insert(vocab.labels[i]).second) {
            vocab.labels[i] = base + " (" + std::to_string(suffix++) + ")";
        }
    }
    return vocab;
}

std::vector<std::string> label_aspects(const std::vector<std::string>& texts,
                                       const std::vector<int>& assignment, int k) {
    // Candidate phrases are lowercased unigrams and bigrams; term frequency is
    // counted inside each cluster and IDF treats the k clusters as documents.
    std::vector<std::map<std::string, double>> tf(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < texts.size(); ++i) {
        const int a = assignment[i];
        if (a < 0 || a >= k) continue;
        const auto tokens = tokenize_lower(texts[i]);
        auto& cluster_tf = tf[static_cast<std::size_t>(a)];
        for (std::size_t j = 0; j < tokens.size(); ++j) {
            cluster_tf[tokens[j]] += 1.0;
            if (j + 1 < tokens.size()) cluster_tf[tokens[j] + " " + tokens[j + 1]] += 1.0;
        }
    }
    std::map<std::string, int> df;
    for (const auto& cluster_tf : tf) {
        for (const auto& [phrase, _] : cluster_tf) df[phrase] += 1;
    }

    std::vector<std::string> labels(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
        const auto& cluster_tf = tf[static_cast<std::size_t>(c)];
        std::string best_phrase = "aspect " + std::to_string(c);
        double best_score = -1.0;
        for (const auto& [phrase, count] : cluster_tf) {
            const double idf =
                std::log((1.0 + k) / (1.0 + df[phrase])) + 1.0;
            const double score = count * idf;
            if (score > best_score || (score == best_score && phrase < best_phrase)) {
                best_score = score;
                best_phrase = phrase;
            }
        }
        labels[static_cast<std::size_t>(c)] = best_phrase;
    }
    return labels;
}

int assign_sentence(const AspectVocabulary& vocab, const Vector& embedding) {
    double distance = 0.0;
    const int nearest = nearest_unit_row(vocab.centroids, embedding.transpose(), &distance);
    return distance <= vocab.tau ? nearest : kNeutralAspect;
}

// --- profiles ---------------------------------------------------------------------------

namespace {

bool in_window(std::int64_t when, std::int64_t t, bool include_boundary) {
    return include_boundary ? when <= t : when < t;
}

}  // namespace

UserProfile compute_user_profile(const CorpusIndex& index, const AnnotationStore& annotations,
                                 const std::string& user_id, std::int64_t t,
                                 const DecayParams& decay, int k, bool include_boundary) {
    UserProfile profile;
    profile.user_id = user_id;
    profile.as_of = t;
    profile.weights = Vector::Zero(k);

    double denominator = 0.0;
    for (std::size_t idx : index.user_interactions(user_id)) {
        const Interaction& d = index.interactions()[idx];
        if (!in_window(d.timestamp, t, include_boundary)) continue;
        const double dt_days = static_cast<double>(t - d.timestamp) / kSecondsPerDay;
        const double w = decay_weight(dt_days, decay);
        denominator += w;
        ++profile.interaction_count;
        for (const SentenceUnit& s : annotations.for_interaction(user_id, d.item_id, d.timestamp)) {
            if (s.aspect == kNeutralAspect) continue;
            if (s.aspect < 0 || s.aspect >= k) continue;
            profile.weights[s.aspect] += w;
        }
    }
    if (denominator > 0.0) profile.weights /= denominator;
    return profile;
}

ItemProfile compute_item_profile(const CorpusIndex& index, const AnnotationStore& annotations,
                                 const std::string& item_id, std::int64_t t,
                                 const DecayParams& decay, int k, bool include_boundary) {
    ItemProfile profile;
    profile.item_id = item_id;
    profile.as_of = t;
    profile.polarity = Vector::Zero(k);
    profile.mass = Vector::Zero(k);
    profile.defined.assign(static_cast<std::size_t>(k), false);

    Vector weighted_sentiment = Vector::Zero(k);
    for (std::size_t idx : index.item_interactions(item_id)) {
        const Interaction& d = index.interactions()[idx];
        if (!in_window(d.timestamp, t, include_boundary)) continue;
        const double dt_days = static_cast<double>(t - d.timestamp) / kSecondsPerDay;
        const double w = decay_weight(dt_days, decay);
        for (const SentenceUnit& s : annotations.for_interaction(d.user_id, item_id, d.timestamp)) {
            if (s.aspect == kNeutralAspect) continue;
            if (s.aspect < 0 || s.aspect >= k) continue;
            profile.mass[s.aspect] += w;
            weighted_sentiment[s.aspect] += w * s.sentiment;
        }
    }
    for (int a = 0; a < k; ++a) {
        if (profile.mass[a] > 0.0) {
            profile.polarity[a] = weighted_sentiment[a] / profile.mass[a];
            profile.defined[static_cast<std::size_t>(a)] = true;
        }
    }
    return profile;
}

double ItemProfile::mean_defined_polarity() const {
    double sum = 0.0;
    int count = 0;
    for (int a = 0; a < polarity.size(); ++a) {
        if (defined[static_cast<std::size_t>(a)]) {
            sum += polarity[a];
            ++count;
        }
    }
    return count == 0 ? 0.0 : sum / count;
}

}  // namespace convrec
