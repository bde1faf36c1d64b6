#pragma once
// Temporal profiling: aspect vocabulary induction from review sentences and
// time-indexed user / item profiles built over a decay kernel.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "convrec/common.hpp"
#include "convrec/corpus.hpp"
#include "convrec/vec.hpp"

namespace convrec {

inline constexpr int kNeutralAspect = -1;
inline constexpr double kSecondsPerDay = 86400.0;

// --- decay kernel -------------------------------------------------------------

struct DecayParams {
    double half_life_days = 365.0;
    std::optional<double> gamma_override;  // raw rate per day, wins over half-life

    double gamma() const;
};

// w(dt) = exp(-gamma * dt) with dt in days. Negative dt means a future
// interaction leaked into a profile and is a hard error.
double decay_weight(double dt_days, const DecayParams& params);

// --- sentence segmentation ------------------------------------------------------

// Terminal-punctuation splitter with an abbreviation guard; concatenating the
// result reproduces the input modulo whitespace. A text with no terminal
// punctuation is a single sentence.
std::vector<std::string> segment_review(const std::string& text);

// Words whose trailing period does not end a sentence.
const std::vector<std::string>& segmentation_abbreviations();

// --- annotated sentences --------------------------------------------------------

struct SentenceUnit {
    std::string user_id;
    std::string item_id;
    std::int64_t timestamp = 0;
    std::string text;
    double sentiment = 0.0;        // [-1, 1]
    int aspect = kNeutralAspect;   // cluster index or kNeutralAspect
};

// Sentence annotations grouped per owning interaction.
class AnnotationStore {
public:
    void add(SentenceUnit unit);

    const std::vector<SentenceUnit>& for_interaction(const std::string& user_id,
                                                     const std::string& item_id,
                                                     std::int64_t timestamp) const;

    std::size_t size() const { return count_; }

    void save(const std::string& path) const;
    static AnnotationStore load(const std::string& path);

    // Serialization of one unit, shared with the artifact writer.
    static std::string to_json_line(const SentenceUnit& unit);

private:
    using Key = std::tuple<std::string, std::string, std::int64_t>;
    std::map<Key, std::vector<SentenceUnit>> by_interaction_;
    std::size_t count_ = 0;
};

// --- aspect vocabulary ------------------------------------------------------------

struct AspectVocabulary {
    int k = 0;
    int dim = 0;
    double tau = 0.35;
    std::uint64_t seed = 0;
    std::string corpus_id;
    std::vector<std::string> labels;  // unique, non-empty
    Matrix centroids;                 // k x dim, unit rows

    std::optional<int> label_index(const std::string& label) const;

    std::string to_json() const;
    static AspectVocabulary from_json(const std::string& text);
};

struct ClusterFitParams {
    int k = 20;
    double tau = 0.35;
    int max_lloyd_iterations = 100;
    int refine_epochs = 5;
    double refine_temperature = 0.1;
    double refine_learning_rate = 0.05;
    std::uint64_t seed = 0;
    std::string corpus_id;
};

// Spherical k-means++ init, Lloyd iterations with cosine assignment and
// renormalized mean updates, then InfoNCE refinement epochs over the fitted
// assignment (assigned centroid positive, the other k-1 negatives).
// points: n x d, unit rows; texts: one per point, used for labeling.
// Throws CorpusError when fewer distinct points than k (or sample < 10k).
AspectVocabulary induce_aspects(const Matrix& points, const std::vector<std::string>& texts,
                                const ClusterFitParams& params);

// Mean InfoNCE loss of an assignment; exposed so refinement descent is testable.
double info_nce_loss(const Matrix& points, const Matrix& centroids,
                     const std::vector<int>& assignment, double temperature);

// Per-cluster top TF-IDF phrase (lowercased unigrams and bigrams; clusters act
// as the IDF documents; score ties break lexicographically).
std::vector<std::string> label_aspects(const std::vector<std::string>& texts,
                                       const std::vector<int>& assignment, int k);

// Nearest centroid by cosine distance, or kNeutralAspect when the distance
// exceeds tau. Ties go to the lowest cluster index.
int assign_sentence(const AspectVocabulary& vocab, const Vector& embedding);

// --- profiles ---------------------------------------------------------------------

struct UserProfile {
    std::string user_id;
    std::int64_t as_of = 0;
    Vector weights;  // K, non-negative
    int interaction_count = 0;
};

struct ItemProfile {
    std::string item_id;
    std::int64_t as_of = 0;
    Vector polarity;             // K, 0 where undefined
    Vector mass;                 // K, non-negative
    std::vector<bool> defined;   // mass[k] > 0

    double mean_defined_polarity() const;  // 0 when nothing is defined
};

// Decay-weighted per-aspect sentence counts over the user's interactions
// before t (strictly, unless include_boundary). Neutral sentences are
// excluded from the counts; the denominator sums decay weights over all of
// the user's prior interactions.
UserProfile compute_user_profile(const CorpusIndex& index, const AnnotationStore& annotations,
                                 const std::string& user_id, std::int64_t t,
                                 const DecayParams& decay, int k,
                                 bool include_boundary = false);

// Decay-weighted crowd polarity and confidence mass per aspect over all
// users' sentences about the item before t.
ItemProfile compute_item_profile(const CorpusIndex& index, const AnnotationStore& annotations,
                                 const std::string& item_id, std::int64_t t,
                                 const DecayParams& decay, int k,
                                 bool include_boundary = false);

}  // namespace convrec
