#pragma once
// Shared error types and small text/hash utilities used across the pipeline.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace convrec {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad or inconsistent run configuration (CLI exit code 3).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Unreadable, empty, or duplicate-ridden input data.
class CorpusError : public Error {
public:
    using Error::Error;
};

// Plan construction failed for an interaction (e.g. empty alternate pool).
class PlanError : public Error {
public:
    using Error::Error;
};

// Record invariant breach at emission; always a generation bug.
class QualityError : public Error {
public:
    using Error::Error;
};

// Missing or mismatched stage artifact (CLI exit code 2).
class ArtifactError : public Error {
public:
    using Error::Error;
};

// Provider transport or protocol failure (CLI exit code 4).
class ProviderError : public Error {
public:
    ProviderError(const std::string& what, bool retryable)
        : Error(what), retryable_(retryable) {}
    bool retryable() const { return retryable_; }

private:
    bool retryable_;
};

// --- hashing ----------------------------------------------------------------

inline constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

inline std::uint64_t fnv1a(std::string_view data, std::uint64_t h = kFnvOffset) {
    for (unsigned char c : data) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t fnv1a_u64(std::uint64_t v, std::uint64_t h = kFnvOffset) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (i * 8)) & 0xFFu;
        h *= kFnvPrime;
    }
    return h;
}

std::string hex64(std::uint64_t v);

// --- text -------------------------------------------------------------------

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

// Lowercased alphanumeric token runs ("Battery-life!" -> {"battery","life"}).
std::vector<std::string> tokenize_lower(std::string_view text);

// Whitespace-delimited token count; the review-length unit for sampling weights.
std::size_t whitespace_token_count(std::string_view text);

bool contains_ci(std::string_view haystack, std::string_view needle);

}  // namespace convrec
