#pragma once
// Contracts for the three external model capabilities (sentence embedding,
// sentiment scoring, chat completion), plus deterministic scripted
// implementations and live HTTP clients speaking the de-facto
// chat-completions / embeddings wire protocols.

#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "convrec/common.hpp"
#include "convrec/vec.hpp"

namespace convrec {

enum class ChatRole { System, User, Assistant };

struct ChatMessage {
    ChatRole role;
    std::string content;  // non-empty
};

const char* chat_role_name(ChatRole role);

struct RetryPolicy {
    int max_attempts = 3;      // >= 1
    double backoff_base_s = 0.2;  // sleep = base * 2^(attempt-1)
};

struct ProviderConfig {
    std::string endpoint;            // e.g. http://host:port/v1/chat/completions
    std::string model;
    std::string auth_env_var = "CONVREC_API_KEY";  // token source; never stored in files
    int max_in_flight = 4;           // >= 1
    RetryPolicy retry;
    double timeout_s = 30.0;
};

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;

    // One L2-normalized vector per input text, dimension() wide. Throws
    // ProviderError (retryable) on transport failure after retries and
    // ProviderError (hard) on a dimension mismatch within a batch.
    virtual std::vector<Vector> embed_batch(std::span<const std::string> texts) = 0;

    virtual int dimension() const = 0;
    virtual std::string model_name() const = 0;
};

class SentimentProvider {
public:
    virtual ~SentimentProvider() = default;

    // Scalar sentiment clamped to [-1, 1].
    virtual double classify_sentiment(const std::string& text) = 0;

    virtual std::string model_name() const = 0;
};

class ChatProvider {
public:
    virtual ~ChatProvider() = default;

    // temperature in [0, 2]. Scripted implementations are pure functions of
    // (messages, temperature, seed).
    virtual std::string chat_complete(const std::vector<ChatMessage>& messages,
                                      double temperature) = 0;

    virtual std::string model_name() const = 0;
};

// --- bounded concurrency ------------------------------------------------------

// Counting gate limiting how many provider requests are in flight at once.
class ConcurrencyGate {
public:
    explicit ConcurrencyGate(int max_in_flight);

    class Pass {
    public:
        explicit Pass(ConcurrencyGate& gate);
        ~Pass();
        Pass(const Pass&) = delete;
        Pass& operator=(const Pass&) = delete;

    private:
        ConcurrencyGate& gate_;
    };

private:
    void acquire();
    void release();

    std::mutex mu_;
    std::condition_variable cv_;
    int available_;
};

// --- scripted (mock) implementations -----------------------------------------

// Hashes each token into a pseudo-random direction and returns the normalized
// token sum, so texts sharing vocabulary land near each other on the sphere.
class HashEmbeddingProvider : public EmbeddingProvider {
public:
    explicit HashEmbeddingProvider(int dimension = 64, std::uint64_t seed = 1);

    std::vector<Vector> embed_batch(std::span<const std::string> texts) override;
    int dimension() const override { return dimension_; }
    std::string model_name() const override;

    Vector embed_one(const std::string& text) const;

private:
    int dimension_;
    std::uint64_t seed_;
};

// Additive polarity lexicon with clamping. The rule table is published via
// lexicon() so tests can assert fixture values against it.
class LexiconSentimentProvider : public SentimentProvider {
public:
    LexiconSentimentProvider();

    double classify_sentiment(const std::string& text) override;
    std::string model_name() const override { return "mock-sentiment-lexicon"; }

    static const std::vector<std::pair<std::string, double>>& lexicon();
};

// --- live HTTP implementations ------------------------------------------------

class HttpChatProvider : public ChatProvider {
public:
    explicit HttpChatProvider(ProviderConfig config);
    ~HttpChatProvider() override;

    std::string chat_complete(const std::vector<ChatMessage>& messages,
                              double temperature) override;
    std::string model_name() const override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

class HttpEmbeddingProvider : public EmbeddingProvider {
public:
    explicit HttpEmbeddingProvider(ProviderConfig config);
    ~HttpEmbeddingProvider() override;

    std::vector<Vector> embed_batch(std::span<const std::string> texts) override;
    int dimension() const override;  // fixed by the first successful batch
    std::string model_name() const override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Sentiment served by a chat endpoint with a fixed scoring prompt; the reply
// is parsed as a single number and clamped to [-1, 1].
class ChatSentimentProvider : public SentimentProvider {
public:
    explicit ChatSentimentProvider(std::shared_ptr<ChatProvider> chat);

    double classify_sentiment(const std::string& text) override;
    std::string model_name() const override;

private:
    std::shared_ptr<ChatProvider> chat_;
};

double clamp_sentiment(double x);

}  // namespace convrec
