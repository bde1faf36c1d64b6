#include "convrec/providers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace convrec {

using nlohmann::json;

const char* chat_role_name(ChatRole role) {
    switch (role) {
        case ChatRole::System: return "system";
        case ChatRole::User: return "user";
        case ChatRole::Assistant: return "assistant";
    }
    return "user";
}

double clamp_sentiment(double x) { return std::clamp(x, -1.0, 1.0); }

// --- ConcurrencyGate ----------------------------------------------------------

ConcurrencyGate::ConcurrencyGate(int max_in_flight) : available_(max_in_flight) {
    if (max_in_flight < 1) throw ConfigError("max in-flight requests must be >= 1");
}

void ConcurrencyGate::acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return available_ > 0; });
    --available_;
}

void ConcurrencyGate::release() {
    {
        std::lock_guard lock(mu_);
        ++available_;
    }
    cv_.notify_one();
}

ConcurrencyGate::Pass::Pass(ConcurrencyGate& gate) : gate_(gate) { gate_.acquire(); }
ConcurrencyGate::Pass::~Pass() { gate_.release(); }

// --- HashEmbeddingProvider ------------------------------------------------------

HashEmbeddingProvider::HashEmbeddingProvider(int dimension, std::uint64_t seed)
    : dimension_(dimension), seed_(seed) {
    if (dimension < 2) throw ConfigError("embedding dimension must be >= 2");
}

namespace {

// splitmix64; enough mixing to make per-token directions look random.
std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

Vector HashEmbeddingProvider::embed_one(const std::string& text) const {
    Vector v = Vector::Zero(dimension_);
    const auto tokens = tokenize_lower(text);
    for (const auto& tok : tokens) {
        std::uint64_t h = fnv1a(tok, fnv1a_u64(seed_));
        for (int i = 0; i < dimension_; ++i) {
            h = mix64(h);
            // Map to [-1, 1).
            v[i] += static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
        }
    }
    if (tokens.empty() || v.norm() == 0.0) {
        v[0] = 1.0;  // degenerate text still gets a valid unit vector
        return v;
    }
    return l2_normalized(v);
}

std::vector<Vector> HashEmbeddingProvider::embed_batch(std::span<const std::string> texts) {
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_one(t));
    return out;
}

std::string HashEmbeddingProvider::model_name() const {
    return "mock-embed-d" + std::to_string(dimension_) + "-s" + std::to_string(seed_);
}

// --- LexiconSentimentProvider ---------------------------------------------------

const std::vector<std::pair<std::string, double>>& LexiconSentimentProvider::lexicon() {
    static const std::vector<std::pair<std::string, double>> table = {
        {"love", 0.9},      {"excellent", 0.9}, {"amazing", 0.8},  {"great", 0.7},
        {"good", 0.5},      {"nice", 0.4},      {"fine", 0.2},     {"okay", 0.1},
        {"ok", 0.1},        {"meh", -0.2},      {"poor", -0.5},    {"bad", -0.5},
        {"slow", -0.4},     {"broken", -0.8},   {"terrible", -0.9}, {"awful", -0.9},
        {"hate", -0.9},     {"worst", -1.0},    {"crash", -0.7},   {"crashes", -0.7},
    };
    return table;
}

LexiconSentimentProvider::LexiconSentimentProvider() = default;

double LexiconSentimentProvider::classify_sentiment(const std::string& text) {
    if (trim(text).empty()) throw ProviderError("sentiment on empty text", false);
    double score = 0.0;
    for (const auto& tok : tokenize_lower(text)) {
        for (const auto& [word, value] : lexicon()) {
            if (tok == word) score += value;
        }
    }
    return clamp_sentiment(score);
}

// --- HTTP plumbing --------------------------------------------------------------

namespace {

struct ParsedEndpoint {
    std::string base;  // scheme://host[:port]
    std::string path;
};

ParsedEndpoint split_endpoint(const std::string& endpoint) {
    auto scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos) {
        throw ConfigError("provider endpoint must include a scheme: " + endpoint);
    }
    auto path_start = endpoint.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {endpoint, "/"};
    return {endpoint.substr(0, path_start), endpoint.substr(path_start)};
}

std::string auth_token(const ProviderConfig& config) {
    if (config.auth_env_var.empty()) return {};
    const char* value = std::getenv(config.auth_env_var.c_str());
    return value == nullptr ? std::string{} : std::string{value};
}

bool retryable_status(int status) { return status == 429 || status >= 500; }

// Shared POST-JSON-with-retries path for both live providers.
class JsonHttpClient {
public:
    explicit JsonHttpClient(ProviderConfig config)
        : config_(std::move(config)),
          endpoint_(split_endpoint(config_.endpoint)),
          gate_(config_.max_in_flight),
          client_(endpoint_.base) {
        if (config_.retry.max_attempts < 1) throw ConfigError("retry attempts must be >= 1");
        const auto timeout =
            std::chrono::milliseconds(static_cast<long long>(config_.timeout_s * 1000.0));
        client_.set_connection_timeout(timeout);
        client_.set_read_timeout(timeout);
        client_.set_write_timeout(timeout);
        const std::string token = auth_token(config_);
        if (!token.empty()) {
            client_.set_default_headers({{"Authorization", "Bearer " + token}});
        }
    }

    json post(const json& body) {
        ConcurrencyGate::Pass pass(gate_);
        std::string last_error;
        for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
            if (attempt > 1) {
                const double sleep_s =
                    config_.retry.backoff_base_s * std::pow(2.0, attempt - 2);
                std::this_thread::sleep_for(std::chrono::duration<double>(sleep_s));
            }
            httplib::Result res = client_.Post(endpoint_.path, body.dump(), "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 200) {
                json parsed = json::parse(res->body, nullptr, false);
                if (parsed.is_discarded()) {
                    throw ProviderError("provider returned invalid JSON", false);
                }
                return parsed;
            }
            if (retryable_status(res->status)) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            throw ProviderError("provider rejected request: HTTP " + std::to_string(res->status) +
                                    " " + res->body,
                                false);
        }
        throw ProviderError("provider unreachable after " +
                                std::to_string(config_.retry.max_attempts) + " attempts (" +
                                last_error + ")",
                            true);
    }

    const ProviderConfig& config() const { return config_; }

private:
    ProviderConfig config_;
    ParsedEndpoint endpoint_;
    ConcurrencyGate gate_;
    httplib::Client client_;
};

}  // namespace

// --- HttpChatProvider -------------------------------------------------------------

struct HttpChatProvider::Impl {
    explicit Impl(ProviderConfig config) : client(std::move(config)) {}
    JsonHttpClient client;
};

HttpChatProvider::HttpChatProvider(ProviderConfig config)
    : impl_(std::make_unique<Impl>(std::move(config))) {}

HttpChatProvider::~HttpChatProvider() = default;

std::string HttpChatProvider::chat_complete(const std::vector<ChatMessage>& messages,
                                            double temperature) {
    if (messages.empty()) throw ProviderError("chat_complete: empty message list", false);
    json body;
    body["model"] = impl_->client.config().model;
    body["temperature"] = temperature;
    body["messages"] = json::array();
    for (const auto& m : messages) {
        body["messages"].push_back({{"role", chat_role_name(m.role)}, {"content", m.content}});
    }
    const json reply = impl_->client.post(body);
    if (!reply.contains("choices") || !reply["choices"].is_array() || reply["choices"].empty()) {
        throw ProviderError("chat response has no choices", false);
    }
    const json& msg = reply["choices"][0].value("message", json::object());
    if (!msg.contains("content") || !msg["content"].is_string()) {
        throw ProviderError("chat response choice has no message content", false);
    }
    return msg["content"].get<std::string>();
}

std::string HttpChatProvider::model_name() const { return impl_->client.config().model; }

// --- HttpEmbeddingProvider ---------------------------------------------------------

struct HttpEmbeddingProvider::Impl {
    explicit Impl(ProviderConfig config) : client(std::move(config)) {}
    JsonHttpClient client;
    std::mutex dim_mu;
    int dimension = 0;  // 0 until the first successful batch
};

HttpEmbeddingProvider::HttpEmbeddingProvider(ProviderConfig config)
    : impl_(std::make_unique<Impl>(std::move(config))) {}

HttpEmbeddingProvider::~HttpEmbeddingProvider() = default;

std::vector<Vector> HttpEmbeddingProvider::embed_batch(std::span<const std::string> texts) {
    if (texts.empty()) return {};
    json body;
    body["model"] = impl_->client.config().model;
    body["input"] = json::array();
    for (const auto& t : texts) body["input"].push_back(t);
    const json reply = impl_->client.post(body);
    if (!reply.contains("data") || !reply["data"].is_array() ||
        reply["data"].size() != texts.size()) {
        throw ProviderError("embedding response size mismatch", false);
    }
    std::vector<Vector> out;
    out.reserve(texts.size());
    int dim = 0;
    for (const auto& entry : reply["data"]) {
        if (!entry.contains("embedding") || !entry["embedding"].is_array()) {
            throw ProviderError("embedding response entry missing vector", false);
        }
        const auto& arr = entry["embedding"];
        if (dim == 0) dim = static_cast<int>(arr.size());
        if (static_cast<int>(arr.size()) != dim) {
            throw ProviderError("embedding dimension mismatch within batch", false);
        }
        Vector v(dim);
        for (int i = 0; i < dim; ++i) v[i] = arr[static_cast<std::size_t>(i)].get<double>();
        out.push_back(l2_normalized(v));
    }
    {
        std::lock_guard lock(impl_->dim_mu);
        if (impl_->dimension == 0) impl_->dimension = dim;
        if (impl_->dimension != dim) {
            throw ProviderError("embedding dimension changed across batches", false);
        }
    }
    return out;
}

int HttpEmbeddingProvider::dimension() const {
    std::lock_guard lock(impl_->dim_mu);
    return impl_->dimension;
}

std::string HttpEmbeddingProvider::model_name() const { return impl_->client.config().model; }

// --- ChatSentimentProvider ----------------------------------------------------------

ChatSentimentProvider::ChatSentimentProvider(std::shared_ptr<ChatProvider> chat)
    : chat_(std::move(chat)) {}

double ChatSentimentProvider::classify_sentiment(const std::string& text) {
    if (trim(text).empty()) throw ProviderError("sentiment on empty text", false);
    const std::vector<ChatMessage> messages = {
        {ChatRole::System,
         "Rate the sentiment of the user's sentence as one number between -1.0 "
         "(strongly negative) and 1.0 (strongly positive). Reply with the number only."},
        {ChatRole::User, text},
    };
    const std::string reply = chat_->chat_complete(messages, 0.0);
    std::istringstream in(trim(reply));
    double value = 0.0;
    if (!(in >> value)) {
        throw ProviderError("sentiment reply is not a number: " + reply, false);
    }
    return clamp_sentiment(value);
}

std::string ChatSentimentProvider::model_name() const {
    return chat_->model_name() + "+scoring-prompt";
}

}  // namespace convrec
