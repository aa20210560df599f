#pragma once

#include <chrono>
#include <cstddef>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace lacoat {

struct HttpRequest {
    std::string url;
    std::string body;
    std::vector<std::pair<std::string, std::string>> headers;
};

/// status 0 means the request never produced an HTTP response.
struct HttpResponse {
    int status = 0;
    std::string body;
};

class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpResponse post(const HttpRequest& request) = 0;
};

/// HTTP(S) POST through cpp-httplib.
class HttpTransport final : public Transport {
public:
    explicit HttpTransport(std::chrono::seconds timeout = std::chrono::seconds(60))
        : timeout_(timeout) {}
    HttpResponse post(const HttpRequest& request) override;

private:
    std::chrono::seconds timeout_;
};

/// In-process transport. Records every request; replies from a script, then from the fallback.
class MockTransport final : public Transport {
public:
    using Responder = std::function<HttpResponse(const HttpRequest&)>;

    explicit MockTransport(Responder fallback);
    /// Replies 200 with a chat completion whose first message content is `content`.
    static MockTransport canned(std::string content);

    void script(std::vector<HttpResponse> responses);
    HttpResponse post(const HttpRequest& request) override;

    std::vector<HttpRequest> requests() const;
    std::size_t request_count() const;

private:
    Responder fallback_;
    mutable std::mutex mutex_;
    std::deque<HttpResponse> scripted_;
    std::vector<HttpRequest> requests_;
};

/// Chat-completion body for a canned reply, as an OpenAI-compatible endpoint would send it.
std::string chat_completion_response(const std::string& content);

struct ExplanationRequest {
    std::string endpoint_url;
    std::string model;
    double temperature = 0.0;
    double top_p = 0.95;
    std::string prompt;
};

struct RetryPolicy {
    std::size_t max_retries = 2;
    std::chrono::milliseconds initial_backoff{500};
    double backoff_multiplier = 2.0;
};

struct LlmEnvironment {
    std::string base_url = "https://api.openai.com/v1";
    std::optional<std::string> api_key;
};

/// Reads LACOAT_LLM_BASE_URL and LACOAT_LLM_API_KEY.
LlmEnvironment llm_environment_from_env();
std::string chat_completions_url(const std::string& base_url);

/// {model, messages: [{role: user, content: prompt}], temperature, top_p}
std::string build_chat_body(const ExplanationRequest& request);

/// POSTs the request and returns the first choice's message content. 5xx, 429 and connection
/// failures are retried with exponential backoff; other non-2xx statuses fail immediately.
/// Throws TransportError or ParseError.
std::string query_llm(Transport& transport, const ExplanationRequest& request,
                      const RetryPolicy& retry = {},
                      const std::optional<std::string>& api_key = std::nullopt);

}  // namespace lacoat
