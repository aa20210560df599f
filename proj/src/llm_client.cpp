#include "lacoat/llm_client.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "lacoat/errors.hpp"

namespace lacoat {

namespace {

using nlohmann::json;

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw ValidationError("endpoint URL '" + url + "' has no scheme");
    }
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

bool is_transient(int status) { return status == 0 || status == 429 || status >= 500; }

}  // namespace

HttpResponse HttpTransport::post(const HttpRequest& request) {
    const auto [origin, path] = split_url(request.url);
    httplib::Client client(origin);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    httplib::Headers headers;
    for (const auto& [k, v] : request.headers) headers.emplace(k, v);
    auto result = client.Post(path, headers, request.body, "application/json");
    if (!result) return {0, httplib::to_string(result.error())};
    return {result->status, result->body};
}

MockTransport::MockTransport(Responder fallback) : fallback_(std::move(fallback)) {}

MockTransport MockTransport::canned(std::string content) {
    return MockTransport([body = chat_completion_response(content)](const HttpRequest&) {
        return HttpResponse{200, body};
    });
}

void MockTransport::script(std::vector<HttpResponse> responses) {
    std::lock_guard lock(mutex_);
    for (auto& r : responses) scripted_.push_back(std::move(r));
}

HttpResponse MockTransport::post(const HttpRequest& request) {
    std::lock_guard lock(mutex_);
    requests_.push_back(request);
    if (!scripted_.empty()) {
        auto r = std::move(scripted_.front());
        scripted_.pop_front();
        return r;
    }
    return fallback_(request);
}

std::vector<HttpRequest> MockTransport::requests() const {
    std::lock_guard lock(mutex_);
    return requests_;
}

std::size_t MockTransport::request_count() const {
    std::lock_guard lock(mutex_);
    return requests_.size();
}

std::string chat_completion_response(const std::string& content) {
    json body = {{"object", "chat.completion"},
                 {"choices", json::array({{{"index", 0},
                                           {"message", {{"role", "assistant"}, {"content", content}}},
                                           {"finish_reason", "stop"}}})}};
    return body.dump();
}

LlmEnvironment llm_environment_from_env() {
    LlmEnvironment env;
    if (const char* base = std::getenv("LACOAT_LLM_BASE_URL"); base != nullptr && *base != '\0') {
        env.base_url = base;
    }
    if (const char* key = std::getenv("LACOAT_LLM_API_KEY"); key != nullptr && *key != '\0') {
        env.api_key = key;
    }
    return env;
}

std::string chat_completions_url(const std::string& base_url) {
    std::string url = base_url;
    while (!url.empty() && url.back() == '/') url.pop_back();
    return url + "/chat/completions";
}

std::string build_chat_body(const ExplanationRequest& request) {
    json body = {{"model", request.model},
                 {"messages", json::array({{{"role", "user"}, {"content", request.prompt}}})},
                 {"temperature", request.temperature},
                 {"top_p", request.top_p}};
    return body.dump();
}

std::string query_llm(Transport& transport, const ExplanationRequest& request,
                      const RetryPolicy& retry, const std::optional<std::string>& api_key) {
    HttpRequest http{request.endpoint_url, build_chat_body(request), {}};
    if (api_key) http.headers.emplace_back("Authorization", "Bearer " + *api_key);

    auto backoff = retry.initial_backoff;
    HttpResponse response;
    for (std::size_t attempt = 0;; ++attempt) {
        response = transport.post(http);
        if (response.status >= 200 && response.status < 300) break;
        if (!is_transient(response.status) || attempt >= retry.max_retries) {
            throw TransportError("chat completion failed after " + std::to_string(attempt + 1) +
                                     " attempt(s): status " + std::to_string(response.status) +
                                     (response.body.empty() ? "" : ": " + response.body.substr(0, 200)),
                                 response.status);
        }
        if (backoff.count() > 0) std::this_thread::sleep_for(backoff);
        backoff = std::chrono::milliseconds(
            static_cast<long long>(static_cast<double>(backoff.count()) * retry.backoff_multiplier));
    }

    try {
        const auto body = json::parse(response.body);
        return body.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed chat completion response: ") + e.what());
    }
}

}  // namespace lacoat
