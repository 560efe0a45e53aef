#pragma once
// Uniform chat-completion client: one Backend interface with an
// OpenAI-compatible HTTP implementation and a deterministic scripted one,
// plus exponential-backoff retry around transient failures.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "tutorbench/common.hpp"

namespace tutorbench {

enum class Role { system, user, assistant };

inline std::string role_name(Role r) {
    switch (r) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

struct ChatMessage {
    Role role = Role::user;
    std::string content;
};

struct JsonSchemaSpec {
    std::string name;
    json schema;
};

struct GenerationRequest {
    std::string model_id;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    int max_tokens = 1024;
    std::optional<JsonSchemaSpec> response_schema;
};

struct GenerationResult {
    std::string content;
    long completion_tokens = 0;
    int attempts_used = 1;
    bool backend_reported_usage = false;
};

// Backoff parameters; 10 * 2^5 = 320 so the cap coincides with retry 6.
struct RetryPolicy {
    double initial_delay_s = 10.0;
    double max_delay_s = 320.0;
    int max_retries = 5;
    double multiplier = 2.0;
};

// attempt_index is 1-based: the delay slept after the attempt_index-th failure.
inline double backoff_delay(int attempt_index, const RetryPolicy& policy = {}) {
    if (attempt_index < 1) throw TutorbenchError("attempt_index must be >= 1");
    double d = policy.initial_delay_s * std::pow(policy.multiplier, attempt_index - 1);
    return std::min(d, policy.max_delay_s);
}

// Injectable time source. now_ms is strictly increasing per clock instance so
// phase timestamps order even when events land in the same millisecond.
class Clock {
public:
    virtual ~Clock() = default;
    virtual int64_t now_ms() = 0;
    virtual void sleep_s(double seconds) = 0;
};

class SystemClock : public Clock {
public:
    int64_t now_ms() override {
        auto t = std::chrono::duration_cast<std::chrono::milliseconds>(
                     std::chrono::system_clock::now().time_since_epoch())
                     .count();
        std::lock_guard lock(mu_);
        last_ = std::max<int64_t>(t, last_ + 1);
        return last_;
    }
    void sleep_s(double seconds) override {
        std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
    }

private:
    std::mutex mu_;
    int64_t last_ = 0;
};

// Advances only via sleeps plus one tick per reading; records every sleep.
class VirtualClock : public Clock {
public:
    int64_t now_ms() override {
        std::lock_guard lock(mu_);
        return ++t_ms_;
    }
    void sleep_s(double seconds) override {
        std::lock_guard lock(mu_);
        t_ms_ += static_cast<int64_t>(seconds * 1000.0);
        sleeps_.push_back(seconds);
    }
    std::vector<double> sleeps() const {
        std::lock_guard lock(mu_);
        return sleeps_;
    }

private:
    mutable std::mutex mu_;
    int64_t t_ms_ = 0;
    std::vector<double> sleeps_;
};

struct GatewayError : TutorbenchError {
    enum class Kind { transport, config, script_miss };
    Kind kind;
    int attempts = 1;
    GatewayError(Kind k, const std::string& msg, int attempts_used = 1)
        : TutorbenchError(msg), kind(k), attempts(attempts_used) {}
    bool retryable() const { return kind == Kind::transport; }
};

// Single-attempt generation; complete() layers the retry policy on top.
class Backend {
public:
    virtual ~Backend() = default;
    virtual GenerationResult generate(const GenerationRequest& request) = 0;
};

inline GenerationResult complete(Backend& backend, const GenerationRequest& request,
                                 const RetryPolicy& policy, Clock& clock) {
    std::optional<GatewayError> last;
    for (int attempt = 1; attempt <= policy.max_retries + 1; ++attempt) {
        try {
            GenerationResult result = backend.generate(request);
            result.attempts_used = attempt;
            return result;
        } catch (const GatewayError& e) {
            if (!e.retryable()) throw GatewayError(e.kind, e.what(), attempt);
            last = e;
            if (attempt <= policy.max_retries) clock.sleep_s(backoff_delay(attempt, policy));
        }
    }
    throw GatewayError(GatewayError::Kind::transport,
                       std::string("retries exhausted; last error: ") + last->what(),
                       policy.max_retries + 1);
}

inline long effective_tokens(const GenerationResult& result) {
    if (result.backend_reported_usage) return result.completion_tokens;
    return static_cast<long>((result.content.size() + 3) / 4);
}

// ---------------------------------------------------------------------------
// Scripted backend
// ---------------------------------------------------------------------------

// Request classification the script matchers key on. Derived purely from the
// request payload, so identical requests classify identically.
struct RequestKey {
    std::string kind;   // teacher | student_dialogue | student_pretest | student_posttest | judge | other
    int round = 0;      // 0 when not applicable
    std::string schema; // response_schema name when present
    std::string hash;   // fnv1a over roles+contents
};

inline RequestKey classify_request(const GenerationRequest& request) {
    RequestKey key;
    std::string all;
    for (const ChatMessage& m : request.messages) {
        all += role_name(m.role);
        all += '\x1f';
        all += m.content;
        all += '\x1e';
    }
    key.hash = to_hex(fnv1a64(all));
    if (request.response_schema) {
        key.kind = "judge";
        key.schema = request.response_schema->name;
        return key;
    }
    const ChatMessage* last_user = nullptr;
    for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
        if (it->role == Role::user) {
            last_user = &*it;
            break;
        }
    }
    if (!last_user) {
        key.kind = "other";
        return key;
    }
    const std::string& c = last_user->content;
    if (auto pos = c.find("Generate the round "); pos != std::string::npos) {
        key.kind = "teacher";
        key.round = std::atoi(c.c_str() + pos + std::string("Generate the round ").size());
        return key;
    }
    if (c.rfind("Question: ", 0) == 0) {
        bool has_dialogue = false;
        for (const ChatMessage& m : request.messages)
            if (m.content.rfind("Teacher: ", 0) == 0) has_dialogue = true;
        key.kind = has_dialogue ? "student_posttest" : "student_pretest";
        return key;
    }
    if (c.rfind("Teacher: ", 0) == 0) {
        key.kind = "student_dialogue";
        int rounds = 0;
        for (const ChatMessage& m : request.messages)
            if (m.role == Role::user && m.content.rfind("Teacher: ", 0) == 0) ++rounds;
        key.round = rounds;
        return key;
    }
    key.kind = "other";
    return key;
}

// One canned outcome: a reply (optionally with a scripted token count) or an
// injected failure.
struct ScriptReply {
    std::string reply;
    std::optional<long> tokens;
    std::optional<std::string> fail;  // "transport" | "auth"

    GenerationResult materialize() const {
        if (fail) {
            if (*fail == "auth")
                throw GatewayError(GatewayError::Kind::config, "scripted auth failure");
            throw GatewayError(GatewayError::Kind::transport, "scripted transport failure");
        }
        GenerationResult r;
        r.content = reply;
        if (tokens) {
            r.completion_tokens = *tokens;
            r.backend_reported_usage = true;
        }
        return r;
    }
};

struct ScriptMatcher {
    std::optional<std::string> kind;
    std::optional<int> round;
    std::optional<std::string> schema;
    std::optional<std::string> hash;
    std::vector<std::string> contains;  // all must occur in the serialized messages

    bool matches(const RequestKey& key, const std::string& serialized) const {
        if (kind && *kind != key.kind) return false;
        if (round && *round != key.round) return false;
        if (schema && *schema != key.schema) return false;
        if (hash && *hash != key.hash) return false;
        for (const std::string& c : contains)
            if (serialized.find(c) == std::string::npos) return false;
        return true;
    }
};

struct ScriptRule {
    ScriptMatcher match;
    ScriptReply reply;
};

// Consumed call by call; after exhaustion the last entry repeats. Sequences
// exist for failure-injection tests; rule-only scripts stay referentially
// transparent and are the right tool for concurrent runs.
struct ScriptSequence {
    ScriptMatcher match;
    std::vector<ScriptReply> replies;
    size_t next = 0;
};

class ScriptedBackend : public Backend {
public:
    ScriptedBackend() = default;

    void add_rule(ScriptMatcher match, ScriptReply reply) {
        rules_.push_back({std::move(match), std::move(reply)});
    }
    void add_sequence(ScriptMatcher match, std::vector<ScriptReply> replies) {
        sequences_.push_back({std::move(match), std::move(replies), 0});
    }
    void set_default(ScriptReply reply) { default_ = std::move(reply); }

    GenerationResult generate(const GenerationRequest& request) override {
        InFlight guard(*this);
        RequestKey key = classify_request(request);
        std::string serialized = serialize(request);
        {
            std::lock_guard lock(mu_);
            for (ScriptSequence& seq : sequences_) {
                if (!seq.match.matches(key, serialized)) continue;
                const ScriptReply& r = seq.replies[std::min(seq.next, seq.replies.size() - 1)];
                ++seq.next;
                return r.materialize();
            }
        }
        for (const ScriptRule& rule : rules_)
            if (rule.match.matches(key, serialized)) return rule.reply.materialize();
        if (default_) return default_->materialize();
        throw GatewayError(GatewayError::Kind::script_miss,
                           "no script entry for " + key.kind + " round " + std::to_string(key.round));
    }

    // Concurrency instrumentation for cap assertions.
    int max_in_flight() const { return max_in_flight_.load(); }
    long calls() const { return calls_.load(); }

    static std::string serialize(const GenerationRequest& request) {
        std::string out;
        for (const ChatMessage& m : request.messages) {
            out += role_name(m.role);
            out += ": ";
            out += m.content;
            out += "\n";
        }
        if (request.response_schema) out += "schema: " + request.response_schema->name + "\n";
        return out;
    }

private:
    struct InFlight {
        explicit InFlight(ScriptedBackend& b) : backend(b) {
            ++backend.calls_;
            int cur = ++backend.in_flight_;
            int prev = backend.max_in_flight_.load();
            while (cur > prev && !backend.max_in_flight_.compare_exchange_weak(prev, cur)) {
            }
        }
        ~InFlight() { --backend.in_flight_; }
        ScriptedBackend& backend;
    };

    std::mutex mu_;
    std::vector<ScriptRule> rules_;
    std::vector<ScriptSequence> sequences_;
    std::optional<ScriptReply> default_;
    std::atomic<int> in_flight_{0};
    std::atomic<int> max_in_flight_{0};
    std::atomic<long> calls_{0};
};

inline ScriptReply script_reply_from_json(const json& j) {
    ScriptReply r;
    r.reply = j.value("reply", "");
    if (j.contains("tokens")) r.tokens = j["tokens"].get<long>();
    if (j.contains("fail")) r.fail = j["fail"].get<std::string>();
    return r;
}

inline ScriptMatcher script_matcher_from_json(const json& j) {
    ScriptMatcher m;
    if (j.contains("kind")) m.kind = j["kind"].get<std::string>();
    if (j.contains("round")) m.round = j["round"].get<int>();
    if (j.contains("schema")) m.schema = j["schema"].get<std::string>();
    if (j.contains("hash")) m.hash = j["hash"].get<std::string>();
    if (j.contains("contains")) {
        if (j["contains"].is_array())
            for (const auto& c : j["contains"]) m.contains.push_back(c.get<std::string>());
        else
            m.contains.push_back(j["contains"].get<std::string>());
    }
    return m;
}

// Script file: {"format_version":1, "models": {"<model_id>": {"default":..,
// "rules":[{matcher fields..., "reply":..}], "sequences":[{..., "replies":[..]}]}},
// "default": {...}}. Returns one backend per scripted model.
inline std::map<std::string, std::shared_ptr<ScriptedBackend>> load_script(
    const std::filesystem::path& path) {
    json doc = json::parse(read_text_file(path));
    check_format_version(doc, path.string());
    std::map<std::string, std::shared_ptr<ScriptedBackend>> backends;
    std::optional<ScriptReply> global_default;
    if (doc.contains("default")) global_default = script_reply_from_json(doc["default"]);
    for (auto& [model_id, spec] : doc.at("models").items()) {
        auto backend = std::make_shared<ScriptedBackend>();
        if (spec.contains("sequences"))
            for (const auto& s : spec["sequences"]) {
                std::vector<ScriptReply> replies;
                for (const auto& r : s.at("replies")) replies.push_back(script_reply_from_json(r));
                backend->add_sequence(script_matcher_from_json(s), std::move(replies));
            }
        if (spec.contains("rules"))
            for (const auto& r : spec["rules"])
                backend->add_rule(script_matcher_from_json(r), script_reply_from_json(r));
        if (spec.contains("default"))
            backend->set_default(script_reply_from_json(spec["default"]));
        else if (global_default)
            backend->set_default(*global_default);
        backends[model_id] = backend;
    }
    return backends;
}

// ---------------------------------------------------------------------------
// HTTP backend (OpenAI-compatible chat completions)
// ---------------------------------------------------------------------------

inline json build_chat_body(const GenerationRequest& request) {
    json messages = json::array();
    for (const ChatMessage& m : request.messages)
        messages.push_back({{"role", role_name(m.role)}, {"content", m.content}});
    json body{{"model", request.model_id},
              {"messages", messages},
              {"temperature", request.temperature},
              {"max_tokens", request.max_tokens}};
    if (request.response_schema) {
        body["response_format"] = {
            {"type", "json_schema"},
            {"json_schema",
             {{"name", request.response_schema->name}, {"schema", request.response_schema->schema}}}};
    }
    return body;
}

inline GenerationResult parse_chat_response(const json& doc) {
    GenerationResult result;
    const json& choices = doc.at("choices");
    if (!choices.is_array() || choices.empty())
        throw GatewayError(GatewayError::Kind::transport, "response has no choices");
    const json& message = choices[0].at("message");
    if (message.contains("content") && message["content"].is_string())
        result.content = message["content"].get<std::string>();
    if (doc.contains("usage") && doc["usage"].contains("completion_tokens")) {
        result.completion_tokens = doc["usage"]["completion_tokens"].get<long>();
        result.backend_reported_usage = true;
    }
    return result;
}

struct HttpEndpoint {
    std::string base_url;               // e.g. https://api.example.com
    std::string path = "/v1/chat/completions";
    std::string auth_env;               // name of the env var holding the bearer token
    int timeout_s = 120;
};

class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}

    GenerationResult generate(const GenerationRequest& request) override;

private:
    HttpEndpoint endpoint_;
};

}  // namespace tutorbench

// httplib pulls in OS socket headers; keep it at the bottom of this header.
#include <httplib.h>

namespace tutorbench {

inline GenerationResult HttpBackend::generate(const GenerationRequest& request) {
    httplib::Client client(endpoint_.base_url);
    client.set_connection_timeout(endpoint_.timeout_s);
    client.set_read_timeout(endpoint_.timeout_s);
    httplib::Headers headers;
    if (!endpoint_.auth_env.empty()) {
        const char* token = std::getenv(endpoint_.auth_env.c_str());
        if (!token || !*token)
            throw GatewayError(GatewayError::Kind::config,
                               "auth env var not set: " + endpoint_.auth_env);
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    std::string body = build_chat_body(request).dump();
    auto res = client.Post(endpoint_.path, headers, body, "application/json");
    if (!res)
        throw GatewayError(GatewayError::Kind::transport,
                           "transport failure: " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status >= 500)
        throw GatewayError(GatewayError::Kind::transport,
                           "http status " + std::to_string(res->status));
    if (res->status >= 400)
        throw GatewayError(GatewayError::Kind::config,
                           "http status " + std::to_string(res->status) + ": " + res->body);
    try {
        return parse_chat_response(json::parse(res->body));
    } catch (const json::exception& e) {
        throw GatewayError(GatewayError::Kind::transport,
                           std::string("unparseable response body: ") + e.what());
    }
}

}  // namespace tutorbench
