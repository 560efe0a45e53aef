#pragma once
// Harness configuration and the run manifest: backend endpoint table,
// role configs, seeds, and the config-hash guard that keeps a run
// directory tied to the configuration that produced it.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tutorbench/gateway.hpp"
#include "tutorbench/judge.hpp"
#include "tutorbench/protocol.hpp"

namespace tutorbench {

// Configuration problem, as opposed to bad run data; the CLI maps these to
// the usage/config exit code.
struct ConfigError : TutorbenchError {
    using TutorbenchError::TutorbenchError;
};

struct BackendSpec {
    std::string kind;  // http | scripted
    std::string base_url;
    std::string path = "/v1/chat/completions";
    std::string auth_env;
    std::string script;  // path to the script file, for scripted backends
};

inline void to_json(json& j, const BackendSpec& b) {
    j = json{{"kind", b.kind}};
    if (!b.base_url.empty()) j["base_url"] = b.base_url;
    if (b.path != "/v1/chat/completions") j["path"] = b.path;
    if (!b.auth_env.empty()) j["auth_env"] = b.auth_env;
    if (!b.script.empty()) j["script"] = b.script;
}

inline void from_json(const json& j, BackendSpec& b) {
    j.at("kind").get_to(b.kind);
    b.base_url = j.value("base_url", "");
    b.path = j.value("path", "/v1/chat/completions");
    b.auth_env = j.value("auth_env", "");
    b.script = j.value("script", "");
}

struct HarnessConfig {
    std::string run_label;
    std::filesystem::path output_dir = "runs";
    std::filesystem::path corpus_path;
    std::string corpus_format = "native";
    int num_rounds = 5;
    int max_concurrent_tasks = 5;
    uint64_t seed = 0;
    RoleConfig student;
    std::vector<RoleConfig> teachers;
    std::optional<JudgeConfig> judge;
    std::map<std::string, BackendSpec> backends;  // model_id -> endpoint
};

inline void to_json(json& j, const HarnessConfig& c) {
    j = json{{"format_version", kFormatVersion},
             {"run_label", c.run_label},
             {"output_dir", c.output_dir.string()},
             {"corpus", c.corpus_path.string()},
             {"corpus_format", c.corpus_format},
             {"num_rounds", c.num_rounds},
             {"max_concurrent_tasks", c.max_concurrent_tasks},
             {"seed", c.seed},
             {"student", c.student},
             {"teachers", c.teachers},
             {"backends", c.backends}};
    if (c.judge) j["judge"] = *c.judge;
}

inline void from_json(const json& j, HarnessConfig& c) {
    check_format_version(j, "config");
    j.at("run_label").get_to(c.run_label);
    c.output_dir = j.value("output_dir", std::string("runs"));
    c.corpus_path = j.at("corpus").get<std::string>();
    c.corpus_format = j.value("corpus_format", "native");
    c.num_rounds = j.value("num_rounds", 5);
    c.max_concurrent_tasks = j.value("max_concurrent_tasks", 5);
    c.seed = j.value("seed", uint64_t{0});
    j.at("student").get_to(c.student);
    j.at("teachers").get_to(c.teachers);
    if (j.contains("judge") && !j["judge"].is_null()) c.judge = j["judge"].get<JudgeConfig>();
    if (j.contains("backends")) j.at("backends").get_to(c.backends);
}

inline HarnessConfig load_config(const std::filesystem::path& path) {
    HarnessConfig config;
    try {
        json doc = json::parse(read_text_file(path));
        config = doc.get<HarnessConfig>();
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    } catch (const TutorbenchError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    if (config.run_label.empty()) throw ConfigError(path.string() + ": run_label must be non-empty");
    if (config.teachers.empty()) throw ConfigError(path.string() + ": at least one teacher required");
    return config;
}

// nlohmann objects serialize with sorted keys, so the dump is canonical and
// the hash is stable under key reordering in the source file.
inline std::string config_hash(const HarnessConfig& config) {
    return to_hex(fnv1a64(json(config).dump()));
}

inline std::string file_fingerprint(const std::filesystem::path& path) {
    return to_hex(fnv1a64(read_text_file(path)));
}

struct RunManifest {
    std::string run_label;
    std::string config_hash;
    std::string corpus_fingerprint;
    uint64_t seed = 0;
    std::map<std::string, std::string> phase_status;  // phase -> done | partial
};

inline void to_json(json& j, const RunManifest& m) {
    j = json{{"format_version", kFormatVersion},
             {"run_label", m.run_label},
             {"config_hash", m.config_hash},
             {"corpus_fingerprint", m.corpus_fingerprint},
             {"seed", m.seed},
             {"phase_status", m.phase_status}};
}

inline void from_json(const json& j, RunManifest& m) {
    check_format_version(j, "manifest");
    j.at("run_label").get_to(m.run_label);
    j.at("config_hash").get_to(m.config_hash);
    j.at("corpus_fingerprint").get_to(m.corpus_fingerprint);
    m.seed = j.value("seed", uint64_t{0});
    if (j.contains("phase_status")) j.at("phase_status").get_to(m.phase_status);
}

struct ResumeRefused : TutorbenchError {
    using TutorbenchError::TutorbenchError;
};

// Writes the manifest on first use; on resume, refuses a changed config
// hash unless the caller forces it.
inline RunManifest reconcile_manifest(const RunPaths& paths, const HarnessConfig& config,
                                      bool force_resume) {
    RunManifest manifest;
    manifest.run_label = config.run_label;
    manifest.config_hash = config_hash(config);
    manifest.corpus_fingerprint = std::filesystem::exists(config.corpus_path)
                                      ? file_fingerprint(config.corpus_path)
                                      : "";
    manifest.seed = config.seed;
    if (std::filesystem::exists(paths.manifest())) {
        RunManifest existing = json::parse(read_text_file(paths.manifest())).get<RunManifest>();
        if (existing.config_hash != manifest.config_hash && !force_resume)
            throw ResumeRefused("config hash " + manifest.config_hash +
                                " does not match run dir (" + existing.config_hash +
                                "); pass --force-resume to override");
    }
    atomic_write_text(paths.manifest(), json(manifest).dump(2) + "\n");
    return manifest;
}

// Materializes the endpoint table: scripted models share backends loaded
// from their script files, HTTP models get one client each.
inline BackendRegistry build_registry(const HarnessConfig& config,
                                      const std::filesystem::path& config_dir) {
    BackendRegistry registry;
    std::map<std::string, std::map<std::string, std::shared_ptr<ScriptedBackend>>> script_cache;
    for (const auto& [model_id, spec] : config.backends) {
        if (spec.kind == "http") {
            HttpEndpoint endpoint;
            endpoint.base_url = spec.base_url;
            endpoint.path = spec.path;
            endpoint.auth_env = spec.auth_env;
            if (endpoint.base_url.empty())
                throw ConfigError("backend for " + model_id + " missing base_url");
            registry.add(model_id, std::make_shared<HttpBackend>(endpoint));
        } else if (spec.kind == "scripted") {
            std::filesystem::path script = spec.script;
            if (script.is_relative()) script = config_dir / script;
            auto& scripts = script_cache[script.string()];
            if (scripts.empty()) scripts = load_script(script);
            auto it = scripts.find(model_id);
            if (it == scripts.end())
                throw ConfigError("script " + script.string() + " has no entry for model " + model_id);
            registry.add(model_id, it->second);
        } else {
            throw ConfigError("unknown backend kind '" + spec.kind + "' for " + model_id);
        }
    }
    return registry;
}

}  // namespace tutorbench
