#pragma once
// Shared plumbing: stable hashing, option-letter arithmetic, CSV quoting,
// atomic file writes, and the format_version gate used by every reader.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace tutorbench {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

struct TutorbenchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Data or validation problem in an input file or record.
struct DataError : TutorbenchError {
    using TutorbenchError::TutorbenchError;
};

// FNV-1a, 64-bit. Stable across platforms; used for config hashes,
// corpus fingerprints, and scripted-backend request keys.
inline uint64_t fnv1a64(std::string_view bytes, uint64_t seed = 14695981039346656037ull) {
    uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string to_hex(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

// Option letters are A..Z; index 0 maps to 'A'.
inline char option_letter(int index) {
    if (index < 0 || index >= 26) throw DataError("option index out of A-Z range: " + std::to_string(index));
    return static_cast<char>('A' + index);
}

inline int option_index(char letter) {
    if (letter < 'A' || letter > 'Z') throw DataError(std::string("not an option letter: ") + letter);
    return letter - 'A';
}

inline std::string trim(std::string_view s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    size_t e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

// RFC-4180 style quoting, applied only when needed.
inline std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

// Write-temp-then-rename so readers never observe a partial file.
inline void atomic_write_text(const std::filesystem::path& path, const std::string& text) {
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) throw DataError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void check_format_version(const json& doc, const std::string& what) {
    if (!doc.contains("format_version") || !doc["format_version"].is_number_integer())
        throw DataError(what + ": missing format_version");
    int v = doc["format_version"].get<int>();
    if (v != kFormatVersion)
        throw DataError(what + ": unsupported format_version " + std::to_string(v));
}

// Model ids may contain characters unfit for filenames.
inline std::string path_component(std::string_view name) {
    std::string out;
    out.reserve(name.size());
    for (char c : name) {
        bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                  c == '.' || c == '-' || c == '_';
        out += ok ? c : '_';
    }
    return out.empty() ? "_" : out;
}

}  // namespace tutorbench
