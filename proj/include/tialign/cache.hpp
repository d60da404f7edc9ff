#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>

#include "tialign/errors.hpp"
#include "tialign/hash.hpp"

namespace tialign {

namespace fs = std::filesystem;

/// Content-addressed file store with per-namespace subtrees and a two-level
/// digest-prefix fan-out. Writes are atomic (temp file + rename); a key is
/// write-once: re-putting the same payload is a no-op, a different payload
/// raises CacheCorruptionError.
class FileCache {
public:
    explicit FileCache(fs::path root) : root_(std::move(root)) {
        fs::create_directories(root_);
    }

    const fs::path& root() const { return root_; }

    std::optional<std::string> get(const std::string& ns, const std::string& key_hex) const {
        const fs::path p = entry_path(ns, key_hex);
        std::ifstream in(p, std::ios::binary);
        if (!in) return std::nullopt;
        std::ostringstream buf;
        buf << in.rdbuf();
        return buf.str();
    }

    void put(const std::string& ns, const std::string& key_hex, std::string_view payload) {
        const fs::path p = entry_path(ns, key_hex);
        if (auto existing = get(ns, key_hex)) {
            if (*existing != payload)
                throw CacheCorruptionError("cache entry " + ns + "/" + key_hex +
                                           " already holds a different payload");
            return;
        }
        fs::create_directories(p.parent_path());
        const fs::path tmp = p.parent_path() / (key_hex + ".tmp" + unique_suffix());
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw Error("cache: cannot write " + tmp.string());
            out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
            if (!out) throw Error("cache: short write to " + tmp.string());
        }
        std::error_code ec;
        fs::rename(tmp, p, ec);
        if (ec) {
            // A concurrent writer may have won the rename; verify equality.
            fs::remove(tmp);
            auto existing = get(ns, key_hex);
            if (!existing) throw Error("cache: rename failed for " + p.string());
            if (*existing != payload)
                throw CacheCorruptionError("cache entry " + ns + "/" + key_hex +
                                           " already holds a different payload");
        }
    }

private:
    fs::path entry_path(const std::string& ns, const std::string& key_hex) const {
        if (key_hex.size() < 4) throw InputError("cache key too short: " + key_hex);
        return root_ / ns / key_hex.substr(0, 2) / key_hex.substr(2, 2) / (key_hex + ".json");
    }

    static std::string unique_suffix() {
        static std::atomic<std::uint64_t> counter{0};
        return "." + std::to_string(counter.fetch_add(1)) + "." +
               std::to_string(static_cast<std::uint64_t>(
                   std::hash<std::thread::id>{}(std::this_thread::get_id())));
    }

    fs::path root_;
};

} // namespace tialign
