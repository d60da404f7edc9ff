#pragma once

#include <cstdlib>
#include <memory>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>

#include "tialign/core.hpp"
#include "tialign/errors.hpp"
#include "tialign/image.hpp"
#include "tialign/question_gen.hpp"
#include "tialign/scoring.hpp"

#include <httplib.h>

// HTTP adapters for real models. The generator speaks the common
// chat-completion wire format; the VQA endpoint is a small JSON contract
// (question + PNG) documented in the README. Both are configured from
// environment variables so configs stay credential-free.
namespace tialign {

struct HttpBackendSettings {
    std::string base_url;   // scheme://host[:port]
    std::string api_key;    // sent as a bearer token when nonempty
    std::string model;
    int timeout_seconds = 120;
    double temperature = 0.0;
};

namespace detail {

inline std::string base64_encode(const unsigned char* data, std::size_t len) {
    static const char* alphabet =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (std::size_t i = 0; i < len; i += 3) {
        unsigned int chunk = static_cast<unsigned int>(data[i]) << 16;
        if (i + 1 < len) chunk |= static_cast<unsigned int>(data[i + 1]) << 8;
        if (i + 2 < len) chunk |= static_cast<unsigned int>(data[i + 2]);
        out.push_back(alphabet[(chunk >> 18) & 63]);
        out.push_back(alphabet[(chunk >> 12) & 63]);
        out.push_back(i + 1 < len ? alphabet[(chunk >> 6) & 63] : '=');
        out.push_back(i + 2 < len ? alphabet[chunk & 63] : '=');
    }
    return out;
}

inline json post_json(const HttpBackendSettings& settings, const std::string& path,
                      const json& body) {
    httplib::Client client(settings.base_url);
    client.set_connection_timeout(settings.timeout_seconds);
    client.set_read_timeout(settings.timeout_seconds);
    httplib::Headers headers;
    if (!settings.api_key.empty())
        headers.emplace("Authorization", "Bearer " + settings.api_key);
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res)
        throw BackendError("no response from " + settings.base_url + path + ": " +
                               httplib::to_string(res.error()),
                           /*retryable=*/true);
    if (res->status < 200 || res->status >= 300)
        throw BackendError("HTTP " + std::to_string(res->status) + " from " + settings.base_url +
                               path + ": " + res->body.substr(0, 512),
                           /*retryable=*/res->status >= 500 || res->status == 429);
    json parsed = json::parse(res->body, nullptr, false);
    if (parsed.is_discarded())
        throw BackendError("non-JSON response from " + settings.base_url + path,
                           /*retryable=*/false);
    return parsed;
}

inline std::string env_or(const char* name, const std::string& fallback) {
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

} // namespace detail

/// Chat-completion generator: POST /v1/chat/completions with a single user
/// message carrying the full request; returns choices[0].message.content.
class HttpGenerator : public GeneratorBackend {
public:
    explicit HttpGenerator(HttpBackendSettings settings) : settings_(std::move(settings)) {
        if (settings_.base_url.empty()) throw InputError("generator base URL is empty");
        if (settings_.model.empty()) throw InputError("generator model name is empty");
    }

    std::string backend_id() const override { return "http-generator"; }
    std::string model_version() const override { return settings_.model; }

    std::string complete(const std::string& request) override {
        const json body{{"model", settings_.model},
                        {"temperature", settings_.temperature},
                        {"messages", json::array({json{{"role", "user"}, {"content", request}}})}};
        const json res = detail::post_json(settings_, "/v1/chat/completions", body);
        try {
            return res.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception& e) {
            throw BackendError(std::string("chat completion response missing content: ") +
                                   e.what(),
                               /*retryable=*/false);
        }
    }

private:
    HttpBackendSettings settings_;
};

/// VQA over HTTP: POST /v1/vqa with {model, question, image_png_base64};
/// accepts either {"yes_probability": p} or raw token likelihoods
/// {"p_yes": ..., "p_no": ...}, renormalized here.
class HttpVqa : public VqaBackend {
public:
    explicit HttpVqa(HttpBackendSettings settings) : settings_(std::move(settings)) {
        if (settings_.base_url.empty()) throw InputError("VQA base URL is empty");
        if (settings_.model.empty()) throw InputError("VQA model name is empty");
    }

    std::string backend_id() const override { return "http-vqa"; }
    std::string model_version() const override { return settings_.model; }

    double yes_probability(const ImageRegion& region, const std::string& question) override {
        std::vector<unsigned char> png;
        if (!cv::imencode(".png", region.pixels, png))
            throw BackendError("failed to encode region as PNG", /*retryable=*/false);
        const json body{{"model", settings_.model},
                        {"question", question},
                        {"image_png_base64", detail::base64_encode(png.data(), png.size())}};
        const json res = detail::post_json(settings_, "/v1/vqa", body);
        if (res.contains("yes_probability")) return res.at("yes_probability").get<double>();
        if (res.contains("p_yes") && res.contains("p_no"))
            return normalize_yes_probability(res.at("p_yes").get<double>(),
                                             res.at("p_no").get<double>());
        throw BackendError("VQA response carries neither yes_probability nor p_yes/p_no",
                           /*retryable=*/false);
    }

private:
    HttpBackendSettings settings_;
};

/// Settings from TIALIGN_GENERATOR_BASE_URL / _API_KEY / _MODEL; null when the
/// base URL is unset.
inline std::unique_ptr<HttpGenerator> http_generator_from_env() {
    HttpBackendSettings s;
    s.base_url = detail::env_or("TIALIGN_GENERATOR_BASE_URL", "");
    if (s.base_url.empty()) return nullptr;
    s.api_key = detail::env_or("TIALIGN_GENERATOR_API_KEY", "");
    s.model = detail::env_or("TIALIGN_GENERATOR_MODEL", "gpt-4");
    return std::make_unique<HttpGenerator>(std::move(s));
}

/// Settings from TIALIGN_VQA_BASE_URL / _API_KEY / _MODEL.
inline std::unique_ptr<HttpVqa> http_vqa_from_env() {
    HttpBackendSettings s;
    s.base_url = detail::env_or("TIALIGN_VQA_BASE_URL", "");
    if (s.base_url.empty()) return nullptr;
    s.api_key = detail::env_or("TIALIGN_VQA_API_KEY", "");
    s.model = detail::env_or("TIALIGN_VQA_MODEL", "blip-vqa");
    return std::make_unique<HttpVqa>(std::move(s));
}

} // namespace tialign
