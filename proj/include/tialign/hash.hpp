#pragma once

#include <openssl/evp.h>

#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>

#include "tialign/errors.hpp"

namespace tialign {

/// SHA-256 of a byte string, as lowercase hex.
inline std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr) throw Error("sha256: EVP_MD_CTX_new failed");
    bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
              EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
              EVP_DigestFinal_ex(ctx, digest, &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) throw Error("sha256: digest computation failed");

    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

/// Joins parts with length prefixes so that ("ab","c") and ("a","bc") cannot collide,
/// then hashes. Used to build cache keys from heterogeneous components.
inline std::string hash_key(std::initializer_list<std::string_view> parts) {
    std::string buf;
    std::size_t total = 0;
    for (auto p : parts) total += p.size() + 24;
    buf.reserve(total);
    for (auto p : parts) {
        buf += std::to_string(p.size());
        buf += ':';
        buf.append(p.data(), p.size());
        buf += ';';
    }
    return sha256_hex(buf);
}

} // namespace tialign
