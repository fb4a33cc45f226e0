#include "pol/digest.hpp"

#include <openssl/evp.h>

#include <cstring>

#include "pol/errors.hpp"

namespace pol {

Digest32 sha256_bytes(const std::uint8_t* data, std::size_t len) {
    Digest32 out{};
    unsigned int outlen = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, data, len) != 1 ||
        EVP_DigestFinal_ex(ctx, out.data(), &outlen) != 1) {
        EVP_MD_CTX_free(ctx);
        throw Error("sha256 failed");
    }
    EVP_MD_CTX_free(ctx);
    return out;
}

Digest32 sha256_bytes(const std::vector<std::uint8_t>& data) {
    return sha256_bytes(data.data(), data.size());
}

std::string to_hex(const Digest32& d) {
    static const char* k = "0123456789abcdef";
    std::string s(64, '0');
    for (std::size_t i = 0; i < 32; ++i) {
        s[2 * i] = k[d[i] >> 4];
        s[2 * i + 1] = k[d[i] & 0xf];
    }
    return s;
}

Digest32 digest_from_hex(const std::string& hex) {
    if (hex.size() != 64) throw Error("digest hex must be 64 chars");
    auto nib = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw Error("bad hex digit in digest");
    };
    Digest32 d{};
    for (std::size_t i = 0; i < 32; ++i)
        d[i] = static_cast<std::uint8_t>((nib(hex[2 * i]) << 4) | nib(hex[2 * i + 1]));
    return d;
}

Digest32 batch_digest(const Dataset& d, const BatchIndex& batch) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(batch.rows.size() * (d.dim() * 8 + 8));
    auto put64 = [&](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    for (std::size_t r : batch.rows) {
        if (r >= d.n()) throw Error("batch_digest: row out of range");
        for (std::size_t j = 0; j < d.dim(); ++j) {
            std::uint64_t u;
            const double x = d.features.at(r, j);
            std::memcpy(&u, &x, 8);
            put64(u);
        }
        put64(static_cast<std::uint64_t>(d.labels[r]));
    }
    return sha256_bytes(bytes);
}

}  // namespace pol
