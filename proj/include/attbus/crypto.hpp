// Cryptographic primitives for the attested channel, backed by OpenSSL libcrypto.
// Fixed suite, project-wide: X25519 / HKDF-SHA256 / AES-256-GCM / Ed25519.
#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>

#include <openssl/core_names.h>
#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/params.h>
#include <openssl/rand.h>

#include "attbus/bytes.hpp"

namespace attbus::crypto {

struct CryptoError : std::runtime_error {
    explicit CryptoError(const std::string& what) : std::runtime_error(what) {}
};

// Authentication failure on open; callers must treat the session as dead.
struct AeadAuthError : CryptoError {
    AeadAuthError() : CryptoError("aead authentication failure") {}
};

namespace detail {

[[noreturn]] inline void fail(const char* where) {
    unsigned long err = ERR_get_error();
    char buf[256] = {0};
    if (err) ERR_error_string_n(err, buf, sizeof(buf));
    throw CryptoError(std::string(where) + ": " + (err ? buf : "openssl error"));
}

struct PkeyDeleter {
    void operator()(EVP_PKEY* p) const { EVP_PKEY_free(p); }
};
using PkeyPtr = std::unique_ptr<EVP_PKEY, PkeyDeleter>;

struct CtxDeleter {
    void operator()(EVP_PKEY_CTX* p) const { EVP_PKEY_CTX_free(p); }
};
using PkeyCtxPtr = std::unique_ptr<EVP_PKEY_CTX, CtxDeleter>;

struct CipherCtxDeleter {
    void operator()(EVP_CIPHER_CTX* p) const { EVP_CIPHER_CTX_free(p); }
};
using CipherCtxPtr = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter>;

struct MdCtxDeleter {
    void operator()(EVP_MD_CTX* p) const { EVP_MD_CTX_free(p); }
};
using MdCtxPtr = std::unique_ptr<EVP_MD_CTX, MdCtxDeleter>;

inline PkeyPtr raw_private(int type, BytesView key) {
    EVP_PKEY* p = EVP_PKEY_new_raw_private_key(type, nullptr, key.data(), key.size());
    if (!p) fail("raw private key");
    return PkeyPtr(p);
}

inline PkeyPtr raw_public(int type, BytesView key) {
    EVP_PKEY* p = EVP_PKEY_new_raw_public_key(type, nullptr, key.data(), key.size());
    if (!p) fail("raw public key");
    return PkeyPtr(p);
}

inline Bytes32 raw_public_of(EVP_PKEY* pkey) {
    Bytes32 out;
    size_t len = out.size();
    if (EVP_PKEY_get_raw_public_key(pkey, out.data(), &len) != 1 || len != 32)
        fail("get raw public key");
    return out;
}

}  // namespace detail

// Operation counters used by the benchmark shape checks. A PSK resumption must
// leave all three untouched.
struct OpCounters {
    uint64_t dh = 0;
    uint64_t sign = 0;
    uint64_t verify = 0;
};

inline std::atomic<uint64_t> g_dh_ops{0};
inline std::atomic<uint64_t> g_sign_ops{0};
inline std::atomic<uint64_t> g_verify_ops{0};

inline OpCounters op_counters() {
    return {g_dh_ops.load(), g_sign_ops.load(), g_verify_ops.load()};
}

// Test hook: deterministic randomness for golden transcripts. Not thread safe
// against concurrent set; tests install it before spawning work.
inline std::function<void(std::span<uint8_t>)>& rng_override() {
    static std::function<void(std::span<uint8_t>)> fn;
    return fn;
}

inline void set_test_rng(std::function<void(std::span<uint8_t>)> fn) {
    rng_override() = std::move(fn);
}

inline void reset_rng() {
    rng_override() = nullptr;
}

inline void random_bytes(std::span<uint8_t> out) {
    if (auto& fn = rng_override()) {
        fn(out);
        return;
    }
    if (RAND_bytes(out.data(), static_cast<int>(out.size())) != 1)
        detail::fail("RAND_bytes");
}

inline Bytes32 random_bytes32() {
    Bytes32 out;
    random_bytes(out);
    return out;
}

inline Bytes32 sha256(BytesView data) {
    Bytes32 out;
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != 32)
        detail::fail("sha256");
    return out;
}

// SHA-256 over the exact serialized handshake messages, in order.
inline Bytes32 transcript_hash(std::span<const Bytes> messages) {
    detail::MdCtxPtr ctx(EVP_MD_CTX_new());
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
        detail::fail("transcript init");
    for (const Bytes& m : messages)
        if (EVP_DigestUpdate(ctx.get(), m.data(), m.size()) != 1) detail::fail("transcript update");
    Bytes32 out;
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx.get(), out.data(), &len) != 1 || len != 32)
        detail::fail("transcript final");
    return out;
}

// Hash of base messages followed by pending (not yet appended) ones.
inline Bytes32 transcript_hash_with(std::span<const Bytes> base, std::span<const Bytes> pending) {
    detail::MdCtxPtr ctx(EVP_MD_CTX_new());
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
        detail::fail("transcript init");
    for (const Bytes& m : base)
        if (EVP_DigestUpdate(ctx.get(), m.data(), m.size()) != 1) detail::fail("transcript update");
    for (const Bytes& m : pending)
        if (EVP_DigestUpdate(ctx.get(), m.data(), m.size()) != 1) detail::fail("transcript update");
    Bytes32 out;
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx.get(), out.data(), &len) != 1 || len != 32)
        detail::fail("transcript final");
    return out;
}

inline Bytes32 hmac_sha256(BytesView key, BytesView data) {
    EVP_MAC* mac = EVP_MAC_fetch(nullptr, "HMAC", nullptr);
    if (!mac) detail::fail("fetch hmac");
    EVP_MAC_CTX* ctx = EVP_MAC_CTX_new(mac);
    EVP_MAC_free(mac);
    if (!ctx) detail::fail("hmac ctx");
    char digest[] = "SHA256";
    OSSL_PARAM params[] = {
        OSSL_PARAM_construct_utf8_string(OSSL_MAC_PARAM_DIGEST, digest, 0),
        OSSL_PARAM_construct_end(),
    };
    Bytes32 out;
    size_t outl = 0;
    int ok = EVP_MAC_init(ctx, key.data(), key.size(), params) == 1 &&
             EVP_MAC_update(ctx, data.data(), data.size()) == 1 &&
             EVP_MAC_final(ctx, out.data(), &outl, out.size()) == 1 && outl == 32;
    EVP_MAC_CTX_free(ctx);
    if (!ok) detail::fail("hmac");
    return out;
}

inline Bytes32 hkdf_extract(BytesView salt, BytesView ikm) {
    static const Bytes32 zero_salt{};
    return hmac_sha256(salt.empty() ? BytesView(zero_salt) : salt, ikm);
}

// HKDF-SHA256-Expand over u16(len) || prefixed("mini-tls " + label) || prefixed(context).
// The "mini-tls " prefix keeps derived keys disjoint from any real TLS deployment.
inline Bytes hkdf_expand_label(BytesView secret, std::string_view label, BytesView context,
                               size_t length) {
    if (length == 0 || length > 255 * 32) throw CryptoError("hkdf output length out of range");
    if (label.size() > 64) throw CryptoError("hkdf label too long");
    if (context.size() > 255) throw CryptoError("hkdf context too long");

    std::string full = "mini-tls ";
    full += label;
    Bytes info;
    info.push_back(static_cast<uint8_t>(length >> 8));
    info.push_back(static_cast<uint8_t>(length));
    info.push_back(static_cast<uint8_t>(full.size()));
    append(info, BytesView(reinterpret_cast<const uint8_t*>(full.data()), full.size()));
    info.push_back(static_cast<uint8_t>(context.size()));
    append(info, context);

    Bytes out;
    out.reserve(length);
    Bytes t;
    uint8_t counter = 1;
    while (out.size() < length) {
        Bytes block = t;
        append(block, info);
        block.push_back(counter++);
        Bytes32 digest = hmac_sha256(secret, block);
        t.assign(digest.begin(), digest.end());
        append(out, t);
    }
    out.resize(length);
    return out;
}

inline Bytes32 hkdf_expand_label32(BytesView secret, std::string_view label, BytesView context) {
    Bytes v = hkdf_expand_label(secret, label, context, 32);
    Bytes32 out;
    std::memcpy(out.data(), v.data(), 32);
    return out;
}

// ---------------------------------------------------------------------------
// AEAD: AES-256-GCM, per-record nonce = iv XOR (0^4 || u64be(seq)).

struct AeadKeyIv {
    std::array<uint8_t, 32> key{};
    std::array<uint8_t, 12> iv{};
};

inline AeadKeyIv split_key_iv(BytesView okm44) {
    if (okm44.size() != 44) throw CryptoError("key+iv material must be 44 bytes");
    AeadKeyIv k;
    std::memcpy(k.key.data(), okm44.data(), 32);
    std::memcpy(k.iv.data(), okm44.data() + 32, 12);
    return k;
}

inline std::array<uint8_t, 12> nonce_for(const AeadKeyIv& k, uint64_t seq) {
    std::array<uint8_t, 12> nonce = k.iv;
    for (int i = 0; i < 8; ++i)
        nonce[11 - i] ^= static_cast<uint8_t>(seq >> (8 * i));
    return nonce;
}

inline Bytes aead_seal(const AeadKeyIv& k, uint64_t seq, BytesView aad, BytesView plaintext) {
    auto nonce = nonce_for(k, seq);
    detail::CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
    if (!ctx) detail::fail("cipher ctx");
    if (EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, k.key.data(), nonce.data()) != 1)
        detail::fail("gcm init");
    int outl = 0;
    if (!aad.empty() &&
        EVP_EncryptUpdate(ctx.get(), nullptr, &outl, aad.data(), static_cast<int>(aad.size())) != 1)
        detail::fail("gcm aad");
    Bytes out(plaintext.size() + 16);
    if (!plaintext.empty() &&
        EVP_EncryptUpdate(ctx.get(), out.data(), &outl, plaintext.data(),
                          static_cast<int>(plaintext.size())) != 1)
        detail::fail("gcm encrypt");
    int finl = 0;
    if (EVP_EncryptFinal_ex(ctx.get(), out.data() + plaintext.size(), &finl) != 1 || finl != 0)
        detail::fail("gcm final");
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, 16, out.data() + plaintext.size()) != 1)
        detail::fail("gcm tag");
    return out;
}

inline Bytes aead_open(const AeadKeyIv& k, uint64_t seq, BytesView aad, BytesView ciphertext) {
    if (ciphertext.size() < 16) throw AeadAuthError();
    auto nonce = nonce_for(k, seq);
    detail::CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
    if (!ctx) detail::fail("cipher ctx");
    if (EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, k.key.data(), nonce.data()) != 1)
        detail::fail("gcm init");
    int outl = 0;
    if (!aad.empty() &&
        EVP_DecryptUpdate(ctx.get(), nullptr, &outl, aad.data(), static_cast<int>(aad.size())) != 1)
        detail::fail("gcm aad");
    size_t body_len = ciphertext.size() - 16;
    Bytes out(body_len);
    if (body_len > 0 &&
        EVP_DecryptUpdate(ctx.get(), out.data(), &outl, ciphertext.data(),
                          static_cast<int>(body_len)) != 1)
        detail::fail("gcm decrypt");
    Bytes tag(ciphertext.begin() + static_cast<long>(body_len), ciphertext.end());
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, 16, tag.data()) != 1)
        detail::fail("gcm set tag");
    int finl = 0;
    if (EVP_DecryptFinal_ex(ctx.get(), out.data() + body_len, &finl) != 1)
        throw AeadAuthError();
    return out;
}

// ---------------------------------------------------------------------------
// X25519 key agreement.

struct KeyPair {
    Bytes32 priv{};
    Bytes32 pub{};
};

inline Bytes32 dh_public(const Bytes32& priv) {
    auto pkey = detail::raw_private(EVP_PKEY_X25519, priv);
    return detail::raw_public_of(pkey.get());
}

inline KeyPair dh_generate() {
    g_dh_ops.fetch_add(1, std::memory_order_relaxed);
    KeyPair kp;
    random_bytes(kp.priv);
    kp.pub = dh_public(kp.priv);
    return kp;
}

inline Bytes32 dh_shared(const Bytes32& priv, const Bytes32& peer_public) {
    g_dh_ops.fetch_add(1, std::memory_order_relaxed);
    auto sk = detail::raw_private(EVP_PKEY_X25519, priv);
    auto pk = detail::raw_public(EVP_PKEY_X25519, peer_public);
    detail::PkeyCtxPtr ctx(EVP_PKEY_CTX_new(sk.get(), nullptr));
    if (!ctx || EVP_PKEY_derive_init(ctx.get()) != 1 ||
        EVP_PKEY_derive_set_peer(ctx.get(), pk.get()) != 1)
        detail::fail("x25519 derive init");
    Bytes32 out;
    size_t len = out.size();
    if (EVP_PKEY_derive(ctx.get(), out.data(), &len) != 1 || len != 32)
        throw CryptoError("x25519: low-order peer public key");
    bool all_zero = true;
    for (uint8_t b : out) all_zero &= (b == 0);
    if (all_zero) throw CryptoError("x25519: low-order peer public key");
    return out;
}

// ---------------------------------------------------------------------------
// Ed25519 signatures.

inline Bytes32 sign_public(const Bytes32& priv) {
    auto pkey = detail::raw_private(EVP_PKEY_ED25519, priv);
    return detail::raw_public_of(pkey.get());
}

inline KeyPair sign_generate() {
    KeyPair kp;
    random_bytes(kp.priv);
    kp.pub = sign_public(kp.priv);
    return kp;
}

inline Signature sign(const Bytes32& priv, BytesView message) {
    g_sign_ops.fetch_add(1, std::memory_order_relaxed);
    auto pkey = detail::raw_private(EVP_PKEY_ED25519, priv);
    detail::MdCtxPtr ctx(EVP_MD_CTX_new());
    if (!ctx || EVP_DigestSignInit(ctx.get(), nullptr, nullptr, nullptr, pkey.get()) != 1)
        detail::fail("ed25519 sign init");
    Signature sig;
    size_t len = sig.size();
    if (EVP_DigestSign(ctx.get(), sig.data(), &len, message.data(), message.size()) != 1 ||
        len != 64)
        detail::fail("ed25519 sign");
    return sig;
}

inline bool verify_sig(const Bytes32& pub, BytesView message, BytesView signature) {
    if (signature.size() != 64) throw CryptoError("signature must be 64 bytes");
    g_verify_ops.fetch_add(1, std::memory_order_relaxed);
    auto pkey = detail::raw_public(EVP_PKEY_ED25519, pub);
    detail::MdCtxPtr ctx(EVP_MD_CTX_new());
    if (!ctx || EVP_DigestVerifyInit(ctx.get(), nullptr, nullptr, nullptr, pkey.get()) != 1)
        detail::fail("ed25519 verify init");
    return EVP_DigestVerify(ctx.get(), signature.data(), signature.size(), message.data(),
                            message.size()) == 1;
}

inline bool verify_sig(const Bytes32& pub, BytesView message, const Signature& signature) {
    return verify_sig(pub, message, BytesView(signature));
}

// ---------------------------------------------------------------------------
// Public-key sealing for the encrypted ClientHello: ephemeral X25519 + AEAD.

struct Sealed {
    Bytes32 encap{};  // ephemeral public key
    Bytes ciphertext;
};

inline AeadKeyIv ech_key(const Bytes32& shared, BytesView info) {
    return split_key_iv(hkdf_expand_label(shared, "ech", info, 44));
}

inline Sealed pk_seal(const Bytes32& recipient_public, BytesView info, BytesView plaintext) {
    KeyPair eph = dh_generate();
    Bytes32 shared = dh_shared(eph.priv, recipient_public);
    Sealed out;
    out.encap = eph.pub;
    out.ciphertext = aead_seal(ech_key(shared, info), 0, {}, plaintext);
    return out;
}

inline Bytes pk_open(const Bytes32& recipient_private, const Bytes32& encap, BytesView info,
                     BytesView ciphertext) {
    Bytes32 shared = dh_shared(recipient_private, encap);
    return aead_open(ech_key(shared, info), 0, {}, ciphertext);
}

}  // namespace attbus::crypto
