// Minimal certificate: subject + Ed25519 key + labelled extensions, signed by
// an issuer over the deterministic TBS encoding. Broker certs chain to the CA
// anchor; peer certs are self-signed and may carry an "att-client" extension.
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "attbus/attestation.hpp"
#include "attbus/bytes.hpp"
#include "attbus/crypto.hpp"

namespace attbus {

struct Certificate {
    std::string subject;
    Bytes32 public_key{};
    std::vector<std::pair<std::string, Bytes>> extensions;
    std::string issuer;
    Signature signature{};

    static constexpr const char* kAttClientExtension = "att-client";

    Bytes tbs_bytes() const {
        ByteWriter w;
        w.field(subject);
        w.field(BytesView(public_key));
        w.u16(static_cast<uint16_t>(extensions.size()));
        for (const auto& [label, value] : extensions) {
            w.field(label);
            w.field(BytesView(value));
        }
        w.field(issuer);
        return w.take();
    }

    Bytes encode() const {
        Bytes out = tbs_bytes();
        ByteWriter w;
        w.field(BytesView(signature));
        append(out, w.bytes());
        return out;
    }

    static Certificate decode(BytesView raw) {
        ByteReader r(raw);
        Certificate c;
        c.subject = r.field_string();
        Bytes pk = r.field();
        if (pk.size() != 32) throw CodecError("certificate public key must be 32 bytes");
        std::memcpy(c.public_key.data(), pk.data(), 32);
        uint16_t n = r.u16();
        bool saw_att_client = false;
        for (uint16_t i = 0; i < n; ++i) {
            std::string label = r.field_string();
            Bytes value = r.field();
            if (label == kAttClientExtension) {
                if (saw_att_client) throw CodecError("duplicate att-client extension");
                saw_att_client = true;
            }
            c.extensions.emplace_back(std::move(label), std::move(value));
        }
        c.issuer = r.field_string();
        Bytes sig = r.field();
        if (sig.size() != 64) throw CodecError("certificate signature must be 64 bytes");
        std::memcpy(c.signature.data(), sig.data(), 64);
        r.expect_done();
        return c;
    }

    bool verify_with(const Bytes32& issuer_public) const {
        return crypto::verify_sig(issuer_public, tbs_bytes(), signature);
    }

    bool self_signed_valid() const { return verify_with(public_key); }

    std::optional<BytesView> find_extension(std::string_view label) const {
        for (const auto& [l, v] : extensions)
            if (l == label) return BytesView(v);
        return std::nullopt;
    }

    Json to_json() const {
        Json exts = Json::array();
        for (const auto& [label, value] : extensions)
            exts.push_back({{"label", label}, {"value_hex", to_hex(value)}});
        return Json{{"subject", subject},
                    {"public_key_hex", to_hex(public_key)},
                    {"extensions", exts},
                    {"issuer", issuer},
                    {"signature_hex", to_hex(signature)}};
    }

    static Certificate from_json(const Json& j) {
        Certificate c;
        c.subject = j.at("subject").get<std::string>();
        c.public_key = from_hex_array<32>(j.at("public_key_hex").get<std::string>());
        for (const auto& e : j.at("extensions"))
            c.extensions.emplace_back(e.at("label").get<std::string>(),
                                      from_hex(e.at("value_hex").get<std::string>()));
        c.issuer = j.at("issuer").get<std::string>();
        c.signature = from_hex_array<64>(j.at("signature_hex").get<std::string>());
        return c;
    }

    void save(const std::filesystem::path& path) const {
        ReferenceValueStore::write_file(path, to_json().dump(2));
    }

    static Certificate load(const std::filesystem::path& path) {
        return from_json(Json::parse(ReferenceValueStore::read_file(path)));
    }
};

inline Certificate make_certificate(std::string subject, const Bytes32& subject_public,
                                    std::string issuer, const Bytes32& issuer_private,
                                    std::vector<std::pair<std::string, Bytes>> extensions = {}) {
    Certificate c;
    c.subject = std::move(subject);
    c.public_key = subject_public;
    c.extensions = std::move(extensions);
    c.issuer = std::move(issuer);
    c.signature = crypto::sign(issuer_private, c.tbs_bytes());
    return c;
}

inline Certificate make_self_signed(std::string subject, const crypto::KeyPair& kp,
                                    std::vector<std::pair<std::string, Bytes>> extensions = {}) {
    std::string issuer = subject;
    return make_certificate(std::move(subject), kp.pub, std::move(issuer), kp.priv,
                            std::move(extensions));
}

// Signing-key file helpers (fixtures store raw hex material).
struct StoredKey {
    Bytes32 priv{};
    Bytes32 pub{};

    static void save(const std::filesystem::path& path, const crypto::KeyPair& kp) {
        Json j{{"private_hex", to_hex(kp.priv)}, {"public_hex", to_hex(kp.pub)}};
        ReferenceValueStore::write_file(path, j.dump(2));
    }

    static crypto::KeyPair load(const std::filesystem::path& path) {
        Json j = Json::parse(ReferenceValueStore::read_file(path));
        crypto::KeyPair kp;
        kp.priv = from_hex_array<32>(j.at("private_hex").get<std::string>());
        kp.pub = from_hex_array<32>(j.at("public_hex").get<std::string>());
        return kp;
    }
};

}  // namespace attbus
