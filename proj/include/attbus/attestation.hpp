// Attestation evidence model, the generate/verify provider pair, and the
// software-emulated TEE device that stands in for real attestation hardware.
//
// Trust structure is a two-level signature chain: a root key endorses each
// device key ("device_cert"), and the device key signs per-session evidence.
// Evidence is canonical JSON: keys sorted, no insignificant whitespace,
// lowercase hex; the device signature covers the serialization of every field
// except "signature" itself.
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "attbus/bytes.hpp"
#include "attbus/crypto.hpp"

namespace attbus {

using Json = nlohmann::json;

enum class Role { broker, peer };

inline const char* to_string(Role r) {
    return r == Role::broker ? "broker" : "peer";
}

inline Role role_from_string(std::string_view s) {
    if (s == "broker") return Role::broker;
    if (s == "peer") return Role::peer;
    throw CodecError("unknown role: " + std::string(s));
}

enum class VerifyReason {
    ok,
    bad_signature,
    unknown_root,
    binding_mismatch,
    measurement_unknown,
    malformed,
    stale,
};

inline const char* to_string(VerifyReason r) {
    switch (r) {
        case VerifyReason::ok: return "ok";
        case VerifyReason::bad_signature: return "bad_signature";
        case VerifyReason::unknown_root: return "unknown_root";
        case VerifyReason::binding_mismatch: return "binding_mismatch";
        case VerifyReason::measurement_unknown: return "measurement_unknown";
        case VerifyReason::malformed: return "malformed";
        case VerifyReason::stale: return "stale";
    }
    return "?";
}

struct VerificationResult {
    bool accepted = false;
    VerifyReason reason = VerifyReason::malformed;

    static VerificationResult fail(VerifyReason r) { return {false, r}; }
    static VerificationResult success() { return {true, VerifyReason::ok}; }
};

struct Evidence {
    std::string tee_type;
    Bytes32 measurement{};
    std::map<std::string, std::string> platform_claims;
    Bytes32 binding{};
    int64_t issued_at = 0;
    Bytes32 device_public{};
    Signature device_cert{};  // root signature over device_public || tee_type
    Signature signature{};    // device signature over canonical_unsigned_json()

    Json to_json_unsigned() const {
        Json claims = Json::object();
        for (const auto& [k, v] : platform_claims) claims[k] = v;
        return Json{
            {"binding", to_hex(binding)},
            {"device_cert", to_hex(device_cert)},
            {"device_public", to_hex(device_public)},
            {"issued_at", issued_at},
            {"measurement", to_hex(measurement)},
            {"platform_claims", claims},
            {"tee_type", tee_type},
        };
    }

    std::string canonical_unsigned_json() const { return to_json_unsigned().dump(); }

    std::string canonical_json() const {
        Json j = to_json_unsigned();
        j["signature"] = to_hex(signature);
        return j.dump();
    }

    Bytes serialize() const { return to_bytes(canonical_json()); }

    // Throws CodecError on structural problems; verify_evidence maps that to
    // reason=malformed.
    static Evidence parse(BytesView raw) {
        Json j = Json::parse(to_string(raw), nullptr, /*allow_exceptions=*/false);
        if (j.is_discarded() || !j.is_object()) throw CodecError("evidence is not a JSON object");
        Evidence e;
        try {
            e.tee_type = j.at("tee_type").get<std::string>();
            e.measurement = from_hex_array<32>(j.at("measurement").get<std::string>());
            e.binding = from_hex_array<32>(j.at("binding").get<std::string>());
            e.issued_at = j.at("issued_at").get<int64_t>();
            e.device_public = from_hex_array<32>(j.at("device_public").get<std::string>());
            e.device_cert = from_hex_array<64>(j.at("device_cert").get<std::string>());
            e.signature = from_hex_array<64>(j.at("signature").get<std::string>());
            for (const auto& [k, v] : j.at("platform_claims").items())
                e.platform_claims[k] = v.get<std::string>();
        } catch (const Json::exception& ex) {
            throw CodecError(std::string("evidence field: ") + ex.what());
        }
        return e;
    }
};

// What a root key endorses about a device.
inline Bytes device_cert_message(const Bytes32& device_public, std::string_view tee_type) {
    Bytes msg(device_public.begin(), device_public.end());
    append(msg, to_bytes(tee_type));
    return msg;
}

struct RefEntry {
    Role role;
    Bytes32 measurement{};
    std::string note;
};

class ReferenceValueStore {
public:
    void add(Role role, const Bytes32& measurement, std::string note = {}) {
        entries_.push_back({role, measurement, std::move(note)});
    }
    void add_root(const Bytes32& root_public) { roots_.push_back(root_public); }

    bool has(Role role, const Bytes32& measurement) const {
        for (const auto& e : entries_)
            if (e.role == role && e.measurement == measurement) return true;
        return false;
    }

    bool trusts_root(const Bytes32& root_public) const {
        for (const auto& r : roots_)
            if (r == root_public) return true;
        return false;
    }

    // Root endorsement check: some trusted root signed (device_public || tee_type).
    bool device_chains_to_root(const Bytes32& device_public, std::string_view tee_type,
                               const Signature& device_cert) const {
        Bytes msg = device_cert_message(device_public, tee_type);
        for (const auto& root : roots_)
            if (crypto::verify_sig(root, msg, device_cert)) return true;
        return false;
    }

    const std::vector<RefEntry>& entries() const { return entries_; }
    const std::vector<Bytes32>& roots() const { return roots_; }

    void remove(Role role, const Bytes32& measurement) {
        std::erase_if(entries_,
                      [&](const RefEntry& e) { return e.role == role && e.measurement == measurement; });
    }

    static ReferenceValueStore load(const std::filesystem::path& ref_file,
                                    const std::filesystem::path& roots_file) {
        ReferenceValueStore store;
        store.load_entries(ref_file);
        store.load_roots(roots_file);
        return store;
    }

    void load_entries(const std::filesystem::path& ref_file) {
        Json j = Json::parse(read_file(ref_file));
        for (const auto& item : j)
            add(role_from_string(item.at("role").get<std::string>()),
                from_hex_array<32>(item.at("measurement_hex").get<std::string>()),
                item.value("note", ""));
    }

    void load_roots(const std::filesystem::path& roots_file) {
        Json j = Json::parse(read_file(roots_file));
        for (const auto& item : j) add_root(from_hex_array<32>(item.get<std::string>()));
    }

    void save(const std::filesystem::path& ref_file, const std::filesystem::path& roots_file) const {
        Json entries = Json::array();
        for (const auto& e : entries_)
            entries.push_back({{"role", to_string(e.role)},
                               {"measurement_hex", to_hex(e.measurement)},
                               {"note", e.note}});
        write_file(ref_file, entries.dump(2));
        Json roots = Json::array();
        for (const auto& r : roots_) roots.push_back(to_hex(r));
        write_file(roots_file, roots.dump(2));
    }

    static std::string read_file(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot read " + path.string());
        return std::string(std::istreambuf_iterator<char>(in), {});
    }

    static void write_file(const std::filesystem::path& path, std::string_view content) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
    }

private:
    std::vector<RefEntry> entries_;
    std::vector<Bytes32> roots_;
};

// Software stand-in for a TEE device: holds a root-endorsed signing key,
// measures a configured code-image file, and derives its sealing secret from
// the device key so the secret itself is never written anywhere.
class EmulatedTee {
public:
    static constexpr const char* kDefaultTeeType = "emulated-v1";

    static EmulatedTee create(const Bytes32& root_private, std::string tee_type,
                              std::filesystem::path code_image) {
        EmulatedTee tee;
        tee.tee_type_ = std::move(tee_type);
        tee.code_image_ = std::move(code_image);
        tee.device_ = crypto::sign_generate();
        tee.device_cert_ =
            crypto::sign(root_private, device_cert_message(tee.device_.pub, tee.tee_type_));
        tee.measure();
        tee.derive_sealing_secret();
        return tee;
    }

    // Device state persists as plain JSON: it models the hardware's fused key
    // material, which exists outside the threat model of the sealed store.
    void save(const std::filesystem::path& path) const {
        Json j{
            {"tee_type", tee_type_},
            {"device_private_hex", to_hex(device_.priv)},
            {"device_cert_hex", to_hex(device_cert_)},
            {"code_image", code_image_.string()},
        };
        ReferenceValueStore::write_file(path, j.dump(2));
    }

    static EmulatedTee load(const std::filesystem::path& path) {
        Json j = Json::parse(ReferenceValueStore::read_file(path));
        EmulatedTee tee;
        tee.tee_type_ = j.at("tee_type").get<std::string>();
        tee.device_.priv = from_hex_array<32>(j.at("device_private_hex").get<std::string>());
        tee.device_.pub = crypto::sign_public(tee.device_.priv);
        tee.device_cert_ = from_hex_array<64>(j.at("device_cert_hex").get<std::string>());
        std::filesystem::path img = j.at("code_image").get<std::string>();
        if (img.is_relative()) img = path.parent_path() / img;
        tee.code_image_ = img;
        tee.measure();  // measurement always reflects the current code image
        tee.derive_sealing_secret();
        return tee;
    }

    const std::string& tee_type() const { return tee_type_; }
    const Bytes32& measurement() const { return measurement_; }
    const Bytes32& device_public() const { return device_.pub; }
    const Bytes32& device_private() const { return device_.priv; }
    const Signature& device_cert() const { return device_cert_; }
    const Bytes32& sealing_secret() const { return sealing_secret_; }
    const std::filesystem::path& code_image() const { return code_image_; }

private:
    void measure() {
        std::string image = ReferenceValueStore::read_file(code_image_);
        measurement_ = crypto::sha256(to_bytes(image));
    }
    void derive_sealing_secret() {
        sealing_secret_ = crypto::hkdf_expand_label32(device_.priv, "sealing secret", {});
    }

    std::string tee_type_;
    std::filesystem::path code_image_;
    crypto::KeyPair device_;
    Signature device_cert_{};
    Bytes32 measurement_{};
    Bytes32 sealing_secret_{};
};

inline Evidence generate_evidence(const EmulatedTee& tee, const Bytes32& binding,
                                  const std::map<std::string, std::string>& extra_claims = {},
                                  int64_t now = 0) {
    Evidence e;
    e.tee_type = tee.tee_type();
    e.measurement = tee.measurement();
    e.binding = binding;
    e.issued_at = now;
    e.device_public = tee.device_public();
    e.device_cert = tee.device_cert();
    e.platform_claims = {{"tcb_version", "1"}, {"debug", "false"}};
    for (const auto& [k, v] : extra_claims) e.platform_claims[k] = v;
    e.signature = crypto::sign(tee.device_private(), to_bytes(e.canonical_unsigned_json()));
    return e;
}

// Checks run in a fixed order; the first failure names the reason:
//   1. device cert chains to a trusted root    -> unknown_root
//   2. evidence signature valid                -> bad_signature
//   3. binding equals the expected value       -> binding_mismatch
//   4. (role, measurement) is a reference value-> measurement_unknown
//   5. now - issued_at <= max_age_s            -> stale
inline VerificationResult verify_evidence(const Evidence& e, const Bytes32& expected_binding,
                                          Role role, const ReferenceValueStore& store, int64_t now,
                                          int64_t max_age_s) {
    if (!store.device_chains_to_root(e.device_public, e.tee_type, e.device_cert))
        return VerificationResult::fail(VerifyReason::unknown_root);
    if (!crypto::verify_sig(e.device_public, to_bytes(e.canonical_unsigned_json()), e.signature))
        return VerificationResult::fail(VerifyReason::bad_signature);
    if (e.binding != expected_binding)
        return VerificationResult::fail(VerifyReason::binding_mismatch);
    if (!store.has(role, e.measurement))
        return VerificationResult::fail(VerifyReason::measurement_unknown);
    if (now - e.issued_at > max_age_s)
        return VerificationResult::fail(VerifyReason::stale);
    return VerificationResult::success();
}

inline VerificationResult verify_evidence_bytes(BytesView raw, const Bytes32& expected_binding,
                                                Role role, const ReferenceValueStore& store,
                                                int64_t now, int64_t max_age_s) {
    Evidence e;
    try {
        e = Evidence::parse(raw);
    } catch (const CodecError&) {
        return VerificationResult::fail(VerifyReason::malformed);
    }
    return verify_evidence(e, expected_binding, role, store, now, max_age_s);
}

// Deterministic sealing key for at-rest data. Different context strings and
// different measurements both diverge the key.
inline crypto::AeadKeyIv seal_key(const EmulatedTee& tee, std::string_view context) {
    if (context.empty()) throw crypto::CryptoError("seal context must be non-empty");
    Bytes ctx = to_bytes(context);
    append(ctx, tee.measurement());
    return crypto::split_key_iv(crypto::hkdf_expand_label(tee.sealing_secret(), "seal", ctx, 44));
}

}  // namespace attbus
