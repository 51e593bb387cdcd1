// The three-flight attested handshake.
//
//   flight1  ClientHello { random, mode, dh_share?, ticket_id?, ech_blob }
//   flight2  ServerHello || sealed{ EncryptedExtensions(AttServer?),
//                                   Certificate, CertificateVerify,  (ecdh)
//                                   Finished }
//   flight3  sealed{ Certificate(att-client)+CertificateVerify | AttClientMsg | -,
//                    Finished }
//
// Key schedule is TLS-1.3-shaped over HKDF-SHA256. Evidence binds to
// exporter-style values both sides can compute: the server's at the
// ServerHello transcript point, the client's at the server-Finished point.
// The ech blob has a fixed size in every mode, so an observer cannot tell
// whether attestation was requested. In PSK mode it is sealed under a key
// derived from the ticket secret rather than the broker's ECH key, keeping
// resumption free of asymmetric operations.
#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>

#include "attbus/attestation.hpp"
#include "attbus/bytes.hpp"
#include "attbus/certs.hpp"
#include "attbus/crypto.hpp"
#include "attbus/wire.hpp"

namespace attbus::handshake {

using wire::Mode;
using wire::RecordType;

enum class AbortReason {
    codec_error,
    protocol_violation,
    attreq_unreadable,
    unknown_psk,
    key_agreement_failed,
    bad_cert_chain,
    name_mismatch,
    broker_attestation_failed,
    peer_attestation_failed,
    bad_finished,
    record_error,
    peer_alert,
};

enum class AttSubReason {
    none,
    missing,
    bad_signature,
    unknown_root,
    binding_mismatch,
    measurement_unknown,
    malformed,
    stale,
};

inline AttSubReason att_sub_reason(VerifyReason r) {
    switch (r) {
        case VerifyReason::ok: return AttSubReason::none;
        case VerifyReason::bad_signature: return AttSubReason::bad_signature;
        case VerifyReason::unknown_root: return AttSubReason::unknown_root;
        case VerifyReason::binding_mismatch: return AttSubReason::binding_mismatch;
        case VerifyReason::measurement_unknown: return AttSubReason::measurement_unknown;
        case VerifyReason::malformed: return AttSubReason::malformed;
        case VerifyReason::stale: return AttSubReason::stale;
    }
    return AttSubReason::none;
}

inline const char* to_string(AbortReason r) {
    switch (r) {
        case AbortReason::codec_error: return "codec_error";
        case AbortReason::protocol_violation: return "protocol_violation";
        case AbortReason::attreq_unreadable: return "attreq_unreadable";
        case AbortReason::unknown_psk: return "unknown_psk";
        case AbortReason::key_agreement_failed: return "key_agreement_failed";
        case AbortReason::bad_cert_chain: return "bad_cert_chain";
        case AbortReason::name_mismatch: return "name_mismatch";
        case AbortReason::broker_attestation_failed: return "broker_attestation_failed";
        case AbortReason::peer_attestation_failed: return "peer_attestation_failed";
        case AbortReason::bad_finished: return "bad_finished";
        case AbortReason::record_error: return "record_error";
        case AbortReason::peer_alert: return "peer_alert";
    }
    return "?";
}

inline const char* to_string(AttSubReason r) {
    switch (r) {
        case AttSubReason::none: return "none";
        case AttSubReason::missing: return "missing";
        case AttSubReason::bad_signature: return "bad_signature";
        case AttSubReason::unknown_root: return "unknown_root";
        case AttSubReason::binding_mismatch: return "binding_mismatch";
        case AttSubReason::measurement_unknown: return "measurement_unknown";
        case AttSubReason::malformed: return "malformed";
        case AttSubReason::stale: return "stale";
    }
    return "?";
}

struct HandshakeError : std::runtime_error {
    AbortReason reason;
    AttSubReason att = AttSubReason::none;

    explicit HandshakeError(AbortReason r, AttSubReason sub = AttSubReason::none)
        : std::runtime_error(describe(r, sub)), reason(r), att(sub) {}

    static std::string describe(AbortReason r, AttSubReason sub) {
        std::string s = to_string(r);
        if (sub != AttSubReason::none) {
            s += "{";
            s += to_string(sub);
            s += "}";
        }
        return s;
    }
};

struct PeerIdentity {
    std::string subject;
    Bytes32 cert_key{};
    std::optional<Bytes32> measurement;
    bool attested = false;
};

struct TicketHandle {
    std::array<uint8_t, wire::kTicketIdLen> id{};
    Bytes32 psk{};
};

struct SessionTicket {
    std::array<uint8_t, wire::kTicketIdLen> id{};
    Bytes32 psk{};
    int64_t issued_at = 0;
    PeerIdentity identity;
};

// Broker-side ticket store. Tickets are single use: take() removes, so a
// replayed ticket_id fails even under concurrent resumption attempts.
class TicketTable {
public:
    void put(const SessionTicket& t) {
        std::lock_guard lock(mu_);
        table_[t.id] = t;
    }

    std::optional<SessionTicket> take(const std::array<uint8_t, wire::kTicketIdLen>& id) {
        std::lock_guard lock(mu_);
        auto it = table_.find(id);
        if (it == table_.end()) return std::nullopt;
        SessionTicket t = it->second;
        table_.erase(it);
        return t;
    }

    size_t size() const {
        std::lock_guard lock(mu_);
        return table_.size();
    }

private:
    mutable std::mutex mu_;
    std::map<std::array<uint8_t, wire::kTicketIdLen>, SessionTicket> table_;
};

using AttesterFn = std::function<Evidence(const Bytes32& binding)>;
using NowFn = std::function<int64_t()>;

inline int64_t system_now() {
    return std::chrono::duration_cast<std::chrono::seconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

struct ClientConfig {
    std::string broker_name;
    Bytes32 ech_public{};
    bool att_required = false;
    Mode mode = Mode::ecdh;
    std::optional<TicketHandle> ticket;

    const ReferenceValueStore* ref_store = nullptr;  // verifies broker evidence
    Bytes32 ca_anchor{};
    int64_t max_evidence_age_s = 60;

    // Peer attestation; leave unset for an attestation-optional peer.
    const EmulatedTee* tee = nullptr;
    std::optional<Certificate> client_cert;
    std::optional<Bytes32> client_key;
    AttesterFn attester;  // test hook; defaults to generate_evidence(*tee, ...)
    NowFn now_fn;
};

struct ServerConfig {
    Certificate cert;
    Bytes32 cert_key{};
    Bytes32 ech_private{};

    const EmulatedTee* tee = nullptr;
    AttesterFn attester;
    const ReferenceValueStore* ref_store = nullptr;
    TicketTable* ticket_table = nullptr;

    bool require_peer_attestation = false;
    bool respond_to_attestation = true;  // policy knob: never emit AttServer when false
    int64_t max_evidence_age_s = 60;
    NowFn now_fn;
};

// Traffic secrets and binding values; both sides must end up byte-identical.
struct SessionSecrets {
    Bytes32 client_app{};
    Bytes32 server_app{};
    Bytes32 resumption{};
    Bytes32 binding_server{};
    Bytes32 binding_client{};
};

namespace detail {

inline const Bytes32 kZero32{};

inline Bytes32 empty_hash() {
    return crypto::transcript_hash({});
}

inline crypto::AeadKeyIv traffic_keys(const Bytes32& secret) {
    crypto::AeadKeyIv k;
    Bytes key = crypto::hkdf_expand_label(secret, "key", {}, 32);
    Bytes iv = crypto::hkdf_expand_label(secret, "iv", {}, 12);
    std::memcpy(k.key.data(), key.data(), 32);
    std::memcpy(k.iv.data(), iv.data(), 12);
    return k;
}

inline Bytes ech_info(const Bytes32& client_random) {
    Bytes info = to_bytes("attreq");
    append(info, client_random);
    return info;
}

inline crypto::AeadKeyIv psk_ech_key(const Bytes32& early_secret, const Bytes32& client_random) {
    return crypto::split_key_iv(
        crypto::hkdf_expand_label(early_secret, "ech psk", ech_info(client_random), 44));
}

inline Bytes cv_message(bool server, const Bytes32& th) {
    Bytes msg = to_bytes(server ? "mini-tls cv server" : "mini-tls cv client");
    append(msg, th);
    return msg;
}

inline Bytes32 finished_data(const Bytes32& hs_traffic_secret, const Bytes32& th) {
    return crypto::hkdf_expand_label32(hs_traffic_secret, "finished", th);
}

struct Schedule {
    Bytes32 early{};
    Bytes32 handshake{};
    Bytes32 master{};
    Bytes32 client_hs{};
    Bytes32 server_hs{};

    void start(const Bytes32& psk_or_zero, const Bytes32& dh_or_zero) {
        early = crypto::hkdf_extract(kZero32, psk_or_zero);
        Bytes32 derived = crypto::hkdf_expand_label32(early, "derived", empty_hash());
        handshake = crypto::hkdf_extract(derived, dh_or_zero);
        Bytes32 derived2 = crypto::hkdf_expand_label32(handshake, "derived", empty_hash());
        master = crypto::hkdf_extract(derived2, kZero32);
    }

    void at_server_hello(const Bytes32& th) {
        client_hs = crypto::hkdf_expand_label32(handshake, "c hs traffic", th);
        server_hs = crypto::hkdf_expand_label32(handshake, "s hs traffic", th);
    }

    Bytes32 binding_server(const Bytes32& th_server_hello) const {
        return crypto::hkdf_expand_label32(handshake, "att binding srv", th_server_hello);
    }
    Bytes32 binding_client(const Bytes32& th_server_finished) const {
        return crypto::hkdf_expand_label32(master, "att binding cli", th_server_finished);
    }
    Bytes32 client_app(const Bytes32& th_server_finished) const {
        return crypto::hkdf_expand_label32(master, "c ap traffic", th_server_finished);
    }
    Bytes32 server_app(const Bytes32& th_server_finished) const {
        return crypto::hkdf_expand_label32(master, "s ap traffic", th_server_finished);
    }
    Bytes32 resumption(const Bytes32& th_client_finished) const {
        return crypto::hkdf_expand_label32(master, "res master", th_client_finished);
    }
};

inline Evidence run_attester(const AttesterFn& attester, const EmulatedTee* tee,
                             const NowFn& now_fn, const Bytes32& binding) {
    if (attester) return attester(binding);
    return generate_evidence(*tee, binding, {}, now_fn ? now_fn() : system_now());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Post-handshake record layer. One instance per connection; callers serialize
// access per direction.

class RecordLayer {
public:
    RecordLayer() = default;
    RecordLayer(const crypto::AeadKeyIv& send_key, const crypto::AeadKeyIv& recv_key,
                uint64_t send_seq = 0, uint64_t recv_seq = 0)
        : send_key_(send_key), recv_key_(recv_key), send_seq_(send_seq), recv_seq_(recv_seq) {}

    Bytes send(RecordType type, BytesView payload) {
        if (payload.size() > wire::kMaxRecordBody)
            throw HandshakeError(AbortReason::record_error);
        if (send_seq_ == UINT64_MAX) throw HandshakeError(AbortReason::record_error);
        return wire::seal_record(send_key_, send_seq_++, type, payload);
    }

    void feed(BytesView data) { reader_.feed(data); }

    std::optional<wire::RawRecord> poll() {
        std::optional<wire::RawRecord> raw;
        try {
            raw = reader_.next();
        } catch (const CodecError&) {
            throw HandshakeError(AbortReason::record_error);
        }
        if (!raw) return std::nullopt;
        if (recv_seq_ == UINT64_MAX) throw HandshakeError(AbortReason::record_error);
        try {
            Bytes plain = wire::open_record(recv_key_, recv_seq_, raw->type, BytesView(raw->payload));
            ++recv_seq_;
            return wire::RawRecord{raw->type, std::move(plain)};
        } catch (const crypto::AeadAuthError&) {
            throw HandshakeError(AbortReason::record_error);
        }
    }

    uint64_t send_seq() const { return send_seq_; }
    uint64_t recv_seq() const { return recv_seq_; }

private:
    crypto::AeadKeyIv send_key_{};
    crypto::AeadKeyIv recv_key_{};
    wire::FrameReader reader_;
    uint64_t send_seq_ = 0;
    uint64_t recv_seq_ = 0;
};

inline Bytes alert_record(uint8_t code) {
    return wire::frame_record(RecordType::alert, Bytes{code});
}

// ---------------------------------------------------------------------------
// Client side.

struct ClientState {
    ClientConfig cfg;
    Bytes32 random{};
    crypto::KeyPair dh;  // ecdh mode only
    Bytes32 early{};     // psk mode only
    std::vector<Bytes> transcript;
};

struct ClientFlight {
    ClientState state;
    Bytes flight1;
};

inline ClientFlight client_begin(const ClientConfig& cfg) {
    if (cfg.mode == Mode::psk && !cfg.ticket)
        throw HandshakeError(AbortReason::protocol_violation);

    ClientState st;
    st.cfg = cfg;
    st.random = crypto::random_bytes32();

    wire::ClientHello ch;
    ch.random = st.random;
    ch.mode = cfg.mode;

    wire::AttReq req;
    req.att_required = cfg.att_required;
    Bytes attreq_plain = req.to_padded();

    if (cfg.mode == Mode::ecdh) {
        st.dh = crypto::dh_generate();
        ch.dh_public.assign(st.dh.pub.begin(), st.dh.pub.end());
        crypto::Sealed sealed =
            crypto::pk_seal(cfg.ech_public, detail::ech_info(st.random), attreq_plain);
        ch.ech_blob.assign(sealed.encap.begin(), sealed.encap.end());
        append(ch.ech_blob, sealed.ciphertext);
    } else {
        st.early = crypto::hkdf_extract(detail::kZero32, cfg.ticket->psk);
        ch.ticket_id.assign(cfg.ticket->id.begin(), cfg.ticket->id.end());
        // Random pad where the key encapsulation would sit, so both modes put
        // an identically sized blob on the wire.
        Bytes pad(32);
        crypto::random_bytes(pad);
        Bytes ct = crypto::aead_seal(detail::psk_ech_key(st.early, st.random), 0, {}, attreq_plain);
        ch.ech_blob = std::move(pad);
        append(ch.ech_blob, ct);
    }

    Bytes msg = ch.encode();
    st.transcript.push_back(msg);
    return {std::move(st), wire::frame_record(RecordType::handshake, BytesView(msg))};
}

struct ClientResult {
    SessionSecrets secrets;
    Bytes flight3;
    PeerIdentity broker;
    RecordLayer records;
};

inline ClientResult client_finish(ClientState& st, BytesView flight2) {
    const ClientConfig& cfg = st.cfg;
    wire::FrameReader frames;
    frames.feed(flight2);

    auto next_frame = [&]() -> wire::RawRecord {
        std::optional<wire::RawRecord> rec;
        try {
            rec = frames.next();
        } catch (const CodecError&) {
            throw HandshakeError(AbortReason::record_error);
        }
        if (!rec) throw HandshakeError(AbortReason::protocol_violation);
        if (rec->type == RecordType::alert) throw HandshakeError(AbortReason::peer_alert);
        if (rec->type != RecordType::handshake) throw HandshakeError(AbortReason::protocol_violation);
        return *rec;
    };

    // Plaintext ServerHello record.
    wire::RawRecord sh_rec = next_frame();
    wire::ServerHello sh;
    try {
        auto msgs = wire::parse_messages(BytesView(sh_rec.payload));
        if (msgs.size() != 1) throw CodecError("expected a single ServerHello");
        sh = wire::ServerHello::from_message(msgs[0]);
    } catch (const CodecError&) {
        throw HandshakeError(AbortReason::codec_error);
    }
    st.transcript.push_back(sh_rec.payload);

    detail::Schedule sched;
    if (cfg.mode == Mode::ecdh) {
        if (sh.dh_public.size() != 32) throw HandshakeError(AbortReason::codec_error);
        Bytes32 peer_pub;
        std::memcpy(peer_pub.data(), sh.dh_public.data(), 32);
        Bytes32 shared;
        try {
            shared = crypto::dh_shared(st.dh.priv, peer_pub);
        } catch (const crypto::CryptoError&) {
            throw HandshakeError(AbortReason::key_agreement_failed);
        }
        sched.start(detail::kZero32, shared);
    } else {
        sched.early = st.early;
        Bytes32 derived = crypto::hkdf_expand_label32(sched.early, "derived", detail::empty_hash());
        sched.handshake = crypto::hkdf_extract(derived, detail::kZero32);
        Bytes32 derived2 =
            crypto::hkdf_expand_label32(sched.handshake, "derived", detail::empty_hash());
        sched.master = crypto::hkdf_extract(derived2, detail::kZero32);
    }

    Bytes32 th_sh = crypto::transcript_hash(st.transcript);
    sched.at_server_hello(th_sh);
    Bytes32 binding_server = sched.binding_server(th_sh);

    // Sealed portion of flight2.
    wire::RawRecord sealed = next_frame();
    Bytes plain;
    try {
        plain = wire::open_record(detail::traffic_keys(sched.server_hs), 0, sealed.type,
                                  BytesView(sealed.payload));
    } catch (const crypto::AeadAuthError&) {
        throw HandshakeError(AbortReason::bad_finished);
    }

    std::vector<wire::RawHsMessage> msgs;
    try {
        msgs = wire::parse_messages_raw(BytesView(plain));
    } catch (const CodecError&) {
        throw HandshakeError(AbortReason::codec_error);
    }

    Bytes evidence_bytes;
    std::optional<Certificate> broker_cert;
    bool finished_seen = false;
    size_t idx = 0;

    for (const auto& entry : msgs) {
        const wire::HsMessage& m = entry.msg;
        if (finished_seen) throw HandshakeError(AbortReason::protocol_violation);
        switch (m.type) {
            case wire::MsgType::encrypted_extensions: {
                if (idx != 0) throw HandshakeError(AbortReason::protocol_violation);
                evidence_bytes = wire::field_at(m, 0);
                break;
            }
            case wire::MsgType::certificate: {
                if (cfg.mode != Mode::ecdh) throw HandshakeError(AbortReason::protocol_violation);
                try {
                    broker_cert = Certificate::decode(BytesView(wire::field_at(m, 0)));
                } catch (const CodecError&) {
                    throw HandshakeError(AbortReason::codec_error);
                }
                if (!broker_cert->verify_with(cfg.ca_anchor))
                    throw HandshakeError(AbortReason::bad_cert_chain);
                if (broker_cert->subject != cfg.broker_name)
                    throw HandshakeError(AbortReason::name_mismatch);
                break;
            }
            case wire::MsgType::certificate_verify: {
                if (!broker_cert) throw HandshakeError(AbortReason::protocol_violation);
                Bytes32 th = crypto::transcript_hash(st.transcript);
                if (!crypto::verify_sig(broker_cert->public_key, detail::cv_message(true, th),
                                        BytesView(wire::field_at(m, 0))))
                    throw HandshakeError(AbortReason::bad_cert_chain);
                break;
            }
            case wire::MsgType::finished: {
                Bytes32 th = crypto::transcript_hash(st.transcript);
                Bytes32 expect = detail::finished_data(sched.server_hs, th);
                if (!equal_bytes(BytesView(wire::field_at(m, 0)), BytesView(expect)))
                    throw HandshakeError(AbortReason::bad_finished);
                finished_seen = true;
                break;
            }
            default:
                throw HandshakeError(AbortReason::protocol_violation);
        }
        st.transcript.push_back(entry.raw);
        ++idx;
    }
    if (!finished_seen) throw HandshakeError(AbortReason::protocol_violation);
    if (cfg.mode == Mode::ecdh && !broker_cert)
        throw HandshakeError(AbortReason::protocol_violation);

    // Broker attestation policy.
    PeerIdentity broker;
    broker.subject = broker_cert ? broker_cert->subject : cfg.broker_name;
    if (broker_cert) broker.cert_key = broker_cert->public_key;
    if (cfg.att_required) {
        if (evidence_bytes.empty())
            throw HandshakeError(AbortReason::broker_attestation_failed, AttSubReason::missing);
        if (!cfg.ref_store)
            throw HandshakeError(AbortReason::broker_attestation_failed, AttSubReason::missing);
        int64_t now = cfg.now_fn ? cfg.now_fn() : system_now();
        VerificationResult vr =
            verify_evidence_bytes(BytesView(evidence_bytes), binding_server, Role::broker,
                                  *cfg.ref_store, now, cfg.max_evidence_age_s);
        if (!vr.accepted)
            throw HandshakeError(AbortReason::broker_attestation_failed, att_sub_reason(vr.reason));
        Evidence ev = Evidence::parse(BytesView(evidence_bytes));
        broker.measurement = ev.measurement;
        broker.attested = true;
    }

    Bytes32 th_sfin = crypto::transcript_hash(st.transcript);
    SessionSecrets secrets;
    secrets.binding_server = binding_server;
    secrets.binding_client = sched.binding_client(th_sfin);
    secrets.client_app = sched.client_app(th_sfin);
    secrets.server_app = sched.server_app(th_sfin);

    // Build flight3.
    std::vector<Bytes> out_msgs;
    bool attest_peer = cfg.tee != nullptr || (cfg.attester != nullptr);
    if (attest_peer && cfg.mode == Mode::ecdh && (!cfg.client_cert || !cfg.client_key))
        attest_peer = false;
    if (attest_peer) {
        Evidence ev =
            detail::run_attester(cfg.attester, cfg.tee, cfg.now_fn, secrets.binding_client);
        Bytes ev_json = ev.serialize();
        if (cfg.mode == Mode::ecdh) {
            // Fresh per-session self-signed certificate carrying the evidence.
            Certificate base = *cfg.client_cert;
            auto exts = base.extensions;
            std::erase_if(exts, [](const auto& e) {
                return e.first == Certificate::kAttClientExtension;
            });
            exts.emplace_back(Certificate::kAttClientExtension, ev_json);
            Certificate session_cert = make_certificate(base.subject, base.public_key, base.issuer,
                                                        *cfg.client_key, std::move(exts));
            out_msgs.push_back(
                wire::encode_message(wire::MsgType::certificate, {session_cert.encode()}));
            Bytes32 th = crypto::transcript_hash_with(st.transcript, out_msgs);
            Bytes sig_msg = detail::cv_message(false, th);
            Signature sig = crypto::sign(*cfg.client_key, sig_msg);
            out_msgs.push_back(wire::encode_message(wire::MsgType::certificate_verify,
                                                    {Bytes(sig.begin(), sig.end())}));
        } else {
            out_msgs.push_back(wire::encode_message(wire::MsgType::att_client, {ev_json}));
        }
    }
    {
        Bytes32 th = crypto::transcript_hash_with(st.transcript, out_msgs);
        Bytes32 fin = detail::finished_data(sched.client_hs, th);
        out_msgs.push_back(
            wire::encode_message(wire::MsgType::finished, {Bytes(fin.begin(), fin.end())}));
    }

    Bytes flight3_plain;
    for (const Bytes& m : out_msgs) {
        st.transcript.push_back(m);
        append(flight3_plain, m);
    }
    secrets.resumption = sched.resumption(crypto::transcript_hash(st.transcript));

    ClientResult res;
    res.secrets = secrets;
    res.flight3 = wire::seal_record(detail::traffic_keys(sched.client_hs), 0,
                                    RecordType::handshake, BytesView(flight3_plain));
    res.broker = std::move(broker);
    res.records = RecordLayer(detail::traffic_keys(secrets.client_app),
                              detail::traffic_keys(secrets.server_app));
    return res;
}

// ---------------------------------------------------------------------------
// Server side.

struct ServerState {
    ServerConfig cfg;
    Mode mode = Mode::ecdh;
    detail::Schedule sched;
    std::vector<Bytes> transcript;
    Bytes32 binding_client{};
    SessionSecrets secrets;
    std::optional<PeerIdentity> ticket_identity;  // psk mode
    bool client_requested_att = false;
};

struct ServerFlight {
    ServerState state;
    Bytes flight2;
};

inline ServerFlight server_respond(const ServerConfig& cfg, BytesView flight1) {
    ServerState st;
    st.cfg = cfg;

    wire::FrameReader frames;
    frames.feed(flight1);
    wire::ClientHello ch;
    Bytes ch_raw;
    try {
        auto rec = frames.next();
        if (!rec || rec->type != RecordType::handshake) throw CodecError("expected handshake record");
        auto msgs = wire::parse_messages(BytesView(rec->payload));
        if (msgs.size() != 1) throw CodecError("expected a single ClientHello");
        ch = wire::ClientHello::from_message(msgs[0]);
        ch_raw = rec->payload;
    } catch (const CodecError&) {
        throw HandshakeError(AbortReason::codec_error);
    }
    st.transcript.push_back(ch_raw);
    st.mode = ch.mode;

    // PSK lookup burns the ticket regardless of the handshake outcome.
    Bytes32 psk{};
    if (ch.mode == Mode::psk) {
        if (!cfg.ticket_table) throw HandshakeError(AbortReason::unknown_psk);
        std::array<uint8_t, wire::kTicketIdLen> tid{};
        std::memcpy(tid.data(), ch.ticket_id.data(), wire::kTicketIdLen);
        auto ticket = cfg.ticket_table->take(tid);
        if (!ticket) throw HandshakeError(AbortReason::unknown_psk);
        psk = ticket->psk;
        st.ticket_identity = ticket->identity;
    }

    // Open the encrypted attestation request.
    Bytes attreq_plain;
    Bytes32 early_for_psk{};
    try {
        if (ch.mode == Mode::ecdh) {
            Bytes32 encap;
            std::memcpy(encap.data(), ch.ech_blob.data(), 32);
            BytesView ct(ch.ech_blob.data() + 32, ch.ech_blob.size() - 32);
            attreq_plain = crypto::pk_open(cfg.ech_private, encap, detail::ech_info(ch.random), ct);
        } else {
            early_for_psk = crypto::hkdf_extract(detail::kZero32, psk);
            BytesView ct(ch.ech_blob.data() + 32, ch.ech_blob.size() - 32);
            attreq_plain = crypto::aead_open(detail::psk_ech_key(early_for_psk, ch.random), 0, {}, ct);
        }
    } catch (const crypto::CryptoError&) {
        throw HandshakeError(AbortReason::attreq_unreadable);
    }
    wire::AttReq attreq;
    try {
        attreq = wire::AttReq::from_padded(BytesView(attreq_plain));
    } catch (const CodecError&) {
        throw HandshakeError(AbortReason::attreq_unreadable);
    }
    st.client_requested_att = attreq.att_required;

    // ServerHello + key schedule.
    wire::ServerHello sh;
    sh.random = crypto::random_bytes32();
    if (ch.mode == Mode::ecdh) {
        crypto::KeyPair dh = crypto::dh_generate();
        sh.dh_public.assign(dh.pub.begin(), dh.pub.end());
        Bytes32 peer_pub;
        std::memcpy(peer_pub.data(), ch.dh_public.data(), 32);
        Bytes32 shared;
        try {
            shared = crypto::dh_shared(dh.priv, peer_pub);
        } catch (const crypto::CryptoError&) {
            throw HandshakeError(AbortReason::key_agreement_failed);
        }
        st.sched.start(detail::kZero32, shared);
    } else {
        st.sched.early = early_for_psk;
        Bytes32 derived =
            crypto::hkdf_expand_label32(st.sched.early, "derived", detail::empty_hash());
        st.sched.handshake = crypto::hkdf_extract(derived, detail::kZero32);
        Bytes32 derived2 =
            crypto::hkdf_expand_label32(st.sched.handshake, "derived", detail::empty_hash());
        st.sched.master = crypto::hkdf_extract(derived2, detail::kZero32);
    }

    Bytes sh_bytes = sh.encode();
    st.transcript.push_back(sh_bytes);
    Bytes32 th_sh = crypto::transcript_hash(st.transcript);
    st.sched.at_server_hello(th_sh);
    st.secrets.binding_server = st.sched.binding_server(th_sh);

    // Encrypted server messages.
    std::vector<Bytes> out_msgs;
    {
        Bytes evidence_json;
        if (attreq.att_required && cfg.respond_to_attestation &&
            (cfg.tee != nullptr || cfg.attester != nullptr)) {
            Evidence ev = detail::run_attester(cfg.attester, cfg.tee, cfg.now_fn,
                                               st.secrets.binding_server);
            evidence_json = ev.serialize();
        }
        out_msgs.push_back(
            wire::encode_message(wire::MsgType::encrypted_extensions, {evidence_json}));
    }
    if (ch.mode == Mode::ecdh) {
        out_msgs.push_back(wire::encode_message(wire::MsgType::certificate, {cfg.cert.encode()}));
        Bytes32 th = crypto::transcript_hash_with(st.transcript, out_msgs);
        Signature sig = crypto::sign(cfg.cert_key, detail::cv_message(true, th));
        out_msgs.push_back(wire::encode_message(wire::MsgType::certificate_verify,
                                                {Bytes(sig.begin(), sig.end())}));
    }
    {
        Bytes32 th = crypto::transcript_hash_with(st.transcript, out_msgs);
        Bytes32 fin = detail::finished_data(st.sched.server_hs, th);
        out_msgs.push_back(
            wire::encode_message(wire::MsgType::finished, {Bytes(fin.begin(), fin.end())}));
    }

    Bytes sealed_plain;
    for (const Bytes& m : out_msgs) {
        st.transcript.push_back(m);
        append(sealed_plain, m);
    }

    Bytes32 th_sfin = crypto::transcript_hash(st.transcript);
    st.binding_client = st.sched.binding_client(th_sfin);
    st.secrets.binding_client = st.binding_client;
    st.secrets.client_app = st.sched.client_app(th_sfin);
    st.secrets.server_app = st.sched.server_app(th_sfin);

    Bytes flight2 = wire::frame_record(RecordType::handshake, BytesView(sh_bytes));
    append(flight2, wire::seal_record(detail::traffic_keys(st.sched.server_hs), 0,
                                      RecordType::handshake, BytesView(sealed_plain)));
    return {std::move(st), std::move(flight2)};
}

struct ServerResult {
    SessionSecrets secrets;
    PeerIdentity peer;
    SessionTicket ticket;
    Bytes ticket_record;  // first encrypted control record, carries the ticket id
    RecordLayer records;
};

inline ServerResult server_complete(ServerState& st, BytesView flight3) {
    const ServerConfig& cfg = st.cfg;
    wire::FrameReader frames;
    frames.feed(flight3);
    std::optional<wire::RawRecord> rec;
    try {
        rec = frames.next();
    } catch (const CodecError&) {
        throw HandshakeError(AbortReason::record_error);
    }
    if (!rec) throw HandshakeError(AbortReason::protocol_violation);
    if (rec->type == RecordType::alert) throw HandshakeError(AbortReason::peer_alert);
    if (rec->type != RecordType::handshake) throw HandshakeError(AbortReason::protocol_violation);

    Bytes plain;
    try {
        plain = wire::open_record(detail::traffic_keys(st.sched.client_hs), 0, rec->type,
                                  BytesView(rec->payload));
    } catch (const crypto::AeadAuthError&) {
        throw HandshakeError(AbortReason::bad_finished);
    }

    std::vector<wire::RawHsMessage> msgs;
    try {
        msgs = wire::parse_messages_raw(BytesView(plain));
    } catch (const CodecError&) {
        throw HandshakeError(AbortReason::codec_error);
    }

    std::optional<Certificate> peer_cert;
    Bytes evidence_bytes;
    bool finished_seen = false;

    for (const auto& entry : msgs) {
        const wire::HsMessage& m = entry.msg;
        if (finished_seen) throw HandshakeError(AbortReason::protocol_violation);
        switch (m.type) {
            case wire::MsgType::certificate: {
                if (st.mode != Mode::ecdh) throw HandshakeError(AbortReason::protocol_violation);
                try {
                    peer_cert = Certificate::decode(BytesView(wire::field_at(m, 0)));
                } catch (const CodecError&) {
                    throw HandshakeError(AbortReason::codec_error);
                }
                if (!peer_cert->self_signed_valid())
                    throw HandshakeError(AbortReason::bad_cert_chain);
                if (auto ext = peer_cert->find_extension(Certificate::kAttClientExtension))
                    evidence_bytes = Bytes(ext->begin(), ext->end());
                break;
            }
            case wire::MsgType::certificate_verify: {
                if (!peer_cert) throw HandshakeError(AbortReason::protocol_violation);
                Bytes32 th = crypto::transcript_hash(st.transcript);
                if (!crypto::verify_sig(peer_cert->public_key, detail::cv_message(false, th),
                                        BytesView(wire::field_at(m, 0))))
                    throw HandshakeError(AbortReason::bad_cert_chain);
                break;
            }
            case wire::MsgType::att_client: {
                if (st.mode != Mode::psk) throw HandshakeError(AbortReason::protocol_violation);
                evidence_bytes = wire::field_at(m, 0);
                break;
            }
            case wire::MsgType::finished: {
                Bytes32 th = crypto::transcript_hash(st.transcript);
                Bytes32 expect = detail::finished_data(st.sched.client_hs, th);
                if (!equal_bytes(BytesView(wire::field_at(m, 0)), BytesView(expect)))
                    throw HandshakeError(AbortReason::bad_finished);
                finished_seen = true;
                break;
            }
            default:
                throw HandshakeError(AbortReason::protocol_violation);
        }
        st.transcript.push_back(entry.raw);
    }
    if (!finished_seen) throw HandshakeError(AbortReason::protocol_violation);

    // Peer attestation policy.
    PeerIdentity peer;
    if (st.mode == Mode::psk && st.ticket_identity) {
        peer = *st.ticket_identity;
        peer.attested = false;  // fresh evidence below re-establishes it
        peer.measurement.reset();
    }
    if (peer_cert) {
        peer.subject = peer_cert->subject;
        peer.cert_key = peer_cert->public_key;
    }
    if (!evidence_bytes.empty()) {
        if (!cfg.ref_store)
            throw HandshakeError(AbortReason::peer_attestation_failed, AttSubReason::missing);
        int64_t now = cfg.now_fn ? cfg.now_fn() : system_now();
        VerificationResult vr =
            verify_evidence_bytes(BytesView(evidence_bytes), st.binding_client, Role::peer,
                                  *cfg.ref_store, now, cfg.max_evidence_age_s);
        if (!vr.accepted)
            throw HandshakeError(AbortReason::peer_attestation_failed, att_sub_reason(vr.reason));
        Evidence ev = Evidence::parse(BytesView(evidence_bytes));
        peer.measurement = ev.measurement;
        peer.attested = true;
    } else if (cfg.require_peer_attestation) {
        throw HandshakeError(AbortReason::peer_attestation_failed, AttSubReason::missing);
    }

    st.secrets.resumption = st.sched.resumption(crypto::transcript_hash(st.transcript));

    ServerResult res;
    res.secrets = st.secrets;
    res.peer = peer;

    // Fresh single-use ticket, delivered in the first control record under the
    // application traffic keys.
    SessionTicket ticket;
    crypto::random_bytes(ticket.id);
    ticket.psk = crypto::hkdf_expand_label32(st.secrets.resumption, "ticket", ticket.id);
    ticket.issued_at = cfg.now_fn ? cfg.now_fn() : system_now();
    ticket.identity = peer;
    if (cfg.ticket_table) cfg.ticket_table->put(ticket);
    res.ticket = ticket;

    res.records = RecordLayer(detail::traffic_keys(st.secrets.server_app),
                              detail::traffic_keys(st.secrets.client_app));
    Bytes nst = wire::encode_message(wire::MsgType::session_ticket,
                                     {Bytes(ticket.id.begin(), ticket.id.end())});
    res.ticket_record = res.records.send(RecordType::handshake, BytesView(nst));
    return res;
}

// Client-side helper: derive the resumption psk for a ticket id announced by
// the broker.
inline TicketHandle derive_ticket(const SessionSecrets& secrets,
                                  const std::array<uint8_t, wire::kTicketIdLen>& id) {
    TicketHandle h;
    h.id = id;
    h.psk = crypto::hkdf_expand_label32(secrets.resumption, "ticket", id);
    return h;
}

}  // namespace attbus::handshake
