// Handshake message and record codecs. Byte layout is documented in
// docs/wire.md and pinned by the golden transcript fixture.
//
// Every handshake message is  msg_type(u8) || body_len(u24 BE) || body,
// where the body is a sequence of u16-BE length-prefixed fields.
// Records are  type(u8) || len(u32 BE) || payload; the payload is AEAD
// ciphertext once traffic keys exist, plaintext for the two pre-key messages.
#pragma once

#include <deque>
#include <optional>

#include "attbus/bytes.hpp"
#include "attbus/crypto.hpp"

namespace attbus::wire {

enum class MsgType : uint8_t {
    client_hello = 0x01,
    server_hello = 0x02,
    session_ticket = 0x05,
    att_client = 0x06,
    encrypted_extensions = 0x08,
    certificate = 0x0b,
    certificate_verify = 0x0f,
    finished = 0x14,
};

enum class RecordType : uint8_t {
    alert = 0x15,
    handshake = 0x16,
    appdata = 0x17,
};

enum class Mode : uint8_t {
    ecdh = 0x01,
    psk = 0x02,
};

constexpr size_t kMaxRecordBody = 64 * 1024;           // plaintext payload cap
constexpr size_t kMaxRecordWire = kMaxRecordBody + 16; // + AEAD tag
constexpr size_t kAttReqPlainLen = 64;                 // padded AttReq plaintext
constexpr size_t kEchBlobLen = 32 + kAttReqPlainLen + 16;
constexpr size_t kTicketIdLen = 16;

struct HsMessage {
    MsgType type;
    std::vector<Bytes> fields;
};

inline Bytes encode_message(MsgType type, const std::vector<Bytes>& fields) {
    ByteWriter body;
    for (const Bytes& f : fields) body.field(BytesView(f));
    ByteWriter w;
    w.u8(static_cast<uint8_t>(type));
    if (body.bytes().size() > 0xffffff) throw CodecError("handshake message too large");
    w.u24(static_cast<uint32_t>(body.bytes().size()));
    w.raw(BytesView(body.bytes()));
    return w.take();
}

// Parses a buffer holding one or more complete handshake messages.
inline std::vector<HsMessage> parse_messages(BytesView raw) {
    std::vector<HsMessage> out;
    ByteReader r(raw);
    while (!r.done()) {
        HsMessage m;
        m.type = static_cast<MsgType>(r.u8());
        uint32_t len = r.u24();
        ByteReader body(r.take(len));
        while (!body.done()) m.fields.push_back(body.field());
        out.push_back(std::move(m));
    }
    return out;
}

// Same as parse_messages but keeps each message's transmitted bytes, which is
// what transcript hashing consumes.
struct RawHsMessage {
    HsMessage msg;
    Bytes raw;
};

inline std::vector<RawHsMessage> parse_messages_raw(BytesView raw) {
    std::vector<RawHsMessage> out;
    ByteReader r(raw);
    size_t start = 0;
    while (!r.done()) {
        RawHsMessage entry;
        entry.msg.type = static_cast<MsgType>(r.u8());
        uint32_t len = r.u24();
        ByteReader body(r.take(len));
        while (!body.done()) entry.msg.fields.push_back(body.field());
        size_t end = start + 4 + len;
        entry.raw = Bytes(raw.begin() + static_cast<long>(start), raw.begin() + static_cast<long>(end));
        start = end;
        out.push_back(std::move(entry));
    }
    return out;
}

inline const Bytes& field_at(const HsMessage& m, size_t i) {
    if (i >= m.fields.size()) throw CodecError("missing handshake field");
    return m.fields[i];
}

inline Bytes32 field_bytes32(const HsMessage& m, size_t i) {
    const Bytes& f = field_at(m, i);
    if (f.size() != 32) throw CodecError("field must be 32 bytes");
    Bytes32 out;
    std::memcpy(out.data(), f.data(), 32);
    return out;
}

// ---------------------------------------------------------------------------
// Flight-1 structures.

struct AttReq {
    bool att_required = false;
    std::string claims_schema = "v1";

    // Fixed-size plaintext so the sealed blob's length never reveals whether
    // attestation was requested:  u16 json_len || json || zero padding.
    Bytes to_padded() const {
        std::string json = std::string("{\"att_required\":") +
                           (att_required ? "true" : "false") + ",\"claims_schema\":\"" +
                           claims_schema + "\"}";
        if (json.size() + 2 > kAttReqPlainLen) throw CodecError("AttReq exceeds padding budget");
        Bytes out(kAttReqPlainLen, 0);
        out[0] = static_cast<uint8_t>(json.size() >> 8);
        out[1] = static_cast<uint8_t>(json.size());
        std::memcpy(out.data() + 2, json.data(), json.size());
        return out;
    }

    static AttReq from_padded(BytesView raw) {
        if (raw.size() != kAttReqPlainLen) throw CodecError("bad AttReq padding length");
        size_t n = static_cast<size_t>(raw[0]) << 8 | raw[1];
        if (n + 2 > raw.size()) throw CodecError("bad AttReq length prefix");
        std::string json = to_string(raw.subspan(2, n));
        AttReq req;
        // Two fixed shapes; anything else is a protocol violation.
        if (json.find("\"att_required\":true") != std::string::npos)
            req.att_required = true;
        else if (json.find("\"att_required\":false") != std::string::npos)
            req.att_required = false;
        else
            throw CodecError("unrecognized AttReq payload");
        return req;
    }
};

struct ClientHello {
    Bytes32 random{};
    Mode mode = Mode::ecdh;
    Bytes dh_public;   // 32 bytes in ecdh mode, empty in psk mode
    Bytes ticket_id;   // empty in ecdh mode, 16 bytes in psk mode
    Bytes ech_blob;    // encap(32) || sealed AttReq, fixed kEchBlobLen

    Bytes encode() const {
        return encode_message(MsgType::client_hello,
                              {Bytes(random.begin(), random.end()),
                               Bytes{static_cast<uint8_t>(mode)}, dh_public, ticket_id, ech_blob});
    }

    static ClientHello from_message(const HsMessage& m) {
        if (m.type != MsgType::client_hello || m.fields.size() != 5)
            throw CodecError("malformed ClientHello");
        ClientHello ch;
        ch.random = field_bytes32(m, 0);
        const Bytes& mode = field_at(m, 1);
        if (mode.size() != 1) throw CodecError("bad mode field");
        if (mode[0] != static_cast<uint8_t>(Mode::ecdh) && mode[0] != static_cast<uint8_t>(Mode::psk))
            throw CodecError("unknown handshake mode");
        ch.mode = static_cast<Mode>(mode[0]);
        ch.dh_public = field_at(m, 2);
        ch.ticket_id = field_at(m, 3);
        ch.ech_blob = field_at(m, 4);
        if (ch.mode == Mode::ecdh && ch.dh_public.size() != 32)
            throw CodecError("ecdh ClientHello requires a 32-byte share");
        if (ch.mode == Mode::psk && ch.ticket_id.size() != kTicketIdLen)
            throw CodecError("psk ClientHello requires a ticket id");
        if (ch.ech_blob.size() != kEchBlobLen) throw CodecError("bad ech blob length");
        return ch;
    }
};

struct ServerHello {
    Bytes32 random{};
    Bytes dh_public;  // empty in psk mode

    Bytes encode() const {
        return encode_message(MsgType::server_hello,
                              {Bytes(random.begin(), random.end()), dh_public});
    }

    static ServerHello from_message(const HsMessage& m) {
        if (m.type != MsgType::server_hello || m.fields.size() != 2)
            throw CodecError("malformed ServerHello");
        ServerHello sh;
        sh.random = field_bytes32(m, 0);
        sh.dh_public = field_at(m, 1);
        return sh;
    }
};

// ---------------------------------------------------------------------------
// Record framing.

struct RawRecord {
    RecordType type;
    Bytes payload;
};

inline Bytes frame_record(RecordType type, BytesView payload) {
    if (payload.size() > kMaxRecordWire) throw CodecError("record payload too large");
    ByteWriter w;
    w.u8(static_cast<uint8_t>(type));
    w.u32(static_cast<uint32_t>(payload.size()));
    w.raw(payload);
    return w.take();
}

// Incremental frame reader; rejects oversized length fields before buffering.
class FrameReader {
public:
    void feed(BytesView data) { append(buf_, data); }

    std::optional<RawRecord> next() {
        if (buf_.size() < 5) return std::nullopt;
        auto type = static_cast<RecordType>(buf_[0]);
        if (type != RecordType::alert && type != RecordType::handshake &&
            type != RecordType::appdata)
            throw CodecError("unknown record type");
        uint32_t len = static_cast<uint32_t>(buf_[1]) << 24 | static_cast<uint32_t>(buf_[2]) << 16 |
                       static_cast<uint32_t>(buf_[3]) << 8 | buf_[4];
        if (len > kMaxRecordWire) throw CodecError("record length exceeds limit");
        if (buf_.size() < 5 + static_cast<size_t>(len)) return std::nullopt;
        RawRecord rec{type, Bytes(buf_.begin() + 5, buf_.begin() + 5 + len)};
        buf_.erase(buf_.begin(), buf_.begin() + 5 + len);
        return rec;
    }

private:
    Bytes buf_;
};

inline Bytes record_aad(RecordType type, size_t ciphertext_len) {
    ByteWriter w;
    w.u8(static_cast<uint8_t>(type));
    w.u32(static_cast<uint32_t>(ciphertext_len));
    return w.take();
}

inline Bytes seal_record(const crypto::AeadKeyIv& key, uint64_t seq, RecordType type,
                         BytesView payload) {
    if (payload.size() > kMaxRecordBody) throw CodecError("record payload too large");
    Bytes aad = record_aad(type, payload.size() + 16);
    Bytes ct = crypto::aead_seal(key, seq, BytesView(aad), payload);
    return frame_record(type, BytesView(ct));
}

inline Bytes open_record(const crypto::AeadKeyIv& key, uint64_t seq, RecordType type,
                         BytesView ciphertext) {
    Bytes aad = record_aad(type, ciphertext.size());
    return crypto::aead_open(key, seq, BytesView(aad), ciphertext);
}

}  // namespace attbus::wire
