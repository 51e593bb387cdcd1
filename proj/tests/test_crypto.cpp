#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "attbus/crypto.hpp"
#include "support/ref_crypto.hpp"
#include "support/test_util.hpp"

using namespace attbus;
namespace tc = attbus::crypto;

static Bytes32 arr32(const std::string& hex) {
    return from_hex_array<32>(hex);
}

TEST_CASE("hkdf_expand_label matches frozen vectors") {
    auto vectors = testutil::load_vectors(testutil::vectors_dir() / "hkdf_expand_label.txt");
    REQUIRE(!vectors.empty());
    for (const auto& v : vectors) {
        Bytes secret = testutil::hex_field(v.inputs.at(0));
        Bytes label = testutil::hex_field(v.inputs.at(1));
        Bytes context = testutil::hex_field(v.inputs.at(2));
        size_t len = std::stoul(v.inputs.at(3));
        Bytes out = tc::hkdf_expand_label(BytesView(secret), to_string(BytesView(label)),
                                          BytesView(context), len);
        CHECK(to_hex(BytesView(out)) == v.outputs.at(0));
    }
}

TEST_CASE("hkdf_expand_label agrees with the independent oracle") {
    std::mt19937_64 rng(7);
    std::vector<std::string> labels = {"derived",     "c hs traffic",    "s hs traffic",
                                       "c ap traffic", "s ap traffic",   "att binding srv",
                                       "att binding cli", "finished",    "res master",
                                       "ticket",      "key",             "iv",
                                       "ech",         "ech psk",         "seal",
                                       "sealing secret"};
    for (int i = 0; i < 50; ++i) {
        Bytes secret = testutil::random_payload(rng, 32);
        Bytes context = testutil::random_payload(rng, rng() % 64);
        const std::string& label = labels[rng() % labels.size()];
        size_t len = 1 + rng() % 64;
        Bytes got = tc::hkdf_expand_label(BytesView(secret), label, BytesView(context), len);
        refcrypto::Bytes want = refcrypto::hkdf_expand_label(secret, label, context, len);
        REQUIRE(got == Bytes(want.begin(), want.end()));
    }
}

TEST_CASE("hkdf_expand_label is pure and label-injective") {
    std::mt19937_64 rng(11);
    std::vector<std::string> labels = {"derived",     "c hs traffic",    "s hs traffic",
                                       "c ap traffic", "s ap traffic",   "att binding srv",
                                       "att binding cli", "finished",    "res master",
                                       "ticket"};
    for (int trial = 0; trial < 20; ++trial) {
        Bytes secret = testutil::random_payload(rng, 32);
        std::set<std::string> seen;
        for (const auto& label : labels) {
            Bytes a = tc::hkdf_expand_label(BytesView(secret), label, {}, 32);
            Bytes b = tc::hkdf_expand_label(BytesView(secret), label, {}, 32);
            REQUIRE(a == b);
            REQUIRE(seen.insert(to_hex(BytesView(a))).second);
        }
    }
}

TEST_CASE("hkdf_expand_label parameter errors") {
    Bytes32 secret{};
    CHECK_THROWS_AS(tc::hkdf_expand_label(BytesView(secret), "x", {}, 0), tc::CryptoError);
    CHECK_THROWS_AS(tc::hkdf_expand_label(BytesView(secret), "x", {}, 255 * 32 + 1),
                    tc::CryptoError);
    CHECK_THROWS_AS(tc::hkdf_expand_label(BytesView(secret), std::string(65, 'a'), {}, 32),
                    tc::CryptoError);
    Bytes big(256, 0);
    CHECK_THROWS_AS(tc::hkdf_expand_label(BytesView(secret), "x", BytesView(big), 32),
                    tc::CryptoError);
}

TEST_CASE("transcript_hash basics") {
    auto vectors = testutil::load_vectors(testutil::vectors_dir() / "transcript_hash.txt");
    for (const auto& v : vectors) {
        Bytes concat = testutil::hex_field(v.inputs.at(0));
        std::vector<Bytes> msgs;
        if (!concat.empty()) msgs.push_back(concat);
        Bytes32 got = tc::transcript_hash(msgs);
        CHECK(to_hex(BytesView(got)) == v.outputs.at(0));
    }

    Bytes m1 = to_bytes("m1"), m2 = to_bytes("m2");
    std::vector<Bytes> split = {m1, m2};
    Bytes joined = m1;
    append(joined, m2);
    CHECK(tc::transcript_hash(split) == tc::sha256(BytesView(joined)));
    std::vector<Bytes> swapped = {m2, m1};
    CHECK(tc::transcript_hash(split) != tc::transcript_hash(swapped));
    CHECK(to_hex(BytesView(tc::transcript_hash({}))) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("aead matches frozen vectors") {
    auto vectors = testutil::load_vectors(testutil::vectors_dir() / "aead_seal.txt");
    REQUIRE(!vectors.empty());
    for (const auto& v : vectors) {
        tc::AeadKeyIv k;
        k.key = from_hex_array<32>(v.inputs.at(0));
        auto iv = from_hex(v.inputs.at(1));
        REQUIRE(iv.size() == 12);
        std::memcpy(k.iv.data(), iv.data(), 12);
        uint64_t seq = std::stoull(v.inputs.at(2));
        Bytes aad = testutil::hex_field(v.inputs.at(3));
        Bytes pt = testutil::hex_field(v.inputs.at(4));
        Bytes ct = tc::aead_seal(k, seq, BytesView(aad), BytesView(pt));
        CHECK(to_hex(BytesView(ct)) == v.outputs.at(0));
        Bytes back = tc::aead_open(k, seq, BytesView(aad), BytesView(ct));
        CHECK(back == pt);
    }
}

TEST_CASE("aead roundtrip and nonce separation") {
    std::mt19937_64 rng(3);
    tc::AeadKeyIv k;
    tc::random_bytes(k.key);
    tc::random_bytes(k.iv);

    for (size_t len : {size_t(0), size_t(1), size_t(333), size_t(64 * 1024)}) {
        Bytes pt = testutil::random_payload(rng, len);
        Bytes aad = testutil::random_payload(rng, 13);
        Bytes ct = tc::aead_seal(k, 5, BytesView(aad), BytesView(pt));
        REQUIRE(ct.size() == pt.size() + 16);
        CHECK(tc::aead_open(k, 5, BytesView(aad), BytesView(ct)) == pt);
    }

    Bytes pt = to_bytes("same plaintext");
    Bytes c0 = tc::aead_seal(k, 0, {}, BytesView(pt));
    Bytes c1 = tc::aead_seal(k, 1, {}, BytesView(pt));
    CHECK(c0 != c1);
}

TEST_CASE("aead rejects every single-bit corruption") {
    std::mt19937_64 rng(17);
    tc::AeadKeyIv k;
    tc::random_bytes(k.key);
    tc::random_bytes(k.iv);
    Bytes pt = testutil::random_payload(rng, 256);
    Bytes aad = testutil::random_payload(rng, 16);
    Bytes ct = tc::aead_seal(k, 9, BytesView(aad), BytesView(pt));

    int failures = 0;
    for (int i = 0; i < 1000; ++i) {
        bool corrupt_aad = rng() % 4 == 0;
        Bytes aad2 = aad, ct2 = ct;
        Bytes& target = corrupt_aad ? aad2 : ct2;
        size_t bit = rng() % (target.size() * 8);
        target[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
        try {
            tc::aead_open(k, 9, BytesView(aad2), BytesView(ct2));
        } catch (const tc::AeadAuthError&) {
            ++failures;
        }
    }
    CHECK(failures == 1000);
}

TEST_CASE("x25519 matches frozen vectors") {
    auto vectors = testutil::load_vectors(testutil::vectors_dir() / "x25519.txt");
    REQUIRE(!vectors.empty());
    for (const auto& v : vectors) {
        if (v.inputs.at(0) == "pub") {
            Bytes32 pub = tc::dh_public(arr32(v.inputs.at(1)));
            CHECK(to_hex(BytesView(pub)) == v.outputs.at(0));
        } else {
            REQUIRE(v.inputs.at(0) == "dh");
            Bytes32 shared = tc::dh_shared(arr32(v.inputs.at(1)), arr32(v.inputs.at(2)));
            CHECK(to_hex(BytesView(shared)) == v.outputs.at(0));
        }
    }
}

TEST_CASE("dh commutes for random pairs") {
    for (int i = 0; i < 100; ++i) {
        auto a = tc::dh_generate();
        auto b = tc::dh_generate();
        CHECK(tc::dh_shared(a.priv, b.pub) == tc::dh_shared(b.priv, a.pub));
    }
}

TEST_CASE("dh rejects low-order peer public") {
    auto a = tc::dh_generate();
    Bytes32 zero{};
    CHECK_THROWS_AS(tc::dh_shared(a.priv, zero), tc::CryptoError);
    // order-8 point from the curve25519 low-order list
    Bytes32 low = arr32("e0eb7a7c3b41b8ae1656e3faf19fc46ada098deb9c32b1fd866205165f49b800");
    CHECK_THROWS_AS(tc::dh_shared(a.priv, low), tc::CryptoError);
}

TEST_CASE("ed25519 matches frozen vectors") {
    auto vectors = testutil::load_vectors(testutil::vectors_dir() / "ed25519.txt");
    REQUIRE(!vectors.empty());
    for (const auto& v : vectors) {
        Bytes32 seed = arr32(v.inputs.at(0));
        Bytes msg = testutil::hex_field(v.inputs.at(1));
        CHECK(to_hex(BytesView(tc::sign_public(seed))) == v.outputs.at(0));
        Signature sig = tc::sign(seed, BytesView(msg));
        CHECK(to_hex(BytesView(sig)) == v.outputs.at(1));
        CHECK(tc::verify_sig(tc::sign_public(seed), BytesView(msg), sig));
    }
}

TEST_CASE("ed25519 verify rejects modified message and bad lengths") {
    auto kp = tc::sign_generate();
    Bytes msg = to_bytes("attested message");
    Signature sig = tc::sign(kp.priv, BytesView(msg));
    CHECK(tc::verify_sig(kp.pub, BytesView(msg), sig));
    Bytes tampered = msg;
    tampered[0] ^= 1;
    CHECK(!tc::verify_sig(kp.pub, BytesView(tampered), sig));
    Bytes short_sig(63, 0);
    CHECK_THROWS_AS(tc::verify_sig(kp.pub, BytesView(msg), BytesView(short_sig)), tc::CryptoError);
}

TEST_CASE("pk_seal matches the composed vector with a pinned ephemeral") {
    auto vectors = testutil::load_vectors(testutil::vectors_dir() / "pk_seal.txt");
    REQUIRE(vectors.size() == 1);
    const auto& v = vectors[0];
    Bytes32 recip_priv = arr32(v.inputs.at(0));
    Bytes32 eph_priv = arr32(v.inputs.at(1));
    Bytes info = from_hex(v.inputs.at(2));
    Bytes pt = from_hex(v.inputs.at(3));

    tc::set_test_rng([&](std::span<uint8_t> out) {
        REQUIRE(out.size() == 32);
        std::memcpy(out.data(), eph_priv.data(), 32);
    });
    auto sealed = tc::pk_seal(tc::dh_public(recip_priv), BytesView(info), BytesView(pt));
    tc::reset_rng();

    CHECK(to_hex(BytesView(sealed.encap)) == v.outputs.at(0));
    CHECK(to_hex(BytesView(sealed.ciphertext)) == v.outputs.at(1));
    CHECK(tc::pk_open(recip_priv, sealed.encap, BytesView(info), BytesView(sealed.ciphertext)) ==
          pt);
}

TEST_CASE("pk_seal roundtrip, wrong key, and info binding") {
    std::mt19937_64 rng(23);
    auto recipient = tc::dh_generate();
    auto wrong = tc::dh_generate();
    for (int i = 0; i < 20; ++i) {
        Bytes pt = testutil::random_payload(rng, rng() % 512);
        Bytes info = testutil::random_payload(rng, 38);
        auto sealed = tc::pk_seal(recipient.pub, BytesView(info), BytesView(pt));
        CHECK(tc::pk_open(recipient.priv, sealed.encap, BytesView(info),
                          BytesView(sealed.ciphertext)) == pt);
        CHECK_THROWS_AS(tc::pk_open(wrong.priv, sealed.encap, BytesView(info),
                                    BytesView(sealed.ciphertext)),
                        tc::CryptoError);
        Bytes info2 = info;
        info2[0] ^= 1;
        CHECK_THROWS_AS(
            tc::pk_open(recipient.priv, sealed.encap, BytesView(info2), BytesView(sealed.ciphertext)),
            tc::AeadAuthError);
    }
}

TEST_CASE("hmac and extract agree with the reference implementation") {
    std::mt19937_64 rng(31);
    for (int i = 0; i < 20; ++i) {
        Bytes key = testutil::random_payload(rng, rng() % 100);
        Bytes data = testutil::random_payload(rng, rng() % 300);
        auto got = tc::hmac_sha256(BytesView(key), BytesView(data));
        auto want = refcrypto::hmac_sha256(key, data);
        CHECK(std::equal(got.begin(), got.end(), want.begin()));
    }
}
