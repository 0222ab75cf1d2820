#pragma once

// Cryptographic primitives for the protocol: hashing, unique signatures,
// an authenticated ephemeral key exchange and an AEAD symmetric layer.
//
// Every routine is stateless given its key material and safe to call from
// several threads. Randomness is always drawn from an explicit Drbg so that
// simulated runs replay bit-for-bit from a seed.

#include "onionpos/bytes.hpp"

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>

namespace onionpos {

inline constexpr std::size_t kDigestSize = 32;
inline constexpr std::size_t kPublicKeySize = 32;
inline constexpr std::size_t kSecretKeySize = 64;
inline constexpr std::size_t kSeedSize = 32;
inline constexpr std::size_t kSignatureSize = 64;
inline constexpr std::size_t kSymKeySize = 32;
inline constexpr std::size_t kSealNonceSize = 24;
inline constexpr std::size_t kSealTagSize = 16;
/// Bytes added by sealSym: prepended nonce plus authentication tag.
inline constexpr std::size_t kSealOverhead = kSealNonceSize + kSealTagSize;

template <std::size_t N, typename Tag>
struct FixedBytes {
    std::array<std::uint8_t, N> bytes{};

    static constexpr std::size_t size() { return N; }
    ByteView view() const { return ByteView(bytes); }
    std::string hex() const { return toHex(view()); }
    auto operator<=>(const FixedBytes&) const = default;

    static FixedBytes fromHex(std::string_view h) { return FixedBytes{fixedFromHex<N>(h)}; }
};

struct DigestTag {};
struct PublicKeyTag {};
struct SignatureTag {};

using Digest = FixedBytes<kDigestSize, DigestTag>;
using PublicKey = FixedBytes<kPublicKeySize, PublicKeyTag>;
using Signature = FixedBytes<kSignatureSize, SignatureTag>;

/// Symmetric key shared by two endpoints. Wiped on destruction.
class SymKey {
public:
    SymKey() = default;
    explicit SymKey(const std::array<std::uint8_t, kSymKeySize>& k) : key_(k) {}
    SymKey(const SymKey&) = default;
    SymKey& operator=(const SymKey&) = default;
    ~SymKey();

    ByteView view() const { return ByteView(key_); }
    const std::uint8_t* data() const { return key_.data(); }
    bool operator==(const SymKey& o) const { return key_ == o.key_; }

private:
    std::array<std::uint8_t, kSymKeySize> key_{};
};

/// Ed25519 secret key (seed || public key). Wiped on destruction.
class SecretKey {
public:
    SecretKey() = default;
    explicit SecretKey(const std::array<std::uint8_t, kSecretKeySize>& k) : key_(k) {}
    SecretKey(const SecretKey&) = default;
    SecretKey& operator=(const SecretKey&) = default;
    ~SecretKey();

    const std::uint8_t* data() const { return key_.data(); }
    std::array<std::uint8_t, kSeedSize> seed() const;

private:
    std::array<std::uint8_t, kSecretKeySize> key_{};
};

struct KeyPair {
    PublicKey pk;
    SecretKey sk;

    static KeyPair fromSeed(const std::array<std::uint8_t, kSeedSize>& seed);
};

/// Deterministic random bit generator. Seeded explicitly in simulation,
/// from the OS entropy pool otherwise.
class Drbg {
public:
    explicit Drbg(const std::array<std::uint8_t, kSeedSize>& seed) : seed_(seed) {}
    static Drbg fromEntropy();
    static Drbg fromLabel(std::string_view label, std::uint64_t a, std::uint64_t b = 0);

    void fill(std::span<std::uint8_t> out);
    std::uint64_t next64();

    template <std::size_t N>
    std::array<std::uint8_t, N> draw()
    {
        std::array<std::uint8_t, N> out{};
        fill(out);
        return out;
    }

private:
    std::array<std::uint8_t, kSeedSize> seed_;
    std::uint64_t counter_ = 0;
};

Digest hash(ByteView data);
Digest hash(std::initializer_list<ByteView> parts);

Signature sign(const SecretKey& sk, ByteView msg);
bool verify(const PublicKey& pk, ByteView msg, const Signature& sig);

Bytes sealSym(const SymKey& key, ByteView plaintext, Drbg& rng);
std::optional<Bytes> openSym(const SymKey& key, ByteView ciphertext);

// Key exchange. The initiator knows the responder's long-term (directory)
// public key. The responder answers with its own ephemeral key and an
// Ed25519 signature over both ephemerals and the caller-supplied context;
// the session key mixes the ephemeral-ephemeral and ephemeral-static DH
// outputs, so only the holder of the directory key can complete it.

inline constexpr std::size_t kKxPublicSize = 32;

struct KxHello {
    std::array<std::uint8_t, kKxPublicSize> ephemeral{};
};

struct KxReply {
    std::array<std::uint8_t, kKxPublicSize> ephemeral{};
    Signature sig;
};

class KxInitiator {
public:
    static std::pair<KxInitiator, KxHello> start(const PublicKey& responder, ByteView context, Drbg& rng);

    /// Returns the session key, or nothing if the reply is not bound to the
    /// responder's directory key.
    std::optional<SymKey> finish(const KxReply& reply) const;

    KxInitiator(const KxInitiator&) = default;
    KxInitiator& operator=(const KxInitiator&) = default;
    ~KxInitiator();

private:
    KxInitiator() = default;

    PublicKey responder_;
    Bytes context_;
    std::array<std::uint8_t, 32> ephemeralSecret_{};
    std::array<std::uint8_t, kKxPublicSize> ephemeralPublic_{};
};

std::optional<std::pair<SymKey, KxReply>> kxRespond(const KeyPair& responder, const KxHello& hello, ByteView context,
                                                    Drbg& rng);

} // namespace onionpos
