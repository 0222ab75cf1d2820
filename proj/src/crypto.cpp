#include "onionpos/crypto.hpp"

#include <sodium.h>

#include <cstring>
#include <stdexcept>

namespace onionpos {

namespace {

struct SodiumInit {
    SodiumInit()
    {
        if (sodium_init() < 0)
            throw std::runtime_error("libsodium initialisation failed");
    }
};

void ensureSodium()
{
    static const SodiumInit init;
    (void)init;
}

constexpr std::string_view kKxLabel = "onionpos/kx/v1";

SymKey deriveSessionKey(ByteView ee, ByteView es, ByteView initiatorEph, ByteView responderEph, ByteView context)
{
    Digest d = hash({asBytes(kKxLabel), ee, es, initiatorEph, responderEph, context});
    return SymKey(d.bytes);
}

Bytes transcript(ByteView initiatorEph, ByteView responderEph, ByteView context)
{
    return concat({asBytes(kKxLabel), initiatorEph, responderEph, context});
}

} // namespace

SymKey::~SymKey()
{
    sodium_memzero(key_.data(), key_.size());
}

SecretKey::~SecretKey()
{
    sodium_memzero(key_.data(), key_.size());
}

std::array<std::uint8_t, kSeedSize> SecretKey::seed() const
{
    std::array<std::uint8_t, kSeedSize> out{};
    std::memcpy(out.data(), key_.data(), kSeedSize);
    return out;
}

KeyPair KeyPair::fromSeed(const std::array<std::uint8_t, kSeedSize>& seed)
{
    ensureSodium();
    std::array<std::uint8_t, kSecretKeySize> sk{};
    KeyPair kp;
    crypto_sign_seed_keypair(kp.pk.bytes.data(), sk.data(), seed.data());
    kp.sk = SecretKey(sk);
    sodium_memzero(sk.data(), sk.size());
    return kp;
}

Drbg Drbg::fromEntropy()
{
    ensureSodium();
    std::array<std::uint8_t, kSeedSize> seed{};
    randombytes_buf(seed.data(), seed.size());
    return Drbg(seed);
}

Drbg Drbg::fromLabel(std::string_view label, std::uint64_t a, std::uint64_t b)
{
    ByteWriter w;
    w.raw(asBytes(label)).u64(a).u64(b);
    return Drbg(hash(w.bytes()).bytes);
}

void Drbg::fill(std::span<std::uint8_t> out)
{
    ensureSodium();
    ByteWriter w(kSeedSize + 8);
    w.raw(seed_).u64(counter_++);
    Digest block = hash(w.bytes());
    randombytes_buf_deterministic(out.data(), out.size(), block.bytes.data());
}

std::uint64_t Drbg::next64()
{
    auto b = draw<8>();
    std::uint64_t v = 0;
    for (auto x : b)
        v = (v << 8) | x;
    return v;
}

Digest hash(ByteView data)
{
    ensureSodium();
    Digest d;
    crypto_hash_sha256(d.bytes.data(), data.data(), data.size());
    return d;
}

Digest hash(std::initializer_list<ByteView> parts)
{
    ensureSodium();
    crypto_hash_sha256_state st;
    crypto_hash_sha256_init(&st);
    for (auto p : parts)
        crypto_hash_sha256_update(&st, p.data(), p.size());
    Digest d;
    crypto_hash_sha256_final(&st, d.bytes.data());
    return d;
}

Signature sign(const SecretKey& sk, ByteView msg)
{
    ensureSodium();
    Signature s;
    crypto_sign_detached(s.bytes.data(), nullptr, msg.data(), msg.size(), sk.data());
    return s;
}

bool verify(const PublicKey& pk, ByteView msg, const Signature& sig)
{
    ensureSodium();
    return crypto_sign_verify_detached(sig.bytes.data(), msg.data(), msg.size(), pk.bytes.data()) == 0;
}

Bytes sealSym(const SymKey& key, ByteView plaintext, Drbg& rng)
{
    ensureSodium();
    Bytes out(kSealNonceSize + plaintext.size() + kSealTagSize);
    rng.fill(std::span(out.data(), kSealNonceSize));
    unsigned long long clen = 0;
    crypto_aead_xchacha20poly1305_ietf_encrypt(out.data() + kSealNonceSize, &clen, plaintext.data(), plaintext.size(),
                                               nullptr, 0, nullptr, out.data(), key.data());
    out.resize(kSealNonceSize + clen);
    return out;
}

std::optional<Bytes> openSym(const SymKey& key, ByteView ciphertext)
{
    ensureSodium();
    if (ciphertext.size() < kSealOverhead)
        return std::nullopt;
    Bytes out(ciphertext.size() - kSealOverhead);
    unsigned long long mlen = 0;
    int rc = crypto_aead_xchacha20poly1305_ietf_decrypt(out.data(), &mlen, nullptr, ciphertext.data() + kSealNonceSize,
                                                        ciphertext.size() - kSealNonceSize, nullptr, 0,
                                                        ciphertext.data(), key.data());
    if (rc != 0)
        return std::nullopt;
    out.resize(mlen);
    return out;
}

KxInitiator::~KxInitiator()
{
    sodium_memzero(ephemeralSecret_.data(), ephemeralSecret_.size());
}

std::pair<KxInitiator, KxHello> KxInitiator::start(const PublicKey& responder, ByteView context, Drbg& rng)
{
    ensureSodium();
    KxInitiator st;
    st.responder_ = responder;
    st.context_.assign(context.begin(), context.end());
    auto seed = rng.draw<crypto_box_SEEDBYTES>();
    crypto_box_seed_keypair(st.ephemeralPublic_.data(), st.ephemeralSecret_.data(), seed.data());
    sodium_memzero(seed.data(), seed.size());
    KxHello hello{st.ephemeralPublic_};
    return {std::move(st), hello};
}

std::optional<SymKey> KxInitiator::finish(const KxReply& reply) const
{
    ensureSodium();
    auto msg = transcript(ephemeralPublic_, reply.ephemeral, context_);
    if (!verify(responder_, msg, reply.sig))
        return std::nullopt;

    std::array<std::uint8_t, 32> responderStatic{};
    if (crypto_sign_ed25519_pk_to_curve25519(responderStatic.data(), responder_.bytes.data()) != 0)
        return std::nullopt;

    std::array<std::uint8_t, 32> ee{}, es{};
    if (crypto_scalarmult(ee.data(), ephemeralSecret_.data(), reply.ephemeral.data()) != 0 ||
        crypto_scalarmult(es.data(), ephemeralSecret_.data(), responderStatic.data()) != 0)
        return std::nullopt;
    auto key = deriveSessionKey(ee, es, ephemeralPublic_, reply.ephemeral, context_);
    sodium_memzero(ee.data(), ee.size());
    sodium_memzero(es.data(), es.size());
    return key;
}

std::optional<std::pair<SymKey, KxReply>> kxRespond(const KeyPair& responder, const KxHello& hello, ByteView context,
                                                    Drbg& rng)
{
    ensureSodium();
    std::array<std::uint8_t, 32> ephSecret{};
    KxReply reply;
    auto seed = rng.draw<crypto_box_SEEDBYTES>();
    crypto_box_seed_keypair(reply.ephemeral.data(), ephSecret.data(), seed.data());
    sodium_memzero(seed.data(), seed.size());

    std::array<std::uint8_t, 32> staticSecret{};
    crypto_sign_ed25519_sk_to_curve25519(staticSecret.data(), responder.sk.data());

    std::array<std::uint8_t, 32> ee{}, es{};
    bool ok = crypto_scalarmult(ee.data(), ephSecret.data(), hello.ephemeral.data()) == 0 &&
              crypto_scalarmult(es.data(), staticSecret.data(), hello.ephemeral.data()) == 0;
    sodium_memzero(ephSecret.data(), ephSecret.size());
    sodium_memzero(staticSecret.data(), staticSecret.size());
    if (!ok)
        return std::nullopt;

    reply.sig = sign(responder.sk, transcript(hello.ephemeral, reply.ephemeral, context));
    auto key = deriveSessionKey(ee, es, hello.ephemeral, reply.ephemeral, context);
    sodium_memzero(ee.data(), ee.size());
    sodium_memzero(es.data(), es.size());
    return std::make_pair(key, reply);
}

} // namespace onionpos
