#include "onionpos/crypto.hpp"
#include "onionpos/rng.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <set>

using namespace onionpos;
using onionpos::testing::keyOf;

TEST(Hash, KnownVector)
{
    EXPECT_EQ(hash(asBytes("abc")).hex(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_EQ(hash(ByteView{}).hex(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Hash, EmptyDiffersFromZeroByte)
{
    const std::uint8_t zero = 0;
    EXPECT_NE(hash(ByteView{}), hash(ByteView(&zero, 1)));
    EXPECT_EQ(hash(asBytes("x")), hash(asBytes("x")));
}

TEST(Hash, PartsEqualConcatenation)
{
    EXPECT_EQ(hash({asBytes("ab"), asBytes("c")}), hash(asBytes("abc")));
}

TEST(Hash, Avalanche)
{
    Rng rng(7);
    double total = 0;
    for (int i = 0; i < 1000; ++i) {
        Bytes x(32);
        for (auto& b : x)
            b = static_cast<std::uint8_t>(rng.next());
        const auto a = hash(x);
        x[rng.below(32)] ^= static_cast<std::uint8_t>(1u << rng.below(8));
        const auto b = hash(x);
        int diff = 0;
        for (std::size_t k = 0; k < 32; ++k)
            diff += std::popcount(static_cast<unsigned>(a.bytes[k] ^ b.bytes[k]));
        total += diff / 256.0;
    }
    EXPECT_GE(total / 1000, 0.45);
}

// Reference values from an independent Ed25519 implementation.
TEST(Sign, MatchesReferenceImplementation)
{
    std::array<std::uint8_t, 32> seed{};
    for (std::size_t i = 0; i < 32; ++i)
        seed[i] = static_cast<std::uint8_t>(i);
    auto kp = KeyPair::fromSeed(seed);
    EXPECT_EQ(kp.pk.hex(), "03a107bff3ce10be1d70dd18e74bc09967e4d6309ba50d5f1ddc8664125531b8");
    EXPECT_EQ(sign(kp.sk, asBytes("onionpos")).hex(),
              "853018d77a873846f577e5f2b20d82f9ce05bbac5e3441af52d014fee2db993a"
              "7b0126fda633c26dd8cc3b586ed0f71b50470e90f02104551b7adf54bd589504");
}

TEST(Sign, RoundTripAndTamper)
{
    auto kp = keyOf(9);
    Bytes m = {1, 2, 3};
    auto sig = sign(kp.sk, m);
    EXPECT_TRUE(verify(kp.pk, m, sig));
    Bytes longer = m;
    longer.push_back(1);
    EXPECT_FALSE(verify(kp.pk, longer, sig));
    auto badSig = sig;
    badSig.bytes[5] ^= 0x10;
    EXPECT_FALSE(verify(kp.pk, m, badSig));
    auto other = keyOf(10);
    EXPECT_FALSE(verify(other.pk, m, sig));
}

TEST(Sign, UniqueAcrossThousandPairs)
{
    auto rng = Drbg::fromLabel("sign-unique", 1);
    for (int i = 0; i < 1000; ++i) {
        auto kp = KeyPair::fromSeed(rng.draw<32>());
        auto msg = rng.draw<48>();
        EXPECT_EQ(sign(kp.sk, msg), sign(kp.sk, msg));
    }
}

TEST(Seal, RoundTripAndOverhead)
{
    auto rng = Drbg::fromLabel("seal", 1);
    SymKey k(rng.draw<32>());
    for (std::size_t len : {0u, 1u, 192u}) {
        Bytes pt(len, 0xab);
        auto ct = sealSym(k, pt, rng);
        EXPECT_EQ(ct.size(), len + 40);
        auto back = openSym(k, ct);
        ASSERT_TRUE(back);
        EXPECT_EQ(*back, pt);
    }
    EXPECT_EQ(kSealOverhead, 40u);
}

TEST(Seal, WrongKeyFails)
{
    auto rng = Drbg::fromLabel("seal", 2);
    SymKey k(rng.draw<32>()), k2(rng.draw<32>());
    auto ct = sealSym(k, asBytes("hello"), rng);
    EXPECT_FALSE(openSym(k2, ct));
    EXPECT_FALSE(openSym(k, ByteView(ct).first(10)));
}

TEST(Seal, AnyByteFlipFails)
{
    auto rng = Drbg::fromLabel("seal", 3);
    Rng pick(3);
    for (int i = 0; i < 100; ++i) {
        SymKey k(rng.draw<32>());
        Bytes pt(pick.below(64));
        for (auto& b : pt)
            b = static_cast<std::uint8_t>(pick.next());
        auto ct = sealSym(k, pt, rng);
        ct[pick.below(ct.size())] ^= static_cast<std::uint8_t>(1 + pick.below(255));
        EXPECT_FALSE(openSym(k, ct));
    }
}

TEST(KeyExchange, BothEndsAgree)
{
    auto rng = Drbg::fromLabel("kx", 1);
    auto responder = keyOf(4);
    auto ctx = asBytes("ctx");
    auto [init, hello] = KxInitiator::start(responder.pk, ctx, rng);
    auto resp = kxRespond(responder, hello, ctx, rng);
    ASSERT_TRUE(resp);
    auto key = init.finish(resp->second);
    ASSERT_TRUE(key);
    EXPECT_EQ(*key, resp->first);
}

TEST(KeyExchange, FreshKeysPerExchange)
{
    auto rng = Drbg::fromLabel("kx", 2);
    auto responder = keyOf(4);
    std::set<Bytes> keys;
    for (int i = 0; i < 2; ++i) {
        auto [init, hello] = KxInitiator::start(responder.pk, {}, rng);
        auto resp = kxRespond(responder, hello, {}, rng);
        ASSERT_TRUE(resp);
        auto v = resp->first.view();
        keys.insert(Bytes(v.begin(), v.end()));
    }
    EXPECT_EQ(keys.size(), 2u);
}

TEST(KeyExchange, ImpostorResponderRejected)
{
    auto rng = Drbg::fromLabel("kx", 3);
    auto real = keyOf(4);
    auto impostor = keyOf(5);
    auto [init, hello] = KxInitiator::start(real.pk, {}, rng);
    auto resp = kxRespond(impostor, hello, {}, rng);
    ASSERT_TRUE(resp);
    EXPECT_FALSE(init.finish(resp->second));
}

TEST(KeyExchange, ContextMismatchRejected)
{
    auto rng = Drbg::fromLabel("kx", 4);
    auto responder = keyOf(4);
    auto [init, hello] = KxInitiator::start(responder.pk, asBytes("a"), rng);
    auto resp = kxRespond(responder, hello, asBytes("b"), rng);
    ASSERT_TRUE(resp);
    EXPECT_FALSE(init.finish(resp->second));
}

TEST(KeyExchange, TranscriptDoesNotContainKey)
{
    auto rng = Drbg::fromLabel("kx", 5);
    auto responder = keyOf(4);
    auto [init, hello] = KxInitiator::start(responder.pk, {}, rng);
    auto resp = kxRespond(responder, hello, {}, rng);
    ASSERT_TRUE(resp);
    Bytes transcript(hello.ephemeral.begin(), hello.ephemeral.end());
    transcript.insert(transcript.end(), resp->second.ephemeral.begin(), resp->second.ephemeral.end());
    transcript.insert(transcript.end(), resp->second.sig.bytes.begin(), resp->second.sig.bytes.end());
    auto k = resp->first.view();
    EXPECT_EQ(std::search(transcript.begin(), transcript.end(), k.begin(), k.end()), transcript.end());
}

TEST(Drbg, Reproducible)
{
    auto a = Drbg::fromLabel("x", 1, 2);
    auto b = Drbg::fromLabel("x", 1, 2);
    auto c = Drbg::fromLabel("x", 1, 3);
    EXPECT_EQ(a.next64(), b.next64());
    EXPECT_NE(a.next64(), c.next64());
}
