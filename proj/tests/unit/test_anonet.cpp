#include "onionpos/anonet.hpp"
#include "onionpos/sim.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace onionpos;
using namespace onionpos::testing;

namespace {

Address addrOf(std::size_t i)
{
    return Address{{10, 0, 0, static_cast<std::uint8_t>(i + 1)}, 7000};
}

SymKey randomKey(Drbg& rng)
{
    return SymKey(rng.draw<kSymKeySize>());
}

bool contains(ByteView hay, ByteView needle)
{
    return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

struct AnonCluster {
    Simulator sim;
    SimNetwork net;
    std::vector<DirectoryEntry> dir;
    std::vector<std::unique_ptr<SimExecutor>> execs;
    std::vector<std::unique_ptr<Transport>> transports;
    std::vector<std::unique_ptr<AnonNode>> nodes;
    std::vector<std::vector<Bytes>> received;

    AnonCluster(std::size_t n, AnonConfig cfg, std::uint64_t seed = 1)
        : net(sim, LatencyModel{}, 0.0, seed), received(n)
    {
        net.setPlaintextProbe(&Envelope::exposesPlaintext);
        for (std::size_t i = 0; i < n; ++i)
            dir.push_back(DirectoryEntry{i, keyOf(static_cast<std::uint8_t>(i + 1)).pk, addrOf(i)});
        for (std::size_t i = 0; i < n; ++i) {
            execs.push_back(std::make_unique<SimExecutor>(sim));
            transports.push_back(net.transportFor(addrOf(i)));
            nodes.push_back(std::make_unique<AnonNode>(cfg, keyOf(static_cast<std::uint8_t>(i + 1)), addrOf(i), dir,
                                                       *transports.back(), *execs.back(),
                                                       Drbg::fromLabel("anon-test", seed, i), seed * 1000 + i));
            auto* node = nodes.back().get();
            nodes.back()->setHandler([this, i](const Address&, ByteView m) {
                received[i].emplace_back(m.begin(), m.end());
                return true;
            });
            net.attach(addrOf(i), [node](const Address& from, Bytes d) { node->onDatagram(from, d); });
        }
        for (auto& nd : nodes)
            nd->start();
        sim.runUntil(sim.now() + kMicrosPerSecond);
    }

    std::size_t reached(ByteView msg) const
    {
        std::size_t k = 0;
        for (const auto& r : received)
            k += std::any_of(r.begin(), r.end(), [&](const Bytes& b) { return ByteView(b).size() == msg.size() &&
                                                                                 std::equal(b.begin(), b.end(), msg.begin()); });
        return k;
    }
};

} // namespace

TEST(Envelope, EncodingLayout)
{
    Envelope e{EnvelopeKind::Relay, Address{{127, 0, 0, 1}, 0x1f90}, Bytes{0xaa, 0xbb}};
    auto enc = e.encode();
    EXPECT_EQ(toHex(enc), "017f0000011f900000000" "2aabb");
    EXPECT_EQ(Envelope::decode(enc), e);
    enc.push_back(0);
    EXPECT_THROW(Envelope::decode(enc), DecodeError);
    EXPECT_THROW(Envelope::decode(Bytes{9, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}), DecodeError);
}

TEST(Onion, RandomCircuitsRoundtripAndTamper)
{
    Drbg rng = Drbg::fromLabel("onion-prop", 6);
    Rng pick(6);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t m = 1 + pick.below(5);
        std::vector<Address> hops;
        std::vector<SymKey> keys;
        for (std::size_t k = 0; k < m; ++k) {
            hops.push_back(addrOf(k));
            keys.push_back(randomKey(rng));
        }
        Bytes msg(1 + pick.below(300));
        rng.fill(msg);
        Bytes inner = encodeLayer(Layer{LayerTag::DeliverSelf, std::nullopt, msg});
        Bytes onion = wrapOnion(hops, keys, inner, rng);

        Bytes cur = onion;
        for (std::size_t k = 0; k < m; ++k) {
            auto layer = peelLayer(keys[k], cur);
            ASSERT_TRUE(layer) << "trial " << trial << " layer " << k;
            if (k + 1 < m) {
                ASSERT_EQ(layer->tag, LayerTag::Forward);
                ASSERT_EQ(*layer->next, hops[k + 1]);
                cur = layer->body;
            } else {
                ASSERT_EQ(layer->tag, LayerTag::DeliverSelf);
                ASSERT_EQ(layer->body, msg);
            }
        }

        Bytes tampered = onion;
        tampered[pick.below(tampered.size())] ^= static_cast<std::uint8_t>(1 + pick.below(255));
        EXPECT_FALSE(peelLayer(keys[0], tampered));

        // Any hop's key replaced: that hop cannot open its layer.
        const std::size_t victim = pick.below(m);
        Bytes c2 = onion;
        for (std::size_t k = 0; k < victim; ++k)
            c2 = peelLayer(keys[k], c2)->body;
        EXPECT_FALSE(peelLayer(randomKey(rng), c2));
    }
}

TEST(Onion, ThreeHopLayering)
{
    // h1 receives K1(h2, K2(h3, K3(M))).
    Drbg rng = Drbg::fromLabel("onion-m3", 0);
    std::vector<Address> h{addrOf(1), addrOf(2), addrOf(3)};
    std::vector<SymKey> k{randomKey(rng), randomKey(rng), randomKey(rng)};
    const Bytes m{'b', 'l', 'o', 'c', 'k'};
    Bytes onion = wrapOnion(h, k, m, rng);

    auto l1 = openSym(k[0], onion);
    ASSERT_TRUE(l1);
    auto f1 = decodeLayer(*l1);
    EXPECT_EQ(f1.tag, LayerTag::Forward);
    EXPECT_EQ(*f1.next, h[1]);
    EXPECT_FALSE(openSym(k[1], onion));
    EXPECT_FALSE(openSym(k[2], onion));

    auto l2 = openSym(k[1], f1.body);
    ASSERT_TRUE(l2);
    auto f2 = decodeLayer(*l2);
    EXPECT_EQ(*f2.next, h[2]);

    auto l3 = openSym(k[2], f2.body);
    ASSERT_TRUE(l3);
    EXPECT_EQ(*l3, m);
    // Each layer adds exactly the AEAD overhead plus tag and address.
    EXPECT_EQ(onion.size(), m.size() + 3 * 40 + 2 * 7);
}

TEST(AnonNode, BootstrapBuildsDistinctPeerCircuits)
{
    AnonConfig cfg;
    cfg.mode = AnonMode::GossipNode;
    cfg.nCircuits = 4;
    AnonCluster c(6, cfg);
    for (auto& n : c.nodes) {
        auto circuits = n->circuits();
        ASSERT_EQ(circuits.size(), 4u);
        std::set<Address> peers;
        for (auto* ci : circuits) {
            EXPECT_EQ(ci->hops.size(), 3u);
            EXPECT_EQ(ci->keys.size(), 3u);
            std::set<Address> distinct(ci->hops.begin(), ci->hops.end());
            EXPECT_EQ(distinct.size(), 3u);
            peers.insert(ci->consensusPeer());
        }
        EXPECT_EQ(peers.size(), 4u);
    }
}

TEST(AnonNode, SingleHopIsDirectPeering)
{
    AnonConfig cfg;
    cfg.mode = AnonMode::GossipNode;
    cfg.mHops = 1;
    cfg.nCircuits = 2;
    AnonCluster c(4, cfg);
    for (auto* ci : c.nodes[0]->circuits()) {
        EXPECT_EQ(ci->hops.size(), 1u);
        EXPECT_EQ(ci->consensusPeer(), ci->hops[0]);
    }
}

TEST(AnonNode, SmallDirectoryStillBuilds)
{
    AnonConfig cfg;
    cfg.mode = AnonMode::Dandelion;
    cfg.nCircuits = 2;
    AnonCluster c(4, cfg); // exactly m others
    EXPECT_EQ(c.nodes[0]->readyCircuits(), 2u);
}

class AllModes : public ::testing::TestWithParam<AnonMode> {};

TEST_P(AllModes, GossipReachesEveryNode)
{
    AnonConfig cfg;
    cfg.mode = GetParam();
    cfg.nCircuits = 4;
    AnonCluster c(6, cfg);
    const Bytes msg{2, 'h', 'e', 'l', 'l', 'o'};
    c.nodes[3]->gossip(msg);
    c.sim.runUntil(c.sim.now() + kMicrosPerSecond);
    EXPECT_EQ(c.reached(msg), 5u);
    for (auto& r : c.received)
        EXPECT_LE(r.size(), 1u); // duplicates suppressed
}

INSTANTIATE_TEST_SUITE_P(Modes, AllModes,
                         ::testing::Values(AnonMode::TorLike, AnonMode::GossipNode, AnonMode::Dandelion,
                                           AnonMode::None),
                         [](const auto& info) { return std::string(toString(info.param)); });

TEST(AnonNode, GossipNodeNeverExposesPlaintext)
{
    AnonConfig cfg;
    cfg.mode = AnonMode::GossipNode;
    AnonCluster c(8, cfg);
    Bytes msg(200, 0x5a);
    msg[0] = 2;
    c.nodes[0]->gossip(msg);
    c.nodes[5]->gossip(Bytes(100, 0x33));
    c.sim.runUntil(c.sim.now() + kMicrosPerSecond);
    EXPECT_EQ(c.reached(msg), 7u);
    for (const auto& rec : c.net.capture())
        EXPECT_FALSE(rec.plaintext);
}

TEST(AnonNode, DandelionPlaintextStartsAtExits)
{
    AnonConfig cfg;
    cfg.mode = AnonMode::Dandelion;
    AnonCluster c(8, cfg);
    const Bytes msg{2, 1, 2, 3, 4, 5, 6, 7};
    const auto start = c.net.capture().size();
    c.nodes[2]->gossip(msg);
    c.sim.runUntil(c.sim.now() + kMicrosPerSecond);
    const auto& cap = c.net.capture();
    std::optional<Address> first;
    for (std::size_t i = start; i < cap.size(); ++i) {
        if (cap[i].plaintext && !first)
            first = cap[i].src;
        if (cap[i].src == addrOf(2))
            EXPECT_FALSE(cap[i].plaintext);
    }
    ASSERT_TRUE(first);
    EXPECT_NE(*first, addrOf(2));
}

TEST(AnonNode, MiddleHopSeesNeitherMessageNorEndpoints)
{
    AnonConfig cfg;
    cfg.mode = AnonMode::TorLike;
    cfg.nCircuits = 1;
    AnonCluster c(6, cfg);
    const auto* circ = c.nodes[0]->circuits().at(0);
    const Bytes msg{2, 's', 'e', 'c', 'r', 'e', 't', '-', 'b', 'l', 'o', 'c', 'k'};
    const auto start = c.net.capture().size();
    c.nodes[0]->gossip(msg);
    c.sim.runUntil(c.sim.now() + 50 * kMicrosPerMs);
    // The first four datagrams trace owner -> h1 -> h2 -> h3 -> peer.
    const auto& cap = c.net.capture();
    ASSERT_GE(cap.size(), start + 4);
    EXPECT_EQ(cap[start].src, addrOf(0));
    EXPECT_EQ(cap[start].dst, circ->hops[0]);
    EXPECT_EQ(cap[start + 1].src, circ->hops[0]);
    EXPECT_EQ(cap[start + 1].dst, circ->hops[1]);
    EXPECT_EQ(cap[start + 2].src, circ->hops[1]);
    EXPECT_EQ(cap[start + 2].dst, circ->hops[2]);
    EXPECT_EQ(cap[start + 3].src, circ->hops[2]);
    EXPECT_EQ(cap[start + 3].dst, *circ->exitPeer);
    for (int k = 0; k < 3; ++k)
        EXPECT_FALSE(cap[start + k].plaintext);
    EXPECT_TRUE(cap[start + 3].plaintext);
}

TEST(AnonNode, RelayDatagramsNeverContainMessageBytes)
{
    AnonConfig cfg;
    cfg.mode = AnonMode::TorLike;
    AnonCluster c(6, cfg);
    std::vector<Bytes> relayed;
    // Re-attach node 4 to record what it receives as a relay.
    auto* n4 = c.nodes[4].get();
    c.net.attach(addrOf(4), [&relayed, n4](const Address& from, Bytes d) {
        if (!d.empty() && d[0] == static_cast<std::uint8_t>(EnvelopeKind::Relay))
            relayed.push_back(d);
        n4->onDatagram(from, d);
    });
    Bytes msg(64, 0);
    for (std::size_t i = 0; i < msg.size(); ++i)
        msg[i] = static_cast<std::uint8_t>(i * 7 + 1);
    c.nodes[1]->gossip(msg);
    c.sim.runUntil(c.sim.now() + kMicrosPerSecond);
    ASSERT_FALSE(relayed.empty());
    for (const auto& d : relayed)
        EXPECT_FALSE(contains(d, ByteView(msg).subspan(0, 16)));
}

TEST(AnonNode, ModeByteOverheadOrdering)
{
    std::map<AnonMode, std::uint64_t> bytes;
    for (auto mode : {AnonMode::None, AnonMode::Dandelion, AnonMode::GossipNode, AnonMode::TorLike}) {
        AnonConfig cfg;
        cfg.mode = mode;
        cfg.nCircuits = 4;
        AnonCluster c(9, cfg, 3);
        // Warm-up message establishes GossipNode link keys.
        c.nodes[0]->gossip(Bytes(500, 1));
        c.sim.runUntil(c.sim.now() + kMicrosPerSecond);
        const auto before = c.net.totalBytes();
        c.nodes[0]->gossip(Bytes(5000, 2));
        c.sim.runUntil(c.sim.now() + kMicrosPerSecond);
        EXPECT_EQ(c.reached(Bytes(5000, 2)), 8u) << toString(mode);
        bytes[mode] = c.net.totalBytes() - before;
    }
    EXPECT_LE(bytes[AnonMode::None], bytes[AnonMode::Dandelion]);
    EXPECT_LE(bytes[AnonMode::Dandelion], bytes[AnonMode::GossipNode]);
    EXPECT_LE(bytes[AnonMode::GossipNode], bytes[AnonMode::TorLike]);
}

TEST(AnonNode, RotationChangesRoutes)
{
    AnonConfig cfg;
    cfg.mode = AnonMode::TorLike;
    AnonCluster c(12, cfg);
    auto snapshot = [&] {
        std::vector<std::vector<Address>> out;
        for (auto* ci : c.nodes[0]->circuits()) {
            auto h = ci->hops;
            h.push_back(ci->consensusPeer());
            out.push_back(h);
        }
        return out;
    };
    int changed = 0;
    const int trials = 100;
    for (int t = 0; t < trials; ++t) {
        auto before = snapshot();
        c.nodes[0]->rotateCircuits(t + 1);
        c.sim.runUntil(c.sim.now() + 300 * kMicrosPerMs);
        auto after = snapshot();
        ASSERT_EQ(after.size(), 8u);
        bool any = false;
        for (std::size_t i = 0; i < 8; ++i)
            any |= before[i] != after[i];
        changed += any;
    }
    EXPECT_GE(changed, 99);
}

TEST(AnonNode, NoRotationKeepsCircuits)
{
    AnonConfig cfg;
    cfg.mode = AnonMode::TorLike;
    cfg.rotationPeriod = 0;
    AnonCluster c(6, cfg);
    auto first = c.nodes[0]->circuits().front()->firstLink;
    for (std::uint64_t r = 1; r < 50; ++r)
        c.nodes[0]->onRound(r);
    c.sim.runUntil(c.sim.now() + kMicrosPerSecond);
    EXPECT_EQ(c.nodes[0]->circuits().front()->firstLink, first);
}

TEST(AnonNode, MessageDuringRotationGraceIsDelivered)
{
    AnonConfig cfg;
    cfg.mode = AnonMode::TorLike;
    cfg.rotationPeriod = 5;
    AnonCluster c(8, cfg);
    c.nodes[0]->onRound(5);
    const Bytes msg{2, 9, 9, 9};
    c.nodes[0]->gossip(msg); // still on the old circuits
    c.sim.runUntil(c.sim.now() + kMicrosPerSecond);
    EXPECT_EQ(c.reached(msg), 7u);
    EXPECT_EQ(c.nodes[0]->stats().rotations, 1u);
}

TEST(AnonNode, OfflineHopIsRoutedAround)
{
    AnonConfig cfg;
    cfg.mode = AnonMode::GossipNode;
    cfg.buildTimeout = 100 * kMicrosPerMs;
    AnonCluster c(8, cfg);
    c.net.setOnline(addrOf(5), false);
    c.nodes[0]->rotateCircuits(1);
    c.sim.runUntil(c.sim.now() + 2 * kMicrosPerSecond);
    auto circuits = c.nodes[0]->circuits();
    EXPECT_EQ(circuits.size(), 8u);
    for (auto* ci : circuits)
        for (const auto& h : ci->hops)
            EXPECT_NE(h, addrOf(5));
}

// A dead relay is noticed through the missing ack and the message resent on
// a rebuilt circuit.
TEST(AnonNode, LostRelayIsDetectedAndMessageResent)
{
    AnonConfig cfg;
    cfg.mode = AnonMode::TorLike;
    AnonCluster c(6, cfg);
    c.net.setOnline(addrOf(2), false);
    std::uint64_t failures = 0;
    for (std::uint8_t k = 0; k < 10; ++k) {
        const Bytes msg{9, k, 1};
        c.nodes[5]->gossip(msg);
        c.sim.runUntil(c.sim.now() + kMicrosPerSecond);
        EXPECT_EQ(c.reached(msg), 4u) << "message " << int(k);
    }
    for (auto& n : c.nodes)
        failures += n->stats().circuitFailures;
    EXPECT_GT(failures, 0u);
    EXPECT_GT(c.nodes[5]->stats().acks, 0u);
}

// Four live nodes cannot form a full 3-relay route plus exit without a dead
// node; routes shrink instead.
TEST(AnonNode, TwoOfSixOfflineStillDelivers)
{
    AnonConfig cfg;
    cfg.mode = AnonMode::TorLike;
    AnonCluster c(6, cfg);
    c.net.setOnline(addrOf(4), false);
    c.net.setOnline(addrOf(5), false);
    c.sim.runUntil(c.sim.now() + 3 * kMicrosPerSecond);
    for (std::uint8_t k = 0; k < 8; ++k) {
        const Bytes msg{8, k, 2};
        c.nodes[k % 4]->gossip(msg);
        c.sim.runUntil(c.sim.now() + kMicrosPerSecond);
        EXPECT_EQ(c.reached(msg), 3u) << "message " << int(k);
    }
}

TEST(AnonNode, DirectMessagesBypassCircuits)
{
    AnonConfig cfg;
    cfg.mode = AnonMode::TorLike;
    AnonCluster c(5, cfg);
    const auto start = c.net.capture().size();
    c.nodes[1]->sendDirect(addrOf(3), Bytes{4, 0, 0});
    c.sim.runUntil(c.sim.now() + 50 * kMicrosPerMs);
    ASSERT_EQ(c.received[3].size(), 1u);
    EXPECT_EQ(c.net.capture().size(), start + 1);
    EXPECT_TRUE(c.net.capture().back().plaintext);
}
