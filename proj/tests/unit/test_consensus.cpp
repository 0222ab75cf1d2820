#include "onionpos/consensus.hpp"
#include "onionpos/sim.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace onionpos;
using namespace onionpos::testing;

namespace {

KeyPair clientKey(std::size_t i)
{
    std::array<std::uint8_t, 32> seed{};
    seed[0] = 0xc1;
    seed[1] = static_cast<std::uint8_t>(i >> 8);
    seed[2] = static_cast<std::uint8_t>(i);
    return KeyPair::fromSeed(seed);
}

Genesis genesisWithClients(std::size_t clients)
{
    Genesis g = fixtureGenesis();
    g.blockTimeoutMs = 500;
    for (std::size_t i = 0; i < clients; ++i)
        g.accounts.push_back(GenesisAccount{100 + i, clientKey(i).pk, 1000});
    return g;
}

struct Recorder : EngineObserver {
    std::vector<std::string> rejects;
    std::vector<std::pair<Micros, Block>> created;
    std::vector<Height> finalized;
    const Simulator* sim = nullptr;

    void onBlockRejected(AccountId, const std::string& why) override { rejects.push_back(why); }
    void onBlockCreated(AccountId, const ChainEntry& e) override { created.emplace_back(sim->now(), e.block); }
    void onFinalized(AccountId, Height h, const Digest&) override { finalized.push_back(h); }
};

// Full-mesh plain delivery: enough for consensus tests without the
// anonymization layer.
class MeshBus : public MessageBus {
public:
    MeshBus(SimNetwork& net, Address self, std::vector<Address> all) : net_(net), self_(self), all_(std::move(all)) {}

    void gossip(Bytes m) override
    {
        for (const auto& a : all_)
            if (a != self_)
                net_.send(self_, a, m, {});
    }
    void sendDirect(const Address& dst, Bytes m) override { net_.send(self_, dst, std::move(m), {}); }
    std::vector<Address> peers() const override
    {
        std::vector<Address> out;
        for (const auto& a : all_)
            if (a != self_)
                out.push_back(a);
        return out;
    }

private:
    SimNetwork& net_;
    Address self_;
    std::vector<Address> all_;
};

struct Cluster {
    Genesis g;
    ProtocolParams params;
    Simulator sim;
    SimNetwork net{sim, LatencyModel{}, 0.0, 7};
    std::vector<std::unique_ptr<SimExecutor>> execs;
    std::vector<std::unique_ptr<MeshBus>> buses;
    std::vector<std::unique_ptr<Engine>> engines;
    Recorder rec;

    explicit Cluster(Genesis genesis) : g(std::move(genesis)), params(ProtocolParams::fromGenesis(g))
    {
        rec.sim = &sim;
        std::vector<Address> addrs;
        for (const auto& n : g.nodes)
            addrs.push_back(n.networkAddress);
        for (const auto& n : g.nodes) {
            execs.push_back(std::make_unique<SimExecutor>(sim));
            buses.push_back(std::make_unique<MeshBus>(net, n.networkAddress, addrs));
            engines.push_back(std::make_unique<Engine>(g, params, n.id, keyOf(static_cast<std::uint8_t>(n.id + 1)),
                                                       *execs.back(), *buses.back(), &rec));
            Engine* e = engines.back().get();
            net.attach(n.networkAddress, [e](const Address& from, Bytes data) { e->onMessage(from, data); });
        }
    }

    void start()
    {
        for (auto& e : engines)
            e->start();
    }

    void setOffline(std::size_t i, bool off)
    {
        net.setOnline(g.nodes[i].networkAddress, !off);
        if (off) {
            engines[i]->stop();
            execs[i]->bumpEpoch();
        } else {
            engines[i]->start();
            engines[i]->onReconnect();
        }
    }
};

Amount supply(const GlobalState& s)
{
    return s.totalSupply();
}

} // namespace

TEST(Mempool, FeeDescendingThenArrival)
{
    Mempool mp;
    auto a = clientKey(1), b = clientKey(2), c = clientKey(3);
    auto t1 = makeTx(a, b.pk, 1, 5, 0);
    auto t2 = makeTx(b, a.pk, 1, 9, 0);
    auto t3 = makeTx(c, a.pk, 1, 5, 0);
    EXPECT_TRUE(mp.add(t1, t1.id(), 0));
    EXPECT_TRUE(mp.add(t2, t2.id(), 0));
    EXPECT_TRUE(mp.add(t3, t3.id(), 0));
    EXPECT_FALSE(mp.add(t1, t1.id(), 0));
    auto order = mp.ordered();
    ASSERT_EQ(order.size(), 3u);
    EXPECT_EQ(*order[0], t2);
    EXPECT_EQ(*order[1], t1);
    EXPECT_EQ(*order[2], t3);
    // Same sender and nonce is one slot.
    auto t1b = makeTx(a, c.pk, 2, 50, 0);
    EXPECT_FALSE(mp.add(t1b, t1b.id(), 0));
    mp.remove(t2.id());
    EXPECT_EQ(mp.size(), 2u);
    mp.pruneIf([](const Tx& t, Height) { return t.fee == 5; });
    EXPECT_EQ(mp.size(), 0u);
}

TEST(Execution, PicksThirtyHighestFeeTxs)
{
    auto g = genesisWithClients(100);
    auto params = ProtocolParams::fromGenesis(g);
    auto st = g.initialState();
    std::mt19937_64 rng(42);
    Mempool mp;
    std::vector<std::pair<Amount, std::size_t>> oracle; // (fee, arrival)
    for (std::size_t i = 0; i < 100; ++i) {
        Amount fee = rng() % 20;
        auto tx = makeTx(clientKey(i), clientKey((i + 1) % 100).pk, 1, fee, 0);
        mp.add(tx, tx.id(), 0);
        oracle.emplace_back(fee, i);
    }
    std::stable_sort(oracle.begin(), oracle.end(), [](auto& x, auto& y) { return x.first > y.first; });

    std::vector<Tx> cand;
    for (auto* t : mp.ordered())
        cand.push_back(*t);
    LeaderSet ls{0, {1, 2, 3}};
    auto res = executeBlock(st, 1, cand, 0, ls, params, {}, true, 30);
    auto& ex = std::get<ExecutedBlock>(res);
    ASSERT_EQ(ex.txs.size(), 30u);
    for (std::size_t k = 0; k < 30; ++k)
        EXPECT_EQ(ex.txs[k].src, clientKey(oracle[k].second).pk) << k;
}

TEST(Execution, RewardArithmetic)
{
    auto g = genesisWithClients(2);
    g.fullReward = 10;
    g.partialReward = 1;
    auto params = ProtocolParams::fromGenesis(g);
    auto pre = g.initialState();
    std::vector<Tx> txs{makeTx(clientKey(0), clientKey(1).pk, 3, 2, 0), makeTx(clientKey(1), clientKey(0).pk, 4, 3, 0)};
    LeaderSet ls{0, {1, 2, 3}};
    auto ex = std::get<ExecutedBlock>(executeBlock(pre, 1, txs, 0, ls, params, {}, false, 30));
    EXPECT_EQ(ex.fees, 5u);
    EXPECT_EQ(ex.post.find(0)->balance, pre.find(0)->balance + 15);
    for (AccountId a : {1, 2, 3})
        EXPECT_EQ(ex.post.find(a)->balance, pre.find(a)->balance + 1);
    EXPECT_EQ(supply(ex.post), supply(pre) + 13);

    // Produced by the first alternative: the absent main leader gets nothing.
    LeaderSet alt{2, {3, 1}};
    auto ex2 = std::get<ExecutedBlock>(executeBlock(pre, 1, {}, 2, alt, params, {}, false, 30));
    EXPECT_EQ(ex2.post.find(2)->balance, pre.find(2)->balance + 10);
    EXPECT_EQ(ex2.post.find(0)->balance, pre.find(0)->balance);
    EXPECT_EQ(supply(ex2.post), supply(pre) + 12);
}

TEST(Execution, StrictModeReportsFirstFailure)
{
    auto g = genesisWithClients(2);
    auto params = ProtocolParams::fromGenesis(g);
    std::vector<Tx> txs{makeTx(clientKey(0), clientKey(1).pk, 1, 1, 1)};
    auto res = executeBlock(g.initialState(), 1, txs, 0, LeaderSet{0, {}}, params, {}, false, 30);
    ASSERT_TRUE(std::holds_alternative<TxError>(res));
    EXPECT_EQ(std::get<TxError>(res), TxError::BadNonce);
}

TEST(Engine, GenesisLeaderProducesFirstBlockAndChainGrows)
{
    Cluster c(genesisWithClients(0));
    c.start();
    c.sim.runUntil(50 * kMicrosPerMs);
    ASSERT_FALSE(c.rec.created.empty());
    // Oracle: genesis leader order is [2, 0, 3, 1].
    EXPECT_EQ(c.rec.created.front().second.hdr.coinbase, keyOf(3).pk);
    EXPECT_EQ(c.rec.created.front().second.hdr.altIdx, 0);

    c.sim.runUntil(3 * kMicrosPerSecond);
    const auto& ref = *c.engines[0];
    EXPECT_GT(ref.height(), 20u);
    EXPECT_GT(ref.chain().finalizedHeight(), 0u);
    for (auto& e : c.engines) {
        EXPECT_EQ(e->chain().finalized(), ref.chain().finalized());
        EXPECT_EQ(e->chain().bestEntry().post.root(), e->chain().get(e->chain().best())->block.hdr.stateRoot);
    }
    EXPECT_TRUE(c.rec.rejects.empty()) << c.rec.rejects.front();
}

TEST(Engine, MinBlockIntervalPacesRounds)
{
    auto g = genesisWithClients(0);
    g.minBlockIntervalMs = 100;
    Cluster c(g);
    c.start();
    c.sim.runUntil(2 * kMicrosPerSecond);
    auto h = c.engines[0]->height();
    EXPECT_GE(h, 15u);
    EXPECT_LE(h, 20u);
}

TEST(Engine, SupplyMatchesMintedRewards)
{
    auto g = genesisWithClients(4);
    Cluster c(g);
    c.start();
    for (int k = 0; k < 10; ++k) {
        c.sim.runUntil((k + 1) * 200 * kMicrosPerMs);
        for (std::size_t i = 0; i < 4; ++i) {
            const auto& st = c.engines[i]->state();
            auto nonce = st.find(100 + i)->nonce;
            c.engines[i]->submitTx(makeTx(clientKey(i), clientKey((i + 1) % 4).pk, 5, 1 + i, nonce));
        }
    }
    c.sim.runUntil(4 * kMicrosPerSecond);
    const auto& ch = c.engines[0]->chain();
    Amount expected = supply(g.initialState());
    std::size_t txCount = 0;
    for (Height h = 1; h <= c.engines[0]->height(); ++h) {
        auto hashAt = ch.ancestorAt(ch.best(), h);
        ASSERT_TRUE(hashAt);
        const Block* b = h < ch.finalizedHeight() ? ch.historyAt(h) : &ch.get(*hashAt)->block;
        txCount += b->txs.size();
        // Minted per block: R^F + |alternatives| * R^P, alternatives being the
        // remainder of the selection after the producer.
        const unsigned alt = b->hdr.altIdx;
        expected += g.fullReward + (3 - alt) * g.partialReward;
    }
    EXPECT_EQ(supply(c.engines[0]->state()), expected);
    EXPECT_GE(txCount, 30u);
}

TEST(Engine, OfflineLeaderYieldsAlternativeBlock)
{
    Cluster c(genesisWithClients(0));
    // Node 2 leads height 1; keep it offline from the start.
    c.net.setOnline(c.g.nodes[2].networkAddress, false);
    for (std::size_t i = 0; i < 4; ++i)
        if (i != 2)
            c.engines[i]->start();
    c.sim.runUntil(600 * kMicrosPerMs);
    ASSERT_FALSE(c.rec.created.empty());
    const auto& [t, b] = c.rec.created.front();
    EXPECT_EQ(b.hdr.id, 1u);
    EXPECT_EQ(b.hdr.altIdx, 1);
    EXPECT_EQ(b.hdr.coinbase, keyOf(1).pk); // order [2,0,3,1]: node 0
    EXPECT_GE(t, 500 * kMicrosPerMs);
    EXPECT_LT(t, 2 * 500 * kMicrosPerMs);
    c.sim.runUntil(3 * kMicrosPerSecond);
    EXPECT_GT(c.engines[0]->height(), 5u);
    for (std::size_t i : {1, 3})
        EXPECT_EQ(c.engines[i]->chain().best(), c.engines[0]->chain().best());
}

TEST(Engine, ReturningNodeCatchesUp)
{
    Cluster c(genesisWithClients(0));
    c.start();
    c.sim.runUntil(500 * kMicrosPerMs);
    c.setOffline(3, true);
    c.sim.runUntil(4 * kMicrosPerSecond);
    const auto far = c.engines[0]->height();
    ASSERT_GT(far, c.engines[3]->height() + 10);
    c.setOffline(3, false);
    EXPECT_TRUE(c.engines[3]->awaitingSync());
    c.sim.runUntil(6 * kMicrosPerSecond);
    EXPECT_FALSE(c.engines[3]->awaitingSync());
    EXPECT_GE(c.engines[3]->height() + 1, c.engines[0]->height());
    EXPECT_EQ(c.engines[3]->chain().finalized(), c.engines[0]->chain().finalized());
}

class SoloEngine : public ::testing::Test {
protected:
    struct CaptureBus : MessageBus {
        std::vector<Bytes> sent;
        void gossip(Bytes m) override { sent.push_back(std::move(m)); }
        void sendDirect(const Address&, Bytes) override {}
        std::vector<Address> peers() const override { return {}; }
    };

    Genesis g = genesisWithClients(2);
    Simulator sim;
    SimExecutor exec{sim};
    CaptureBus bus;
    Recorder rec;
    ProtocolParams params = ProtocolParams::fromGenesis(g);
    // Node 0 is not the height-1 leader (order [2,0,3,1]).
    Engine engine{g, params, 0, keyOf(1), exec, bus, &rec};

    void SetUp() override { rec.sim = &sim; }

    // Builds a block on genesis the way node `id` would.
    Block craft(AccountId id, unsigned altIdx, std::vector<Tx> txs = {})
    {
        Block gen = g.genesisBlock();
        auto st = g.initialState();
        auto ls = *elect(electionValue(gen.hdr.rand.view(), params.election), altIdx, st.activeStakes(),
                         params.election);
        auto keys = keyOf(static_cast<std::uint8_t>(id + 1));
        auto ex = std::get<ExecutedBlock>(executeBlock(st, 1, txs, id, ls, params, {}, false, 30));
        Block b;
        b.hdr.id = 1;
        b.hdr.prev = gen.hash();
        b.hdr.txsRoot = computeTxsRoot(txs);
        b.hdr.stateRoot = ex.post.root();
        b.hdr.coinbase = keys.pk;
        b.hdr.rand = roundRandomness(gen.hdr.rand, keys.sk);
        b.hdr.altIdx = static_cast<std::uint16_t>(altIdx);
        b.txs = std::move(txs);
        b.hdr.signWith(keys);
        return b;
    }

    bool deliver(const Block& b) { return engine.onMessage(Address{{127, 0, 0, 1}, 9002}, encodeBlockMsg(b)); }
};

TEST_F(SoloEngine, AcceptsBlockFromElectedLeader)
{
    engine.start();
    EXPECT_TRUE(deliver(craft(2, 0)));
    EXPECT_EQ(engine.height(), 1u);
    EXPECT_FALSE(deliver(craft(2, 0))); // duplicate
}

TEST_F(SoloEngine, RejectsWrongCoinbase)
{
    engine.start();
    EXPECT_FALSE(deliver(craft(3, 0)));
    ASSERT_EQ(rec.rejects.size(), 1u);
    EXPECT_EQ(rec.rejects[0], "coinbase is not the elected leader");
    EXPECT_EQ(engine.height(), 0u);
}

TEST_F(SoloEngine, RejectsStateRootMismatch)
{
    engine.start();
    Block b = craft(2, 0);
    b.hdr.stateRoot = digestOf("nope");
    b.hdr.signWith(keyOf(3));
    EXPECT_FALSE(deliver(b));
    ASSERT_EQ(rec.rejects.size(), 1u);
    EXPECT_EQ(rec.rejects[0], "stateRoot mismatch");
}

TEST_F(SoloEngine, RejectsTamperedHeaderAndTxsRoot)
{
    engine.start();
    Block b = craft(2, 0, {makeTx(clientKey(0), clientKey(1).pk, 1, 1, 0)});
    Block badSig = b;
    badSig.hdr.altIdx = 0;
    badSig.hdr.sig.bytes[0] ^= 1;
    EXPECT_FALSE(deliver(badSig));
    Block badRoot = b;
    badRoot.txs.clear();
    EXPECT_FALSE(deliver(badRoot));
    ASSERT_EQ(rec.rejects.size(), 2u);
    EXPECT_EQ(rec.rejects[0], "bad header signature");
    EXPECT_EQ(rec.rejects[1], "txsRoot mismatch");
}

TEST_F(SoloEngine, ReturningLeaderBlockWinsFork)
{
    engine.start();
    // Node 0 is the altIdx-1 leader and produces after one expiry.
    sim.runUntil(params.blockTimeout + 1);
    ASSERT_EQ(engine.height(), 1u); // own altIdx-1 block
    EXPECT_EQ(rec.created.front().second.hdr.altIdx, 1);
    // A competing altIdx-0 block for height 1 is a side chain of higher quality.
    EXPECT_TRUE(deliver(craft(2, 0)));
    EXPECT_EQ(engine.chain().bestEntry().block.hdr.coinbase, keyOf(3).pk);
}

TEST_F(SoloEngine, FutureAltBlockWaitsForTimeout)
{
    engine.start();
    Block alt2 = craft(3, 2);
    EXPECT_TRUE(deliver(alt2));
    EXPECT_EQ(engine.height(), 0u);
    EXPECT_EQ(engine.timeoutIndex(), 0u);
    sim.runUntil(params.blockTimeout + 1);
    // After one expiry R = 1; node 0 (altIdx 1 leader) produced its own block.
    EXPECT_EQ(engine.height(), 1u);
}

TEST_F(SoloEngine, LateBlockBelowLocalTimeoutCount)
{
    // Node 0 at R=2 rejects an altIdx-1 block: use a node that is not an
    // early alternative. Order is [2,0,3,1]; node 1 leads only at altIdx 3.
    Engine other{g, params, 1, keyOf(2), exec, bus, &rec};
    other.start();
    sim.runUntil(2 * params.blockTimeout + 1);
    EXPECT_EQ(other.timeoutIndex(), 2u);
    Block alt1 = craft(0, 1);
    EXPECT_FALSE(other.onMessage(Address{{127, 0, 0, 1}, 9000}, encodeBlockMsg(alt1)));
    EXPECT_EQ(rec.rejects.back(), "late block: altIdx below local timeout count");
}

TEST_F(SoloEngine, TxAdmission)
{
    auto a = clientKey(0);
    auto ok = makeTx(a, clientKey(1).pk, 1, 1, 0);
    EXPECT_FALSE(engine.submitTx(ok).has_value());
    EXPECT_FALSE(engine.submitTx(ok).has_value()); // silent duplicate
    EXPECT_EQ(engine.mempoolSize(), 1u);
    EXPECT_EQ(bus.sent.size(), 1u);
    EXPECT_EQ(engine.submitTx(makeTx(a, clientKey(1).pk, 1, 1, 2)), TxError::BadNonce);
    EXPECT_EQ(engine.submitTx(makeTx(keyOf(99), clientKey(1).pk, 1, 1, 0)), TxError::UnknownSender);
    EXPECT_EQ(engine.submitTx(makeTx(a, clientKey(1).pk, 5000, 1, 0)), TxError::InsufficientBalance);
    auto bad = makeTx(clientKey(1), a.pk, 1, 1, 0);
    bad.val = 2;
    EXPECT_EQ(engine.submitTx(bad), TxError::BadSignature);
    EXPECT_EQ(engine.submitTx(makeTx(clientKey(1), a.pk, 1, 1, 0, digestOf("unknown"))), TxError::StaleVoteRef);
    EXPECT_EQ(bus.sent.size(), 1u);
}
