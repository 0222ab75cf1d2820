#include "onionpos/harness.hpp"

#include "onionpos/config.hpp"

#include <cmath>
#include <cstdio>
#include <memory>
#include <ostream>

namespace onionpos {

std::string formatMs(Micros t)
{
    char buf[48];
    const char* sign = t < 0 ? "-" : "";
    const Micros a = t < 0 ? -t : t;
    std::snprintf(buf, sizeof buf, "%s%lld.%03lld", sign, static_cast<long long>(a / 1000),
                  static_cast<long long>(a % 1000));
    return buf;
}

namespace {

std::string fixed3(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

struct SimNode {
    AccountId id = 0;
    Address addr;
    std::unique_ptr<SimExecutor> exec;
    std::unique_ptr<Transport> transport;
    std::unique_ptr<AnonNode> anon;
    std::unique_ptr<Engine> engine;
    bool online = true;
};

struct Client {
    AccountId id = 0;
    KeyPair keys;
    std::uint64_t nextNonce = 0;
    Micros lastSubmit = 0;
    bool submitted = false;
};

struct Created {
    Micros at = 0;
    AccountId producer = 0;
    Amount minted = 0;
    std::uint64_t bytesAt = 0;
};

// A pending tx that has not landed within this long is re-issued.
constexpr Micros kResubmitAfter = 5 * kMicrosPerSecond;

class Run : public EngineObserver {
public:
    explicit Run(const ScenarioConfig& cfg)
        : cfg_(cfg), genesis_(cfg.genesis()), params_(ProtocolParams::fromGenesis(genesis_)),
          net_(sim_, cfg.latency, cfg.dropRate, cfg.seed), rng_(cfg.seed ^ 0x636c69656e7473ull)
    {
        if (cfg.durationRounds)
            params_.maxHeight = cfg.durationRounds;
        net_.setCapture(cfg.capture);
        net_.setPlaintextProbe(&Envelope::exposesPlaintext);
        created_[genesis_.genesisBlock().hash()] = Created{};

        const auto dir = directoryFromGenesis(genesis_);
        for (std::size_t i = 0; i < cfg.nodeCount; ++i) {
            auto n = std::make_unique<SimNode>();
            n->id = i;
            n->addr = genesis_.nodes[i].networkAddress;
            n->exec = std::make_unique<SimExecutor>(sim_);
            n->transport = net_.transportFor(n->addr);
            n->anon = std::make_unique<AnonNode>(cfg.anon, scenarioNodeKey(i), n->addr, dir, *n->transport, *n->exec,
                                                 Drbg::fromLabel("scenario-anon", cfg.seed, i),
                                                 cfg.seed * 1000003 + i);
            n->engine = std::make_unique<Engine>(genesis_, params_, i, scenarioNodeKey(i), *n->exec, *n->anon, this);
            auto* eng = n->engine.get();
            auto* anon = n->anon.get();
            anon->setHandler([eng](const Address& from, ByteView msg) { return eng->onMessage(from, msg); });
            net_.attach(n->addr, [anon](const Address& from, Bytes d) { anon->onDatagram(from, d); });
            nodes_.push_back(std::move(n));
        }
        for (std::size_t i = 0; i < cfg.clients && cfg.txRate > 0; ++i)
            clients_.push_back(Client{scenarioClientId(cfg, i), scenarioClientKey(i), 0, 0, false});
    }

    ScenarioResult run()
    {
        ScenarioResult res;
        res.config = cfg_;
        if (cfg_.durationSeconds <= 0 && cfg_.durationRounds == 0)
            return res;

        for (auto& n : nodes_)
            n->anon->start();
        for (auto& n : nodes_)
            n->engine->start();
        for (const auto& ev : cfg_.churn) {
            sim_.schedule(toMicros(ev.offlineAt), [this, ev] { setOnline(ev.node, false); });
            if (ev.onlineAt)
                sim_.schedule(toMicros(*ev.onlineAt), [this, ev] { setOnline(ev.node, true); });
        }
        if (cfg_.txRate > 0 && !clients_.empty()) {
            period_ = std::max<Micros>(1, std::llround(kMicrosPerSecond / cfg_.txRate));
            sim_.schedule(period_, [this] { inject(); });
        }

        Micros end = 0;
        if (cfg_.durationSeconds > 0) {
            end = toMicros(cfg_.durationSeconds);
            sim_.runUntil(end);
        } else {
            const Micros cap = static_cast<Micros>(cfg_.durationRounds) * (cfg_.alternatives + 2) *
                                   params_.blockTimeout +
                               30 * kMicrosPerSecond;
            while (sim_.now() < cap && !allReached(cfg_.durationRounds))
                sim_.runUntil(sim_.now() + 100 * kMicrosPerMs);
            // Let the last checkpoint votes land.
            sim_.runUntil(sim_.now() + params_.checkpointTimeout + kMicrosPerSecond);
            end = sim_.now();
        }
        collect(res, end);
        return res;
    }

    void onBlockCreated(AccountId who, const ChainEntry& e) override
    {
        const Amount minted = params_.fullReward + params_.partialReward * e.leaders.alternatives.size();
        created_.emplace(e.hash, Created{sim_.now(), who, minted, net_.totalBytes()});
        if (cfg_.leaderOutage && e.height > outageSeen_) {
            outageSeen_ = e.height;
            scheduleOutage(who, e);
        }
    }

private:
    static Micros toMicros(double seconds) { return std::llround(seconds * kMicrosPerSecond); }

    void setOnline(std::size_t i, bool up)
    {
        auto& n = *nodes_[i];
        if (n.online == up)
            return;
        n.online = up;
        net_.setOnline(n.addr, up);
        if (!up) {
            n.engine->stop();
            n.exec->bumpEpoch();
            return;
        }
        n.anon->restart();
        n.engine->start();
        n.engine->onReconnect();
    }

    // The leader of the next height goes dark as soon as its parent exists,
    // and the previous victim comes back.
    void scheduleOutage(AccountId who, const ChainEntry& e)
    {
        const auto& lo = *cfg_.leaderOutage;
        const Height next = e.height + 1;
        std::optional<AccountId> victim;
        if (next >= lo.fromHeight && next < lo.fromHeight + lo.rounds) {
            if (auto ls = nodes_[who]->engine->leadersFor(e, 0))
                victim = ls->leader;
            outageHeights_.push_back(next);
        }
        // Deferred so the producer finishes sending first; it still runs
        // before any follow-up production event that accept() schedules.
        sim_.schedule(0, [this, victim] {
            if (outaged_ && outaged_ != victim)
                setOnline(*outaged_, true);
            outaged_ = victim;
            if (victim)
                setOnline(*victim, false);
        });
    }

    void inject()
    {
        sim_.schedule(period_, [this] { inject(); });
        std::vector<SimNode*> up;
        for (auto& n : nodes_)
            if (n->online)
                up.push_back(n.get());
        if (up.empty())
            return;
        Engine& entry = *up[entryCursor_++ % up.size()]->engine;
        const Micros now = sim_.now();
        for (std::size_t k = 0; k < clients_.size(); ++k) {
            Client& c = clients_[(clientCursor_ + k) % clients_.size()];
            const auto* acct = entry.state().find(c.id);
            if (!acct)
                continue;
            if (c.submitted && acct->nonce < c.nextNonce && now - c.lastSubmit < kResubmitAfter)
                continue;
            const std::size_t self = (clientCursor_ + k) % clients_.size();
            std::size_t dst = rng_.below(clients_.size());
            if (dst == self)
                dst = (dst + 1) % clients_.size();
            const Client& to = clients_[dst];
            Tx tx;
            tx.src = c.keys.pk;
            tx.dst = to.keys.pk;
            tx.val = 1;
            tx.fee = 1 + rng_.below(10);
            tx.nonce = acct->nonce;
            tx.signWith(c.keys);
            entry.submitTx(tx);
            c.nextNonce = acct->nonce + 1;
            c.lastSubmit = now;
            c.submitted = true;
            clientCursor_ = (clientCursor_ + k + 1) % clients_.size();
            ++submitted_;
            return;
        }
    }

    bool allReached(Height h) const
    {
        for (const auto& n : nodes_)
            if (n->online && n->engine->height() < h)
                return false;
        return true;
    }

    void collect(ScenarioResult& res, Micros end)
    {
        std::size_t ref = 0;
        while (ref + 1 < nodes_.size() && !nodes_[ref]->online)
            ++ref;
        res.referenceNode = ref;
        const Engine& re = *nodes_[ref]->engine;
        auto& s = res.summary;

        const auto hashes = re.chain().bestChainHashes();
        for (std::size_t i = 1; i < hashes.size(); ++i) {
            const Block* b = i <= re.chain().finalizedHeight() ? re.chain().historyAt(i) : nullptr;
            const ChainEntry* live = b ? nullptr : re.chain().get(hashes[i]);
            const Block& blk = b ? *b : live->block;
            const Created& c = created_.at(hashes[i]);
            const Created& p = created_.at(hashes[i - 1]);
            BlockRow row;
            row.height = i;
            row.producer = c.producer;
            row.altIdx = blk.hdr.altIdx;
            row.txCount = blk.txs.size();
            row.roundTime = c.at - p.at;
            row.bytes = c.bytesAt - p.bytesAt;
            row.createdAt = c.at;
            res.rows.push_back(row);
            res.truth.push_back(BlockTruth{i, hashes[i], c.producer, genesis_.nodes[c.producer].networkAddress,
                                           messageDigest(encodeBlockMsg(blk))});
            s.txs += row.txCount;
            s.altBlocks += row.altIdx > 0;
        }
        s.blocks = res.rows.size();
        const Micros elapsed = cfg_.durationSeconds > 0 ? end : (res.rows.empty() ? 0 : res.rows.back().createdAt);
        s.elapsedSeconds = static_cast<double>(elapsed) / kMicrosPerSecond;
        s.throughput = elapsed > 0 ? static_cast<double>(s.txs) / s.elapsedSeconds : 0.0;
        s.timeouts = re.stats().timeouts;
        s.checkpointsFinalized = re.stats().finalizations;
        s.checkpointsNoDecision = re.stats().noDecisions;
        s.finalHeight = re.height();
        s.finalizedHeight = re.chain().finalizedHeight();
        s.txsSubmitted = submitted_;
        s.bytesOnWire = net_.totalBytes();
        s.datagrams = net_.datagrams();
        s.datagramsDropped = net_.dropped();

        const Amount genesisSupply = genesis_.initialState().totalSupply();
        Height common = UINT64_MAX;
        for (const auto& n : nodes_) {
            const Engine& e = *n->engine;
            s.forkSwitches += e.stats().forkSwitches;
            s.blocksRejected += e.stats().blocksRejected;
            NodeOutcome o;
            o.id = n->id;
            o.online = n->online;
            o.height = e.height();
            o.finalizedHeight = e.chain().finalizedHeight();
            o.bestStateRoot = e.state().root();
            o.supply = e.state().totalSupply();
            o.expectedSupply = genesisSupply;
            const auto chain = e.chain().bestChainHashes();
            for (std::size_t i = 1; i < chain.size(); ++i)
                o.expectedSupply += created_.at(chain[i]).minted;
            s.supplyConserved = s.supplyConserved && o.supply == o.expectedSupply;
            if (n->online)
                common = std::min(common, o.finalizedHeight);
            res.nodes.push_back(o);
        }
        s.commonFinalizedHeight = common == UINT64_MAX ? 0 : common;
        std::optional<Digest> root;
        for (const auto& n : nodes_) {
            if (!n->online)
                continue;
            const Digest r = n->engine->chain().historyAt(s.commonFinalizedHeight)->hdr.stateRoot;
            if (!root)
                root = r;
            s.finalizedRootsAgree = s.finalizedRootsAgree && *root == r;
        }
        res.outageHeights = outageHeights_;
        if (cfg_.capture)
            res.capture = net_.capture();
    }

    ScenarioConfig cfg_;
    Genesis genesis_;
    ProtocolParams params_;
    Simulator sim_;
    SimNetwork net_;
    Rng rng_;
    std::vector<std::unique_ptr<SimNode>> nodes_;
    std::vector<Client> clients_;
    std::map<Digest, Created> created_;
    Micros period_ = 0;
    std::size_t entryCursor_ = 0;
    std::size_t clientCursor_ = 0;
    std::uint64_t submitted_ = 0;
    Height outageSeen_ = 0;
    std::optional<AccountId> outaged_;
    std::vector<Height> outageHeights_;
};

} // namespace

ScenarioResult runScenario(const ScenarioConfig& cfg)
{
    if (!cfg.stakes.empty() && cfg.stakes.size() != cfg.nodeCount)
        throw ConfigError(cfg.name + ": stakes do not match node count");
    for (const auto& ev : cfg.churn)
        if (ev.node >= cfg.nodeCount)
            throw ConfigError(cfg.name + ": churn references unknown node " + std::to_string(ev.node));
    Run run(cfg);
    return run.run();
}

void writeMetricsCsv(std::ostream& out, const std::vector<BlockRow>& rows)
{
    out << "height,producer,alt_idx,tx_count,round_ms,bytes\n";
    for (const auto& r : rows)
        out << r.height << ',' << r.producer << ',' << r.altIdx << ',' << r.txCount << ',' << formatMs(r.roundTime)
            << ',' << r.bytes << '\n';
}

void writeSummaryCsv(std::ostream& out, const ScenarioResult& r)
{
    const auto& s = r.summary;
    out << "metric,value\n";
    out << "scenario," << r.config.name << '\n';
    out << "mode," << toString(r.config.anon.mode) << '\n';
    out << "nodes," << r.config.nodeCount << '\n';
    out << "seed," << r.config.seed << '\n';
    out << "elapsed_s," << fixed3(s.elapsedSeconds) << '\n';
    out << "blocks," << s.blocks << '\n';
    out << "txs," << s.txs << '\n';
    out << "throughput_tps," << fixed3(s.throughput) << '\n';
    out << "alt_blocks," << s.altBlocks << '\n';
    out << "timeouts," << s.timeouts << '\n';
    out << "fork_switches," << s.forkSwitches << '\n';
    out << "checkpoints_finalized," << s.checkpointsFinalized << '\n';
    out << "checkpoints_no_decision," << s.checkpointsNoDecision << '\n';
    out << "final_height," << s.finalHeight << '\n';
    out << "finalized_height," << s.finalizedHeight << '\n';
    out << "common_finalized_height," << s.commonFinalizedHeight << '\n';
    out << "finalized_roots_agree," << (s.finalizedRootsAgree ? 1 : 0) << '\n';
    out << "supply_conserved," << (s.supplyConserved ? 1 : 0) << '\n';
    out << "txs_submitted," << s.txsSubmitted << '\n';
    out << "bytes_on_wire," << s.bytesOnWire << '\n';
    out << "datagrams," << s.datagrams << '\n';
    out << "datagrams_dropped," << s.datagramsDropped << '\n';
    out << "blocks_rejected," << s.blocksRejected << '\n';
}

void writeCaptureCsv(std::ostream& out, const std::vector<CaptureRecord>& capture)
{
    out << "t_ms,src,dst,kind,size,plaintext\n";
    for (const auto& c : capture)
        out << formatMs(c.t) << ',' << c.src.toString() << ',' << c.dst.toString() << ',' << unsigned(c.kind) << ','
            << c.size << ',' << (c.plaintext ? 1 : 0) << '\n';
}

} // namespace onionpos
