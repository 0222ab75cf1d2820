#pragma once

// Per-node consensus engine: round timers, leader/alternative block
// production, block and transaction validation, rewards, fork handling,
// checkpoint voting and catch-up sync.

#include "onionpos/election.hpp"
#include "onionpos/forkchoice.hpp"
#include "onionpos/genesis.hpp"
#include "onionpos/runtime.hpp"

#include <functional>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <unordered_set>
#include <variant>

namespace onionpos {

struct ProtocolParams {
    Micros blockTimeout = 500 * kMicrosPerMs; // τ^B
    Micros checkpointTimeout = 1000 * kMicrosPerMs; // τ^CP
    Micros minBlockInterval = 0;
    Amount fullReward = 10;
    Amount partialReward = 1;
    std::size_t maxBlockTxs = 30;
    StakeDelays delays;
    Height checkpointInterval = 10;
    std::size_t committeeSize = 5;
    ElectionParams election;
    /// Stop producing once the best tip reaches this height (0 = never).
    Height maxHeight = 0;

    /// τ^CP = 2 τ^B.
    static ProtocolParams fromGenesis(const Genesis& g);
    Height voteStaleDepth() const { return 2 * checkpointInterval; }
};

/// Application message kinds (first byte of every consensus message).
enum class MsgKind : std::uint8_t {
    Tx = 1,
    Block = 2,
    Vote = 3, // the vote's own encoding starts with this tag
    SyncRequest = 4,
    SyncBatch = 5,
};

Bytes encodeTxMsg(const Tx& tx);
Bytes encodeBlockMsg(const Block& b);
/// Digest used for gossip de-duplication and capture ground truth.
Digest messageDigest(ByteView appMsg);

/// Pending transactions ordered by fee (descending), then arrival.
class Mempool {
public:
    bool contains(const Digest& id) const { return items_.count(id) != 0; }
    bool add(const Tx& tx, const Digest& id, Height seenAt);
    void remove(const Digest& id);
    std::size_t size() const { return items_.size(); }
    bool hasSenderNonce(const PublicKey& src, std::uint64_t nonce) const;

    /// Transactions in selection order.
    std::vector<const Tx*> ordered() const;

    /// Removes every transaction for which drop(tx, seenAt) is true.
    template <typename Pred>
    void pruneIf(Pred drop)
    {
        for (auto it = items_.begin(); it != items_.end();) {
            if (drop(it->second.tx, it->second.seenAt)) {
                order_.erase(keyOf(it->second));
                bySender_.erase({it->second.tx.src, it->second.tx.nonce});
                it = items_.erase(it);
            } else {
                ++it;
            }
        }
    }

private:
    struct Item {
        Tx tx;
        Digest id;
        std::uint64_t seq = 0;
        Height seenAt = 0;
    };
    using Key = std::tuple<Amount, std::uint64_t, Digest>; // (~fee, seq, id)
    static Key keyOf(const Item& i) { return {~i.tx.fee, i.seq, i.id}; }

    std::map<Digest, Item> items_;
    std::set<Key> order_;
    std::map<std::pair<PublicKey, std::uint64_t>, Digest> bySender_;
    std::uint64_t nextSeq_ = 0;
};

struct ExecutedBlock {
    GlobalState post;
    std::vector<Tx> txs;
    Amount fees = 0;
    std::uint64_t votes = 0;
};

/// Executes txs on top of `pre` at height h: advanceTo(h), each tx in order,
/// then rewards (coinbase R^F + fees, each listed alternative R^P). With
/// `skipInvalid` failing txs are dropped (block building, capped at
/// maxTxs); otherwise the first failure aborts with that error.
std::variant<ExecutedBlock, TxError> executeBlock(const GlobalState& pre, Height h, std::span<const Tx> txs,
                                                  AccountId coinbase, const LeaderSet& leaders,
                                                  const ProtocolParams& params, const VoteRefCheck& onChain,
                                                  bool skipInvalid, std::size_t maxTxs,
                                                  const std::function<bool(const Tx&)>& sigKnownGood = {});

/// Engine notifications for metrics and logging.
class EngineObserver {
public:
    virtual ~EngineObserver() = default;
    virtual void onBlockCreated(AccountId, const ChainEntry&) {}
    virtual void onBlockAccepted(AccountId, const ChainEntry&, bool /*viaSync*/) {}
    virtual void onBlockRejected(AccountId, const std::string& /*reason*/) {}
    virtual void onTimeout(AccountId, Height /*round*/, unsigned /*R*/) {}
    virtual void onForkSwitch(AccountId, const Digest& /*from*/, const Digest& /*to*/) {}
    virtual void onFinalized(AccountId, Height, const Digest&) {}
    virtual void onNoDecision(AccountId, Height) {}
};

struct EngineStats {
    std::uint64_t blocksCreated = 0;
    std::uint64_t blocksAccepted = 0;
    std::uint64_t blocksRejected = 0;
    std::uint64_t timeouts = 0;
    std::uint64_t forkSwitches = 0;
    std::uint64_t finalizations = 0;
    std::uint64_t noDecisions = 0;
    std::uint64_t txsAccepted = 0;
    std::uint64_t txsRejected = 0;
    std::uint64_t syncRequests = 0;
};

class Engine {
public:
    Engine(const Genesis& genesis, ProtocolParams params, AccountId self, KeyPair keys, Executor& exec,
           MessageBus& bus, EngineObserver* observer = nullptr);
    ~Engine();

    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    /// Starts the first round on top of genesis.
    void start();
    /// Halts production and cancels timers.
    void stop();

    /// Network delivery. Returns true if the message should keep spreading.
    bool onMessage(const Address& from, ByteView appMsg);

    /// Client submission: admit to the mempool and gossip.
    std::optional<TxError> submitTx(const Tx& tx);

    /// Back online after churn: hold production until peers answer a sync.
    void onReconnect();

    AccountId id() const { return self_; }
    const ChainView& chain() const { return chain_; }
    const GlobalState& state() const { return chain_.bestEntry().post; }
    Height height() const { return chain_.bestEntry().height; }
    unsigned timeoutIndex() const { return R_; }
    std::size_t mempoolSize() const { return mempool_.size(); }
    const Mempool& mempool() const { return mempool_; }
    const EngineStats& stats() const { return stats_; }
    bool awaitingSync() const { return awaitingSync_; }
    const ProtocolParams& params() const { return params_; }
    /// Committee for the checkpoint at height h on tip's chain, if computable.
    std::optional<std::vector<AccountId>> committeeFor(Height h, const Digest& tip) const;
    /// Producer set for the child of `parent` at timeout index altIdx.
    std::optional<LeaderSet> leadersFor(const ChainEntry& parent, unsigned altIdx) const;

private:
    enum class Origin { Gossip, Sync, Own };

    void startRound();
    void tryCreate(unsigned altIdx);
    void armTimer(Micros delay);
    void onTimeout();
    void produce(unsigned altIdx);

    bool handleBlock(Block blk, const Address& from, Origin origin);
    std::optional<ChainEntry> validate(const Block& blk, const ChainEntry& parent, std::string& why);
    void accept(ChainEntry entry, Origin origin);
    void afterBestChange(const Digest& oldBest);
    void drainOrphans(const Digest& parent);
    void drainFuture();

    std::optional<TxError> admitTx(const Tx& tx);
    bool handleTx(ByteView body);
    bool handleVote(ByteView msg);
    bool recordVote(const CheckpointVote& v);
    void maybeVote();
    void finalizeAt(Height h, const Digest& d);
    void closeCheckpoint(Height h);

    void requestSync(const Address* only = nullptr);
    void handleSyncRequest(const Address& from, ByteView body);
    void handleSyncBatch(const Address& from, ByteView body);
    void endSync();

    void pruneMempool();
    bool voteRefIncludable(const Digest& voteRef, const Digest& parent) const;
    bool sigKnownGood(const Tx& tx) const;

    const PublicKey* keyOf(AccountId id) const;

    Genesis genesis_;
    ProtocolParams params_;
    AccountId self_;
    KeyPair keys_;
    Executor& exec_;
    MessageBus& bus_;
    EngineObserver* observer_;

    ChainView chain_;
    Mempool mempool_;
    std::unordered_set<std::string> verifiedTxs_;

    unsigned R_ = 0;
    Micros roundStart_ = 0;
    std::optional<TimerId> timer_;
    std::optional<TimerId> produceTimer_;
    bool running_ = false;
    bool awaitingSync_ = false;
    std::optional<Digest> resumedOn_;
    std::optional<TimerId> syncTimer_;
    bool inBatch_ = false;
    bool bestChangedInBatch_ = false;
    Micros lastSyncRequest_ = -1;

    std::map<Digest, std::vector<Block>> orphans_;
    std::size_t orphanCount_ = 0;
    std::map<unsigned, std::vector<Block>> future_;

    // Checkpoints.
    std::set<Height> voted_;
    std::set<Height> closed_;
    std::map<Height, TimerId> checkpointTimers_;
    std::map<Height, std::map<AccountId, CheckpointVote>> votes_;
    std::map<Digest, std::vector<CheckpointVote>> votesAwaitingBlock_;
    std::vector<CheckpointVote> finalizingVotes_;

    EngineStats stats_;
};

} // namespace onionpos
