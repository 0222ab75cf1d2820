#include "onionpos/consensus.hpp"

#include <algorithm>
#include <variant>

namespace onionpos {

namespace {

constexpr std::size_t kMaxOrphans = 512;
constexpr std::size_t kSyncBatchBytes = 48 * 1024;
constexpr std::size_t kSyncMaxBlocks = 512;
constexpr std::size_t kVerifiedCacheLimit = 200000;

std::string cacheKey(const Digest& d)
{
    return std::string(d.bytes.begin(), d.bytes.end());
}

} // namespace

ProtocolParams ProtocolParams::fromGenesis(const Genesis& g)
{
    ProtocolParams p;
    p.blockTimeout = static_cast<Micros>(g.blockTimeoutMs) * kMicrosPerMs;
    p.checkpointTimeout = 2 * p.blockTimeout;
    p.minBlockInterval = static_cast<Micros>(g.minBlockIntervalMs) * kMicrosPerMs;
    p.fullReward = g.fullReward;
    p.partialReward = g.partialReward;
    p.maxBlockTxs = g.maxBlockTxs;
    p.delays = g.delays;
    p.checkpointInterval = g.checkpointInterval;
    p.committeeSize = g.committeeSize;
    p.election = ElectionParams{0, g.alternatives};
    return p;
}

Bytes encodeTxMsg(const Tx& tx)
{
    ByteWriter w(Tx::kBaseSize + Tx::kVoteRefSize + 1);
    w.u8(static_cast<std::uint8_t>(MsgKind::Tx));
    tx.encodeTo(w);
    return w.take();
}

Bytes encodeBlockMsg(const Block& b)
{
    auto body = b.encode();
    Bytes out;
    out.reserve(body.size() + 1);
    out.push_back(static_cast<std::uint8_t>(MsgKind::Block));
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

Digest messageDigest(ByteView appMsg)
{
    return hash(appMsg);
}

// ---------------------------------------------------------------- Mempool

bool Mempool::add(const Tx& tx, const Digest& id, Height seenAt)
{
    if (items_.count(id) || bySender_.count({tx.src, tx.nonce}))
        return false;
    Item item{tx, id, nextSeq_++, seenAt};
    order_.insert(keyOf(item));
    bySender_[{tx.src, tx.nonce}] = id;
    items_.emplace(id, std::move(item));
    return true;
}

void Mempool::remove(const Digest& id)
{
    auto it = items_.find(id);
    if (it == items_.end())
        return;
    order_.erase(keyOf(it->second));
    bySender_.erase({it->second.tx.src, it->second.tx.nonce});
    items_.erase(it);
}

bool Mempool::hasSenderNonce(const PublicKey& src, std::uint64_t nonce) const
{
    return bySender_.count({src, nonce}) != 0;
}

std::vector<const Tx*> Mempool::ordered() const
{
    std::vector<const Tx*> out;
    out.reserve(order_.size());
    for (const auto& key : order_)
        out.push_back(&items_.at(std::get<2>(key)).tx);
    return out;
}

// -------------------------------------------------------------- execution

std::variant<ExecutedBlock, TxError> executeBlock(const GlobalState& pre, Height h, std::span<const Tx> txs,
                                                  AccountId coinbase, const LeaderSet& leaders,
                                                  const ProtocolParams& params, const VoteRefCheck& onChain,
                                                  bool skipInvalid, std::size_t maxTxs,
                                                  const std::function<bool(const Tx&)>& sigKnownGood)
{
    ExecutedBlock out;
    out.post = pre;
    out.post.advanceTo(h);
    for (const auto& tx : txs) {
        if (out.txs.size() >= maxTxs)
            break;
        const bool verifySig = !(sigKnownGood && sigKnownGood(tx));
        if (auto err = out.post.applyTx(tx, h, params.delays, onChain, verifySig)) {
            if (skipInvalid)
                continue;
            return *err;
        }
        out.txs.push_back(tx);
        out.fees += tx.fee;
        if (tx.voteRef)
            ++out.votes;
    }
    out.post.credit(coinbase, params.fullReward + out.fees);
    for (auto alt : leaders.alternatives)
        out.post.credit(alt, params.partialReward);
    return out;
}

// ----------------------------------------------------------------- Engine

Engine::Engine(const Genesis& genesis, ProtocolParams params, AccountId self, KeyPair keys, Executor& exec,
               MessageBus& bus, EngineObserver* observer)
    : genesis_(genesis),
      params_(params),
      self_(self),
      keys_(std::move(keys)),
      exec_(exec),
      bus_(bus),
      observer_(observer),
      chain_(genesis.genesisBlock(), genesis.initialState())
{
}

Engine::~Engine()
{
    stop();
}

void Engine::start()
{
    running_ = true;
    startRound();
}

void Engine::stop()
{
    running_ = false;
    for (auto* t : {&timer_, &produceTimer_, &syncTimer_}) {
        if (*t)
            exec_.cancel(**t);
        t->reset();
    }
    for (auto& [h, id] : checkpointTimers_)
        exec_.cancel(id);
    checkpointTimers_.clear();
}

const PublicKey* Engine::keyOf(AccountId id) const
{
    const auto* a = state().find(id);
    return a ? &a->pk : nullptr;
}

std::optional<LeaderSet> Engine::leadersFor(const ChainEntry& parent, unsigned altIdx) const
{
    if (altIdx > params_.election.alternatives)
        return std::nullopt;
    try {
        return elect(electionValue(parent.block.hdr.rand.view(), params_.election), altIdx,
                     parent.post.activeStakes(), params_.election);
    } catch (const NoEligibleStake&) {
        return std::nullopt;
    }
}

// ------------------------------------------------------------------ rounds

void Engine::startRound()
{
    R_ = 0;
    roundStart_ = exec_.now();
    for (auto* t : {&timer_, &produceTimer_}) {
        if (*t)
            exec_.cancel(**t);
        t->reset();
    }
    future_.clear();
    bus_.onRound(height());
    tryCreate(0);
}

void Engine::armTimer(Micros delay)
{
    if (timer_)
        exec_.cancel(*timer_);
    timer_ = exec_.schedule(delay, [this] {
        timer_.reset();
        onTimeout();
    });
}

void Engine::tryCreate(unsigned altIdx)
{
    if (!running_)
        return;
    if (params_.maxHeight && height() >= params_.maxHeight)
        return;
    const auto& parent = chain_.bestEntry();
    Micros wait = 0;
    if (altIdx == 0)
        wait = std::max<Micros>(0, roundStart_ + params_.minBlockInterval - exec_.now());
    auto leaders = leadersFor(parent, altIdx);
    // Back from an outage, our view of this tip may be stale: its round has
    // probably expired elsewhere, so leave the primary slot to the others.
    const bool forgo = altIdx == 0 && resumedOn_ == parent.hash && parent.post.activeStakes().size() > 1;
    if (leaders && leaders->leader == self_ && !awaitingSync_ && !forgo) {
        const Digest parentHash = parent.hash;
        if (produceTimer_)
            exec_.cancel(*produceTimer_);
        // Always through the event queue, so back-to-back leadership does
        // not recurse and every block takes at least one loop turn.
        produceTimer_ = exec_.schedule(wait, [this, altIdx, parentHash] {
            produceTimer_.reset();
            if (running_ && chain_.best() == parentHash && R_ == altIdx && !awaitingSync_)
                produce(altIdx);
        });
    }
    armTimer(params_.blockTimeout + wait);
}

void Engine::onTimeout()
{
    if (R_ <= params_.election.alternatives) {
        ++R_;
        ++stats_.timeouts;
        if (observer_)
            observer_->onTimeout(self_, height() + 1, R_);
        bus_.onStall();
    } else {
        // Every alternative missed its slot: most likely we are the ones behind.
        requestSync();
    }
    const Digest before = chain_.best();
    drainFuture();
    if (chain_.best() == before)
        tryCreate(R_);
}

void Engine::drainFuture()
{
    auto it = future_.find(R_);
    if (it == future_.end())
        return;
    auto blocks = std::move(it->second);
    future_.erase(it);
    for (auto& b : blocks)
        if (b.hdr.prev == chain_.best())
            handleBlock(std::move(b), Address{}, Origin::Gossip);
}

void Engine::produce(unsigned altIdx)
{
    const ChainEntry& parent = chain_.bestEntry();
    auto leaders = leadersFor(parent, altIdx);
    if (!leaders || leaders->leader != self_)
        return;
    const Height h = parent.height + 1;

    std::vector<Tx> candidates;
    for (const Tx* tx : mempool_.ordered())
        candidates.push_back(*tx);
    const Digest parentHash = parent.hash;
    auto onChain = [this, parentHash](const Digest& d) { return voteRefIncludable(d, parentHash); };
    auto res = executeBlock(parent.post, h, candidates, self_, *leaders, params_, onChain, true,
                            params_.maxBlockTxs, [this](const Tx& t) { return sigKnownGood(t); });
    auto& ex = std::get<ExecutedBlock>(res);

    ChainEntry e;
    e.block.hdr.id = h;
    e.block.hdr.prev = parentHash;
    e.block.hdr.txsRoot = computeTxsRoot(ex.txs);
    e.block.hdr.stateRoot = ex.post.root();
    e.block.hdr.coinbase = keys_.pk;
    e.block.hdr.rand = roundRandomness(parent.block.hdr.rand, keys_.sk);
    e.block.hdr.altIdx = static_cast<std::uint16_t>(altIdx);
    e.block.hdr.signWith(keys_);
    e.block.txs = std::move(ex.txs);
    e.hash = e.block.hash();
    e.height = h;
    e.post = std::move(ex.post);
    e.leaders = *leaders;
    e.votes = ex.votes;

    ++stats_.blocksCreated;
    if (observer_)
        observer_->onBlockCreated(self_, e);
    bus_.gossip(encodeBlockMsg(e.block));
    accept(std::move(e), Origin::Own);
}

// ------------------------------------------------------------------ blocks

bool Engine::handleBlock(Block blk, const Address& from, Origin origin)
{
    const Digest h = blk.hash();
    if (chain_.known(h))
        return false;
    auto reject = [&](const std::string& why) {
        ++stats_.blocksRejected;
        if (observer_)
            observer_->onBlockRejected(self_, why);
        return false;
    };

    const auto where = chain_.classifyParent(blk.hdr.prev);
    switch (where) {
    case AddOutcome::UnknownParent: {
        if (blk.hdr.id <= chain_.finalizedHeight())
            return reject("fork below finalized checkpoint");
        if (!blk.hdr.verifySignature())
            return reject("bad header signature");
        auto& bucket = orphans_[blk.hdr.prev];
        const bool dup = std::any_of(bucket.begin(), bucket.end(), [&](const Block& b) { return b.hash() == h; });
        if (!dup && orphanCount_ < kMaxOrphans) {
            bucket.push_back(std::move(blk));
            ++orphanCount_;
        }
        if (origin != Origin::Own)
            requestSync(from.port ? &from : nullptr);
        return !dup;
    }
    case AddOutcome::PreFinalizedFork:
        return reject("fork below finalized checkpoint");
    case AddOutcome::ExtendsBest:
        if (origin == Origin::Gossip) {
            if (blk.hdr.altIdx > R_) {
                if (blk.hdr.altIdx > params_.election.alternatives || !blk.hdr.verifySignature())
                    return reject("bad future block");
                auto& bucket = future_[blk.hdr.altIdx];
                if (std::none_of(bucket.begin(), bucket.end(), [&](const Block& b) { return b.hash() == h; }))
                    bucket.push_back(std::move(blk));
                return true;
            }
            if (blk.hdr.altIdx < R_)
                return reject("late block: altIdx below local timeout count");
        }
        break;
    default:
        break;
    }

    const ChainEntry* parent = chain_.get(blk.hdr.prev);
    std::string why;
    auto entry = validate(blk, *parent, why);
    if (!entry)
        return reject(why);
    accept(std::move(*entry), origin);
    return true;
}

std::optional<ChainEntry> Engine::validate(const Block& blk, const ChainEntry& parent, std::string& why)
{
    const auto& hdr = blk.hdr;
    if (hdr.id != parent.height + 1) {
        why = "height does not follow parent";
        return std::nullopt;
    }
    if (!hdr.verifySignature()) {
        why = "bad header signature";
        return std::nullopt;
    }
    auto leaders = leadersFor(parent, hdr.altIdx);
    if (!leaders) {
        why = "no leader for altIdx " + std::to_string(hdr.altIdx);
        return std::nullopt;
    }
    const auto* leader = parent.post.find(leaders->leader);
    if (!leader || leader->pk != hdr.coinbase) {
        why = "coinbase is not the elected leader";
        return std::nullopt;
    }
    if (!verify(hdr.coinbase, parent.block.hdr.rand.view(), hdr.rand)) {
        why = "rand is not the leader's signature over the previous rand";
        return std::nullopt;
    }
    if (blk.txs.size() > params_.maxBlockTxs) {
        why = "too many transactions";
        return std::nullopt;
    }
    if (computeTxsRoot(blk.txs) != hdr.txsRoot) {
        why = "txsRoot mismatch";
        return std::nullopt;
    }
    const Digest parentHash = parent.hash;
    auto onChain = [this, parentHash](const Digest& d) { return voteRefIncludable(d, parentHash); };
    auto res = executeBlock(parent.post, hdr.id, blk.txs, leaders->leader, *leaders, params_, onChain, false,
                            blk.txs.size(), [this](const Tx& t) { return sigKnownGood(t); });
    if (auto* err = std::get_if<TxError>(&res)) {
        why = std::string("invalid transaction: ") + toString(*err);
        return std::nullopt;
    }
    auto& ex = std::get<ExecutedBlock>(res);
    if (ex.post.root() != hdr.stateRoot) {
        why = "stateRoot mismatch";
        return std::nullopt;
    }
    ChainEntry e;
    e.block = blk;
    e.hash = blk.hash();
    e.height = hdr.id;
    e.post = std::move(ex.post);
    e.leaders = *leaders;
    e.votes = ex.votes;
    return e;
}

namespace {

std::vector<Tx> abandonedTxs(const ChainView& chain, const Digest& oldBest, const Digest& newTip)
{
    std::vector<Tx> out;
    if (!chain.get(oldBest) || !chain.get(newTip) || chain.isAncestorOrSelf(oldBest, newTip))
        return out;
    for (const auto* e : chain.branchUntilCommon(oldBest, newTip))
        out.insert(out.end(), e->block.txs.begin(), e->block.txs.end());
    return out;
}

} // namespace

void Engine::accept(ChainEntry entry, Origin origin)
{
    const Digest oldBest = chain_.best();
    const Digest h = entry.hash;
    const auto outcome = chain_.add(std::move(entry));
    if (outcome != AddOutcome::ExtendsBest && outcome != AddOutcome::SideChain &&
        outcome != AddOutcome::SwitchedBest)
        return;
    const ChainEntry& e = *chain_.get(h);
    if (origin != Origin::Own)
        ++stats_.blocksAccepted;
    if (observer_)
        observer_->onBlockAccepted(self_, e, origin == Origin::Sync);

    if (outcome == AddOutcome::SwitchedBest) {
        ++stats_.forkSwitches;
        if (observer_)
            observer_->onForkSwitch(self_, oldBest, h);
        for (const auto& tx : abandonedTxs(chain_, oldBest, h))
            (void)admitTx(tx);
    }
    if (chain_.best() != oldBest)
        afterBestChange(oldBest);

    if (auto it = votesAwaitingBlock_.find(h); it != votesAwaitingBlock_.end()) {
        auto pending = std::move(it->second);
        votesAwaitingBlock_.erase(it);
        for (const auto& v : pending)
            recordVote(v);
    }
    drainOrphans(h);
}

void Engine::afterBestChange(const Digest&)
{
    pruneMempool();
    maybeVote();
    if (inBatch_)
        bestChangedInBatch_ = true;
    else
        startRound();
}

void Engine::drainOrphans(const Digest& parent)
{
    auto it = orphans_.find(parent);
    if (it == orphans_.end())
        return;
    auto children = std::move(it->second);
    orphans_.erase(it);
    orphanCount_ -= children.size();
    // Their round is long gone; validate like synced blocks.
    for (auto& b : children)
        handleBlock(std::move(b), Address{}, Origin::Sync);
}

// ------------------------------------------------------------ transactions

bool Engine::sigKnownGood(const Tx& tx) const
{
    return verifiedTxs_.count(cacheKey(tx.id())) != 0;
}

bool Engine::voteRefIncludable(const Digest& voteRef, const Digest& parent) const
{
    return chain_.isAncestorOrSelf(voteRef, parent);
}

std::optional<TxError> Engine::admitTx(const Tx& tx)
{
    const Digest id = tx.id();
    if (mempool_.contains(id))
        return std::nullopt;
    const auto key = cacheKey(id);
    const bool known = verifiedTxs_.count(key) != 0;
    if (auto err = state().check(tx, !known))
        return err;
    if (!known) {
        if (verifiedTxs_.size() >= kVerifiedCacheLimit)
            verifiedTxs_.clear();
        verifiedTxs_.insert(key);
    }
    if (tx.voteRef && !chain_.known(*tx.voteRef))
        return TxError::StaleVoteRef;
    if (!mempool_.add(tx, id, height()))
        return TxError::BadNonce; // another tx already claims this nonce
    return std::nullopt;
}

std::optional<TxError> Engine::submitTx(const Tx& tx)
{
    if (mempool_.contains(tx.id()))
        return std::nullopt;
    auto err = admitTx(tx);
    if (err) {
        ++stats_.txsRejected;
        return err;
    }
    ++stats_.txsAccepted;
    bus_.gossip(encodeTxMsg(tx));
    return std::nullopt;
}

bool Engine::handleTx(ByteView body)
{
    Tx tx = Tx::decode(body);
    if (mempool_.contains(tx.id()))
        return false;
    if (admitTx(tx)) {
        ++stats_.txsRejected;
        return false;
    }
    ++stats_.txsAccepted;
    return true;
}

void Engine::pruneMempool()
{
    const ChainEntry& best = chain_.bestEntry();
    const auto& st = best.post;
    const Height stale = params_.voteStaleDepth();
    mempool_.pruneIf([&](const Tx& tx, Height seenAt) {
        const auto* a = st.findByKey(tx.src);
        if (!a || tx.nonce < a->nonce)
            return true;
        if (tx.voteRef && (!chain_.known(*tx.voteRef) || seenAt + stale < best.height))
            return true;
        return false;
    });
}

// ------------------------------------------------------------ checkpoints

std::optional<std::vector<AccountId>> Engine::committeeFor(Height h, const Digest& tip) const
{
    const Height c = params_.checkpointInterval;
    if (h < c || h % c != 0)
        return std::nullopt;
    const ChainEntry* anchor = chain_.liveAncestorAt(tip, h - c);
    if (!anchor)
        return std::nullopt;
    try {
        return electCommittee(checkpointSeed(anchor->block.hdr.rand, h, params_.election), params_.committeeSize,
                              anchor->post.activeStakes(), params_.election);
    } catch (const NoEligibleStake&) {
        return std::nullopt;
    }
}

void Engine::maybeVote()
{
    const Height c = params_.checkpointInterval;
    const ChainEntry& best = chain_.bestEntry();
    const Digest bestHash = best.hash;
    std::vector<CheckpointVote> mine;
    for (Height h = (chain_.finalizedHeight() / c + 1) * c; h <= best.height; h += c) {
        if (closed_.count(h))
            continue;
        if (!checkpointTimers_.count(h))
            checkpointTimers_[h] = exec_.schedule(params_.checkpointTimeout, [this, h] {
                checkpointTimers_.erase(h);
                closeCheckpoint(h);
            });
        if (voted_.count(h))
            continue;
        auto committee = committeeFor(h, bestHash);
        if (!committee || std::find(committee->begin(), committee->end(), self_) == committee->end())
            continue;
        voted_.insert(h);
        CheckpointVote v{h, *chain_.ancestorAt(bestHash, h), self_, {}};
        v.signWith(keys_);
        mine.push_back(v);
    }
    for (const auto& v : mine) {
        bus_.gossip(v.encode());
        recordVote(v);
    }
}

bool Engine::handleVote(ByteView msg)
{
    auto v = CheckpointVote::decode(msg);
    if (v.height <= chain_.finalizedHeight() || closed_.count(v.height))
        return false;
    if (auto it = votes_.find(v.height); it != votes_.end() && it->second.count(v.voter))
        return false;
    const auto* pk = keyOf(v.voter);
    if (!pk || !v.verifyWith(*pk))
        return false;
    return recordVote(v);
}

bool Engine::recordVote(const CheckpointVote& v)
{
    if (v.height <= chain_.finalizedHeight() || closed_.count(v.height))
        return false;
    auto& atHeight = votes_[v.height];
    if (atHeight.count(v.voter))
        return false;
    const ChainEntry* tip = chain_.get(v.tip);
    if (!tip) {
        if (chain_.known(v.tip))
            return false;
        auto& pending = votesAwaitingBlock_[v.tip];
        if (pending.size() < 4 * params_.committeeSize &&
            std::find(pending.begin(), pending.end(), v) == pending.end())
            pending.push_back(v);
        return true;
    }
    if (tip->height != v.height)
        return false;
    auto committee = committeeFor(v.height, v.tip);
    if (!committee || std::find(committee->begin(), committee->end(), v.voter) == committee->end())
        return false;
    atHeight[v.voter] = v;

    std::size_t support = 0;
    for (const auto& [voter, vote] : atHeight)
        support += vote.tip == v.tip;
    if (support >= checkpointThreshold(committee->size()))
        finalizeAt(v.height, v.tip);
    return true;
}

void Engine::finalizeAt(Height h, const Digest& d)
{
    finalizingVotes_.clear();
    for (const auto& [voter, vote] : votes_[h])
        if (vote.tip == d)
            finalizingVotes_.push_back(vote);

    const Digest oldBest = chain_.best();
    auto dropped = abandonedTxs(chain_, oldBest, d);
    const bool moved = chain_.finalize(d);
    ++stats_.finalizations;
    if (observer_)
        observer_->onFinalized(self_, h, d);

    votes_.erase(votes_.begin(), votes_.upper_bound(h));
    voted_.erase(voted_.begin(), voted_.upper_bound(h));
    closed_.erase(closed_.begin(), closed_.upper_bound(h));
    for (auto it = checkpointTimers_.begin(); it != checkpointTimers_.end() && it->first <= h;) {
        exec_.cancel(it->second);
        it = checkpointTimers_.erase(it);
    }
    for (auto it = orphans_.begin(); it != orphans_.end();) {
        std::erase_if(it->second, [&](const Block& b) { return b.hdr.id <= h; });
        if (it->second.empty())
            it = orphans_.erase(it);
        else
            ++it;
    }
    orphanCount_ = 0;
    for (const auto& [p, v] : orphans_)
        orphanCount_ += v.size();
    std::erase_if(votesAwaitingBlock_, [&](const auto& kv) {
        return std::all_of(kv.second.begin(), kv.second.end(), [&](const CheckpointVote& v) { return v.height <= h; });
    });

    if (moved) {
        ++stats_.forkSwitches;
        if (observer_)
            observer_->onForkSwitch(self_, oldBest, chain_.best());
        for (const auto& tx : dropped)
            (void)admitTx(tx);
        afterBestChange(oldBest);
    }
}

void Engine::closeCheckpoint(Height h)
{
    if (h <= chain_.finalizedHeight() || closed_.count(h))
        return;
    closed_.insert(h);
    votes_.erase(h);
    ++stats_.noDecisions;
    if (observer_)
        observer_->onNoDecision(self_, h);
}

// -------------------------------------------------------------------- sync

void Engine::requestSync(const Address* only)
{
    const Micros now = exec_.now();
    if (lastSyncRequest_ >= 0 && now - lastSyncRequest_ < params_.blockTimeout / 2)
        return;
    lastSyncRequest_ = now;
    ++stats_.syncRequests;
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(MsgKind::SyncRequest)).u64(chain_.finalizedHeight());
    if (only) {
        bus_.sendDirect(*only, w.bytes());
        return;
    }
    for (const auto& p : bus_.peers())
        bus_.sendDirect(p, w.bytes());
}

void Engine::onReconnect()
{
    awaitingSync_ = true;
    lastSyncRequest_ = -1;
    if (syncTimer_)
        exec_.cancel(*syncTimer_);
    syncTimer_ = exec_.schedule(2 * params_.blockTimeout, [this] {
        syncTimer_.reset();
        if (awaitingSync_)
            endSync();
    });
    requestSync();
}

void Engine::endSync()
{
    awaitingSync_ = false;
    if (syncTimer_)
        exec_.cancel(*syncTimer_);
    syncTimer_.reset();
    resumedOn_ = chain_.best();
    startRound();
}

void Engine::handleSyncRequest(const Address& from, ByteView body)
{
    ByteReader r(body);
    const Height fromHeight = r.u64();
    r.expectEnd();

    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(MsgKind::SyncBatch)).u64(height());
    std::vector<Bytes> blocks;
    std::size_t bytes = 0;
    Height last = fromHeight;
    for (const Block* b : chain_.bestChainAfter(fromHeight, kSyncMaxBlocks)) {
        auto enc = b->encode();
        if (!blocks.empty() && bytes + enc.size() > kSyncBatchBytes)
            break;
        bytes += enc.size();
        last = b->hdr.id;
        blocks.push_back(std::move(enc));
    }
    w.u32(static_cast<std::uint32_t>(blocks.size()));
    for (const auto& b : blocks)
        w.u32(static_cast<std::uint32_t>(b.size())).raw(b);
    const bool complete = last >= height();
    const std::size_t nv = complete ? finalizingVotes_.size() : 0;
    w.u32(static_cast<std::uint32_t>(nv));
    for (std::size_t i = 0; i < nv; ++i)
        w.raw(finalizingVotes_[i].encode());
    bus_.sendDirect(from, w.bytes());
}

void Engine::handleSyncBatch(const Address& from, ByteView body)
{
    ByteReader r(body);
    const Height tipHeight = r.u64();
    std::vector<Block> blocks(r.u32());
    if (blocks.size() > kSyncMaxBlocks)
        throw DecodeError("sync batch too large");
    for (auto& b : blocks) {
        const auto len = r.u32();
        b = Block::decode(r.raw(len));
    }
    std::vector<Bytes> votes(r.u32());
    for (auto& v : votes) {
        auto raw = r.raw(CheckpointVote::kEncodedSize);
        v.assign(raw.begin(), raw.end());
    }
    r.expectEnd();

    inBatch_ = true;
    bestChangedInBatch_ = false;
    Height last = 0;
    for (auto& b : blocks) {
        last = b.hdr.id;
        handleBlock(std::move(b), from, Origin::Sync);
    }
    for (const auto& v : votes)
        handleVote(v);
    inBatch_ = false;

    const bool more = !blocks.empty() && last < tipHeight;
    if (more) {
        ByteWriter w;
        w.u8(static_cast<std::uint8_t>(MsgKind::SyncRequest)).u64(last);
        bus_.sendDirect(from, w.bytes());
    }
    if (!more && awaitingSync_)
        endSync();
    else if (bestChangedInBatch_)
        startRound();
}

// ---------------------------------------------------------------- dispatch

bool Engine::onMessage(const Address& from, ByteView appMsg)
{
    if (appMsg.empty())
        return false;
    try {
        const auto kind = static_cast<MsgKind>(appMsg[0]);
        const ByteView body = appMsg.subspan(1);
        switch (kind) {
        case MsgKind::Tx:
            return handleTx(body);
        case MsgKind::Block:
            return handleBlock(Block::decode(body), from, Origin::Gossip);
        case MsgKind::Vote:
            return handleVote(appMsg);
        case MsgKind::SyncRequest:
            handleSyncRequest(from, body);
            return false;
        case MsgKind::SyncBatch:
            handleSyncBatch(from, body);
            return false;
        }
    } catch (const DecodeError&) {
    }
    return false;
}

} // namespace onionpos
