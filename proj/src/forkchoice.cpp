#include "onionpos/forkchoice.hpp"

#include <algorithm>
#include <stdexcept>

namespace onionpos {

Quality blockWeight(unsigned altIdx)
{
    if (altIdx >= 64)
        return Quality{0};
    return Quality{Quality::kBlockUnits >> altIdx};
}

Quality voteWeight(std::uint64_t votes)
{
    return Quality{votes * Quality::kVoteUnits};
}

Quality chainQuality(std::span<const SegmentBlock> segment)
{
    Quality q;
    for (const auto& b : segment)
        q += blockWeight(b.altIdx) + voteWeight(b.votes);
    return q;
}

Bytes CheckpointVote::signingBytes() const
{
    ByteWriter w;
    w.u8(kKindTag).u64(height).raw(tip.bytes).u64(voter);
    return w.take();
}

Bytes CheckpointVote::encode() const
{
    ByteWriter w;
    w.u8(kKindTag).u64(height).raw(tip.bytes).u64(voter).raw(sig.bytes);
    return w.take();
}

CheckpointVote CheckpointVote::decode(ByteView data)
{
    ByteReader r(data);
    if (r.u8() != kKindTag)
        throw DecodeError("not a checkpoint vote");
    CheckpointVote v;
    v.height = r.u64();
    v.tip.bytes = r.fixed<32>();
    v.voter = r.u64();
    v.sig.bytes = r.fixed<64>();
    r.expectEnd();
    return v;
}

void CheckpointVote::signWith(const KeyPair& keys)
{
    sig = sign(keys.sk, signingBytes());
}

bool CheckpointVote::verifyWith(const PublicKey& pk) const
{
    return verify(pk, signingBytes(), sig);
}

std::size_t checkpointThreshold(std::size_t committeeSize)
{
    return (2 * committeeSize + 2) / 3;
}

std::optional<Digest> tallyCheckpoint(std::span<const CheckpointVote> votes, std::span<const AccountId> committee)
{
    if (committee.empty())
        return std::nullopt;
    std::set<AccountId> members(committee.begin(), committee.end());
    std::set<AccountId> seen;
    std::map<Digest, std::size_t> counts;
    for (const auto& v : votes) {
        if (!members.count(v.voter) || !seen.insert(v.voter).second)
            continue;
        ++counts[v.tip];
    }
    const auto need = checkpointThreshold(members.size());
    for (const auto& [d, n] : counts)
        if (n >= need)
            return d;
    return std::nullopt;
}

const char* toString(AddOutcome o)
{
    switch (o) {
    case AddOutcome::ExtendsBest: return "extends-best";
    case AddOutcome::SideChain: return "side-chain";
    case AddOutcome::SwitchedBest: return "switched-best";
    case AddOutcome::Duplicate: return "duplicate";
    case AddOutcome::UnknownParent: return "unknown-parent";
    case AddOutcome::PreFinalizedFork: return "pre-finalized-fork";
    }
    return "?";
}

ChainView::ChainView(const Block& genesis, GlobalState genesisState)
{
    ChainEntry e;
    e.block = genesis;
    e.hash = genesis.hash();
    e.height = genesis.hdr.id;
    e.post = std::move(genesisState);
    finalized_ = best_ = e.hash;
    history_.push_back(genesis);
    historyIndex_[e.hash] = e.height;
    live_.emplace(e.hash, std::move(e));
}

const ChainEntry* ChainView::get(const Digest& d) const
{
    auto it = live_.find(d);
    return it == live_.end() ? nullptr : &it->second;
}

bool ChainView::known(const Digest& d) const
{
    return live_.count(d) || historyIndex_.count(d);
}

const Block* ChainView::historyAt(Height h) const
{
    return h < history_.size() ? &history_[h] : nullptr;
}

AddOutcome ChainView::classifyParent(const Digest& parent) const
{
    if (live_.count(parent))
        return parent == best_ ? AddOutcome::ExtendsBest : AddOutcome::SideChain;
    if (historyIndex_.count(parent))
        return AddOutcome::PreFinalizedFork;
    return AddOutcome::UnknownParent;
}

AddOutcome ChainView::add(ChainEntry entry)
{
    if (known(entry.hash))
        return AddOutcome::Duplicate;
    const auto where = classifyParent(entry.parent());
    if (where == AddOutcome::UnknownParent || where == AddOutcome::PreFinalizedFork)
        return where;
    const auto& parent = live_.at(entry.parent());
    if (entry.height != parent.height + 1)
        throw std::invalid_argument("chain entry height does not follow its parent");
    entry.cumulative = parent.cumulative + blockWeight(entry.altIdx()) + voteWeight(entry.votes);

    const Digest d = entry.hash;
    const Quality q = entry.cumulative;
    children_[entry.parent()].push_back(d);
    live_.emplace(d, std::move(entry));

    if (where == AddOutcome::ExtendsBest) {
        best_ = d;
        return AddOutcome::ExtendsBest;
    }
    if (q > quality(best_)) {
        best_ = d;
        return AddOutcome::SwitchedBest;
    }
    return AddOutcome::SideChain;
}

const Block& ChainView::blockAtOnChain(const Digest& tip, Height h) const
{
    const ChainEntry* e = &live_.at(tip);
    if (h > e->height)
        throw std::out_of_range("height above tip");
    if (h < finalizedHeight())
        return history_.at(h);
    while (e->height > h)
        e = &live_.at(e->parent());
    return e->block;
}

bool ChainView::isAncestorOrSelf(const Digest& ancestor, const Digest& descendant) const
{
    if (auto hi = historyIndex_.find(ancestor); hi != historyIndex_.end()) {
        // Every live block and every history block descends from history.
        if (live_.count(descendant))
            return true;
        auto di = historyIndex_.find(descendant);
        return di != historyIndex_.end() && hi->second <= di->second;
    }
    auto a = live_.find(ancestor);
    auto e = live_.find(descendant);
    if (a == live_.end() || e == live_.end())
        return false;
    const ChainEntry* cur = &e->second;
    while (cur->height > a->second.height)
        cur = &live_.at(cur->parent());
    return cur->hash == ancestor;
}

std::optional<Digest> ChainView::ancestorAt(const Digest& tip, Height h) const
{
    auto it = live_.find(tip);
    if (it == live_.end() || h > it->second.height)
        return std::nullopt;
    if (h < finalizedHeight())
        return history_[h].hash();
    return liveAncestorAt(tip, h)->hash;
}

const ChainEntry* ChainView::liveAncestorAt(const Digest& tip, Height h) const
{
    auto it = live_.find(tip);
    if (it == live_.end() || h > it->second.height || h < finalizedHeight())
        return nullptr;
    const ChainEntry* e = &it->second;
    while (e->height > h)
        e = &live_.at(e->parent());
    return e;
}

std::vector<Digest> ChainView::tips() const
{
    std::vector<Digest> out;
    for (const auto& [d, e] : live_)
        if (!children_.count(d))
            out.push_back(d);
    return out;
}

void ChainView::pickBest()
{
    // Highest quality, then greater height, then smaller hash.
    const ChainEntry* best = nullptr;
    for (const auto& d : tips()) {
        const auto& e = live_.at(d);
        if (!best || e.cumulative > best->cumulative ||
            (e.cumulative == best->cumulative &&
             (e.height > best->height || (e.height == best->height && e.hash < best->hash))))
            best = &e;
    }
    best_ = best->hash;
}

bool ChainView::finalize(const Digest& d)
{
    auto it = live_.find(d);
    if (it == live_.end())
        throw std::invalid_argument("finalize: block is not live");
    if (d == finalized_)
        return false;

    // Extend history with the path finalized_ -> d.
    std::vector<const Block*> path;
    for (const ChainEntry* e = &it->second; e->height > finalizedHeight(); e = &live_.at(e->parent()))
        path.push_back(&e->block);
    for (auto p = path.rbegin(); p != path.rend(); ++p) {
        historyIndex_[(*p)->hash()] = history_.size();
        history_.push_back(**p);
    }

    // Keep only d and its descendants.
    std::map<Digest, ChainEntry> kept;
    std::map<Digest, std::vector<Digest>> keptChildren;
    std::vector<Digest> stack{d};
    while (!stack.empty()) {
        Digest cur = stack.back();
        stack.pop_back();
        kept.emplace(cur, std::move(live_.at(cur)));
        if (auto c = children_.find(cur); c != children_.end()) {
            keptChildren[cur] = c->second;
            for (const auto& ch : c->second)
                stack.push_back(ch);
        }
    }
    live_ = std::move(kept);
    children_ = std::move(keptChildren);
    finalized_ = d;

    const Quality base = live_.at(d).cumulative;
    for (auto& [h, e] : live_)
        e.cumulative = e.cumulative - base;

    const Digest oldBest = best_;
    if (!live_.count(best_))
        pickBest();
    return best_ != oldBest;
}

std::vector<const Block*> ChainView::bestChainAfter(Height fromHeight, std::size_t limit) const
{
    std::vector<const Block*> out;
    const ChainEntry& tip = bestEntry();
    for (Height h = fromHeight + 1; h <= tip.height && out.size() < limit; ++h)
        out.push_back(&blockAtOnChain(best_, h));
    return out;
}

std::vector<Digest> ChainView::bestChainHashes() const
{
    std::vector<Digest> out;
    for (Height h = 0; h < finalizedHeight(); ++h)
        out.push_back(history_[h].hash());
    std::vector<Digest> tail;
    for (const ChainEntry* e = &bestEntry();; e = &live_.at(e->parent())) {
        tail.push_back(e->hash);
        if (e->hash == finalized_)
            break;
    }
    out.insert(out.end(), tail.rbegin(), tail.rend());
    return out;
}

std::vector<const ChainEntry*> ChainView::branchUntilCommon(const Digest& tip, const Digest& other) const
{
    std::vector<const ChainEntry*> out;
    const ChainEntry* a = get(tip);
    const ChainEntry* b = get(other);
    if (!a || !b)
        return out;
    while (a->height > b->height) {
        out.push_back(a);
        a = &live_.at(a->parent());
    }
    while (b->height > a->height)
        b = &live_.at(b->parent());
    while (a->hash != b->hash) {
        out.push_back(a);
        a = &live_.at(a->parent());
        b = &live_.at(b->parent());
    }
    return out;
}

} // namespace onionpos
