#pragma once

// Fork tracking, chain quality and checkpoint finality.
//
// Quality of a chain segment since the last finalized checkpoint is the sum
// of per-block weights 2^-altIdx plus a small bonus per context-sensitive
// vote carried by the segment's transactions. Quality is kept as an exact
// integer count of units (1 unit = 1 / (100 * 2^32)) so that every node
// compares forks identically.

#include "onionpos/crypto.hpp"
#include "onionpos/election.hpp"
#include "onionpos/ledger.hpp"
#include "onionpos/state.hpp"

#include <compare>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

namespace onionpos {

struct Quality {
    std::uint64_t units = 0;

    static constexpr std::uint64_t kVotesPerBlock = 100; // vote bonus = 1/100 of a main-leader block
    static constexpr std::uint64_t kBlockUnits = kVotesPerBlock << 32;
    static constexpr std::uint64_t kVoteUnits = std::uint64_t{1} << 32;

    double value() const { return static_cast<double>(units) / static_cast<double>(kBlockUnits); }

    Quality& operator+=(Quality o)
    {
        units += o.units;
        return *this;
    }
    friend Quality operator+(Quality a, Quality b) { return a += b; }
    friend Quality operator-(Quality a, Quality b) { return Quality{a.units - b.units}; }
    auto operator<=>(const Quality&) const = default;
};

/// 2^-altIdx of a main-leader block.
Quality blockWeight(unsigned altIdx);
Quality voteWeight(std::uint64_t votes);

struct SegmentBlock {
    unsigned altIdx = 0;
    std::uint64_t votes = 0;
};

Quality chainQuality(std::span<const SegmentBlock> segment);

/// Committee vote for the block at a checkpoint height.
/// Encoding: kind:1 (=3) height:8 tip:32 voter:8 sig:64.
struct CheckpointVote {
    static constexpr std::uint8_t kKindTag = 3;
    static constexpr std::size_t kEncodedSize = 1 + 8 + 32 + 8 + 64;

    Height height = 0;
    Digest tip;
    AccountId voter = 0;
    Signature sig;

    Bytes signingBytes() const;
    Bytes encode() const;
    static CheckpointVote decode(ByteView data);
    void signWith(const KeyPair& keys);
    bool verifyWith(const PublicKey& pk) const;

    bool operator==(const CheckpointVote&) const = default;
};

/// Votes needed to finalize: ceil(2n/3).
std::size_t checkpointThreshold(std::size_t committeeSize);

/// Returns the digest backed by >= checkpointThreshold(|committee|) distinct
/// committee members. Non-members and repeated votes by one voter (first
/// vote wins) are ignored.
std::optional<Digest> tallyCheckpoint(std::span<const CheckpointVote> votes, std::span<const AccountId> committee);

/// A validated block together with the state after executing it.
struct ChainEntry {
    Block block;
    Digest hash;
    Height height = 0;
    GlobalState post;
    LeaderSet leaders;
    /// Context-sensitive votes carried by this block's transactions.
    std::uint64_t votes = 0;
    /// Quality accumulated since the finalized checkpoint (exclusive).
    Quality cumulative;

    const Digest& parent() const { return block.hdr.prev; }
    unsigned altIdx() const { return block.hdr.altIdx; }
};

enum class AddOutcome {
    ExtendsBest,
    SideChain,
    SwitchedBest,
    Duplicate,
    UnknownParent,
    PreFinalizedFork,
};

const char* toString(AddOutcome o);

/// Block tree rooted at the last finalized checkpoint, plus the finalized
/// history below it. Forks never cross the finalized block.
class ChainView {
public:
    ChainView(const Block& genesis, GlobalState genesisState);

    const ChainEntry* get(const Digest& d) const;
    bool known(const Digest& d) const;
    /// Block at height h on the finalized history, if h <= finalizedHeight().
    const Block* historyAt(Height h) const;

    const Digest& finalized() const { return finalized_; }
    Height finalizedHeight() const { return history_.size() - 1; }
    const Digest& best() const { return best_; }
    const ChainEntry& bestEntry() const { return live_.at(best_); }

    /// Where a block with this parent would attach, without adding it.
    AddOutcome classifyParent(const Digest& parent) const;

    /// Adds a validated entry (cumulative quality is computed here). Switches
    /// the best tip only on strictly greater quality.
    AddOutcome add(ChainEntry entry);

    bool isAncestorOrSelf(const Digest& ancestor, const Digest& descendant) const;
    /// Hash of the block at height h on the chain ending at tip.
    std::optional<Digest> ancestorAt(const Digest& tip, Height h) const;
    /// Live entry at height h on tip's chain (h >= finalizedHeight()).
    const ChainEntry* liveAncestorAt(const Digest& tip, Height h) const;

    Quality quality(const Digest& tip) const { return live_.at(tip).cumulative; }
    std::vector<Digest> tips() const;

    /// Finalizes a live block: everything not descending from it is pruned.
    /// Returns true if the best tip changed as a result.
    bool finalize(const Digest& d);

    /// Blocks on the best chain with heights in (fromHeight, fromHeight + limit].
    std::vector<const Block*> bestChainAfter(Height fromHeight, std::size_t limit) const;
    /// Hashes of the best chain from genesis to the tip.
    std::vector<Digest> bestChainHashes() const;

    /// Entries from `tip` back to (excluding) the common ancestor with `other`.
    std::vector<const ChainEntry*> branchUntilCommon(const Digest& tip, const Digest& other) const;

    std::size_t liveCount() const { return live_.size(); }

private:
    const Block& blockAtOnChain(const Digest& tip, Height h) const;
    void pickBest();

    std::map<Digest, ChainEntry> live_;
    std::map<Digest, std::vector<Digest>> children_;
    std::vector<Block> history_;
    std::map<Digest, Height> historyIndex_;
    Digest finalized_;
    Digest best_;
};

} // namespace onionpos
