#pragma once

// Stake-weighted leader election driven by the per-block randomness chain.
//
// Every eligible staker owns a contiguous sub-interval of [0, MAX) whose
// width is floor(stake * MAX / stakeSum), laid out in ascending account-ID
// order; the last interval absorbs the rounding remainder. A value selects
// the first staker whose interval end is >= the value. Successive values are
// derived by hashing, and already-selected stakers are skipped, producing an
// ordered list of distinct leaders.

#include "onionpos/crypto.hpp"
#include "onionpos/state.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

namespace onionpos {

/// A number in [0, MAX) as 32 big-endian bytes.
using ElectionValue = std::array<std::uint8_t, 32>;

struct ElectionParams {
    /// Interval size. 0 means the production size 2^256; small values are
    /// for tests only.
    std::uint64_t testMax = 0;
    unsigned alternatives = 3;
};

struct LeaderSet {
    AccountId leader = 0;
    std::vector<AccountId> alternatives;

    bool operator==(const LeaderSet&) const = default;
};

class NoEligibleStake : public std::runtime_error {
public:
    NoEligibleStake() : std::runtime_error("no eligible stake") {}
};

ElectionValue electionValueFromUint(std::uint64_t v);

/// hash(bytes) reduced mod MAX; maps a block's rand signature to a number.
ElectionValue electionValue(ByteView randBytes, const ElectionParams& params);

/// hash(32-byte big-endian value) mod MAX.
ElectionValue nextElectionValue(const ElectionValue& v, const ElectionParams& params);

/// Cumulative interval ends (ascending ID order) for the eligible stakers.
std::vector<std::pair<AccountId, ElectionValue>> intervalEnds(const StakeMap& stakes, const ElectionParams& params);

/// First `count` distinct stakers in selection order (fewer if not enough
/// stakers are eligible, or if the value sequence repeats before reaching
/// them). Throws NoEligibleStake when total stake is zero.
std::vector<AccountId> selectionOrder(const ElectionValue& rand, std::size_t count, const StakeMap& stakes,
                                      const ElectionParams& params);

/// Leader and alternatives for the given timeout index. Returns nothing when
/// fewer than altIdx + 1 stakers are eligible. Throws std::invalid_argument if
/// altIdx > ALT, NoEligibleStake when total stake is zero.
std::optional<LeaderSet> elect(const ElectionValue& rand, unsigned altIdx, const StakeMap& stakes,
                               const ElectionParams& params);

std::vector<AccountId> electCommittee(const ElectionValue& seed, std::size_t size, const StakeMap& stakes,
                                      const ElectionParams& params);

/// Seed for the checkpoint committee at `height`, derived from the rand of
/// the block the committee is anchored to.
ElectionValue checkpointSeed(const Signature& anchorRand, Height height, const ElectionParams& params);

/// Next link of the randomness chain: the leader's unique signature over the
/// previous block's rand.
Signature roundRandomness(const Signature& prevRand, const SecretKey& leaderKey);

} // namespace onionpos
