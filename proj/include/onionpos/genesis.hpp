#pragma once

#include "onionpos/address.hpp"
#include "onionpos/crypto.hpp"
#include "onionpos/ledger.hpp"
#include "onionpos/state.hpp"

#include <string>
#include <vector>

namespace onionpos {

struct GenesisNode {
    AccountId id = 0;
    PublicKey publicKey;
    Address networkAddress;
    Amount stake = 0;
    Amount balance = 0;
};

/// Funded account that is not a consensus node (e.g. a workload client).
struct GenesisAccount {
    AccountId id = 0;
    PublicKey publicKey;
    Amount balance = 0;
};

/// Static network description shared by every participant.
///
/// JSON keys: version, genesisSeed, stakeActivationDelay (K#),
/// stakeUnlockDelay (S#), checkpointInterval (C), fullReward (R^F),
/// partialReward (R^P), alternatives (ALT), maxBlockTxs, and optionally
/// blockTimeoutMs, minBlockIntervalMs, committeeSize, accounts.
struct Genesis {
    std::uint32_t version = 1;
    std::array<std::uint8_t, 32> seed{};
    StakeDelays delays;
    Height checkpointInterval = 10;
    Amount fullReward = 10;
    Amount partialReward = 1;
    unsigned alternatives = 3;
    std::size_t maxBlockTxs = 30;
    std::uint64_t blockTimeoutMs = 2000;
    std::uint64_t minBlockIntervalMs = 0;
    std::size_t committeeSize = 5;
    std::vector<GenesisNode> nodes;
    std::vector<GenesisAccount> accounts;

    GlobalState initialState() const;
    /// Height-0 block: no producer, rand = seed || 0^32, stateRoot of initialState().
    Block genesisBlock() const;

    const GenesisNode* node(AccountId id) const;

    std::string toJson() const;
    /// Throws ConfigError with "source:line: message" on any schema problem.
    static Genesis parse(std::string_view text, const std::string& source = "genesis");
    static Genesis load(const std::string& path);
};

} // namespace onionpos
