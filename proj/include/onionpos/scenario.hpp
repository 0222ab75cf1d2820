#pragma once

// Experiment description for the harness, loaded from a JSON file.
//
// Keys (all optional except "nodes"):
//   name, nodes, stakes [per node], mode, circuits, hops, rotationPeriod,
//   maxBlockTxs, txRate (tx/s), clients, durationSeconds | durationRounds,
//   churn [{node, offlineAt, onlineAt}] (seconds; onlineAt may be omitted),
//   leaderOutage {fromHeight, rounds}, latencyMs (number = fixed, or
//   {min, max}), dropRate, seed, blockTimeoutMs, minBlockIntervalMs,
//   checkpointInterval, committeeSize, alternatives, fullReward,
//   partialReward, stakeActivationDelay, stakeUnlockDelay, capture.

#include "onionpos/anonet.hpp"
#include "onionpos/genesis.hpp"
#include "onionpos/sim.hpp"

#include <optional>
#include <string>
#include <vector>

namespace onionpos {

struct ChurnEvent {
    std::size_t node = 0;
    double offlineAt = 0;
    /// Never returns when unset.
    std::optional<double> onlineAt;
};

/// Keeps the elected leader of each height in [fromHeight, fromHeight + rounds)
/// offline for that round.
struct LeaderOutage {
    Height fromHeight = 0;
    Height rounds = 0;
};

struct ScenarioConfig {
    std::string name = "scenario";
    std::size_t nodeCount = 6;
    std::vector<Amount> stakes; // empty: 100 each
    AnonConfig anon;
    std::size_t maxBlockTxs = 30;
    double txRate = 0;
    std::size_t clients = 300;
    double durationSeconds = 0;
    Height durationRounds = 0;
    std::vector<ChurnEvent> churn;
    std::optional<LeaderOutage> leaderOutage;
    LatencyModel latency;
    double dropRate = 0;
    std::uint64_t seed = 1;
    std::uint64_t blockTimeoutMs = 500;
    std::uint64_t minBlockIntervalMs = 0;
    Height checkpointInterval = 10;
    std::size_t committeeSize = 5;
    unsigned alternatives = 3;
    Amount fullReward = 10;
    Amount partialReward = 1;
    StakeDelays delays;
    bool capture = false;

    /// Throws ConfigError "source:line: message".
    static ScenarioConfig parse(std::string_view text, const std::string& source = "scenario");
    static ScenarioConfig load(const std::string& path);

    /// Genesis for the run: node keys and client accounts are derived
    /// deterministically from the node/client index.
    Genesis genesis() const;
};

KeyPair scenarioNodeKey(std::size_t i);
KeyPair scenarioClientKey(std::size_t i);
Address scenarioNodeAddress(std::size_t i);
/// Account ID of client i (after the node IDs).
AccountId scenarioClientId(const ScenarioConfig& cfg, std::size_t i);

inline constexpr Amount kClientBalance = 1'000'000'000;
inline constexpr Amount kNodeBalance = 1'000'000;

} // namespace onionpos
