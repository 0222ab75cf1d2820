#pragma once

// Runs a scenario on the simulated network: consensus engines over anonet
// nodes, synthetic tx clients, churn, and a passive link capture.

#include "onionpos/consensus.hpp"
#include "onionpos/scenario.hpp"

#include <iosfwd>
#include <vector>

namespace onionpos {

/// One block of the reference node's final chain.
struct BlockRow {
    Height height = 0;
    AccountId producer = 0;
    unsigned altIdx = 0;
    std::size_t txCount = 0;
    /// Creation time minus the parent's creation time.
    Micros roundTime = 0;
    /// Bytes put on the wire by all nodes during that interval.
    std::uint64_t bytes = 0;
    Micros createdAt = 0;
};

/// Ground truth the adversary is scored against.
struct BlockTruth {
    Height height = 0;
    Digest hash;
    AccountId producer = 0;
    Address producerAddr;
    /// Digest of the gossiped block message (matches CaptureRecord::content).
    Digest msgDigest;
};

struct NodeOutcome {
    AccountId id = 0;
    bool online = true;
    Height height = 0;
    Height finalizedHeight = 0;
    Digest bestStateRoot;
    Amount supply = 0;
    /// Genesis supply plus rewards minted along this node's best chain.
    Amount expectedSupply = 0;
};

struct ScenarioSummary {
    double elapsedSeconds = 0;
    std::size_t blocks = 0;
    std::uint64_t txs = 0;
    double throughput = 0;
    std::uint64_t altBlocks = 0;
    std::uint64_t timeouts = 0;
    std::uint64_t forkSwitches = 0;
    std::uint64_t checkpointsFinalized = 0;
    std::uint64_t checkpointsNoDecision = 0;
    Height finalHeight = 0;
    Height finalizedHeight = 0;
    /// Lowest finalized height over the nodes online at the end.
    Height commonFinalizedHeight = 0;
    bool finalizedRootsAgree = true;
    bool supplyConserved = true;
    std::uint64_t txsSubmitted = 0;
    std::uint64_t bytesOnWire = 0;
    std::uint64_t datagrams = 0;
    std::uint64_t datagramsDropped = 0;
    std::uint64_t blocksRejected = 0;
};

struct ScenarioResult {
    ScenarioConfig config;
    AccountId referenceNode = 0;
    std::vector<BlockRow> rows;
    std::vector<BlockTruth> truth;
    std::vector<NodeOutcome> nodes;
    ScenarioSummary summary;
    std::vector<CaptureRecord> capture;
    /// Heights whose elected leader was held offline by the outage script.
    std::vector<Height> outageHeights;
};

/// Throws ConfigError when the scenario cannot be instantiated.
ScenarioResult runScenario(const ScenarioConfig& cfg);

void writeMetricsCsv(std::ostream& out, const std::vector<BlockRow>& rows);
void writeSummaryCsv(std::ostream& out, const ScenarioResult& r);
void writeCaptureCsv(std::ostream& out, const std::vector<CaptureRecord>& capture);

/// Milliseconds with three decimals, locale-independent.
std::string formatMs(Micros t);

} // namespace onionpos
