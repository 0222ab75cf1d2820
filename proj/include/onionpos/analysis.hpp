#pragma once

// Post-run analysis: deanonymization odds, the first-spy adversary, and
// metrics CSV aggregation for plotting.

#include "onionpos/harness.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace onionpos {

/// Probability that at least one of p circuits of m hops is entirely run by
/// the adversary, each hop being adversarial with probability a:
/// 1 - (1 - a^m)^p. Throws std::invalid_argument outside 0<=a<=1, m>=1, p>=1.
double deanonProbability(double a, unsigned m, unsigned p);

/// Same quantity estimated by sampling random circuits.
double deanonMonteCarlo(double a, unsigned m, unsigned p, std::size_t trials, std::uint64_t seed);

struct FirstSpyResult {
    std::size_t blocks = 0;
    /// Blocks whose message was seen on the wire at all.
    std::size_t observed = 0;
    std::size_t correct = 0;
    double successRate = 0;
};

/// For each block the adversary names the first address seen emitting its
/// message in the clear (or, failing that, the first link-encrypted copy).
/// With a single node there is only one candidate.
FirstSpyResult firstSpyEstimate(const std::vector<CaptureRecord>& capture, const std::vector<BlockTruth>& truth,
                                std::size_t nodeCount);

/// Reads a metrics CSV (height,producer,alt_idx,tx_count,round_ms,bytes).
/// Throws ConfigError "source:line: message" when malformed.
std::vector<BlockRow> readMetricsCsv(std::istream& in, const std::string& source);

struct ThroughputWindow {
    double start = 0; // seconds since the first round began
    std::uint64_t txs = 0;
    double tps = 0;
};

/// Buckets tx counts by block time (cumulative round_ms) into fixed windows.
std::vector<ThroughputWindow> throughputSeries(const std::vector<BlockRow>& rows, double windowSeconds);

struct RunAggregate {
    std::string label;
    std::size_t blocks = 0;
    std::uint64_t txs = 0;
    double elapsedSeconds = 0;
    double tps = 0;
    std::size_t altBlocks = 0;
    double meanRoundMs = 0;
    std::uint64_t bytes = 0;
};

RunAggregate aggregate(const std::string& label, const std::vector<BlockRow>& rows);

void writeSeriesCsv(std::ostream& out, const std::vector<ThroughputWindow>& series);
/// One row per run; relative_tps is against the first run.
void writeComparisonCsv(std::ostream& out, const std::vector<RunAggregate>& runs);

} // namespace onionpos
