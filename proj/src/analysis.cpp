#include "onionpos/analysis.hpp"

#include "onionpos/anonet.hpp"
#include "onionpos/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>

namespace onionpos {

double deanonProbability(double a, unsigned m, unsigned p)
{
    if (!(a >= 0.0 && a <= 1.0) || m == 0 || p == 0)
        throw std::invalid_argument("need 0 <= a <= 1, m >= 1, p >= 1");
    return 1.0 - std::pow(1.0 - std::pow(a, m), p);
}

double deanonMonteCarlo(double a, unsigned m, unsigned p, std::size_t trials, std::uint64_t seed)
{
    if (!(a >= 0.0 && a <= 1.0) || m == 0 || p == 0 || trials == 0)
        throw std::invalid_argument("need 0 <= a <= 1, m >= 1, p >= 1, trials >= 1");
    Rng rng(seed);
    std::size_t hits = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        bool exposed = false;
        for (unsigned c = 0; c < p; ++c) {
            bool owned = true;
            for (unsigned h = 0; h < m; ++h)
                owned = rng.unit() < a && owned;
            exposed = exposed || owned;
        }
        hits += exposed;
    }
    return static_cast<double>(hits) / static_cast<double>(trials);
}

FirstSpyResult firstSpyEstimate(const std::vector<CaptureRecord>& capture, const std::vector<BlockTruth>& truth,
                                std::size_t nodeCount)
{
    // First clear and first link-encrypted sighting per message digest.
    std::map<Digest, const CaptureRecord*> clear, sealed;
    for (const auto& c : capture) {
        if (!c.content)
            continue;
        if (c.plaintext)
            clear.emplace(*c.content, &c);
        else if (c.kind == static_cast<std::uint8_t>(EnvelopeKind::LinkEncrypted))
            sealed.emplace(*c.content, &c);
    }
    FirstSpyResult r;
    for (const auto& b : truth) {
        ++r.blocks;
        const CaptureRecord* seen = nullptr;
        if (auto it = clear.find(b.msgDigest); it != clear.end())
            seen = it->second;
        else if (auto jt = sealed.find(b.msgDigest); jt != sealed.end())
            seen = jt->second;
        if (seen) {
            ++r.observed;
            r.correct += seen->src == b.producerAddr;
        } else if (nodeCount == 1) {
            ++r.correct;
        }
    }
    r.successRate = r.blocks ? static_cast<double>(r.correct) / static_cast<double>(r.blocks) : 0.0;
    return r;
}

namespace {

[[noreturn]] void csvFail(const std::string& source, std::size_t line, const std::string& msg)
{
    throw ConfigError(source + ":" + std::to_string(line) + ": " + msg);
}

std::vector<std::string_view> splitComma(std::string_view s)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        auto pos = s.find(',', start);
        out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos)
            return out;
        start = pos + 1;
    }
}

std::uint64_t parseUint(std::string_view f, const std::string& source, std::size_t line, const char* what)
{
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (ec != std::errc{} || p != f.data() + f.size() || f.empty())
        csvFail(source, line, std::string("bad ") + what + " '" + std::string(f) + "'");
    return v;
}

// "123.456" milliseconds to microseconds, exactly.
Micros parseMs(std::string_view f, const std::string& source, std::size_t line)
{
    auto dot = f.find('.');
    auto whole = f.substr(0, dot);
    Micros us = static_cast<Micros>(parseUint(whole, source, line, "round_ms")) * 1000;
    if (dot != std::string_view::npos) {
        auto frac = f.substr(dot + 1);
        if (frac.empty() || frac.size() > 3)
            csvFail(source, line, "bad round_ms '" + std::string(f) + "'");
        Micros fr = static_cast<Micros>(parseUint(frac, source, line, "round_ms"));
        for (std::size_t k = frac.size(); k < 3; ++k)
            fr *= 10;
        us += fr;
    }
    return us;
}

std::string fixed3(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

} // namespace

std::vector<BlockRow> readMetricsCsv(std::istream& in, const std::string& source)
{
    std::vector<BlockRow> rows;
    std::string line;
    std::size_t n = 0;
    Micros t = 0;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (n == 1) {
            if (line != "height,producer,alt_idx,tx_count,round_ms,bytes")
                csvFail(source, n, "expected header 'height,producer,alt_idx,tx_count,round_ms,bytes'");
            continue;
        }
        if (line.empty())
            continue;
        auto f = splitComma(line);
        if (f.size() != 6)
            csvFail(source, n, "expected 6 fields, got " + std::to_string(f.size()));
        BlockRow r;
        r.height = parseUint(f[0], source, n, "height");
        r.producer = parseUint(f[1], source, n, "producer");
        r.altIdx = static_cast<unsigned>(parseUint(f[2], source, n, "alt_idx"));
        r.txCount = parseUint(f[3], source, n, "tx_count");
        r.roundTime = parseMs(f[4], source, n);
        r.bytes = parseUint(f[5], source, n, "bytes");
        t += r.roundTime;
        r.createdAt = t;
        rows.push_back(r);
    }
    if (n == 0)
        csvFail(source, 1, "empty file (missing header)");
    return rows;
}

std::vector<ThroughputWindow> throughputSeries(const std::vector<BlockRow>& rows, double windowSeconds)
{
    if (!(windowSeconds > 0))
        throw std::invalid_argument("window must be positive");
    std::vector<ThroughputWindow> out;
    if (rows.empty())
        return out;
    const Micros w = std::max<Micros>(1, std::llround(windowSeconds * kMicrosPerSecond));
    Micros t = 0;
    for (const auto& r : rows) {
        t += r.roundTime;
        // A block lands in the window holding its creation time; the final
        // instant belongs to the last window.
        std::size_t idx = static_cast<std::size_t>(t / w);
        if (idx > 0 && t % w == 0)
            --idx;
        if (out.size() <= idx)
            out.resize(idx + 1);
        out[idx].txs += r.txCount;
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i].start = static_cast<double>(i) * windowSeconds;
        out[i].tps = static_cast<double>(out[i].txs) / windowSeconds;
    }
    return out;
}

RunAggregate aggregate(const std::string& label, const std::vector<BlockRow>& rows)
{
    RunAggregate a;
    a.label = label;
    a.blocks = rows.size();
    Micros t = 0;
    for (const auto& r : rows) {
        a.txs += r.txCount;
        a.altBlocks += r.altIdx > 0;
        a.bytes += r.bytes;
        t += r.roundTime;
    }
    a.elapsedSeconds = static_cast<double>(t) / kMicrosPerSecond;
    a.tps = t > 0 ? static_cast<double>(a.txs) / a.elapsedSeconds : 0.0;
    a.meanRoundMs = rows.empty() ? 0.0 : static_cast<double>(t) / 1000.0 / static_cast<double>(rows.size());
    return a;
}

void writeSeriesCsv(std::ostream& out, const std::vector<ThroughputWindow>& series)
{
    out << "window_start_s,txs,tps\n";
    for (const auto& w : series)
        out << fixed3(w.start) << ',' << w.txs << ',' << fixed3(w.tps) << '\n';
}

void writeComparisonCsv(std::ostream& out, const std::vector<RunAggregate>& runs)
{
    out << "run,blocks,txs,elapsed_s,tps,relative_tps,alt_blocks,mean_round_ms,bytes\n";
    for (const auto& r : runs) {
        const double base = runs.front().tps;
        out << r.label << ',' << r.blocks << ',' << r.txs << ',' << fixed3(r.elapsedSeconds) << ',' << fixed3(r.tps)
            << ',' << fixed3(base > 0 ? r.tps / base : 0.0) << ',' << r.altBlocks << ',' << fixed3(r.meanRoundMs)
            << ',' << r.bytes << '\n';
    }
}

} // namespace onionpos
