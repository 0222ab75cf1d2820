#include "onionpos/cli.hpp"

#include "onionpos/analysis.hpp"
#include "onionpos/config.hpp"
#include "onionpos/election.hpp"
#include "onionpos/harness.hpp"
#include "onionpos/net.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;

namespace onionpos {

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

/// Key file: {"id": N, "publicKey": hex, "seed": hex}.
struct KeyFile {
    AccountId id = 0;
    KeyPair keys;
    std::array<std::uint8_t, kSeedSize> seed{};
};

std::string keyFileJson(AccountId id, const std::array<std::uint8_t, kSeedSize>& seed)
{
    const auto kp = KeyPair::fromSeed(seed);
    config::Json j;
    j["id"] = id;
    j["publicKey"] = kp.pk.hex();
    j["seed"] = toHex(seed);
    return j.dump(2) + "\n";
}

KeyFile loadKeyFile(const std::string& path)
{
    const auto text = config::readFile(path);
    auto j = config::parse(text, path);
    config::rejectUnknownKeys(j, {"id", "publicKey", "seed"}, text, path);
    KeyFile k;
    k.id = config::required<AccountId>(j, "id", text, path);
    try {
        k.seed = fixedFromHex<kSeedSize>(config::required<std::string>(j, "seed", text, path));
    } catch (const DecodeError& e) {
        config::fail(text, path, "seed", std::string("bad seed: ") + e.what());
    }
    k.keys = KeyPair::fromSeed(k.seed);
    if (j.contains("publicKey") && config::required<std::string>(j, "publicKey", text, path) != k.keys.pk.hex())
        config::fail(text, path, "publicKey", "publicKey does not match seed");
    return k;
}

std::string shortHex(const Digest& d) { return toHex(ByteView(d.bytes).first(8)); }

std::string fixed3(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

// ------------------------------------------------------------------- run

struct RunOpts {
    std::string scenario;
    std::string out;
    std::optional<std::uint64_t> seed;
};

int cmdRun(const RunOpts& o, std::ostream& out, std::ostream& err)
{
    ScenarioConfig cfg;
    try {
        cfg = ScenarioConfig::load(o.scenario);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }
    if (o.seed)
        cfg.seed = *o.seed;
    const ScenarioResult r = runScenario(cfg);

    fs::create_directories(o.out);
    const fs::path dir(o.out);
    {
        std::ofstream f(dir / "metrics.csv", std::ios::binary);
        writeMetricsCsv(f, r.rows);
    }
    {
        std::ofstream f(dir / "summary.csv", std::ios::binary);
        writeSummaryCsv(f, r);
    }
    if (cfg.capture) {
        std::ofstream f(dir / "capture.csv", std::ios::binary);
        writeCaptureCsv(f, r.capture);
    }
    out << "SCENARIO=" << cfg.name << " MODE=" << toString(cfg.anon.mode) << " NODES=" << cfg.nodeCount
        << " SEED=" << cfg.seed << "\n";
    out << "HEIGHT=" << r.summary.finalHeight << " FINALIZED=" << r.summary.commonFinalizedHeight
        << " ALT_BLOCKS=" << r.summary.altBlocks << " FORKS=" << r.summary.forkSwitches << "\n";
    out << "TPS=" << fixed3(r.summary.throughput) << "\n";
    if (!r.summary.finalizedRootsAgree || !r.summary.supplyConserved) {
        err << "error: run ended with diverging finalized state or broken supply accounting\n";
        return kRuntime;
    }
    return kOk;
}

// ------------------------------------------------------------------ node

std::atomic<EventLoop*> gLoop{nullptr};

extern "C" void onSignal(int)
{
    if (auto* l = gLoop.load())
        l->stop();
}

class LogObserver : public EngineObserver {
public:
    explicit LogObserver(std::ostream& out) : out_(out) {}
    void onBlockAccepted(AccountId, const ChainEntry& e, bool viaSync) override
    {
        out_ << "HEIGHT=" << e.height << " ALT=" << e.altIdx() << " PRODUCER=" << e.leaders.leader
             << " TXS=" << e.block.txs.size() << " HASH=" << shortHex(e.hash) << (viaSync ? " SYNC=1" : "")
             << std::endl;
    }
    void onFinalized(AccountId, Height h, const Digest& d) override
    {
        out_ << "FINALIZED=" << h << " HASH=" << shortHex(d) << std::endl;
    }
    void onTimeout(AccountId, Height h, unsigned r) override
    {
        out_ << "TIMEOUT HEIGHT=" << h << " R=" << r << std::endl;
    }

private:
    std::ostream& out_;
};

struct NodeOpts {
    std::string genesis;
    AccountId id = 0;
    std::string mode = "torlike";
    std::string key;
    double duration = 0;
    std::size_t circuits = 8;
    std::size_t hops = 3;
    std::uint64_t rotation = 0;
};

int cmdNode(const NodeOpts& o, std::ostream& out, std::ostream& err)
{
    Genesis g;
    KeyFile k;
    AnonConfig anon;
    try {
        g = Genesis::load(o.genesis);
        if (!g.node(o.id)) {
            err << "error: node " << o.id << " is not listed in " << o.genesis << "\n";
            return kUsage;
        }
        const std::string keyPath =
            o.key.empty() ? (fs::path(o.genesis).parent_path() / ("node" + std::to_string(o.id) + ".key")).string()
                          : o.key;
        k = loadKeyFile(keyPath);
        if (k.keys.pk != g.node(o.id)->publicKey) {
            err << "error: " << keyPath << " does not hold the key of node " << o.id << "\n";
            return kUsage;
        }
        auto m = parseAnonMode(o.mode);
        if (!m) {
            err << "error: unknown mode '" << o.mode << "' (torlike, gossipnode, dandelion, none)\n";
            return kUsage;
        }
        anon.mode = *m;
        anon.nCircuits = o.circuits;
        anon.mHops = o.hops;
        anon.rotationPeriod = o.rotation;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }

    LogObserver log(out);
    std::unique_ptr<SocketNode> node;
    try {
        node = std::make_unique<SocketNode>(g, o.id, k.keys, anon, ProtocolParams::fromGenesis(g), &log);
    } catch (const std::system_error& e) {
        err << "error: " << e.what() << "\n";
        return kRuntime;
    }
    out << "NODE=" << o.id << " ADDR=" << g.node(o.id)->networkAddress.toString() << " MODE=" << toString(anon.mode)
        << std::endl;
    gLoop = &node->loop();
    auto prevInt = std::signal(SIGINT, onSignal);
    auto prevTerm = std::signal(SIGTERM, onSignal);
    std::optional<Micros> dur;
    if (o.duration > 0)
        dur = static_cast<Micros>(o.duration * kMicrosPerSecond);
    node->run(dur);
    std::signal(SIGINT, prevInt);
    std::signal(SIGTERM, prevTerm);
    gLoop = nullptr;
    out << "STOPPED HEIGHT=" << node->engine().height() << " FINALIZED=" << node->engine().chain().finalizedHeight()
        << std::endl;
    return kOk;
}

// ----------------------------------------------------------------- elect

struct ElectOpts {
    std::string genesis;
    std::string rand;
    unsigned alt = 0;
    std::size_t histogram = 0;
};

int cmdElect(const ElectOpts& o, std::ostream& out, std::ostream& err)
{
    Genesis g;
    try {
        g = Genesis::load(o.genesis);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }
    if (o.alt > g.alternatives) {
        err << "error: --alt " << o.alt << " out of range; valid range is 0.." << g.alternatives << "\n";
        return kUsage;
    }
    Bytes rand;
    try {
        rand = fromHex(o.rand);
    } catch (const DecodeError& e) {
        err << "error: --rand is not valid hex: " << e.what() << "\n";
        return kUsage;
    }
    if (rand.empty()) {
        err << "error: --rand must not be empty\n";
        return kUsage;
    }
    ElectionParams params;
    params.alternatives = g.alternatives;
    const auto stakes = g.initialState().activeStakes();
    try {
        auto ls = elect(electionValue(rand, params), o.alt, stakes, params);
        if (!ls) {
            err << "error: fewer than " << o.alt + 1 << " eligible stakers\n";
            return kRuntime;
        }
        out << "LEADER=" << ls->leader << "\nALTERNATIVES=";
        for (std::size_t i = 0; i < ls->alternatives.size(); ++i)
            out << (i ? "," : "") << ls->alternatives[i];
        out << "\n";
        if (o.histogram) {
            std::map<AccountId, std::size_t> counts;
            for (std::size_t i = 0; i < o.histogram; ++i) {
                ByteWriter w;
                w.raw(rand).u64(i);
                auto r = elect(electionValue(hash(w.bytes()).view(), params), 0, stakes, params);
                ++counts[r->leader];
            }
            out << "node,stake,count,share\n";
            for (const auto& [id, stake] : stakes)
                out << id << ',' << stake << ',' << counts[id] << ','
                    << fixed3(static_cast<double>(counts[id]) / static_cast<double>(o.histogram)) << "\n";
        }
    } catch (const NoEligibleStake& e) {
        err << "error: " << e.what() << "\n";
        return kRuntime;
    }
    return kOk;
}

// --------------------------------------------------------------- analyze

struct AnalyzeOpts {
    std::string in;
    std::vector<std::string> compare;
    double window = 1.0;
    std::string out;
};

int cmdAnalyze(const AnalyzeOpts& o, std::ostream& out, std::ostream& err)
{
    if (!(o.window > 0)) {
        err << "error: --window must be positive\n";
        return kUsage;
    }
    std::vector<std::pair<std::string, std::vector<BlockRow>>> runs;
    try {
        for (const auto& path : [&] {
                 std::vector<std::string> all{o.in};
                 all.insert(all.end(), o.compare.begin(), o.compare.end());
                 return all;
             }()) {
            std::ifstream f(path, std::ios::binary);
            if (!f)
                throw ConfigError(path + ": cannot open file");
            std::string label = fs::path(path).parent_path().filename().string();
            if (label.empty())
                label = fs::path(path).stem().string();
            runs.emplace_back(label, readMetricsCsv(f, path));
        }
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }
    std::vector<RunAggregate> aggs;
    for (const auto& [label, rows] : runs)
        aggs.push_back(aggregate(label, rows));
    const auto series = throughputSeries(runs.front().second, o.window);
    if (!o.out.empty()) {
        fs::create_directories(o.out);
        std::ofstream s(fs::path(o.out) / "series.csv", std::ios::binary);
        writeSeriesCsv(s, series);
        std::ofstream c(fs::path(o.out) / "comparison.csv", std::ios::binary);
        writeComparisonCsv(c, aggs);
    } else {
        writeSeriesCsv(out, series);
        out << "\n";
        writeComparisonCsv(out, aggs);
    }
    out << "TPS=" << fixed3(aggs.front().tps) << "\n";
    return kOk;
}

// ---------------------------------------------------------------- keygen

struct KeygenOpts {
    std::size_t count = 0;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string host = "127.0.0.1";
    std::uint16_t basePort = 9000;
    Amount stake = 100;
    Amount balance = 1000000;
    std::uint64_t blockTimeoutMs = 500;
    std::uint64_t minBlockIntervalMs = 0;
};

int cmdKeygen(const KeygenOpts& o, std::ostream& out, std::ostream& err)
{
    auto drbg = o.seed ? Drbg::fromLabel("keygen", *o.seed) : Drbg::fromEntropy();
    if (o.count == 0) {
        out << keyFileJson(0, drbg.draw<kSeedSize>());
        return kOk;
    }
    if (o.out.empty()) {
        err << "error: --count needs --out DIR\n";
        return kUsage;
    }
    Genesis g;
    try {
        Address::parse(o.host + ":1");
    } catch (const std::invalid_argument& e) {
        err << "error: --host: " << e.what() << "\n";
        return kUsage;
    }
    if (o.basePort + o.count > 65536) {
        err << "error: port range exceeds 65535\n";
        return kUsage;
    }
    g.seed = drbg.draw<32>();
    g.blockTimeoutMs = o.blockTimeoutMs;
    g.minBlockIntervalMs = o.minBlockIntervalMs;
    fs::create_directories(o.out);
    for (std::size_t i = 0; i < o.count; ++i) {
        const auto seed = drbg.draw<kSeedSize>();
        GenesisNode n;
        n.id = i;
        n.publicKey = KeyPair::fromSeed(seed).pk;
        n.networkAddress = Address::parse(o.host + ":" + std::to_string(o.basePort + i));
        n.stake = o.stake;
        n.balance = o.balance;
        g.nodes.push_back(n);
        std::ofstream f(fs::path(o.out) / ("node" + std::to_string(i) + ".key"), std::ios::binary);
        f << keyFileJson(i, seed);
    }
    std::ofstream f(fs::path(o.out) / "genesis.json", std::ios::binary);
    f << g.toJson();
    out << "GENESIS=" << (fs::path(o.out) / "genesis.json").string() << " NODES=" << o.count << "\n";
    return kOk;
}

} // namespace

int runCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"PoS consensus node, simulator and analysis tools", "onionpos"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Print help for every subcommand");

    RunOpts ro;
    auto* run = app.add_subcommand("run", "Run a simulated scenario and write metrics CSVs");
    run->add_option("--scenario", ro.scenario, "Scenario JSON file")->required();
    run->add_option("--out", ro.out, "Output directory")->required();
    run->add_option("--seed", ro.seed, "Override the scenario seed");

    NodeOpts no;
    auto* node = app.add_subcommand("node", "Run one consensus node on UDP sockets");
    node->add_option("--genesis", no.genesis, "Genesis JSON file")->required();
    node->add_option("--id", no.id, "Node ID in the genesis")->required();
    node->add_option("--mode", no.mode, "torlike | gossipnode | dandelion | none")->capture_default_str();
    node->add_option("--key", no.key, "Key file (default: node<ID>.key next to the genesis)");
    node->add_option("--duration", no.duration, "Stop after this many seconds (default: until signalled)");
    node->add_option("--circuits", no.circuits, "Circuits per node")->capture_default_str()->check(CLI::Range(1, 64));
    node->add_option("--hops", no.hops, "Hops per circuit")->capture_default_str()->check(CLI::Range(1, 8));
    node->add_option("--rotation", no.rotation, "Rounds between circuit rotations (0 = never)")->capture_default_str();

    ElectOpts eo;
    auto* el = app.add_subcommand("elect", "Print the leader set for a randomness value");
    el->add_option("--genesis", eo.genesis, "Genesis JSON file")->required();
    el->add_option("--rand", eo.rand, "Previous block rand, hex")->required();
    el->add_option("--alt", eo.alt, "Timeout index")->capture_default_str();
    el->add_option("--histogram", eo.histogram, "Also sweep N derived rands and print leader shares");

    AnalyzeOpts ao;
    auto* an = app.add_subcommand("analyze", "Throughput series and run comparison from metrics CSVs");
    an->add_option("--in", ao.in, "Metrics CSV from run")->required();
    an->add_option("--compare", ao.compare, "Further metrics CSVs to compare against --in");
    an->add_option("--window", ao.window, "Series window in seconds")->capture_default_str();
    an->add_option("--out", ao.out, "Write series.csv and comparison.csv here instead of stdout");

    KeygenOpts ko;
    auto* kg = app.add_subcommand("keygen", "Generate key files and a matching genesis");
    kg->add_option("--count", ko.count, "Number of nodes (0: print one key to stdout)");
    kg->add_option("--out", ko.out, "Output directory");
    kg->add_option("--seed", ko.seed, "Deterministic key material");
    kg->add_option("--host", ko.host, "IPv4 host for node addresses")->capture_default_str();
    kg->add_option("--base-port", ko.basePort, "Port of node 0")->capture_default_str();
    kg->add_option("--stake", ko.stake, "Stake per node")->capture_default_str();
    kg->add_option("--balance", ko.balance, "Balance per node")->capture_default_str();
    kg->add_option("--block-timeout-ms", ko.blockTimeoutMs, "Block timeout")->capture_default_str();
    kg->add_option("--min-block-interval-ms", ko.minBlockIntervalMs, "Minimum block spacing")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }

    // Subcommand --help is surfaced as CallForHelp from the subcommand.
    try {
        if (*run)
            return cmdRun(ro, out, err);
        if (*node)
            return cmdNode(no, out, err);
        if (*el)
            return cmdElect(eo, out, err);
        if (*an)
            return cmdAnalyze(ao, out, err);
        if (*kg)
            return cmdKeygen(ko, out, err);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kRuntime;
    }
    return kUsage;
}

} // namespace onionpos
