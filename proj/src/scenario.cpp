#include "onionpos/scenario.hpp"

#include "onionpos/config.hpp"

#include <cmath>

namespace onionpos {

KeyPair scenarioNodeKey(std::size_t i)
{
    return KeyPair::fromSeed(Drbg::fromLabel("scenario-node", i).draw<kSeedSize>());
}

KeyPair scenarioClientKey(std::size_t i)
{
    return KeyPair::fromSeed(Drbg::fromLabel("scenario-client", i).draw<kSeedSize>());
}

Address scenarioNodeAddress(std::size_t i)
{
    return Address{{10, 0, static_cast<std::uint8_t>(i >> 8), static_cast<std::uint8_t>(i & 0xff)}, 7000};
}

AccountId scenarioClientId(const ScenarioConfig& cfg, std::size_t i) { return cfg.nodeCount + i; }

Genesis ScenarioConfig::genesis() const
{
    Genesis g;
    g.seed = Drbg::fromLabel("scenario-genesis", seed).draw<32>();
    g.delays = delays;
    g.checkpointInterval = checkpointInterval;
    g.fullReward = fullReward;
    g.partialReward = partialReward;
    g.alternatives = alternatives;
    g.maxBlockTxs = maxBlockTxs;
    g.blockTimeoutMs = blockTimeoutMs;
    g.minBlockIntervalMs = minBlockIntervalMs;
    g.committeeSize = committeeSize;
    for (std::size_t i = 0; i < nodeCount; ++i) {
        GenesisNode n;
        n.id = i;
        n.publicKey = scenarioNodeKey(i).pk;
        n.networkAddress = scenarioNodeAddress(i);
        n.stake = stakes.empty() ? 100 : stakes[i];
        n.balance = kNodeBalance;
        g.nodes.push_back(n);
    }
    for (std::size_t i = 0; i < clients; ++i)
        g.accounts.push_back(GenesisAccount{scenarioClientId(*this, i), scenarioClientKey(i).pk, kClientBalance});
    return g;
}

namespace {

double nonNegative(const config::Json& obj, const char* key, double fallback, std::string_view text,
                   const std::string& source)
{
    double v = config::optional<double>(obj, key, fallback, text, source);
    if (!(v >= 0) || !std::isfinite(v))
        config::fail(text, source, key, std::string("'") + key + "' must be a non-negative number");
    return v;
}

} // namespace

ScenarioConfig ScenarioConfig::parse(std::string_view text, const std::string& source)
{
    auto j = config::parse(text, source);
    if (!j.is_object())
        throw ConfigError(source + ":1: scenario must be a JSON object");
    config::rejectUnknownKeys(
        j, {"name", "nodes", "stakes", "mode", "circuits", "hops", "rotationPeriod", "maxBlockTxs", "txRate",
            "clients", "durationSeconds", "durationRounds", "churn", "leaderOutage", "latencyMs", "dropRate", "seed",
            "blockTimeoutMs", "minBlockIntervalMs", "checkpointInterval", "committeeSize", "alternatives",
            "fullReward", "partialReward", "stakeActivationDelay", "stakeUnlockDelay", "capture"},
        text, source);

    ScenarioConfig c;
    c.name = config::optional<std::string>(j, "name", c.name, text, source);
    c.nodeCount = config::required<std::size_t>(j, "nodes", text, source);
    if (c.nodeCount == 0 || c.nodeCount > 4096)
        config::fail(text, source, "nodes", "'nodes' must be between 1 and 4096");
    c.stakes = config::optional<std::vector<Amount>>(j, "stakes", {}, text, source);
    if (!c.stakes.empty() && c.stakes.size() != c.nodeCount)
        config::fail(text, source, "stakes",
                     "'stakes' lists " + std::to_string(c.stakes.size()) + " entries for " +
                         std::to_string(c.nodeCount) + " nodes");

    auto mode = config::optional<std::string>(j, "mode", "torlike", text, source);
    auto m = parseAnonMode(mode);
    if (!m)
        config::fail(text, source, "mode", "unknown mode '" + mode + "' (torlike, gossipnode, dandelion, none)");
    c.anon.mode = *m;
    c.anon.nCircuits = config::optional<std::size_t>(j, "circuits", c.anon.nCircuits, text, source);
    c.anon.mHops = config::optional<std::size_t>(j, "hops", c.anon.mHops, text, source);
    if (c.anon.nCircuits == 0)
        config::fail(text, source, "circuits", "'circuits' must be >= 1");
    if (c.anon.mHops == 0)
        config::fail(text, source, "hops", "'hops' must be >= 1");
    c.anon.rotationPeriod = config::optional<std::uint64_t>(j, "rotationPeriod", 0, text, source);

    c.maxBlockTxs = config::optional<std::size_t>(j, "maxBlockTxs", c.maxBlockTxs, text, source);
    if (c.maxBlockTxs == 0)
        config::fail(text, source, "maxBlockTxs", "'maxBlockTxs' must be >= 1");
    c.txRate = nonNegative(j, "txRate", 0, text, source);
    c.clients = config::optional<std::size_t>(j, "clients", c.clients, text, source);
    if (c.txRate > 0 && c.clients == 0)
        config::fail(text, source, "clients", "'clients' must be >= 1 when txRate > 0");
    if (j.contains("durationSeconds") && j.contains("durationRounds"))
        config::fail(text, source, "durationRounds", "give either 'durationSeconds' or 'durationRounds', not both");
    c.durationSeconds = nonNegative(j, "durationSeconds", 0, text, source);
    c.durationRounds = config::optional<Height>(j, "durationRounds", 0, text, source);

    if (j.contains("churn")) {
        if (!j["churn"].is_array())
            config::fail(text, source, "churn", "'churn' must be an array");
        for (const auto& e : j["churn"]) {
            if (!e.is_object())
                config::fail(text, source, "churn", "churn entries must be objects");
            config::rejectUnknownKeys(e, {"node", "offlineAt", "onlineAt"}, text, source);
            ChurnEvent ev;
            ev.node = config::required<std::size_t>(e, "node", text, source);
            if (ev.node >= c.nodeCount)
                config::fail(text, source, "node",
                             "churn references node " + std::to_string(ev.node) + " but only " +
                                 std::to_string(c.nodeCount) + " exist");
            ev.offlineAt = nonNegative(e, "offlineAt", 0, text, source);
            if (e.contains("onlineAt")) {
                ev.onlineAt = nonNegative(e, "onlineAt", 0, text, source);
                if (*ev.onlineAt <= ev.offlineAt)
                    config::fail(text, source, "onlineAt", "'onlineAt' must be after 'offlineAt'");
            }
            c.churn.push_back(ev);
        }
    }
    if (j.contains("leaderOutage")) {
        const auto& o = j["leaderOutage"];
        if (!o.is_object())
            config::fail(text, source, "leaderOutage", "'leaderOutage' must be an object");
        config::rejectUnknownKeys(o, {"fromHeight", "rounds"}, text, source);
        LeaderOutage lo;
        lo.fromHeight = config::required<Height>(o, "fromHeight", text, source);
        lo.rounds = config::required<Height>(o, "rounds", text, source);
        if (lo.fromHeight == 0)
            config::fail(text, source, "fromHeight", "'fromHeight' must be >= 1");
        c.leaderOutage = lo;
    }

    if (j.contains("latencyMs")) {
        const auto& l = j["latencyMs"];
        double lo = 0, hi = 0;
        if (l.is_number()) {
            lo = hi = nonNegative(j, "latencyMs", 0, text, source);
        } else if (l.is_object()) {
            config::rejectUnknownKeys(l, {"min", "max"}, text, source);
            lo = nonNegative(l, "min", 0, text, source);
            hi = nonNegative(l, "max", lo, text, source);
            if (hi < lo)
                config::fail(text, source, "max", "latency 'max' is below 'min'");
        } else {
            config::fail(text, source, "latencyMs", "'latencyMs' must be a number or {min, max}");
        }
        c.latency.min = static_cast<Micros>(std::llround(lo * kMicrosPerMs));
        c.latency.max = static_cast<Micros>(std::llround(hi * kMicrosPerMs));
    }
    c.dropRate = nonNegative(j, "dropRate", 0, text, source);
    if (c.dropRate >= 1)
        config::fail(text, source, "dropRate", "'dropRate' must be below 1");
    c.seed = config::optional<std::uint64_t>(j, "seed", c.seed, text, source);

    c.blockTimeoutMs = config::optional<std::uint64_t>(j, "blockTimeoutMs", c.blockTimeoutMs, text, source);
    if (c.blockTimeoutMs == 0)
        config::fail(text, source, "blockTimeoutMs", "'blockTimeoutMs' must be >= 1");
    c.minBlockIntervalMs =
        config::optional<std::uint64_t>(j, "minBlockIntervalMs", c.minBlockIntervalMs, text, source);
    c.checkpointInterval = config::optional<Height>(j, "checkpointInterval", c.checkpointInterval, text, source);
    if (c.checkpointInterval == 0)
        config::fail(text, source, "checkpointInterval", "'checkpointInterval' must be >= 1");
    c.committeeSize = config::optional<std::size_t>(j, "committeeSize", c.committeeSize, text, source);
    if (c.committeeSize == 0)
        config::fail(text, source, "committeeSize", "'committeeSize' must be >= 1");
    c.alternatives = config::optional<unsigned>(j, "alternatives", c.alternatives, text, source);
    c.fullReward = config::optional<Amount>(j, "fullReward", c.fullReward, text, source);
    c.partialReward = config::optional<Amount>(j, "partialReward", c.partialReward, text, source);
    if (c.partialReward >= c.fullReward && c.fullReward > 0)
        config::fail(text, source, "partialReward", "'partialReward' must be below 'fullReward'");
    c.delays.activation = config::optional<Height>(j, "stakeActivationDelay", c.delays.activation, text, source);
    c.delays.unlock = config::optional<Height>(j, "stakeUnlockDelay", c.delays.unlock, text, source);
    c.capture = config::optional<bool>(j, "capture", c.capture, text, source);
    return c;
}

ScenarioConfig ScenarioConfig::load(const std::string& path) { return parse(config::readFile(path), path); }

} // namespace onionpos
