#include "onionpos/genesis.hpp"

#include "onionpos/config.hpp"

#include <set>

namespace onionpos {

GlobalState Genesis::initialState() const
{
    GlobalState gs;
    for (const auto& n : nodes)
        gs.addAccount(n.id, n.publicKey, n.balance, n.stake);
    for (const auto& a : accounts)
        gs.addAccount(a.id, a.publicKey, a.balance, 0);
    return gs;
}

Block Genesis::genesisBlock() const
{
    Block b;
    b.hdr.id = 0;
    b.hdr.txsRoot = computeTxsRoot({});
    b.hdr.stateRoot = initialState().root();
    std::copy(seed.begin(), seed.end(), b.hdr.rand.bytes.begin());
    return b;
}

const GenesisNode* Genesis::node(AccountId id) const
{
    for (const auto& n : nodes)
        if (n.id == id)
            return &n;
    return nullptr;
}

std::string Genesis::toJson() const
{
    config::Json j;
    j["version"] = version;
    j["genesisSeed"] = toHex(seed);
    j["stakeActivationDelay"] = delays.activation;
    j["stakeUnlockDelay"] = delays.unlock;
    j["checkpointInterval"] = checkpointInterval;
    j["fullReward"] = fullReward;
    j["partialReward"] = partialReward;
    j["alternatives"] = alternatives;
    j["maxBlockTxs"] = maxBlockTxs;
    j["blockTimeoutMs"] = blockTimeoutMs;
    j["minBlockIntervalMs"] = minBlockIntervalMs;
    j["committeeSize"] = committeeSize;
    auto& ns = j["nodes"] = config::Json::array();
    for (const auto& n : nodes)
        ns.push_back({{"id", n.id},
                      {"publicKey", n.publicKey.hex()},
                      {"networkAddress", n.networkAddress.toString()},
                      {"stake", n.stake},
                      {"balance", n.balance}});
    if (!accounts.empty()) {
        auto& as = j["accounts"] = config::Json::array();
        for (const auto& a : accounts)
            as.push_back({{"id", a.id}, {"publicKey", a.publicKey.hex()}, {"balance", a.balance}});
    }
    return j.dump(2) + "\n";
}

namespace {

PublicKey parseKey(const std::string& hex, std::string_view text, const std::string& source)
{
    try {
        return PublicKey::fromHex(hex);
    } catch (const DecodeError& e) {
        config::fail(text, source, "publicKey", "bad publicKey '" + hex + "': " + e.what());
    }
}

} // namespace

Genesis Genesis::parse(std::string_view text, const std::string& source)
{
    auto j = config::parse(text, source);
    if (!j.is_object())
        throw ConfigError(source + ":1: genesis must be a JSON object");
    config::rejectUnknownKeys(j,
                              {"version", "genesisSeed", "stakeActivationDelay", "stakeUnlockDelay",
                               "checkpointInterval", "fullReward", "partialReward", "alternatives", "maxBlockTxs",
                               "blockTimeoutMs", "minBlockIntervalMs", "committeeSize", "nodes", "accounts"},
                              text, source);
    Genesis g;
    g.version = config::required<std::uint32_t>(j, "version", text, source);
    if (g.version != 1)
        config::fail(text, source, "version", "unsupported genesis version " + std::to_string(g.version));
    try {
        g.seed = fixedFromHex<32>(config::required<std::string>(j, "genesisSeed", text, source));
    } catch (const DecodeError& e) {
        config::fail(text, source, "genesisSeed", std::string("genesisSeed: ") + e.what());
    }
    g.delays.activation = config::required<Height>(j, "stakeActivationDelay", text, source);
    g.delays.unlock = config::required<Height>(j, "stakeUnlockDelay", text, source);
    g.checkpointInterval = config::required<Height>(j, "checkpointInterval", text, source);
    g.fullReward = config::required<Amount>(j, "fullReward", text, source);
    g.partialReward = config::required<Amount>(j, "partialReward", text, source);
    g.alternatives = config::required<unsigned>(j, "alternatives", text, source);
    g.maxBlockTxs = config::required<std::size_t>(j, "maxBlockTxs", text, source);
    g.blockTimeoutMs = config::optional<std::uint64_t>(j, "blockTimeoutMs", g.blockTimeoutMs, text, source);
    g.minBlockIntervalMs = config::optional<std::uint64_t>(j, "minBlockIntervalMs", g.minBlockIntervalMs, text, source);
    g.committeeSize = config::optional<std::size_t>(j, "committeeSize", g.committeeSize, text, source);

    if (g.checkpointInterval == 0)
        config::fail(text, source, "checkpointInterval", "checkpointInterval must be >= 1");
    if (g.maxBlockTxs == 0)
        config::fail(text, source, "maxBlockTxs", "maxBlockTxs must be >= 1");
    if (g.partialReward >= g.fullReward && g.fullReward > 0)
        config::fail(text, source, "partialReward", "partialReward must be below fullReward");

    if (!j.contains("nodes") || !j["nodes"].is_array() || j["nodes"].empty())
        config::fail(text, source, "nodes", "'nodes' must be a non-empty array");
    std::set<AccountId> ids;
    for (const auto& n : j["nodes"]) {
        config::rejectUnknownKeys(n, {"id", "publicKey", "networkAddress", "stake", "balance"}, text, source);
        GenesisNode node;
        node.id = config::required<AccountId>(n, "id", text, source);
        if (node.id != g.nodes.size())
            config::fail(text, source, "nodes",
                         "node ids must follow list order; expected " + std::to_string(g.nodes.size()) + ", got " +
                             std::to_string(node.id));
        node.publicKey = parseKey(config::required<std::string>(n, "publicKey", text, source), text, source);
        try {
            node.networkAddress = Address::parse(config::required<std::string>(n, "networkAddress", text, source));
        } catch (const std::invalid_argument& e) {
            config::fail(text, source, "networkAddress", e.what());
        }
        node.stake = config::required<Amount>(n, "stake", text, source);
        node.balance = config::required<Amount>(n, "balance", text, source);
        ids.insert(node.id);
        g.nodes.push_back(node);
    }
    if (j.contains("accounts")) {
        for (const auto& a : j["accounts"]) {
            config::rejectUnknownKeys(a, {"id", "publicKey", "balance"}, text, source);
            GenesisAccount acct;
            acct.id = config::required<AccountId>(a, "id", text, source);
            if (!ids.insert(acct.id).second)
                config::fail(text, source, "accounts", "duplicate account id " + std::to_string(acct.id));
            acct.publicKey = parseKey(config::required<std::string>(a, "publicKey", text, source), text, source);
            acct.balance = config::required<Amount>(a, "balance", text, source);
            g.accounts.push_back(acct);
        }
    }
    try {
        (void)g.initialState();
    } catch (const std::invalid_argument& e) {
        config::fail(text, source, "nodes", e.what());
    }
    return g;
}

Genesis Genesis::load(const std::string& path)
{
    return parse(config::readFile(path), path);
}

} // namespace onionpos
