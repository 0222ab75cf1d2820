#include "onionpos/election.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <set>

namespace onionpos {

namespace {

using Big = boost::multiprecision::uint512_t;

Big toBig(const ElectionValue& v)
{
    Big out;
    boost::multiprecision::import_bits(out, v.begin(), v.end(), 8, true);
    return out;
}

ElectionValue fromBig(const Big& b)
{
    ElectionValue out{};
    std::vector<std::uint8_t> raw;
    boost::multiprecision::export_bits(b, std::back_inserter(raw), 8, true);
    if (raw.size() > out.size())
        throw std::logic_error("election value exceeds 256 bits");
    std::copy(raw.begin(), raw.end(), out.begin() + static_cast<std::ptrdiff_t>(out.size() - raw.size()));
    return out;
}

Big maxOf(const ElectionParams& p)
{
    if (p.testMax != 0)
        return Big(p.testMax);
    return Big(1) << 256;
}

ElectionValue reduce(const Digest& d, const ElectionParams& p)
{
    Big v = toBig(d.bytes);
    return fromBig(v % maxOf(p));
}

} // namespace

ElectionValue electionValueFromUint(std::uint64_t v)
{
    ElectionValue out{};
    for (int i = 0; i < 8; ++i)
        out[31 - i] = static_cast<std::uint8_t>(v >> (8 * i));
    return out;
}

ElectionValue electionValue(ByteView randBytes, const ElectionParams& params)
{
    return reduce(hash(randBytes), params);
}

ElectionValue nextElectionValue(const ElectionValue& v, const ElectionParams& params)
{
    return reduce(hash(ByteView(v)), params);
}

std::vector<std::pair<AccountId, ElectionValue>> intervalEnds(const StakeMap& stakes, const ElectionParams& params)
{
    Big sum = 0;
    for (const auto& [id, stake] : stakes)
        sum += stake;
    if (sum == 0)
        throw NoEligibleStake();

    const Big max = maxOf(params);
    std::vector<std::pair<AccountId, Big>> ends;
    Big slider = 0;
    for (const auto& [id, stake] : stakes) { // std::map: ascending ID
        if (stake == 0)
            continue;
        slider += Big(stake) * max / sum;
        ends.emplace_back(id, slider);
    }
    ends.back().second = max - 1;

    std::vector<std::pair<AccountId, ElectionValue>> out;
    out.reserve(ends.size());
    for (const auto& [id, end] : ends)
        out.emplace_back(id, fromBig(end));
    return out;
}

std::vector<AccountId> selectionOrder(const ElectionValue& rand, std::size_t count, const StakeMap& stakes,
                                      const ElectionParams& params)
{
    auto ends = intervalEnds(stakes, params);
    count = std::min(count, ends.size());

    std::vector<AccountId> picked;
    picked.reserve(count);
    ElectionValue current = rand;
    // With a small test MAX the hash sequence can enter a cycle that never
    // reaches some staker; stop at the first repeated value.
    std::set<ElectionValue> visited;
    while (picked.size() < count && visited.insert(current).second) {
        // Big-endian fixed-width arrays compare lexicographically like numbers.
        auto it = std::find_if(ends.begin(), ends.end(), [&](const auto& e) { return current <= e.second; });
        if (it == ends.end())
            throw std::logic_error("election value outside [0, MAX)");
        if (std::find(picked.begin(), picked.end(), it->first) == picked.end())
            picked.push_back(it->first);
        current = nextElectionValue(current, params);
    }
    return picked;
}

std::optional<LeaderSet> elect(const ElectionValue& rand, unsigned altIdx, const StakeMap& stakes,
                               const ElectionParams& params)
{
    if (altIdx > params.alternatives)
        throw std::invalid_argument("altIdx " + std::to_string(altIdx) + " outside [0, " +
                                    std::to_string(params.alternatives) + "]");
    auto order = selectionOrder(rand, params.alternatives + 1, stakes, params);
    if (altIdx >= order.size())
        return std::nullopt;
    LeaderSet out;
    out.leader = order[altIdx];
    out.alternatives.assign(order.begin() + altIdx + 1, order.end());
    return out;
}

std::vector<AccountId> electCommittee(const ElectionValue& seed, std::size_t size, const StakeMap& stakes,
                                      const ElectionParams& params)
{
    return selectionOrder(seed, size, stakes, params);
}

ElectionValue checkpointSeed(const Signature& anchorRand, Height height, const ElectionParams& params)
{
    ByteWriter w;
    w.raw(anchorRand.bytes).raw(asBytes("checkpoint")).u64(height);
    return reduce(hash(w.bytes()), params);
}

Signature roundRandomness(const Signature& prevRand, const SecretKey& leaderKey)
{
    return sign(leaderKey, prevRand.view());
}

} // namespace onionpos
