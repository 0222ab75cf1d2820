#include "onionpos/election.hpp"
#include "onionpos/rng.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace onionpos;
using namespace onionpos::testing;

namespace {

const StakeMap kFourStakers{{0, 10}, {1, 20}, {2, 30}, {3, 40}};

ElectionValue ev(std::string_view s)
{
    return electionValue(asBytes(s), ElectionParams{});
}

} // namespace

TEST(Election, HandExecutedSmallMax)
{
    ElectionParams p{100, 3};
    auto ends = intervalEnds(kFourStakers, p);
    ASSERT_EQ(ends.size(), 4u);
    EXPECT_EQ(ends[0].second, electionValueFromUint(10));
    EXPECT_EQ(ends[1].second, electionValueFromUint(30));
    EXPECT_EQ(ends[2].second, electionValueFromUint(60));
    EXPECT_EQ(ends[3].second, electionValueFromUint(99));
    auto ls = elect(electionValueFromUint(25), 0, kFourStakers, p);
    ASSERT_TRUE(ls);
    EXPECT_EQ(ls->leader, 1u);
    // Remaining order from the step-by-step reference oracle.
    EXPECT_EQ(ls->alternatives, (std::vector<AccountId>{2, 3, 0}));
}

TEST(Election, AltIdxSlicesTheSequence)
{
    ElectionParams p{100, 3};
    auto full = elect(electionValueFromUint(25), 0, kFourStakers, p);
    auto one = elect(electionValueFromUint(25), 1, kFourStakers, p);
    ASSERT_TRUE(full && one);
    EXPECT_EQ(one->leader, full->alternatives[0]);
    EXPECT_EQ(one->alternatives, (std::vector<AccountId>{3, 0}));
    auto three = elect(electionValueFromUint(25), 3, kFourStakers, p);
    ASSERT_TRUE(three);
    EXPECT_TRUE(three->alternatives.empty());
}

TEST(Election, FullSizeOracleVectors)
{
    ElectionParams p;
    EXPECT_EQ(selectionOrder(ev("round"), 4, kFourStakers, p), (std::vector<AccountId>{3, 2, 1, 0}));
    auto g = fixtureGenesis();
    auto genesisRand = g.genesisBlock().hdr.rand;
    EXPECT_EQ(selectionOrder(electionValue(genesisRand.view(), p), 4, g.initialState().activeStakes(), p),
              (std::vector<AccountId>{2, 0, 3, 1}));
    EXPECT_EQ(electCommittee(checkpointSeed(genesisRand, 10, p), 3, g.initialState().activeStakes(), p),
              (std::vector<AccountId>{2, 0, 3}));
}

TEST(Election, ZeroStakeNeverElectedEvenAtZero)
{
    ElectionParams p{100, 3};
    StakeMap s{{0, 0}, {1, 20}, {2, 30}, {3, 40}};
    EXPECT_EQ(selectionOrder(electionValueFromUint(0), 3, s, p), (std::vector<AccountId>{1, 3, 2}));
    for (std::uint64_t r = 0; r < 100; ++r) {
        auto ls = elect(electionValueFromUint(r), 0, s, p);
        ASSERT_TRUE(ls);
        EXPECT_NE(ls->leader, 0u);
        for (auto a : ls->alternatives)
            EXPECT_NE(a, 0u);
    }
}

TEST(Election, SingleStaker)
{
    StakeMap s{{5, 1}};
    ElectionParams p{0, 0};
    auto ls = elect(ev("anything"), 0, s, p);
    ASSERT_TRUE(ls);
    EXPECT_EQ(ls->leader, 5u);
    EXPECT_TRUE(ls->alternatives.empty());
}

TEST(Election, CapsWhenTooFewStakers)
{
    StakeMap s{{0, 1}, {1, 1}};
    ElectionParams p{0, 3};
    auto ls = elect(ev("r"), 0, s, p);
    ASSERT_TRUE(ls);
    EXPECT_EQ(ls->alternatives.size(), 1u);
    EXPECT_FALSE(elect(ev("r"), 2, s, p));
}

TEST(Election, Errors)
{
    EXPECT_THROW(elect(ev("r"), 0, StakeMap{}, ElectionParams{}), NoEligibleStake);
    EXPECT_THROW(elect(ev("r"), 0, StakeMap{{0, 0}}, ElectionParams{}), NoEligibleStake);
    EXPECT_THROW(elect(ev("r"), 4, kFourStakers, ElectionParams{0, 3}), std::invalid_argument);
}

TEST(Election, CommitteeConsistency)
{
    ElectionParams p;
    auto seed = ev("seed");
    EXPECT_EQ(electCommittee(seed, 1, kFourStakers, p).front(), elect(seed, 0, kFourStakers, p)->leader);
    auto all = electCommittee(seed, 10, kFourStakers, p);
    EXPECT_EQ(std::set<AccountId>(all.begin(), all.end()), (std::set<AccountId>{0, 1, 2, 3}));
}

TEST(Election, DistinctAndDeterministic)
{
    ElectionParams p;
    Rng rng(11);
    for (int i = 0; i < 1000; ++i) {
        ElectionValue v{};
        for (auto& b : v)
            b = static_cast<std::uint8_t>(rng.next());
        auto a = elect(v, 0, kFourStakers, p);
        auto b = elect(v, 0, kFourStakers, p);
        ASSERT_TRUE(a);
        EXPECT_EQ(*a, *b);
        std::set<AccountId> u{a->leader};
        u.insert(a->alternatives.begin(), a->alternatives.end());
        EXPECT_EQ(u.size(), 4u);
    }
}

TEST(RoundRandomness, UniqueAndKeyBound)
{
    Signature prev;
    prev.bytes.fill(3);
    auto a = keyOf(1), b = keyOf(2);
    auto ra = roundRandomness(prev, a.sk);
    EXPECT_EQ(ra, roundRandomness(prev, a.sk));
    EXPECT_NE(ra, roundRandomness(prev, b.sk));
    EXPECT_TRUE(verify(a.pk, prev.view(), ra));
}
