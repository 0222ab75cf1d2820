#include "onionpos/state.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace onionpos;
using namespace onionpos::testing;

namespace {

struct StateFixture : ::testing::Test {
    KeyPair a = keyOf(1), b = keyOf(2), c = keyOf(3);
    GlobalState gs;
    StakeDelays delays{5, 20};

    void SetUp() override
    {
        gs.addAccount(0, a.pk, 10, 100);
        gs.addAccount(1, b.pk, 1000, 50);
        gs.addAccount(2, c.pk, 500, 0);
    }
};

} // namespace

TEST_F(StateFixture, ExactSpend)
{
    auto t = makeTx(a, b.pk, 7, 3, 0);
    EXPECT_FALSE(gs.applyTx(t, 1, delays));
    EXPECT_EQ(gs.find(0)->balance, 0u);
    EXPECT_EQ(gs.find(1)->balance, 1007u);
    EXPECT_EQ(gs.find(0)->nonce, 1u);
}

TEST_F(StateFixture, ZeroTransferOnlyBumpsNonce)
{
    auto before = *gs.find(0);
    EXPECT_FALSE(gs.applyTx(makeTx(a, b.pk, 0, 0, 0), 1, delays));
    auto after = *gs.find(0);
    EXPECT_EQ(after.balance, before.balance);
    EXPECT_EQ(after.nonce, before.nonce + 1);
}

TEST_F(StateFixture, ErrorsLeaveStateUntouched)
{
    const auto root = gs.root();
    auto replay = makeTx(b, a.pk, 1, 0, 0);
    EXPECT_FALSE(gs.applyTx(replay, 1, delays));
    const auto root1 = gs.root();
    EXPECT_EQ(gs.applyTx(replay, 1, delays), TxError::BadNonce);
    EXPECT_EQ(gs.root(), root1);
    EXPECT_EQ(gs.applyTx(makeTx(a, b.pk, 12, 0, 0), 1, delays), TxError::InsufficientBalance);
    EXPECT_EQ(gs.applyTx(makeTx(keyOf(77), b.pk, 1, 0, 0), 1, delays), TxError::UnknownSender);
    auto forged = makeTx(a, b.pk, 1, 0, 0);
    forged.val = 2;
    EXPECT_EQ(gs.applyTx(forged, 1, delays), TxError::BadSignature);
    EXPECT_EQ(gs.applyTx(makeTx(a, b.pk, 1, 0, 2), 1, delays), TxError::BadNonce);
    auto voted = makeTx(a, b.pk, 1, 0, 0, digestOf("elsewhere"));
    EXPECT_EQ(gs.applyTx(voted, 1, delays, [](const Digest&) { return false; }), TxError::StaleVoteRef);
    EXPECT_EQ(gs.root(), root1);
    EXPECT_NE(root, root1);
}

TEST_F(StateFixture, DepositActivatesAfterDelay)
{
    EXPECT_FALSE(gs.applyTx(makeTx(b, {}, 50, 0, 0, {}, TxKind::StakeDeposit), 10, delays));
    for (Height h = 10; h <= 14; ++h) {
        gs.advanceTo(h);
        EXPECT_EQ(gs.find(1)->stake, 50u) << h;
        EXPECT_EQ(gs.stakeSum(), 150u);
    }
    gs.advanceTo(15);
    EXPECT_EQ(gs.find(1)->stake, 100u);
    EXPECT_EQ(gs.stakeSum(), 200u);
    EXPECT_EQ(gs.find(1)->balance, 950u);
}

TEST_F(StateFixture, WithdrawLeavesElectionImmediatelyUnlocksLater)
{
    EXPECT_FALSE(gs.applyTx(makeTx(b, {}, 50, 0, 0, {}, TxKind::StakeWithdraw), 10, delays));
    EXPECT_EQ(gs.stakeSum(), 100u);
    EXPECT_EQ(gs.activeStakes().count(1), 0u);
    gs.advanceTo(29);
    EXPECT_EQ(gs.find(1)->balance, 1000u);
    gs.advanceTo(30);
    EXPECT_EQ(gs.find(1)->balance, 1050u);
    EXPECT_EQ(gs.find(1)->holdings(), 1050u);
}

TEST_F(StateFixture, StakeErrors)
{
    EXPECT_EQ(gs.applyTx(makeTx(b, {}, 51, 0, 0, {}, TxKind::StakeWithdraw), 1, delays), TxError::InsufficientStake);
    EXPECT_EQ(gs.applyTx(makeTx(a, {}, 11, 0, 0, {}, TxKind::StakeDeposit), 1, delays),
              TxError::InsufficientBalance);
    auto before = gs.root();
    EXPECT_FALSE(gs.applyTx(makeTx(c, {}, 0, 0, 0, {}, TxKind::StakeDeposit), 1, delays));
    EXPECT_EQ(gs.find(2)->stake, 0u);
    EXPECT_TRUE(gs.find(2)->pendingDeposits.empty());
    EXPECT_NE(gs.root(), before);
}

TEST_F(StateFixture, SupplyConservedByTransfersAndStakeOps)
{
    const auto supply = gs.totalSupply();
    EXPECT_FALSE(gs.applyTx(makeTx(b, c.pk, 100, 5, 0), 1, delays));
    EXPECT_FALSE(gs.applyTx(makeTx(b, {}, 10, 2, 1, {}, TxKind::StakeDeposit), 1, delays));
    EXPECT_FALSE(gs.applyTx(makeTx(a, {}, 30, 1, 0, {}, TxKind::StakeWithdraw), 1, delays));
    // Fees leave the sender; the block producer is credited separately.
    EXPECT_EQ(gs.totalSupply(), supply - 8);
    gs.credit(0, 8);
    EXPECT_EQ(gs.totalSupply(), supply);
    gs.advanceTo(100);
    EXPECT_EQ(gs.totalSupply(), supply);
}

TEST_F(StateFixture, TransferCreatesUnknownDestination)
{
    auto fresh = keyOf(42);
    EXPECT_FALSE(gs.applyTx(makeTx(b, fresh.pk, 10, 0, 0), 1, delays));
    auto id = gs.idOf(fresh.pk);
    ASSERT_TRUE(id);
    EXPECT_EQ(*id, 3u);
    EXPECT_EQ(gs.find(*id)->balance, 10u);
}

TEST_F(StateFixture, RootBindsEveryAccount)
{
    auto root = gs.root();
    gs.credit(2, 1);
    EXPECT_NE(gs.root(), root);
}

TEST(StateRoot, InsertionOrderIndependent)
{
    GlobalState x, y;
    x.addAccount(0, keyOf(1).pk, 5, 1);
    x.addAccount(1, keyOf(2).pk, 6, 2);
    y.addAccount(1, keyOf(2).pk, 6, 2);
    y.addAccount(0, keyOf(1).pk, 5, 1);
    EXPECT_EQ(x.root(), y.root());
}
