#pragma once

#include "onionpos/crypto.hpp"
#include "onionpos/ledger.hpp"

#include <functional>
#include <map>
#include <optional>
#include <vector>

namespace onionpos {

struct PendingStake {
    Amount amount = 0;
    /// Height at which the amount matures (activation or unlock).
    Height height = 0;

    bool operator==(const PendingStake&) const = default;
};

struct AccountState {
    AccountId id = 0;
    PublicKey pk;
    Amount balance = 0;
    std::uint64_t nonce = 0;
    Amount stake = 0;
    std::vector<PendingStake> pendingDeposits;
    std::vector<PendingStake> pendingWithdrawals;

    Bytes encode() const;
    /// balance + stake + everything still pending.
    Amount holdings() const;

    bool operator==(const AccountState&) const = default;
};

enum class TxError {
    UnknownSender,
    BadSignature,
    InsufficientBalance,
    InsufficientStake,
    BadNonce,
    StaleVoteRef,
    Malformed,
};

const char* toString(TxError e);

struct StakeDelays {
    Height activation = 5; // K#
    Height unlock = 20;    // S#
};

using StakeMap = std::map<AccountId, Amount>;

/// Predicate telling whether a voted block lies on the chain being extended.
using VoteRefCheck = std::function<bool(const Digest&)>;

/// Account states keyed by ID. Stake maturity is driven explicitly by
/// advanceTo(height) at the start of each block.
class GlobalState {
public:
    GlobalState() = default;

    /// Adds a genesis account. Throws std::invalid_argument on duplicate id or key.
    AccountState& addAccount(AccountId id, const PublicKey& pk, Amount balance, Amount stake);

    const AccountState* find(AccountId id) const;
    const AccountState* findByKey(const PublicKey& pk) const;
    std::optional<AccountId> idOf(const PublicKey& pk) const;
    const std::map<AccountId, AccountState>& accounts() const { return accounts_; }

    Amount stakeSum() const { return stakeSum_; }
    /// Active (election-weighted) stakes, zero entries omitted.
    StakeMap activeStakes() const;
    /// Σ holdings over all accounts.
    Amount totalSupply() const;

    /// Matures pending deposits and withdrawals whose height is <= h.
    void advanceTo(Height h);

    /// Validates without mutating (used by mempool admission).
    std::optional<TxError> check(const Tx& tx, bool verifySig = true) const;

    /// Applies a transfer or stake operation at block height h. On error the
    /// state is left untouched. The fee is debited here; crediting it to the
    /// block producer is the caller's job.
    std::optional<TxError> applyTx(const Tx& tx, Height h, const StakeDelays& delays,
                                   const VoteRefCheck& onChain = {}, bool verifySig = true);

    void credit(AccountId id, Amount amount);

    Digest root() const;

    bool operator==(const GlobalState& o) const { return accounts_ == o.accounts_; }

private:
    std::optional<TxError> applyTransfer(const Tx& tx, AccountState& src);
    std::optional<TxError> applyStakeOp(const Tx& tx, AccountState& src, Height h, const StakeDelays& delays);
    AccountState& ensureAccount(const PublicKey& pk);

    std::map<AccountId, AccountState> accounts_;
    std::map<PublicKey, AccountId> byKey_;
    Amount stakeSum_ = 0;
};

} // namespace onionpos
