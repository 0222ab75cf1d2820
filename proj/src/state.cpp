#include "onionpos/state.hpp"

#include <stdexcept>

namespace onionpos {

const char* toString(TxError e)
{
    switch (e) {
    case TxError::UnknownSender:
        return "UnknownSender";
    case TxError::BadSignature:
        return "BadSignature";
    case TxError::InsufficientBalance:
        return "InsufficientBalance";
    case TxError::InsufficientStake:
        return "InsufficientStake";
    case TxError::BadNonce:
        return "BadNonce";
    case TxError::StaleVoteRef:
        return "StaleVoteRef";
    case TxError::Malformed:
        return "Malformed";
    }
    return "?";
}

Bytes AccountState::encode() const
{
    ByteWriter w(64 + 16 * (pendingDeposits.size() + pendingWithdrawals.size()));
    w.u64(id).raw(pk.bytes).u64(balance).u64(nonce).u64(stake);
    w.u32(static_cast<std::uint32_t>(pendingDeposits.size()));
    for (const auto& p : pendingDeposits)
        w.u64(p.amount).u64(p.height);
    w.u32(static_cast<std::uint32_t>(pendingWithdrawals.size()));
    for (const auto& p : pendingWithdrawals)
        w.u64(p.amount).u64(p.height);
    return w.take();
}

Amount AccountState::holdings() const
{
    Amount total = balance + stake;
    for (const auto& p : pendingDeposits)
        total += p.amount;
    for (const auto& p : pendingWithdrawals)
        total += p.amount;
    return total;
}

AccountState& GlobalState::addAccount(AccountId id, const PublicKey& pk, Amount balance, Amount stake)
{
    if (accounts_.contains(id))
        throw std::invalid_argument("duplicate account id " + std::to_string(id));
    if (byKey_.contains(pk))
        throw std::invalid_argument("duplicate account key " + pk.hex());
    auto& a = accounts_[id];
    a.id = id;
    a.pk = pk;
    a.balance = balance;
    a.stake = stake;
    byKey_[pk] = id;
    stakeSum_ += stake;
    return a;
}

const AccountState* GlobalState::find(AccountId id) const
{
    auto it = accounts_.find(id);
    return it == accounts_.end() ? nullptr : &it->second;
}

const AccountState* GlobalState::findByKey(const PublicKey& pk) const
{
    auto it = byKey_.find(pk);
    return it == byKey_.end() ? nullptr : find(it->second);
}

std::optional<AccountId> GlobalState::idOf(const PublicKey& pk) const
{
    auto it = byKey_.find(pk);
    if (it == byKey_.end())
        return std::nullopt;
    return it->second;
}

StakeMap GlobalState::activeStakes() const
{
    StakeMap out;
    for (const auto& [id, a] : accounts_)
        if (a.stake > 0)
            out[id] = a.stake;
    return out;
}

Amount GlobalState::totalSupply() const
{
    Amount total = 0;
    for (const auto& [id, a] : accounts_)
        total += a.holdings();
    return total;
}

void GlobalState::advanceTo(Height h)
{
    for (auto& [id, a] : accounts_) {
        std::erase_if(a.pendingDeposits, [&](const PendingStake& p) {
            if (p.height > h)
                return false;
            a.stake += p.amount;
            stakeSum_ += p.amount;
            return true;
        });
        std::erase_if(a.pendingWithdrawals, [&](const PendingStake& p) {
            if (p.height > h)
                return false;
            a.balance += p.amount;
            return true;
        });
    }
}

std::optional<TxError> GlobalState::check(const Tx& tx, bool verifySig) const
{
    const auto* src = findByKey(tx.src);
    if (!src)
        return TxError::UnknownSender;
    if (tx.kind != TxKind::Transfer && tx.dst != tx.src)
        return TxError::Malformed;
    if (verifySig && !tx.verifySignature())
        return TxError::BadSignature;
    if (tx.nonce != src->nonce)
        return TxError::BadNonce;
    switch (tx.kind) {
    case TxKind::Transfer:
    case TxKind::StakeDeposit:
        if (tx.val > UINT64_MAX - tx.fee || src->balance < tx.val + tx.fee)
            return TxError::InsufficientBalance;
        break;
    case TxKind::StakeWithdraw:
        if (src->balance < tx.fee)
            return TxError::InsufficientBalance;
        if (src->stake < tx.val)
            return TxError::InsufficientStake;
        break;
    }
    return std::nullopt;
}

std::optional<TxError> GlobalState::applyTx(const Tx& tx, Height h, const StakeDelays& delays,
                                            const VoteRefCheck& onChain, bool verifySig)
{
    if (auto err = check(tx, verifySig))
        return err;
    if (tx.voteRef && onChain && !onChain(*tx.voteRef))
        return TxError::StaleVoteRef;

    auto& src = accounts_.at(byKey_.at(tx.src));
    if (tx.kind == TxKind::Transfer)
        return applyTransfer(tx, src);
    return applyStakeOp(tx, src, h, delays);
}

std::optional<TxError> GlobalState::applyTransfer(const Tx& tx, AccountState& src)
{
    src.balance -= tx.val + tx.fee;
    src.nonce += 1;
    // ensureAccount may insert into accounts_; std::map keeps `src` valid.
    ensureAccount(tx.dst).balance += tx.val;
    return std::nullopt;
}

std::optional<TxError> GlobalState::applyStakeOp(const Tx& tx, AccountState& src, Height h, const StakeDelays& delays)
{
    src.balance -= tx.fee;
    src.nonce += 1;
    if (tx.val == 0)
        return std::nullopt;
    if (tx.kind == TxKind::StakeDeposit) {
        src.balance -= tx.val;
        src.pendingDeposits.push_back({tx.val, h + delays.activation});
    } else {
        src.stake -= tx.val;
        stakeSum_ -= tx.val;
        src.pendingWithdrawals.push_back({tx.val, h + delays.unlock});
    }
    return std::nullopt;
}

AccountState& GlobalState::ensureAccount(const PublicKey& pk)
{
    if (auto it = byKey_.find(pk); it != byKey_.end())
        return accounts_.at(it->second);
    AccountId next = accounts_.empty() ? 0 : accounts_.rbegin()->first + 1;
    return addAccount(next, pk, 0, 0);
}

void GlobalState::credit(AccountId id, Amount amount)
{
    accounts_.at(id).balance += amount;
}

Digest GlobalState::root() const
{
    std::vector<Digest> leaves;
    leaves.reserve(accounts_.size());
    for (const auto& [id, a] : accounts_)
        leaves.push_back(hash(a.encode()));
    return merkleRoot(std::move(leaves));
}

} // namespace onionpos
