#include "onionpos/ledger.hpp"

namespace onionpos {

const char* toString(TxKind kind)
{
    switch (kind) {
    case TxKind::Transfer:
        return "transfer";
    case TxKind::StakeDeposit:
        return "stake-deposit";
    case TxKind::StakeWithdraw:
        return "stake-withdraw";
    }
    return "unknown";
}

namespace {

void encodeTxBody(const Tx& tx, ByteWriter& w)
{
    w.u8(static_cast<std::uint8_t>(tx.kind))
        .raw(tx.src.bytes)
        .raw(tx.dst.bytes)
        .u64(tx.val)
        .u64(tx.fee)
        .u64(tx.nonce);
    if (tx.voteRef) {
        w.u8(1).raw(tx.voteRef->bytes);
    } else {
        w.u8(0);
    }
}

void encodeHeaderBody(const Header& h, ByteWriter& w)
{
    w.u64(h.id)
        .raw(h.prev.bytes)
        .raw(h.txsRoot.bytes)
        .raw(h.stateRoot.bytes)
        .raw(h.coinbase.bytes)
        .raw(h.rand.bytes)
        .u16(h.altIdx);
}

} // namespace

Bytes Tx::signingBytes() const
{
    ByteWriter w(kBaseSize + kVoteRefSize);
    encodeTxBody(*this, w);
    return w.take();
}

void Tx::encodeTo(ByteWriter& w) const
{
    encodeTxBody(*this, w);
    w.raw(sig.bytes);
}

Bytes Tx::encode() const
{
    ByteWriter w(kBaseSize + kVoteRefSize);
    encodeTo(w);
    return w.take();
}

Tx Tx::decodeFrom(ByteReader& r)
{
    Tx tx;
    auto kind = r.u8();
    if (kind > static_cast<std::uint8_t>(TxKind::StakeWithdraw))
        throw DecodeError("unknown tx kind " + std::to_string(kind));
    tx.kind = static_cast<TxKind>(kind);
    tx.src.bytes = r.fixed<32>();
    tx.dst.bytes = r.fixed<32>();
    tx.val = r.u64();
    tx.fee = r.u64();
    tx.nonce = r.u64();
    auto flag = r.u8();
    if (flag == 1)
        tx.voteRef = Digest{r.fixed<32>()};
    else if (flag != 0)
        throw DecodeError("non-canonical voteRef flag " + std::to_string(flag));
    tx.sig.bytes = r.fixed<64>();
    return tx;
}

Tx Tx::decode(ByteView data)
{
    ByteReader r(data);
    Tx tx = decodeFrom(r);
    r.expectEnd();
    return tx;
}

Digest Tx::id() const
{
    return onionpos::hash(encode());
}

void Tx::signWith(const KeyPair& keys)
{
    sig = sign(keys.sk, signingBytes());
}

bool Tx::verifySignature() const
{
    return verify(src, signingBytes(), sig);
}

Bytes Header::signingBytes() const
{
    ByteWriter w(kEncodedSize);
    encodeHeaderBody(*this, w);
    return w.take();
}

void Header::encodeTo(ByteWriter& w) const
{
    encodeHeaderBody(*this, w);
    w.raw(sig.bytes);
}

Bytes Header::encode() const
{
    ByteWriter w(kEncodedSize);
    encodeTo(w);
    return w.take();
}

Header Header::decodeFrom(ByteReader& r)
{
    Header h;
    h.id = r.u64();
    h.prev.bytes = r.fixed<32>();
    h.txsRoot.bytes = r.fixed<32>();
    h.stateRoot.bytes = r.fixed<32>();
    h.coinbase.bytes = r.fixed<32>();
    h.rand.bytes = r.fixed<64>();
    h.altIdx = r.u16();
    h.sig.bytes = r.fixed<64>();
    return h;
}

Header Header::decode(ByteView data)
{
    ByteReader r(data);
    Header h = decodeFrom(r);
    r.expectEnd();
    return h;
}

Digest Header::hash() const
{
    return onionpos::hash(encode());
}

void Header::signWith(const KeyPair& keys)
{
    sig = sign(keys.sk, signingBytes());
}

bool Header::verifySignature() const
{
    return verify(coinbase, signingBytes(), sig);
}

Bytes Block::encode() const
{
    ByteWriter w(Header::kEncodedSize + 4 + txs.size() * (Tx::kBaseSize + Tx::kVoteRefSize));
    hdr.encodeTo(w);
    w.u32(static_cast<std::uint32_t>(txs.size()));
    for (const auto& tx : txs)
        tx.encodeTo(w);
    return w.take();
}

Block Block::decode(ByteView data)
{
    ByteReader r(data);
    Block b;
    b.hdr = Header::decodeFrom(r);
    auto count = r.u32();
    // Each tx needs at least kBaseSize bytes; reject absurd counts before allocating.
    if (count > r.remaining() / Tx::kBaseSize)
        throw DecodeError("tx count " + std::to_string(count) + " exceeds payload");
    b.txs.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i)
        b.txs.push_back(Tx::decodeFrom(r));
    r.expectEnd();
    return b;
}

Digest merkleRoot(std::vector<Digest> level)
{
    if (level.empty())
        return hash(ByteView{});
    while (level.size() > 1) {
        if (level.size() % 2 == 1)
            level.push_back(level.back());
        std::vector<Digest> next;
        next.reserve(level.size() / 2);
        for (std::size_t i = 0; i < level.size(); i += 2)
            next.push_back(hash({level[i].view(), level[i + 1].view()}));
        level = std::move(next);
    }
    return level.front();
}

Digest computeTxsRoot(std::span<const Tx> txs)
{
    std::vector<Digest> leaves;
    leaves.reserve(txs.size());
    for (const auto& tx : txs)
        leaves.push_back(tx.id());
    return merkleRoot(std::move(leaves));
}

} // namespace onionpos
