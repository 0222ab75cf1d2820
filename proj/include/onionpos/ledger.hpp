#pragma once

// Ledger objects and their canonical encodings.
//
// Layout (all integers big-endian, keys/signatures/digests fixed-length):
//
//   Tx      kind:1 src:32 dst:32 val:8 fee:8 nonce:8 hasVote:1 [voteRef:32] sig:64
//   Header  id:8 prev:32 txsRoot:32 stateRoot:32 coinbase:32 rand:64 altIdx:2 sig:64
//   Block   header txCount:4 tx*
//
// A signature covers the encoding with the trailing signature field removed.
// A header's hash (used for parent linkage) covers the full encoding,
// signature included.

#include "onionpos/bytes.hpp"
#include "onionpos/crypto.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace onionpos {

using Amount = std::uint64_t;
using AccountId = std::uint64_t;
using Height = std::uint64_t;

enum class TxKind : std::uint8_t {
    Transfer = 0,
    StakeDeposit = 1,
    StakeWithdraw = 2,
};

const char* toString(TxKind kind);

struct Tx {
    TxKind kind = TxKind::Transfer;
    PublicKey src;
    PublicKey dst;
    Amount val = 0;
    Amount fee = 0;
    std::uint64_t nonce = 0;
    std::optional<Digest> voteRef;
    Signature sig;

    static constexpr std::size_t kBaseSize = 1 + 32 + 32 + 8 + 8 + 8 + 1 + 64;
    static constexpr std::size_t kVoteRefSize = 32;

    Bytes signingBytes() const;
    Bytes encode() const;
    void encodeTo(ByteWriter& w) const;
    static Tx decode(ByteView data);
    static Tx decodeFrom(ByteReader& r);

    Digest id() const;
    void signWith(const KeyPair& keys);
    bool verifySignature() const;

    bool operator==(const Tx&) const = default;
};

struct Header {
    Height id = 0;
    Digest prev;
    Digest txsRoot;
    Digest stateRoot;
    PublicKey coinbase;
    Signature rand;
    std::uint16_t altIdx = 0;
    Signature sig;

    static constexpr std::size_t kEncodedSize = 8 + 32 + 32 + 32 + 32 + 64 + 2 + 64;

    Bytes signingBytes() const;
    Bytes encode() const;
    void encodeTo(ByteWriter& w) const;
    static Header decode(ByteView data);
    static Header decodeFrom(ByteReader& r);

    Digest hash() const;
    void signWith(const KeyPair& keys);
    bool verifySignature() const;

    bool operator==(const Header&) const = default;
};

struct Block {
    Header hdr;
    std::vector<Tx> txs;

    Bytes encode() const;
    static Block decode(ByteView data);
    Digest hash() const { return hdr.hash(); }

    bool operator==(const Block&) const = default;
};

/// Binary Merkle root: empty -> hash(""), single leaf -> the leaf, odd levels
/// duplicate their last node, parent = hash(left || right).
Digest merkleRoot(std::vector<Digest> leaves);
Digest computeTxsRoot(std::span<const Tx> txs);

} // namespace onionpos
