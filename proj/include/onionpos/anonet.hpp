#pragma once

// Anonymization layer: telescoped onion circuits, relay/exit handling and
// the dissemination modes used for gossip.
//
// Wire format of every datagram (Envelope): kind 1 B, source address 6 B,
// payload length 4 B big-endian, payload.
//
//   Relay          link id 8 B || one onion layer (sealSym ciphertext)
//   Transport      control tag 1 B || body (circuit and link handshakes,
//                  point-to-point application messages)
//   Plain          application message in the clear
//   LinkEncrypted  sealSym(pairwise link key, application message)
//
// Opened onion layer: tag 1 B then
//   Forward     next hop 6 B || inner ciphertext
//   DeliverTo   consensus peer 6 B || message    (exit forwards it Plain)
//   DeliverSelf message                          (exit is the consensus peer)
//   Extend      next hop 6 B || key-exchange hello
//   Extended    key-exchange reply               (travels backwards)
//   Ack         8-byte message token             (exit to owner, backwards)

#include "onionpos/crypto.hpp"
#include "onionpos/genesis.hpp"
#include "onionpos/rng.hpp"
#include "onionpos/runtime.hpp"

#include <deque>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_set>

namespace onionpos {

enum class EnvelopeKind : std::uint8_t {
    Relay = 1,
    Transport = 2,
    Plain = 3,
    LinkEncrypted = 4,
};

struct Envelope {
    EnvelopeKind kind = EnvelopeKind::Plain;
    Address src;
    Bytes payload;

    static constexpr std::size_t kHeaderSize = 1 + Address::kEncodedSize + 4;

    Bytes encode() const;
    static Envelope decode(ByteView data);

    /// True when the datagram carries an application message readable by
    /// anyone on the link.
    static bool exposesPlaintext(ByteView data);

    bool operator==(const Envelope&) const = default;
};

enum class LayerTag : std::uint8_t {
    Forward = 1,
    DeliverTo = 2,
    DeliverSelf = 3,
    Extend = 4,
    Extended = 5,
    Ack = 6,
};

struct Layer {
    LayerTag tag = LayerTag::DeliverSelf;
    std::optional<Address> next;
    Bytes body;
};

Bytes encodeLayer(const Layer& l);
Layer decodeLayer(ByteView plain);

/// Onion for hops[0..m): the innermost plaintext is sealed under keys[m-1];
/// each outer layer x wraps Forward(hops[x+1], inner) under keys[x]. The
/// result is what hops[0] receives.
Bytes wrapOnion(std::span<const Address> hops, std::span<const SymKey> keys, ByteView innermost, Drbg& rng);

/// Opens one layer; nothing when authentication fails.
std::optional<Layer> peelLayer(const SymKey& key, ByteView ciphertext);

enum class AnonMode { TorLike, GossipNode, Dandelion, None };

const char* toString(AnonMode m);
/// Accepts torlike, gossipnode, dandelion, none (case-insensitive).
std::optional<AnonMode> parseAnonMode(std::string_view s);

struct AnonConfig {
    AnonMode mode = AnonMode::TorLike;
    std::size_t nCircuits = 8;
    std::size_t mHops = 3;
    /// Rounds between circuit rebuilds; 0 disables rotation.
    std::uint64_t rotationPeriod = 0;
    Micros buildTimeout = 300 * kMicrosPerMs;
    unsigned maxBuildRetries = 4;
    /// Minimum spacing of stall-triggered circuit refreshes.
    Micros stallRefreshInterval = 2 * kMicrosPerSecond;
    /// A circuit whose exit has not acknowledged a message within this long
    /// is treated as broken: rebuilt, and the message resent. 0 disables.
    Micros ackTimeout = 150 * kMicrosPerMs;
    unsigned maxResends = 2;
};

struct DirectoryEntry {
    AccountId id = 0;
    PublicKey pk;
    Address addr;
};

std::vector<DirectoryEntry> directoryFromGenesis(const Genesis& g);

struct Circuit {
    std::vector<Address> hops;
    std::vector<SymKey> keys;
    /// TorLike only: the peer the exit hands the message to.
    std::optional<Address> exitPeer;
    std::uint64_t createdAtRound = 0;
    std::uint64_t firstLink = 0;

    Address consensusPeer() const { return exitPeer ? *exitPeer : hops.back(); }
};

struct AnonStats {
    std::uint64_t circuitsBuilt = 0;
    std::uint64_t buildRetries = 0;
    std::uint64_t buildFailures = 0;
    std::uint64_t rotations = 0;
    std::uint64_t dropped = 0;
    std::uint64_t authFailures = 0;
    std::uint64_t relayed = 0;
    std::uint64_t linkKeys = 0;
    std::uint64_t acks = 0;
    std::uint64_t circuitFailures = 0;
    std::uint64_t resent = 0;
};

class AnonNode : public MessageBus {
public:
    /// Receives application messages; returns true when the message is new
    /// and should keep spreading.
    using Handler = std::function<bool(const Address& from, ByteView appMsg)>;

    AnonNode(AnonConfig cfg, KeyPair keys, Address self, std::vector<DirectoryEntry> directory, Transport& transport,
             Executor& exec, Drbg rng, std::uint64_t routeSeed);

    void setHandler(Handler h) { handler_ = std::move(h); }

    /// Builds the initial circuits (joinNetwork).
    void start();
    /// Back online: discard in-progress builds and rebuild every circuit.
    void restart();

    /// Datagram from the transport.
    void onDatagram(const Address& from, ByteView data);

    void gossip(Bytes appMsg) override;
    void sendDirect(const Address& dst, Bytes appMsg) override;
    std::vector<Address> peers() const override;
    void onRound(std::uint64_t round) override;
    void onStall() override;

    /// Tears down and rebuilds every circuit with fresh routes and keys.
    void rotateCircuits(std::uint64_t round);

    const AnonConfig& config() const { return cfg_; }
    const AnonStats& stats() const { return stats_; }
    /// Established circuits in slot order (slots still building are skipped).
    std::vector<const Circuit*> circuits() const;
    std::size_t readyCircuits() const;
    std::size_t hopEntries() const { return hops_.size(); }

private:
    struct Build {
        Circuit c;
        std::optional<KxInitiator> pending;
        unsigned retries = 0;
        std::optional<TimerId> timer;
        Address waitingOn;
    };
    struct Pending {
        std::uint64_t link = 0;
        std::uint64_t token = 0;
        Bytes msg;
        Micros sentAt = 0;
        unsigned attempt = 0;
    };
    struct Queued {
        Bytes msg;
        unsigned attempt = 0;
    };
    struct Slot {
        std::optional<Circuit> active;
        /// Previous circuit of this slot, still accepted for late acks.
        std::optional<Circuit> retired;
        std::optional<Build> next;
        std::vector<Queued> queue;
        std::deque<Pending> pending;
        std::optional<TimerId> ackTimer;
    };
    struct HopEntry {
        SymKey key;
        Address prev;
        std::uint64_t inLink = 0;
        std::optional<Address> next;
        std::uint64_t outLink = 0;
    };
    using LinkKey = std::pair<Address, std::uint64_t>;

    void send(const Address& dst, EnvelopeKind kind, Bytes payload, const std::optional<Digest>& content = {});

    // Owner side.
    bool drawRoute(std::size_t slotIdx, Circuit& c);
    void beginBuild(std::size_t slotIdx, unsigned retries);
    void sendCreate(std::size_t slotIdx);
    void extend(std::size_t slotIdx);
    void buildStepTimedOut(std::size_t slotIdx, std::uint64_t firstLink);
    void buildStepDone(std::size_t slotIdx);
    void onOwnerBackward(std::size_t slotIdx, ByteView onion);
    void sendVia(std::size_t slotIdx, ByteView appMsg, const Digest& content, unsigned attempt = 0);
    void onAck(std::size_t slotIdx, const Circuit& c, ByteView onion);
    void armAckTimer(std::size_t slotIdx);
    void ackTimedOut(std::size_t slotIdx);
    void disseminate(ByteView appMsg, const Digest& content);
    void spreadViaCircuits(ByteView appMsg, const Digest& content);

    // Relay side.
    void onRelay(const Address& from, ByteView payload);
    void onTransport(const Address& from, ByteView payload);
    void exitDeliver(const Address& from, const HopEntry& entry, const Layer& layer);
    void storeHop(const LinkKey& in, HopEntry e);

    // GossipNode link keys.
    void sendLinkEncrypted(const Address& peer, ByteView appMsg, const Digest& content);
    void onLinkEncrypted(const Address& from, ByteView payload);

    void deliverApp(const Address& from, ByteView appMsg);
    bool markSeen(const Digest& d);
    std::uint64_t freshLinkId();

    AnonConfig cfg_;
    KeyPair keys_;
    Address self_;
    std::vector<DirectoryEntry> others_;
    std::size_t successor_ = 0; // index into others_ of the next node by ID
    Transport& transport_;
    Executor& exec_;
    Drbg drbg_;
    Rng routeRng_;
    Handler handler_;

    std::vector<Slot> slots_;
    std::uint64_t round_ = 0;
    std::uint64_t lastRotation_ = 0;
    Micros lastStallRefresh_ = -1;
    std::map<Address, Micros> suspect_;
    /// Last time each node was seen working (datagram from it, build step or ack through it).
    std::map<Address, Micros> alive_;

    std::map<LinkKey, HopEntry> hops_;
    std::map<LinkKey, LinkKey> hopsByOut_;
    std::deque<LinkKey> hopOrder_;

    std::map<Address, SymKey> linkOut_;
    std::map<Address, SymKey> linkIn_;
    std::map<Address, KxInitiator> linkPending_;
    std::map<Address, std::vector<std::pair<Bytes, Digest>>> linkQueue_;

    std::unordered_set<std::string> seen_;
    std::deque<std::string> seenOrder_;

    AnonStats stats_;
};

} // namespace onionpos
