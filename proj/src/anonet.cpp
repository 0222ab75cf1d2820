#include "onionpos/anonet.hpp"

#include <algorithm>
#include <cctype>

namespace onionpos {

namespace {

enum class Ctl : std::uint8_t {
    Create = 0x10,
    Created = 0x11,
    LinkHello = 0x12,
    LinkReply = 0x13,
    Direct = 0x20,
};

constexpr std::size_t kKxReplySize = kKxPublicSize + kSignatureSize;
constexpr std::size_t kMaxQueued = 256;
constexpr std::size_t kMaxHopEntries = 50000;
constexpr std::size_t kMaxSeen = 200000;
constexpr Micros kSuspectFor = 5 * kMicrosPerSecond;

const std::string_view kCircuitContext = "onionpos-circuit";
const std::string_view kLinkContext = "onionpos-link";

Bytes encodeReply(const KxReply& r)
{
    ByteWriter w(kKxReplySize);
    w.raw(r.ephemeral).raw(r.sig.bytes);
    return w.take();
}

KxReply decodeReply(ByteReader& r)
{
    KxReply out;
    out.ephemeral = r.fixed<kKxPublicSize>();
    out.sig.bytes = r.fixed<kSignatureSize>();
    return out;
}

std::uint64_t tokenOf(const Digest& d)
{
    std::uint64_t t = 0;
    for (int i = 0; i < 8; ++i)
        t = (t << 8) | d.bytes[i];
    return t;
}

std::string seenKey(const Digest& d)
{
    return std::string(d.bytes.begin(), d.bytes.end());
}

} // namespace

// ---------------------------------------------------------------- Envelope

Bytes Envelope::encode() const
{
    ByteWriter w(kHeaderSize + payload.size());
    w.u8(static_cast<std::uint8_t>(kind));
    src.encodeTo(w);
    w.u32(static_cast<std::uint32_t>(payload.size())).raw(payload);
    return w.take();
}

Envelope Envelope::decode(ByteView data)
{
    ByteReader r(data);
    Envelope e;
    const auto k = r.u8();
    if (k < 1 || k > 4)
        throw DecodeError("unknown envelope kind");
    e.kind = static_cast<EnvelopeKind>(k);
    e.src = Address::decodeFrom(r);
    const auto len = r.u32();
    auto body = r.raw(len);
    e.payload.assign(body.begin(), body.end());
    r.expectEnd();
    return e;
}

bool Envelope::exposesPlaintext(ByteView data)
{
    if (data.size() <= kHeaderSize)
        return false;
    const auto kind = static_cast<EnvelopeKind>(data[0]);
    if (kind == EnvelopeKind::Plain)
        return true;
    return kind == EnvelopeKind::Transport && data[kHeaderSize] == static_cast<std::uint8_t>(Ctl::Direct);
}

// ------------------------------------------------------------------- onion

Bytes encodeLayer(const Layer& l)
{
    ByteWriter w(1 + Address::kEncodedSize + l.body.size());
    w.u8(static_cast<std::uint8_t>(l.tag));
    const bool addressed = l.tag == LayerTag::Forward || l.tag == LayerTag::DeliverTo || l.tag == LayerTag::Extend;
    if (addressed) {
        if (!l.next)
            throw std::invalid_argument("layer needs a next address");
        l.next->encodeTo(w);
    }
    w.raw(l.body);
    return w.take();
}

Layer decodeLayer(ByteView plain)
{
    ByteReader r(plain);
    Layer l;
    const auto tag = r.u8();
    if (tag < 1 || tag > 6)
        throw DecodeError("unknown layer tag");
    l.tag = static_cast<LayerTag>(tag);
    if (l.tag == LayerTag::Forward || l.tag == LayerTag::DeliverTo || l.tag == LayerTag::Extend)
        l.next = Address::decodeFrom(r);
    auto rest = r.raw(r.remaining());
    l.body.assign(rest.begin(), rest.end());
    return l;
}

Bytes wrapOnion(std::span<const Address> hops, std::span<const SymKey> keys, ByteView innermost, Drbg& rng)
{
    if (hops.empty() || hops.size() != keys.size())
        throw std::invalid_argument("onion needs one key per hop");
    Bytes ct = sealSym(keys.back(), innermost, rng);
    for (std::size_t x = hops.size() - 1; x-- > 0;)
        ct = sealSym(keys[x], encodeLayer(Layer{LayerTag::Forward, hops[x + 1], std::move(ct)}), rng);
    return ct;
}

std::optional<Layer> peelLayer(const SymKey& key, ByteView ciphertext)
{
    auto plain = openSym(key, ciphertext);
    if (!plain)
        return std::nullopt;
    try {
        return decodeLayer(*plain);
    } catch (const DecodeError&) {
        return std::nullopt;
    }
}

const char* toString(AnonMode m)
{
    switch (m) {
    case AnonMode::TorLike: return "TorLike";
    case AnonMode::GossipNode: return "GossipNode";
    case AnonMode::Dandelion: return "Dandelion";
    case AnonMode::None: return "None";
    }
    return "?";
}

std::optional<AnonMode> parseAnonMode(std::string_view s)
{
    std::string lower(s);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "torlike" || lower == "tor")
        return AnonMode::TorLike;
    if (lower == "gossipnode" || lower == "gossip")
        return AnonMode::GossipNode;
    if (lower == "dandelion")
        return AnonMode::Dandelion;
    if (lower == "none" || lower == "plain")
        return AnonMode::None;
    return std::nullopt;
}

std::vector<DirectoryEntry> directoryFromGenesis(const Genesis& g)
{
    std::vector<DirectoryEntry> out;
    for (const auto& n : g.nodes)
        out.push_back(DirectoryEntry{n.id, n.publicKey, n.networkAddress});
    return out;
}

// ---------------------------------------------------------------- AnonNode

AnonNode::AnonNode(AnonConfig cfg, KeyPair keys, Address self, std::vector<DirectoryEntry> directory,
                   Transport& transport, Executor& exec, Drbg rng, std::uint64_t routeSeed)
    : cfg_(cfg),
      keys_(std::move(keys)),
      self_(self),
      transport_(transport),
      exec_(exec),
      drbg_(std::move(rng)),
      routeRng_(routeSeed)
{
    if (cfg_.nCircuits == 0 || cfg_.mHops == 0)
        throw std::invalid_argument("need at least one circuit of at least one hop");
    std::sort(directory.begin(), directory.end(), [](auto& a, auto& b) { return a.id < b.id; });
    std::optional<AccountId> selfId;
    for (const auto& d : directory) {
        if (d.addr == self_)
            selfId = d.id;
        else
            others_.push_back(d);
    }
    if (others_.empty())
        return;
    successor_ = 0;
    if (selfId)
        for (std::size_t i = 0; i < others_.size(); ++i)
            if (others_[i].id > *selfId) {
                successor_ = i;
                break;
            }
}

void AnonNode::send(const Address& dst, EnvelopeKind kind, Bytes payload, const std::optional<Digest>& content)
{
    Envelope e{kind, self_, std::move(payload)};
    transport_.send(dst, e.encode(), SendLabel{content});
}

std::uint64_t AnonNode::freshLinkId()
{
    return drbg_.next64();
}

bool AnonNode::markSeen(const Digest& d)
{
    auto key = seenKey(d);
    if (!seen_.insert(key).second)
        return false;
    seenOrder_.push_back(std::move(key));
    if (seenOrder_.size() > kMaxSeen) {
        seen_.erase(seenOrder_.front());
        seenOrder_.pop_front();
    }
    return true;
}

void AnonNode::start()
{
    slots_.assign(cfg_.nCircuits, Slot{});
    for (std::size_t i = 0; i < slots_.size(); ++i) {
        if (cfg_.mode == AnonMode::None) {
            Circuit c;
            if (drawRoute(i, c))
                slots_[i].active = std::move(c);
        } else {
            beginBuild(i, 0);
        }
    }
}

void AnonNode::restart()
{
    linkPending_.clear();
    linkQueue_.clear();
    lastStallRefresh_ = exec_.now();
    for (std::size_t i = 0; i < slots_.size(); ++i) {
        slots_[i].next.reset();
        slots_[i].ackTimer.reset(); // the executor dropped it
        slots_[i].pending.clear();
        if (cfg_.mode != AnonMode::None)
            beginBuild(i, 0);
    }
}

std::vector<const Circuit*> AnonNode::circuits() const
{
    std::vector<const Circuit*> out;
    for (const auto& s : slots_)
        if (s.active)
            out.push_back(&*s.active);
    return out;
}

std::size_t AnonNode::readyCircuits() const
{
    return circuits().size();
}

std::vector<Address> AnonNode::peers() const
{
    std::vector<Address> out;
    for (const auto& s : slots_)
        if (s.active) {
            auto p = s.active->consensusPeer();
            if (std::find(out.begin(), out.end(), p) == out.end())
                out.push_back(p);
        }
    if (out.empty())
        for (const auto& o : others_)
            out.push_back(o.addr);
    return out;
}

// -------------------------------------------------------------- route draw

bool AnonNode::drawRoute(std::size_t slotIdx, Circuit& c)
{
    const Micros now = exec_.now();
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < others_.size(); ++i) {
        auto s = suspect_.find(others_[i].addr);
        if (s == suspect_.end() || now - s->second >= kSuspectFor)
            pool.push_back(i);
    }
    const bool torLike = cfg_.mode == AnonMode::TorLike;
    const bool none = cfg_.mode == AnonMode::None;
    // Too few trusted nodes for a full route: shorten it rather than
    // route through a node that just failed us.
    const std::size_t atLeast = torLike ? 2 : 1;
    if (pool.size() < atLeast) {
        pool.clear();
        for (std::size_t i = 0; i < others_.size(); ++i)
            pool.push_back(i);
    }
    if (pool.empty() || (torLike && pool.size() < 2))
        return false;

    // Consensus peer: the ring successor for slot 0 (keeps the peer graph
    // connected), otherwise a random node not yet used by another slot when
    // possible.
    std::set<Address> used;
    for (std::size_t i = 0; i < slots_.size(); ++i) {
        if (i == slotIdx)
            continue;
        if (slots_[i].active)
            used.insert(slots_[i].active->consensusPeer());
        if (slots_[i].next && !slots_[i].next->c.hops.empty())
            used.insert(slots_[i].next->c.consensusPeer());
    }
    std::size_t peer;
    if (slotIdx == 0 && std::find(pool.begin(), pool.end(), successor_) != pool.end()) {
        peer = successor_;
    } else {
        std::vector<std::size_t> fresh;
        for (auto i : pool)
            if (!used.count(others_[i].addr))
                fresh.push_back(i);
        const auto& from = fresh.empty() ? pool : fresh;
        peer = from[routeRng_.below(from.size())];
    }

    c = Circuit{};
    c.createdAtRound = round_;
    if (none) {
        c.exitPeer = others_[peer].addr;
        return true;
    }
    std::vector<std::size_t> rest;
    for (auto i : pool)
        if (i != peer)
            rest.push_back(i);
    routeRng_.shuffle(rest);
    const std::size_t relays = torLike ? cfg_.mHops : cfg_.mHops - 1;
    const std::size_t take = std::min(relays, rest.size());
    if (take < relays)
        ++stats_.buildFailures; // degraded: fewer hops than configured
    for (std::size_t k = 0; k < take; ++k)
        c.hops.push_back(others_[rest[k]].addr);
    if (torLike) {
        if (c.hops.empty())
            return false;
        c.exitPeer = others_[peer].addr;
    } else {
        c.hops.push_back(others_[peer].addr);
    }
    return true;
}

// ------------------------------------------------------------ owner build

void AnonNode::beginBuild(std::size_t slotIdx, unsigned retries)
{
    auto& slot = slots_[slotIdx];
    if (slot.next && slot.next->timer)
        exec_.cancel(*slot.next->timer);
    slot.next.reset();
    Build b;
    b.retries = retries;
    if (!drawRoute(slotIdx, b.c)) {
        ++stats_.buildFailures;
        return;
    }
    b.c.firstLink = freshLinkId();
    slot.next = std::move(b);
    sendCreate(slotIdx);
}

namespace {

const PublicKey* pkOf(const std::vector<DirectoryEntry>& dir, const Address& a)
{
    for (const auto& d : dir)
        if (d.addr == a)
            return &d.pk;
    return nullptr;
}

} // namespace

void AnonNode::sendCreate(std::size_t slotIdx)
{
    auto& b = *slots_[slotIdx].next;
    const Address h1 = b.c.hops[0];
    auto [init, hello] = KxInitiator::start(*pkOf(others_, h1), asBytes(kCircuitContext), drbg_);
    b.pending = init;
    b.waitingOn = h1;
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(Ctl::Create)).u64(b.c.firstLink).raw(hello.ephemeral);
    send(h1, EnvelopeKind::Transport, w.take());
    const auto link = b.c.firstLink;
    b.timer = exec_.schedule(cfg_.buildTimeout, [this, slotIdx, link] { buildStepTimedOut(slotIdx, link); });
}

void AnonNode::extend(std::size_t slotIdx)
{
    auto& b = *slots_[slotIdx].next;
    const std::size_t k = b.c.keys.size();
    const Address target = b.c.hops[k];
    auto [init, hello] = KxInitiator::start(*pkOf(others_, target), asBytes(kCircuitContext), drbg_);
    b.pending = init;
    b.waitingOn = target;
    Bytes inner = encodeLayer(Layer{LayerTag::Extend, target, Bytes(hello.ephemeral.begin(), hello.ephemeral.end())});
    Bytes onion = wrapOnion(std::span(b.c.hops).first(k), b.c.keys, inner, drbg_);
    ByteWriter w;
    w.u64(b.c.firstLink).raw(onion);
    send(b.c.hops[0], EnvelopeKind::Relay, w.take());
    const auto link = b.c.firstLink;
    b.timer = exec_.schedule(cfg_.buildTimeout, [this, slotIdx, link] { buildStepTimedOut(slotIdx, link); });
}

void AnonNode::buildStepTimedOut(std::size_t slotIdx, std::uint64_t firstLink)
{
    auto& slot = slots_[slotIdx];
    if (!slot.next || slot.next->c.firstLink != firstLink)
        return;
    slot.next->timer.reset();
    suspect_[slot.next->waitingOn] = exec_.now();
    const unsigned retries = slot.next->retries + 1;
    if (retries > cfg_.maxBuildRetries) {
        ++stats_.buildFailures;
        slot.next.reset();
        return;
    }
    ++stats_.buildRetries;
    beginBuild(slotIdx, retries);
}

void AnonNode::buildStepDone(std::size_t slotIdx)
{
    auto& slot = slots_[slotIdx];
    auto& b = *slot.next;
    if (b.timer)
        exec_.cancel(*b.timer);
    b.timer.reset();
    b.pending.reset();
    suspect_.erase(b.waitingOn);
    alive_[b.waitingOn] = exec_.now();
    if (b.c.keys.size() < b.c.hops.size()) {
        extend(slotIdx);
        return;
    }
    // Established: swap in. Relays keep the old circuit's keys, so messages
    // already in flight on it still get through.
    if (slot.active)
        slot.retired = std::move(slot.active);
    slot.active = std::move(b.c);
    slot.next.reset();
    ++stats_.circuitsBuilt;
    auto queued = std::move(slot.queue);
    slot.queue.clear();
    for (const auto& q : queued)
        sendVia(slotIdx, q.msg, hash(q.msg), q.attempt);
}

void AnonNode::onOwnerBackward(std::size_t slotIdx, ByteView onion)
{
    auto& b = *slots_[slotIdx].next;
    if (!b.pending || b.c.keys.empty())
        return;
    Bytes cur(onion.begin(), onion.end());
    for (std::size_t x = 0; x + 1 < b.c.keys.size(); ++x) {
        auto opened = openSym(b.c.keys[x], cur);
        if (!opened) {
            ++stats_.authFailures;
            return;
        }
        cur = std::move(*opened);
    }
    auto layer = peelLayer(b.c.keys.back(), cur);
    if (!layer || layer->tag != LayerTag::Extended) {
        ++stats_.authFailures;
        return;
    }
    try {
        ByteReader r(layer->body);
        auto reply = decodeReply(r);
        r.expectEnd();
        auto key = b.pending->finish(reply);
        if (!key) {
            ++stats_.authFailures;
            return;
        }
        b.c.keys.push_back(*key);
    } catch (const DecodeError&) {
        ++stats_.dropped;
        return;
    }
    buildStepDone(slotIdx);
}

// ------------------------------------------------------------ dissemination

void AnonNode::sendVia(std::size_t slotIdx, ByteView appMsg, const Digest& content, unsigned attempt)
{
    auto& slot = slots_[slotIdx];
    const Circuit& c = *slot.active;
    Layer inner;
    Bytes msg(appMsg.begin(), appMsg.end());
    if (c.exitPeer)
        inner = Layer{LayerTag::DeliverTo, c.exitPeer, msg};
    else
        inner = Layer{LayerTag::DeliverSelf, std::nullopt, msg};
    Bytes onion = wrapOnion(c.hops, c.keys, encodeLayer(inner), drbg_);
    ByteWriter w(8 + onion.size());
    w.u64(c.firstLink).raw(onion);
    send(c.hops[0], EnvelopeKind::Relay, w.take(), content);
    if (cfg_.ackTimeout <= 0)
        return;
    slot.pending.push_back(Pending{c.firstLink, tokenOf(content), std::move(msg), exec_.now(), attempt});
    if (slot.pending.size() > kMaxQueued)
        slot.pending.pop_front();
    armAckTimer(slotIdx);
}

void AnonNode::onAck(std::size_t slotIdx, const Circuit& c, ByteView onion)
{
    Bytes cur(onion.begin(), onion.end());
    for (std::size_t x = 0; x + 1 < c.keys.size(); ++x) {
        auto opened = openSym(c.keys[x], cur);
        if (!opened) {
            ++stats_.authFailures;
            return;
        }
        cur = std::move(*opened);
    }
    auto layer = peelLayer(c.keys.back(), cur);
    if (!layer || layer->tag != LayerTag::Ack || layer->body.size() != 8) {
        ++stats_.authFailures;
        return;
    }
    ++stats_.acks;
    const std::uint64_t token = ByteReader(layer->body).u64();
    auto& pending = slots_[slotIdx].pending;
    std::erase_if(pending, [&](const Pending& p) { return p.link == c.firstLink && p.token == token; });
    for (const auto& h : c.hops)
        alive_[h] = exec_.now();
}

void AnonNode::armAckTimer(std::size_t slotIdx)
{
    auto& slot = slots_[slotIdx];
    if (slot.ackTimer || slot.pending.empty())
        return;
    const Micros due = slot.pending.front().sentAt + cfg_.ackTimeout;
    slot.ackTimer = exec_.schedule(std::max<Micros>(0, due - exec_.now()), [this, slotIdx] {
        slots_[slotIdx].ackTimer.reset();
        ackTimedOut(slotIdx);
    });
}

// No ack: some relay on the path is gone. Relays not vouched for since the
// message left are suspected, the slot is rebuilt and the message resent.
void AnonNode::ackTimedOut(std::size_t slotIdx)
{
    auto& slot = slots_[slotIdx];
    const Micros now = exec_.now();
    std::vector<Pending> expired;
    while (!slot.pending.empty() && now - slot.pending.front().sentAt >= cfg_.ackTimeout) {
        expired.push_back(std::move(slot.pending.front()));
        slot.pending.pop_front();
    }
    if (!expired.empty() && slot.active) {
        const bool broken = std::any_of(expired.begin(), expired.end(),
                                        [&](const Pending& p) { return p.link == slot.active->firstLink; });
        if (broken) {
            ++stats_.circuitFailures;
            const Micros since = expired.front().sentAt;
            for (const auto& h : slot.active->hops) {
                auto it = alive_.find(h);
                if (it == alive_.end() || it->second < since)
                    suspect_[h] = now;
            }
            slot.retired = std::move(slot.active);
            slot.active.reset();
            for (auto& p : slot.pending)
                if (p.link == slot.retired->firstLink)
                    p.sentAt = std::min(p.sentAt, now - cfg_.ackTimeout); // give up on them too
        }
    }
    for (auto& p : expired) {
        if (p.attempt >= cfg_.maxResends)
            continue;
        ++stats_.resent;
        if (slot.active) {
            sendVia(slotIdx, p.msg, hash(p.msg), p.attempt + 1);
        } else if (slot.queue.size() < kMaxQueued) {
            slot.queue.push_back(Queued{std::move(p.msg), p.attempt + 1});
        }
    }
    if (!slot.active && !slot.next)
        beginBuild(slotIdx, 0);
    armAckTimer(slotIdx);
}

void AnonNode::spreadViaCircuits(ByteView appMsg, const Digest& content)
{
    for (std::size_t i = 0; i < slots_.size(); ++i) {
        auto& slot = slots_[i];
        if (slot.active) {
            sendVia(i, appMsg, content);
            continue;
        }
        if (slot.queue.size() < kMaxQueued)
            slot.queue.push_back(Queued{Bytes(appMsg.begin(), appMsg.end()), 0});
        if (!slot.next)
            beginBuild(i, 0);
    }
}

// Every node forwards to all of its peers, the one it heard from included:
// per-message traffic then depends only on the peer graph, not on arrival order.
void AnonNode::disseminate(ByteView appMsg, const Digest& content)
{
    switch (cfg_.mode) {
    case AnonMode::TorLike:
        spreadViaCircuits(appMsg, content);
        return;
    case AnonMode::GossipNode:
        for (const auto& p : peers())
            sendLinkEncrypted(p, appMsg, content);
        return;
    case AnonMode::Dandelion:
    case AnonMode::None:
        for (const auto& p : peers())
            send(p, EnvelopeKind::Plain, Bytes(appMsg.begin(), appMsg.end()), content);
        return;
    }
}

void AnonNode::gossip(Bytes appMsg)
{
    const Digest d = hash(appMsg);
    markSeen(d);
    if (cfg_.mode == AnonMode::None)
        disseminate(appMsg, d);
    else
        spreadViaCircuits(appMsg, d);
}

void AnonNode::sendDirect(const Address& dst, Bytes appMsg)
{
    ByteWriter w(1 + appMsg.size());
    w.u8(static_cast<std::uint8_t>(Ctl::Direct)).raw(appMsg);
    send(dst, EnvelopeKind::Transport, w.take());
}

void AnonNode::deliverApp(const Address& from, ByteView appMsg)
{
    const Digest d = hash(appMsg);
    if (!markSeen(d))
        return;
    if (handler_ && handler_(from, appMsg))
        disseminate(appMsg, d);
}

// ---------------------------------------------------------------- rotation

void AnonNode::onRound(std::uint64_t round)
{
    round_ = round;
    if (cfg_.rotationPeriod && round > 0 && round % cfg_.rotationPeriod == 0 && round != lastRotation_)
        rotateCircuits(round);
}

void AnonNode::rotateCircuits(std::uint64_t round)
{
    lastRotation_ = round;
    round_ = round;
    ++stats_.rotations;
    if (cfg_.mode == AnonMode::None)
        return;
    for (std::size_t i = 0; i < slots_.size(); ++i)
        beginBuild(i, 0);
}

void AnonNode::onStall()
{
    if (cfg_.mode == AnonMode::None)
        return;
    const Micros now = exec_.now();
    if (lastStallRefresh_ >= 0 && now - lastStallRefresh_ < cfg_.stallRefreshInterval)
        return;
    lastStallRefresh_ = now;
    for (std::size_t i = 0; i < slots_.size(); ++i)
        if (!slots_[i].next)
            beginBuild(i, 0);
}

// ------------------------------------------------------------------ relay

void AnonNode::storeHop(const LinkKey& in, HopEntry e)
{
    if (hops_.count(in))
        return;
    hops_.emplace(in, std::move(e));
    hopOrder_.push_back(in);
    while (hopOrder_.size() > kMaxHopEntries) {
        auto it = hops_.find(hopOrder_.front());
        if (it != hops_.end()) {
            if (it->second.next)
                hopsByOut_.erase({*it->second.next, it->second.outLink});
            hops_.erase(it);
        }
        hopOrder_.pop_front();
    }
}

void AnonNode::onDatagram(const Address& from, ByteView data)
{
    try {
        Envelope e = Envelope::decode(data);
        if (e.src != from) {
            ++stats_.dropped;
            return;
        }
        alive_[from] = exec_.now();
        switch (e.kind) {
        case EnvelopeKind::Relay:
            onRelay(from, e.payload);
            return;
        case EnvelopeKind::Transport:
            onTransport(from, e.payload);
            return;
        case EnvelopeKind::Plain:
            deliverApp(from, e.payload);
            return;
        case EnvelopeKind::LinkEncrypted:
            onLinkEncrypted(from, e.payload);
            return;
        }
    } catch (const DecodeError&) {
        ++stats_.dropped;
    }
}

void AnonNode::onRelay(const Address& from, ByteView payload)
{
    ByteReader r(payload);
    const auto link = r.u64();
    const ByteView onion = payload.subspan(8);

    if (auto it = hops_.find({from, link}); it != hops_.end()) {
        auto& entry = it->second;
        auto layer = peelLayer(entry.key, onion);
        if (!layer) {
            ++stats_.authFailures;
            return;
        }
        switch (layer->tag) {
        case LayerTag::Forward: {
            if (!entry.next || *entry.next != *layer->next) {
                ++stats_.dropped;
                return;
            }
            ByteWriter w(8 + layer->body.size());
            w.u64(entry.outLink).raw(layer->body);
            ++stats_.relayed;
            send(*entry.next, EnvelopeKind::Relay, w.take());
            return;
        }
        case LayerTag::DeliverTo:
        case LayerTag::DeliverSelf:
            exitDeliver(from, entry, *layer);
            return;
        case LayerTag::Extend: {
            if (*layer->next == self_ || layer->body.size() != kKxPublicSize) {
                ++stats_.dropped;
                return;
            }
            if (entry.next)
                hopsByOut_.erase({*entry.next, entry.outLink});
            entry.next = *layer->next;
            entry.outLink = freshLinkId();
            hopsByOut_[{*entry.next, entry.outLink}] = {from, link};
            ByteWriter w;
            w.u8(static_cast<std::uint8_t>(Ctl::Create)).u64(entry.outLink).raw(layer->body);
            send(*entry.next, EnvelopeKind::Transport, w.take());
            return;
        }
        case LayerTag::Extended:
        case LayerTag::Ack:
            ++stats_.dropped;
            return;
        }
        return;
    }

    if (auto it = hopsByOut_.find({from, link}); it != hopsByOut_.end()) {
        const auto& entry = hops_.at(it->second);
        Bytes sealed = sealSym(entry.key, onion, drbg_);
        ByteWriter w(8 + sealed.size());
        w.u64(entry.inLink).raw(sealed);
        send(entry.prev, EnvelopeKind::Relay, w.take());
        return;
    }

    for (std::size_t i = 0; i < slots_.size(); ++i) {
        const auto& n = slots_[i].next;
        if (n && n->c.firstLink == link && n->c.hops[0] == from) {
            onOwnerBackward(i, onion);
            return;
        }
        for (const auto* c : {&slots_[i].active, &slots_[i].retired})
            if (*c && (*c)->firstLink == link && (*c)->hops[0] == from) {
                const Circuit copy = **c;
                onAck(i, copy, onion);
                return;
            }
    }
    ++stats_.dropped;
}

void AnonNode::exitDeliver(const Address& from, const HopEntry& entry, const Layer& layer)
{
    const SymKey key = entry.key;
    const Address prev = entry.prev;
    const std::uint64_t inLink = entry.inLink;
    const Digest d = hash(layer.body);
    if (layer.tag == LayerTag::DeliverTo && *layer.next != self_)
        send(*layer.next, EnvelopeKind::Plain, layer.body, d);
    else
        deliverApp(from, layer.body);
    if (cfg_.ackTimeout > 0) {
        ByteWriter t(8);
        t.u64(tokenOf(d));
        Bytes sealed = sealSym(key, encodeLayer(Layer{LayerTag::Ack, std::nullopt, t.take()}), drbg_);
        ByteWriter w(8 + sealed.size());
        w.u64(inLink).raw(sealed);
        send(prev, EnvelopeKind::Relay, w.take());
    }
}

void AnonNode::onTransport(const Address& from, ByteView payload)
{
    ByteReader r(payload);
    const auto tag = static_cast<Ctl>(r.u8());
    switch (tag) {
    case Ctl::Create: {
        const auto link = r.u64();
        KxHello hello{r.fixed<kKxPublicSize>()};
        r.expectEnd();
        auto res = kxRespond(keys_, hello, asBytes(kCircuitContext), drbg_);
        if (!res) {
            ++stats_.authFailures;
            return;
        }
        storeHop({from, link}, HopEntry{res->first, from, link, std::nullopt, 0});
        ByteWriter w;
        w.u8(static_cast<std::uint8_t>(Ctl::Created)).u64(link).raw(encodeReply(res->second));
        send(from, EnvelopeKind::Transport, w.take());
        return;
    }
    case Ctl::Created: {
        const auto link = r.u64();
        auto replyBytes = r.raw(kKxReplySize);
        r.expectEnd();
        if (auto it = hopsByOut_.find({from, link}); it != hopsByOut_.end()) {
            const auto& entry = hops_.at(it->second);
            Bytes layer = encodeLayer(Layer{LayerTag::Extended, std::nullopt, Bytes(replyBytes.begin(), replyBytes.end())});
            Bytes sealed = sealSym(entry.key, layer, drbg_);
            ByteWriter w(8 + sealed.size());
            w.u64(entry.inLink).raw(sealed);
            send(entry.prev, EnvelopeKind::Relay, w.take());
            return;
        }
        for (std::size_t i = 0; i < slots_.size(); ++i) {
            auto& n = slots_[i].next;
            if (n && n->c.firstLink == link && n->c.hops[0] == from && n->c.keys.empty() && n->pending) {
                ByteReader rr(replyBytes);
                auto key = n->pending->finish(decodeReply(rr));
                if (!key) {
                    ++stats_.authFailures;
                    return;
                }
                n->c.keys.push_back(*key);
                buildStepDone(i);
                return;
            }
        }
        ++stats_.dropped;
        return;
    }
    case Ctl::LinkHello: {
        KxHello hello{r.fixed<kKxPublicSize>()};
        r.expectEnd();
        auto res = kxRespond(keys_, hello, asBytes(kLinkContext), drbg_);
        if (!res) {
            ++stats_.authFailures;
            return;
        }
        linkIn_[from] = res->first;
        ByteWriter w;
        w.u8(static_cast<std::uint8_t>(Ctl::LinkReply)).raw(encodeReply(res->second));
        send(from, EnvelopeKind::Transport, w.take());
        return;
    }
    case Ctl::LinkReply: {
        auto reply = decodeReply(r);
        r.expectEnd();
        auto it = linkPending_.find(from);
        if (it == linkPending_.end())
            return;
        auto key = it->second.finish(reply);
        linkPending_.erase(it);
        if (!key) {
            ++stats_.authFailures;
            linkQueue_.erase(from);
            return;
        }
        linkOut_[from] = *key;
        ++stats_.linkKeys;
        auto queued = std::move(linkQueue_[from]);
        linkQueue_.erase(from);
        for (const auto& [m, d] : queued)
            sendLinkEncrypted(from, m, d);
        return;
    }
    case Ctl::Direct: {
        auto body = r.raw(r.remaining());
        if (handler_)
            handler_(from, body);
        return;
    }
    }
    ++stats_.dropped;
}

// -------------------------------------------------------------- link keys

void AnonNode::sendLinkEncrypted(const Address& peer, ByteView appMsg, const Digest& content)
{
    if (auto it = linkOut_.find(peer); it != linkOut_.end()) {
        send(peer, EnvelopeKind::LinkEncrypted, sealSym(it->second, appMsg, drbg_), content);
        return;
    }
    auto& q = linkQueue_[peer];
    if (q.size() < kMaxQueued)
        q.emplace_back(Bytes(appMsg.begin(), appMsg.end()), content);
    if (linkPending_.count(peer))
        return;
    const PublicKey* pk = pkOf(others_, peer);
    if (!pk)
        return;
    auto [init, hello] = KxInitiator::start(*pk, asBytes(kLinkContext), drbg_);
    linkPending_.emplace(peer, init);
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(Ctl::LinkHello)).raw(hello.ephemeral);
    send(peer, EnvelopeKind::Transport, w.take());
    exec_.schedule(cfg_.buildTimeout, [this, peer] {
        // No answer: forget the attempt so the next message retries.
        if (linkPending_.erase(peer))
            linkQueue_.erase(peer);
    });
}

void AnonNode::onLinkEncrypted(const Address& from, ByteView payload)
{
    auto it = linkIn_.find(from);
    if (it == linkIn_.end()) {
        ++stats_.dropped;
        return;
    }
    auto plain = openSym(it->second, payload);
    if (!plain) {
        ++stats_.authFailures;
        return;
    }
    deliverApp(from, *plain);
}

} // namespace onionpos
