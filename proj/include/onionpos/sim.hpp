#pragma once

// Deterministic discrete-event runtime: one global event queue, per-node
// executors and a simulated datagram network with link capture.

#include "onionpos/rng.hpp"
#include "onionpos/runtime.hpp"

#include <functional>
#include <map>
#include <memory>
#include <queue>
#include <unordered_set>
#include <vector>

namespace onionpos {

class Simulator {
public:
    Micros now() const { return now_; }
    TimerId schedule(Micros delay, std::function<void()> fn);
    void cancel(TimerId id);

    /// Runs events with time <= until, then sets the clock to `until`.
    void runUntil(Micros until);
    /// Runs one event; false when the queue is empty.
    bool step();
    std::size_t pending() const { return queue_.size() - cancelled_.size(); }
    std::uint64_t eventsRun() const { return eventsRun_; }

private:
    struct Event {
        Micros at;
        TimerId id;
        std::function<void()> fn;
    };
    struct Later {
        bool operator()(const Event& a, const Event& b) const
        {
            return a.at != b.at ? a.at > b.at : a.id > b.id;
        }
    };

    Micros now_ = 0;
    TimerId nextId_ = 1;
    std::uint64_t eventsRun_ = 0;
    std::priority_queue<Event, std::vector<Event>, Later> queue_;
    std::unordered_set<TimerId> cancelled_;
};

/// One node's view of the simulator. Bumping the epoch (going offline)
/// voids every callback scheduled before.
class SimExecutor : public Executor {
public:
    explicit SimExecutor(Simulator& sim) : sim_(sim) {}

    Micros now() const override { return sim_.now(); }
    TimerId schedule(Micros delay, std::function<void()> fn) override;
    void cancel(TimerId id) override { sim_.cancel(id); }

    void bumpEpoch() { ++epoch_; }

private:
    Simulator& sim_;
    std::uint64_t epoch_ = 0;
};

struct LatencyModel {
    Micros min = 5 * kMicrosPerMs;
    Micros max = 15 * kMicrosPerMs;
};

struct CaptureRecord {
    Micros t = 0;
    Address src;
    Address dst;
    std::uint8_t kind = 0;
    std::size_t size = 0;
    bool plaintext = false;
    /// Ground truth (never on the wire): digest of the application message carried.
    std::optional<Digest> content;
};

class SimNetwork {
public:
    using Receiver = std::function<void(const Address& from, Bytes data)>;
    /// Decides whether a datagram exposes an application message in the clear.
    using PlaintextProbe = std::function<bool(ByteView data)>;

    SimNetwork(Simulator& sim, LatencyModel latency, double dropRate, std::uint64_t seed);

    void attach(const Address& addr, Receiver rx);
    void setOnline(const Address& addr, bool online);
    bool online(const Address& addr) const;

    void send(const Address& src, const Address& dst, Bytes data, const SendLabel& label);

    void setCapture(bool on) { capturing_ = on; }
    void setPlaintextProbe(PlaintextProbe p) { probe_ = std::move(p); }
    const std::vector<CaptureRecord>& capture() const { return capture_; }
    std::uint64_t bytesSent(const Address& a) const;
    std::uint64_t totalBytes() const { return totalBytes_; }
    std::uint64_t datagrams() const { return datagrams_; }
    std::uint64_t dropped() const { return dropped_; }

    /// Transport facade bound to one address.
    std::unique_ptr<Transport> transportFor(const Address& addr);

private:
    struct Port {
        Receiver rx;
        bool online = true;
        std::uint64_t bytesSent = 0;
    };

    Simulator& sim_;
    LatencyModel latency_;
    double dropRate_;
    Rng rng_;
    std::map<Address, Port> ports_;
    bool capturing_ = true;
    PlaintextProbe probe_;
    std::vector<CaptureRecord> capture_;
    std::uint64_t totalBytes_ = 0;
    std::uint64_t datagrams_ = 0;
    std::uint64_t dropped_ = 0;
};

} // namespace onionpos
