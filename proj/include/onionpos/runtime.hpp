#pragma once

// Event-loop plumbing shared by the simulated and the socket runtimes.

#include "onionpos/address.hpp"
#include "onionpos/bytes.hpp"
#include "onionpos/crypto.hpp"

#include <cstdint>
#include <functional>
#include <optional>

namespace onionpos {

using Micros = std::int64_t;
using TimerId = std::uint64_t;

inline constexpr Micros kMicrosPerMs = 1000;
inline constexpr Micros kMicrosPerSecond = 1000000;

/// Clock and timers of one node's event loop. Callbacks run on that loop.
class Executor {
public:
    virtual ~Executor() = default;
    virtual Micros now() const = 0;
    virtual TimerId schedule(Micros delay, std::function<void()> fn) = 0;
    virtual void cancel(TimerId id) = 0;
};

/// Ground truth attached to a send for capture analysis only; it never
/// travels on the wire.
struct SendLabel {
    std::optional<Digest> content;
};

/// Datagram transport between node addresses.
class Transport {
public:
    virtual ~Transport() = default;
    virtual Address localAddress() const = 0;
    virtual void send(const Address& dst, Bytes data, const SendLabel& label = {}) = 0;
};

/// How the consensus engine talks to the network layer.
class MessageBus {
public:
    virtual ~MessageBus() = default;
    /// Disseminate an application message to every node.
    virtual void gossip(Bytes appMsg) = 0;
    /// Point-to-point message (sync traffic).
    virtual void sendDirect(const Address& dst, Bytes appMsg) = 0;
    virtual std::vector<Address> peers() const = 0;
    /// Called at every round start with the height of the tip being extended.
    virtual void onRound(std::uint64_t) {}
    /// Called when a block timeout expires (dissemination may be failing).
    virtual void onStall() {}
};

} // namespace onionpos
