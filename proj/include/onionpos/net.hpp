#pragma once

// Real-socket runtime: a poll(2) event loop and UDP datagram transport.

#include "onionpos/anonet.hpp"
#include "onionpos/consensus.hpp"
#include "onionpos/runtime.hpp"

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <set>

namespace onionpos {

/// Single-threaded loop: timers plus readable file descriptors. Everything
/// except stop() must be called from the loop's thread.
class EventLoop : public Executor {
public:
    EventLoop();

    Micros now() const override;
    TimerId schedule(Micros delay, std::function<void()> fn) override;
    void cancel(TimerId id) override;

    void watch(int fd, std::function<void()> onReadable);

    /// Runs until stop() (or until `deadline`, when set, in loop time).
    void run(std::optional<Micros> deadline = std::nullopt);
    /// Safe from any thread or a signal handler.
    void stop() { stop_ = true; }

private:
    std::chrono::steady_clock::time_point epoch_;
    std::multimap<Micros, TimerId> byTime_;
    std::map<TimerId, std::pair<Micros, std::function<void()>>> timers_;
    TimerId nextId_ = 1;
    std::map<int, std::function<void()>> fds_;
    std::atomic<bool> stop_{false};
};

class UdpTransport : public Transport {
public:
    using Receiver = std::function<void(const Address& from, Bytes data)>;

    /// Binds to `self`; throws std::system_error when the port is taken.
    UdpTransport(EventLoop& loop, const Address& self);
    ~UdpTransport() override;

    UdpTransport(const UdpTransport&) = delete;
    UdpTransport& operator=(const UdpTransport&) = delete;

    void setReceiver(Receiver rx) { rx_ = std::move(rx); }

    Address localAddress() const override { return self_; }
    void send(const Address& dst, Bytes data, const SendLabel& label = {}) override;

    std::uint64_t bytesSent() const { return bytesSent_; }

private:
    void drain();

    Address self_;
    int fd_ = -1;
    Receiver rx_;
    std::uint64_t bytesSent_ = 0;
};

/// One consensus node on real sockets: loop + UDP + anonet + engine.
class SocketNode {
public:
    SocketNode(const Genesis& genesis, AccountId id, KeyPair keys, AnonConfig anon, ProtocolParams params,
               EngineObserver* observer = nullptr, std::uint64_t seed = 0);

    /// Starts circuits and consensus, then runs the loop.
    void run(std::optional<Micros> duration = std::nullopt);
    void stop() { loop_.stop(); }

    EventLoop& loop() { return loop_; }
    Engine& engine() { return *engine_; }
    AnonNode& anon() { return *anon_; }

private:
    EventLoop loop_;
    std::unique_ptr<UdpTransport> udp_;
    std::unique_ptr<AnonNode> anon_;
    std::unique_ptr<Engine> engine_;
};

} // namespace onionpos
