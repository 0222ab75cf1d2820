#include "onionpos/net.hpp"

#include <arpa/inet.h>
#include <cstring>
#include <cerrno>
#include <fcntl.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <system_error>
#include <unistd.h>
#include <vector>

namespace onionpos {

EventLoop::EventLoop() : epoch_(std::chrono::steady_clock::now()) {}

Micros EventLoop::now() const
{
    return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - epoch_).count();
}

TimerId EventLoop::schedule(Micros delay, std::function<void()> fn)
{
    const TimerId id = nextId_++;
    const Micros at = now() + std::max<Micros>(0, delay);
    timers_.emplace(id, std::make_pair(at, std::move(fn)));
    byTime_.emplace(at, id);
    return id;
}

void EventLoop::cancel(TimerId id)
{
    auto it = timers_.find(id);
    if (it == timers_.end())
        return;
    auto [lo, hi] = byTime_.equal_range(it->second.first);
    for (auto j = lo; j != hi; ++j)
        if (j->second == id) {
            byTime_.erase(j);
            break;
        }
    timers_.erase(it);
}

void EventLoop::watch(int fd, std::function<void()> onReadable)
{
    fds_[fd] = std::move(onReadable);
}

void EventLoop::run(std::optional<Micros> deadline)
{
    stop_ = false;
    std::vector<pollfd> pfds;
    while (!stop_) {
        Micros t = now();
        if (deadline && t >= *deadline)
            return;
        while (!byTime_.empty() && byTime_.begin()->first <= t) {
            const TimerId id = byTime_.begin()->second;
            byTime_.erase(byTime_.begin());
            auto it = timers_.find(id);
            auto fn = std::move(it->second.second);
            timers_.erase(it);
            fn();
            if (stop_)
                return;
            t = now();
        }
        // Wake at least every 50 ms so stop() from another thread is seen.
        Micros wait = 50 * kMicrosPerMs;
        if (!byTime_.empty())
            wait = std::min(wait, byTime_.begin()->first - t);
        if (deadline)
            wait = std::min(wait, *deadline - t);
        pfds.clear();
        for (const auto& [fd, cb] : fds_)
            pfds.push_back(pollfd{fd, POLLIN, 0});
        const int ms = static_cast<int>((std::max<Micros>(0, wait) + 999) / 1000);
        const int n = ::poll(pfds.data(), pfds.size(), ms);
        if (n < 0) {
            if (errno == EINTR)
                continue;
            throw std::system_error(errno, std::generic_category(), "poll");
        }
        for (const auto& p : pfds)
            if (p.revents & (POLLIN | POLLERR))
                fds_.at(p.fd)();
    }
}

namespace {

sockaddr_in toSockaddr(const Address& a)
{
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(a.port);
    std::memcpy(&sa.sin_addr.s_addr, a.ip.data(), 4);
    return sa;
}

Address fromSockaddr(const sockaddr_in& sa)
{
    Address a;
    std::memcpy(a.ip.data(), &sa.sin_addr.s_addr, 4);
    a.port = ntohs(sa.sin_port);
    return a;
}

} // namespace

UdpTransport::UdpTransport(EventLoop& loop, const Address& self) : self_(self)
{
    fd_ = ::socket(AF_INET, SOCK_DGRAM | SOCK_NONBLOCK | SOCK_CLOEXEC, 0);
    if (fd_ < 0)
        throw std::system_error(errno, std::generic_category(), "socket");
    int buf = 4 << 20;
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVBUF, &buf, sizeof buf);
    ::setsockopt(fd_, SOL_SOCKET, SO_SNDBUF, &buf, sizeof buf);
    const sockaddr_in sa = toSockaddr(self);
    if (::bind(fd_, reinterpret_cast<const sockaddr*>(&sa), sizeof sa) != 0) {
        const int e = errno;
        ::close(fd_);
        throw std::system_error(e, std::generic_category(), "bind " + self.toString());
    }
    loop.watch(fd_, [this] { drain(); });
}

UdpTransport::~UdpTransport()
{
    if (fd_ >= 0)
        ::close(fd_);
}

void UdpTransport::send(const Address& dst, Bytes data, const SendLabel&)
{
    const sockaddr_in sa = toSockaddr(dst);
    // Datagram semantics: a failed send is a lost packet.
    if (::sendto(fd_, data.data(), data.size(), 0, reinterpret_cast<const sockaddr*>(&sa), sizeof sa) >= 0)
        bytesSent_ += data.size();
}

void UdpTransport::drain()
{
    std::vector<std::uint8_t> buf(65536);
    for (;;) {
        sockaddr_in from{};
        socklen_t len = sizeof from;
        const ssize_t n = ::recvfrom(fd_, buf.data(), buf.size(), 0, reinterpret_cast<sockaddr*>(&from), &len);
        if (n < 0)
            return; // EAGAIN, or an ICMP error surfaced on the socket
        if (rx_)
            rx_(fromSockaddr(from), Bytes(buf.begin(), buf.begin() + n));
    }
}

SocketNode::SocketNode(const Genesis& genesis, AccountId id, KeyPair keys, AnonConfig anon, ProtocolParams params,
                       EngineObserver* observer, std::uint64_t seed)
{
    const auto* me = genesis.node(id);
    if (!me)
        throw std::invalid_argument("node " + std::to_string(id) + " is not in the genesis");
    if (me->publicKey != keys.pk)
        throw std::invalid_argument("key does not match node " + std::to_string(id) + " in the genesis");
    udp_ = std::make_unique<UdpTransport>(loop_, me->networkAddress);
    anon_ = std::make_unique<AnonNode>(anon, keys, me->networkAddress, directoryFromGenesis(genesis), *udp_, loop_,
                                       seed ? Drbg::fromLabel("socket-anon", seed, id) : Drbg::fromEntropy(),
                                       seed ? seed * 1000003 + id : Drbg::fromEntropy().next64());
    engine_ = std::make_unique<Engine>(genesis, params, id, keys, loop_, *anon_, observer);
    auto* a = anon_.get();
    auto* e = engine_.get();
    a->setHandler([e](const Address& from, ByteView msg) { return e->onMessage(from, msg); });
    udp_->setReceiver([a](const Address& from, Bytes d) { a->onDatagram(from, d); });
}

void SocketNode::run(std::optional<Micros> duration)
{
    anon_->start();
    engine_->start();
    std::optional<Micros> deadline;
    if (duration)
        deadline = loop_.now() + *duration;
    loop_.run(deadline);
    engine_->stop();
}

} // namespace onionpos
