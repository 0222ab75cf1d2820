#include "onionpos/sim.hpp"

#include <stdexcept>

namespace onionpos {

TimerId Simulator::schedule(Micros delay, std::function<void()> fn)
{
    const TimerId id = nextId_++;
    queue_.push(Event{now_ + std::max<Micros>(0, delay), id, std::move(fn)});
    return id;
}

void Simulator::cancel(TimerId id)
{
    if (id > 0 && id < nextId_)
        cancelled_.insert(id);
}

bool Simulator::step()
{
    while (!queue_.empty()) {
        Event ev = queue_.top();
        queue_.pop();
        if (cancelled_.erase(ev.id))
            continue;
        now_ = ev.at;
        ++eventsRun_;
        ev.fn();
        return true;
    }
    return false;
}

void Simulator::runUntil(Micros until)
{
    while (!queue_.empty()) {
        const auto& top = queue_.top();
        if (cancelled_.count(top.id)) {
            cancelled_.erase(top.id);
            queue_.pop();
            continue;
        }
        if (top.at > until)
            break;
        step();
    }
    now_ = std::max(now_, until);
}

TimerId SimExecutor::schedule(Micros delay, std::function<void()> fn)
{
    return sim_.schedule(delay, [this, epoch = epoch_, fn = std::move(fn)] {
        if (epoch == epoch_)
            fn();
    });
}

SimNetwork::SimNetwork(Simulator& sim, LatencyModel latency, double dropRate, std::uint64_t seed)
    : sim_(sim), latency_(latency), dropRate_(dropRate), rng_(seed)
{
    if (latency.min < 0 || latency.max < latency.min)
        throw std::invalid_argument("bad latency range");
}

void SimNetwork::attach(const Address& addr, Receiver rx)
{
    ports_[addr].rx = std::move(rx);
}

void SimNetwork::setOnline(const Address& addr, bool online)
{
    ports_.at(addr).online = online;
}

bool SimNetwork::online(const Address& addr) const
{
    auto it = ports_.find(addr);
    return it != ports_.end() && it->second.online;
}

std::uint64_t SimNetwork::bytesSent(const Address& a) const
{
    auto it = ports_.find(a);
    return it == ports_.end() ? 0 : it->second.bytesSent;
}

void SimNetwork::send(const Address& src, const Address& dst, Bytes data, const SendLabel& label)
{
    auto& from = ports_.at(src);
    if (!from.online)
        return;
    from.bytesSent += data.size();
    totalBytes_ += data.size();
    ++datagrams_;
    if (capturing_)
        capture_.push_back(CaptureRecord{sim_.now(), src, dst, data.empty() ? std::uint8_t{0} : data[0], data.size(),
                                         probe_ ? probe_(data) : false, label.content});

    // Latency and loss draws happen for every datagram so that the random
    // stream does not depend on who is online.
    const auto delay = static_cast<Micros>(
        rng_.range(static_cast<std::uint64_t>(latency_.min), static_cast<std::uint64_t>(latency_.max)));
    const bool lost = rng_.chance(dropRate_);
    if (lost) {
        ++dropped_;
        return;
    }
    sim_.schedule(delay, [this, src, dst, data = std::move(data)]() mutable {
        auto it = ports_.find(dst);
        if (it == ports_.end() || !it->second.online || !it->second.rx)
            return;
        it->second.rx(src, std::move(data));
    });
}

namespace {

class SimTransport : public Transport {
public:
    SimTransport(SimNetwork& net, Address self) : net_(net), self_(self) {}
    Address localAddress() const override { return self_; }
    void send(const Address& dst, Bytes data, const SendLabel& label) override
    {
        net_.send(self_, dst, std::move(data), label);
    }

private:
    SimNetwork& net_;
    Address self_;
};

} // namespace

std::unique_ptr<Transport> SimNetwork::transportFor(const Address& addr)
{
    return std::make_unique<SimTransport>(*this, addr);
}

} // namespace onionpos
