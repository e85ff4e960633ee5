#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace evfl {

// Byte-frame channels between the coordinator and every party, the active
// party's own block included. Coordinator-side calls happen on one thread;
// each party's calls happen on that party's thread.
class Transport {
   public:
    virtual ~Transport() = default;
    virtual void send_to_party(int party, const std::vector<std::uint8_t>& frame) = 0;
    virtual std::vector<std::uint8_t> recv_from_party(int party) = 0;
    virtual void send_to_coordinator(int party, const std::vector<std::uint8_t>& frame) = 0;
    virtual std::vector<std::uint8_t> recv_at_party(int party) = 0;
};

class InProcTransport final : public Transport {
   public:
    explicit InProcTransport(int parties);
    void send_to_party(int party, const std::vector<std::uint8_t>& frame) override;
    std::vector<std::uint8_t> recv_from_party(int party) override;
    void send_to_coordinator(int party, const std::vector<std::uint8_t>& frame) override;
    std::vector<std::uint8_t> recv_at_party(int party) override;

   private:
    struct Channel {
        std::mutex mu;
        std::condition_variable cv;
        std::deque<std::vector<std::uint8_t>> frames;
    };
    Channel& down(int party);
    Channel& up(int party);
    std::vector<std::unique_ptr<Channel>> down_;
    std::vector<std::unique_ptr<Channel>> up_;
};

// TCP over loopback, one long-lived stream per party, established eagerly at
// construction: each party connects and announces its id as a u32 hello.
class SocketTransport final : public Transport {
   public:
    explicit SocketTransport(int parties);
    ~SocketTransport() override;
    SocketTransport(const SocketTransport&) = delete;
    SocketTransport& operator=(const SocketTransport&) = delete;

    void send_to_party(int party, const std::vector<std::uint8_t>& frame) override;
    std::vector<std::uint8_t> recv_from_party(int party) override;
    void send_to_coordinator(int party, const std::vector<std::uint8_t>& frame) override;
    std::vector<std::uint8_t> recv_at_party(int party) override;

    int port() const { return port_; }

   private:
    int fd_for(int party, const std::vector<int>& fds) const;
    int port_ = 0;
    std::vector<int> coord_fds_;  // coordinator's end, indexed by party
    std::vector<int> party_fds_;  // party's end, indexed by party
};

std::unique_ptr<Transport> make_transport(const std::string& kind, int parties);

}  // namespace evfl
