#include "evfl/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "evfl/errors.hpp"

namespace evfl {

namespace {

void check_party(int party, std::size_t parties, const char* what) {
    if (party < 0 || static_cast<std::size_t>(party) >= parties)
        throw TransportError(std::string(what) + ": unknown party " +
                             std::to_string(party));
}

}  // namespace

InProcTransport::InProcTransport(int parties) {
    if (parties < 1) throw TransportError("InProcTransport: needs at least one party");
    for (int m = 0; m < parties; ++m) {
        down_.push_back(std::make_unique<Channel>());
        up_.push_back(std::make_unique<Channel>());
    }
}

InProcTransport::Channel& InProcTransport::down(int party) {
    check_party(party, down_.size(), "InProcTransport");
    return *down_[static_cast<std::size_t>(party)];
}

InProcTransport::Channel& InProcTransport::up(int party) {
    check_party(party, up_.size(), "InProcTransport");
    return *up_[static_cast<std::size_t>(party)];
}

void InProcTransport::send_to_party(int party, const std::vector<std::uint8_t>& frame) {
    Channel& ch = down(party);
    {
        std::lock_guard<std::mutex> lock(ch.mu);
        ch.frames.push_back(frame);
    }
    ch.cv.notify_one();
}

std::vector<std::uint8_t> InProcTransport::recv_at_party(int party) {
    Channel& ch = down(party);
    std::unique_lock<std::mutex> lock(ch.mu);
    ch.cv.wait(lock, [&] { return !ch.frames.empty(); });
    std::vector<std::uint8_t> frame = std::move(ch.frames.front());
    ch.frames.pop_front();
    return frame;
}

void InProcTransport::send_to_coordinator(int party,
                                          const std::vector<std::uint8_t>& frame) {
    Channel& ch = up(party);
    {
        std::lock_guard<std::mutex> lock(ch.mu);
        ch.frames.push_back(frame);
    }
    ch.cv.notify_one();
}

std::vector<std::uint8_t> InProcTransport::recv_from_party(int party) {
    Channel& ch = up(party);
    std::unique_lock<std::mutex> lock(ch.mu);
    ch.cv.wait(lock, [&] { return !ch.frames.empty(); });
    std::vector<std::uint8_t> frame = std::move(ch.frames.front());
    ch.frames.pop_front();
    return frame;
}

namespace {

[[noreturn]] void throw_errno(const char* what) {
    throw TransportError(std::string(what) + ": " + std::strerror(errno));
}

void send_all(int fd, const std::uint8_t* data, std::size_t size) {
    while (size > 0) {
        ssize_t n = ::send(fd, data, size, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw_errno("SocketTransport send");
        }
        data += n;
        size -= static_cast<std::size_t>(n);
    }
}

void recv_all(int fd, std::uint8_t* data, std::size_t size) {
    while (size > 0) {
        ssize_t n = ::recv(fd, data, size, 0);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw_errno("SocketTransport recv");
        }
        if (n == 0) throw TransportError("SocketTransport recv: peer closed the stream");
        data += n;
        size -= static_cast<std::size_t>(n);
    }
}

std::vector<std::uint8_t> recv_frame(int fd) {
    std::uint8_t head[5];
    recv_all(fd, head, sizeof head);
    std::uint32_t payload_len = static_cast<std::uint32_t>(head[0]) |
                                static_cast<std::uint32_t>(head[1]) << 8 |
                                static_cast<std::uint32_t>(head[2]) << 16 |
                                static_cast<std::uint32_t>(head[3]) << 24;
    std::vector<std::uint8_t> frame(sizeof head + payload_len);
    std::memcpy(frame.data(), head, sizeof head);
    recv_all(fd, frame.data() + sizeof head, payload_len);
    return frame;
}

void set_nodelay(int fd) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    // The protocol keeps at most one frame in flight per direction; roomy
    // buffers keep desk-scale frames from ever blocking a sender.
    int buf = 1 << 20;
    ::setsockopt(fd, SOL_SOCKET, SO_SNDBUF, &buf, sizeof buf);
    ::setsockopt(fd, SOL_SOCKET, SO_RCVBUF, &buf, sizeof buf);
}

}  // namespace

SocketTransport::SocketTransport(int parties) {
    if (parties < 1) throw TransportError("SocketTransport: needs at least one party");
    coord_fds_.assign(static_cast<std::size_t>(parties), -1);
    party_fds_.assign(static_cast<std::size_t>(parties), -1);

    int listener = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listener < 0) throw_errno("SocketTransport socket");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 ||
        ::listen(listener, parties + 8) < 0) {
        int saved = errno;
        ::close(listener);
        errno = saved;
        throw_errno("SocketTransport bind/listen");
    }
    socklen_t len = sizeof addr;
    ::getsockname(listener, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);

    // Every party connects up front; the u32 hello names the sender so accept
    // order never matters.
    for (int m = 0; m < parties; ++m) {
        int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) throw_errno("SocketTransport socket");
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
            int saved = errno;
            ::close(fd);
            errno = saved;
            throw_errno("SocketTransport connect");
        }
        set_nodelay(fd);
        std::uint8_t hello[4] = {
            static_cast<std::uint8_t>(m & 0xFF),
            static_cast<std::uint8_t>((m >> 8) & 0xFF),
            static_cast<std::uint8_t>((m >> 16) & 0xFF),
            static_cast<std::uint8_t>((m >> 24) & 0xFF),
        };
        send_all(fd, hello, sizeof hello);
        party_fds_[static_cast<std::size_t>(m)] = fd;
    }
    for (int m = 0; m < parties; ++m) {
        int fd = ::accept(listener, nullptr, nullptr);
        if (fd < 0) throw_errno("SocketTransport accept");
        set_nodelay(fd);
        std::uint8_t hello[4];
        recv_all(fd, hello, sizeof hello);
        std::uint32_t who = static_cast<std::uint32_t>(hello[0]) |
                            static_cast<std::uint32_t>(hello[1]) << 8 |
                            static_cast<std::uint32_t>(hello[2]) << 16 |
                            static_cast<std::uint32_t>(hello[3]) << 24;
        if (who >= static_cast<std::uint32_t>(parties) ||
            coord_fds_[who] != -1) {
            ::close(fd);
            throw TransportError("SocketTransport: bad hello from party " +
                                 std::to_string(who));
        }
        coord_fds_[who] = fd;
    }
    ::close(listener);
}

SocketTransport::~SocketTransport() {
    for (int fd : coord_fds_)
        if (fd >= 0) ::close(fd);
    for (int fd : party_fds_)
        if (fd >= 0) ::close(fd);
}

int SocketTransport::fd_for(int party, const std::vector<int>& fds) const {
    check_party(party, fds.size(), "SocketTransport");
    int fd = fds[static_cast<std::size_t>(party)];
    if (fd < 0) throw TransportError("SocketTransport: party " + std::to_string(party) +
                                     " has no stream");
    return fd;
}

void SocketTransport::send_to_party(int party, const std::vector<std::uint8_t>& frame) {
    send_all(fd_for(party, coord_fds_), frame.data(), frame.size());
}

std::vector<std::uint8_t> SocketTransport::recv_from_party(int party) {
    return recv_frame(fd_for(party, coord_fds_));
}

void SocketTransport::send_to_coordinator(int party,
                                          const std::vector<std::uint8_t>& frame) {
    send_all(fd_for(party, party_fds_), frame.data(), frame.size());
}

std::vector<std::uint8_t> SocketTransport::recv_at_party(int party) {
    return recv_frame(fd_for(party, party_fds_));
}

std::unique_ptr<Transport> make_transport(const std::string& kind, int parties) {
    if (kind == "inproc") return std::make_unique<InProcTransport>(parties);
    if (kind == "socket") return std::make_unique<SocketTransport>(parties);
    throw ConfigError("transport: expected 'inproc' or 'socket', got '" + kind + "'");
}

}  // namespace evfl
