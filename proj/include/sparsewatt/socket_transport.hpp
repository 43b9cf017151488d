#pragma once

// Multi-process Transport over local (Unix-domain) stream sockets: the
// desk-scale stand-in for MPI across OS processes. Every rank listens on
// <dir>/rank_<r>.sock, connects to all lower ranks, and accepts from all
// higher ones, giving a full mesh. Frames are [tag u32][len u64][payload].

#include <sys/socket.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <deque>
#include <filesystem>
#include <map>
#include <string>
#include <thread>

#include "sparsewatt/transport.hpp"

namespace sparsewatt {

class SocketTransport final : public Transport {
public:
    SocketTransport(int rank, int size, const std::filesystem::path& dir)
        : rank_(rank), size_(size) {
        if (rank < 0 || rank >= size) throw protocol_error("bad rank");
        peer_fd_.assign(size, -1);
        pending_.resize(size);

        const int listen_fd = listen_on(sock_path(dir, rank));
        // Deterministic handshake: connect downward, accept from above.
        for (int peer = 0; peer < rank; ++peer)
            peer_fd_[peer] = connect_with_retry(sock_path(dir, peer));
        for (int i = rank + 1; i < size; ++i) accept_peer(listen_fd);
        ::close(listen_fd);
        ::unlink(sock_path(dir, rank).c_str());
    }

    ~SocketTransport() override {
        for (int fd : peer_fd_)
            if (fd >= 0) ::close(fd);
    }

    SocketTransport(const SocketTransport&) = delete;
    SocketTransport& operator=(const SocketTransport&) = delete;

    int rank() const noexcept override { return rank_; }
    int size() const noexcept override { return size_; }

    void send(int to, int tag, std::span<const std::byte> payload) override {
        if (to < 0 || to >= size_ || to == rank_) throw protocol_error("send: bad peer");
        std::uint32_t tag32 = static_cast<std::uint32_t>(tag);
        std::uint64_t len = payload.size();
        write_all(peer_fd_[to], &tag32, sizeof tag32);
        write_all(peer_fd_[to], &len, sizeof len);
        if (len > 0) write_all(peer_fd_[to], payload.data(), len);
    }

    std::vector<std::byte> recv(int from, int tag) override {
        if (from < 0 || from >= size_ || from == rank_) throw protocol_error("recv: bad peer");
        auto& pend = pending_[from];
        for (auto it = pend.begin(); it != pend.end(); ++it) {
            if (it->tag == tag) {
                auto payload = std::move(it->payload);
                pend.erase(it);
                return payload;
            }
        }
        for (;;) {
            Frame f = read_frame(peer_fd_[from]);
            if (f.tag == tag) return std::move(f.payload);
            pend.push_back(std::move(f));
        }
    }

private:
    struct Frame {
        int tag;
        std::vector<std::byte> payload;
    };

    static std::filesystem::path sock_path(const std::filesystem::path& dir, int rank) {
        return dir / ("rank_" + std::to_string(rank) + ".sock");
    }

    static int listen_on(const std::filesystem::path& path) {
        int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
        if (fd < 0) throw protocol_error("socket(): " + std::string(std::strerror(errno)));
        sockaddr_un addr{};
        addr.sun_family = AF_UNIX;
        if (path.string().size() >= sizeof(addr.sun_path))
            throw protocol_error("rendezvous path too long: " + path.string());
        std::strcpy(addr.sun_path, path.c_str());
        ::unlink(path.c_str());
        if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
            throw protocol_error("bind(" + path.string() + "): " + std::strerror(errno));
        if (::listen(fd, 64) != 0)
            throw protocol_error("listen(): " + std::string(std::strerror(errno)));
        return fd;
    }

    int connect_with_retry(const std::filesystem::path& path) {
        sockaddr_un addr{};
        addr.sun_family = AF_UNIX;
        std::strcpy(addr.sun_path, path.c_str());
        for (int attempt = 0; attempt < 1000; ++attempt) {
            int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
            if (fd < 0) throw protocol_error("socket(): " + std::string(std::strerror(errno)));
            if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0) {
                std::uint32_t hello = static_cast<std::uint32_t>(rank_);
                write_all(fd, &hello, sizeof hello);
                return fd;
            }
            ::close(fd);
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
        throw protocol_error("could not connect to peer socket " + path.string());
    }

    void accept_peer(int listen_fd) {
        int fd = ::accept(listen_fd, nullptr, nullptr);
        if (fd < 0) throw protocol_error("accept(): " + std::string(std::strerror(errno)));
        std::uint32_t hello = 0;
        read_all(fd, &hello, sizeof hello);
        if (hello >= static_cast<std::uint32_t>(size_) || peer_fd_[hello] != -1) {
            ::close(fd);
            throw protocol_error("unexpected peer hello " + std::to_string(hello));
        }
        peer_fd_[hello] = fd;
    }

    static void write_all(int fd, const void* data, std::size_t n) {
        const char* p = static_cast<const char*>(data);
        while (n > 0) {
            ssize_t w = ::write(fd, p, n);
            if (w < 0) {
                if (errno == EINTR) continue;
                throw protocol_error("write(): " + std::string(std::strerror(errno)));
            }
            p += w;
            n -= static_cast<std::size_t>(w);
        }
    }

    static void read_all(int fd, void* data, std::size_t n) {
        char* p = static_cast<char*>(data);
        while (n > 0) {
            ssize_t r = ::read(fd, p, n);
            if (r < 0) {
                if (errno == EINTR) continue;
                throw protocol_error("read(): " + std::string(std::strerror(errno)));
            }
            if (r == 0) throw protocol_error("peer closed the connection");
            p += r;
            n -= static_cast<std::size_t>(r);
        }
    }

    Frame read_frame(int fd) {
        std::uint32_t tag32;
        std::uint64_t len;
        read_all(fd, &tag32, sizeof tag32);
        read_all(fd, &len, sizeof len);
        Frame f{static_cast<int>(tag32), std::vector<std::byte>(len)};
        if (len > 0) read_all(fd, f.payload.data(), len);
        return f;
    }

    int rank_;
    int size_;
    std::vector<int> peer_fd_;
    std::vector<std::deque<Frame>> pending_;
};

/// Forks one OS process per rank and runs `body` in each over socket
/// transports. Returns true iff every child exited cleanly. Children must
/// not return control to the caller's stack, so they _exit().
inline bool run_ranks_forked(int n, const std::function<void(Transport&)>& body) {
    namespace fs = std::filesystem;
    char tmpl[] = "/tmp/sparsewatt_tp_XXXXXX";
    const char* dir = ::mkdtemp(tmpl);
    if (!dir) throw io_error("mkdtemp failed");

    std::vector<pid_t> pids;
    for (int r = 0; r < n; ++r) {
        pid_t pid = ::fork();
        if (pid < 0) throw protocol_error("fork(): " + std::string(std::strerror(errno)));
        if (pid == 0) {
            int code = 0;
            try {
                SocketTransport tp(r, n, dir);
                body(tp);
            } catch (const std::exception& e) {
                std::fprintf(stderr, "[rank %d] %s\n", r, e.what());
                code = 1;
            }
            ::_exit(code);
        }
        pids.push_back(pid);
    }

    bool ok = true;
    for (pid_t pid : pids) {
        int status = 0;
        ::waitpid(pid, &status, 0);
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) ok = false;
    }
    std::error_code ec;
    fs::remove_all(dir, ec);
    return ok;
}

} // namespace sparsewatt
