#include "contmsg/transport.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <deque>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <thread>
#include <unistd.h>

namespace contmsg {

namespace {

using clock_type = std::chrono::steady_clock;

class Socket {
  public:
	Socket() = default;
	explicit Socket(int fd) : m_fd(fd) {}
	Socket(Socket&& other) noexcept : m_fd(std::exchange(other.m_fd, -1)) {}
	Socket& operator=(Socket&& other) noexcept {
		if(this != &other) {
			reset();
			m_fd = std::exchange(other.m_fd, -1);
		}
		return *this;
	}
	Socket(const Socket&) = delete;
	Socket& operator=(const Socket&) = delete;
	~Socket() { reset(); }

	int fd() const { return m_fd; }
	explicit operator bool() const { return m_fd >= 0; }
	void reset() {
		if(m_fd >= 0) ::close(m_fd);
		m_fd = -1;
	}

  private:
	int m_fd = -1;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what) { throw Error(code, what + ": " + std::strerror(errno)); }

sockaddr_in resolve(const wire::RosterEntry& e) {
	addrinfo hints{};
	hints.ai_family = AF_INET;
	hints.ai_socktype = SOCK_STREAM;
	addrinfo* res = nullptr;
	if(::getaddrinfo(e.host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
		throw Error(ErrorCode::config_error, "cannot resolve " + e.host);
	}
	sockaddr_in addr = *reinterpret_cast<sockaddr_in*>(res->ai_addr);
	::freeaddrinfo(res);
	addr.sin_port = htons(e.port);
	return addr;
}

void set_nonblocking(int fd) {
	const int flags = ::fcntl(fd, F_GETFL, 0);
	if(flags < 0 || ::fcntl(fd, F_SETFL, flags | O_NONBLOCK) < 0) fail(ErrorCode::connection_lost, "fcntl");
}

void set_nodelay(int fd) {
	int one = 1;
	::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

void write_all_blocking(int fd, const void* data, std::size_t n) {
	const auto* p = static_cast<const char*>(data);
	while(n > 0) {
		const auto w = ::send(fd, p, n, MSG_NOSIGNAL);
		if(w < 0) {
			if(errno == EINTR) continue;
			fail(ErrorCode::connection_lost, "handshake send");
		}
		p += w;
		n -= static_cast<std::size_t>(w);
	}
}

void read_all_blocking(int fd, void* data, std::size_t n, clock_type::time_point deadline) {
	auto* p = static_cast<char*>(data);
	while(n > 0) {
		pollfd pfd{fd, POLLIN, 0};
		const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock_type::now()).count();
		if(left <= 0) throw Error(ErrorCode::connection_lost, "handshake timed out");
		if(::poll(&pfd, 1, static_cast<int>(left)) <= 0) continue;
		const auto r = ::recv(fd, p, n, 0);
		if(r == 0) throw Error(ErrorCode::connection_lost, "peer closed during handshake");
		if(r < 0) {
			if(errno == EINTR || errno == EAGAIN) continue;
			fail(ErrorCode::connection_lost, "handshake recv");
		}
		p += r;
		n -= static_cast<std::size_t>(r);
	}
}

Socket listen_on(const wire::RosterEntry& self) {
	Socket s(::socket(AF_INET, SOCK_STREAM, 0));
	if(!s) fail(ErrorCode::connection_lost, "socket");
	int one = 1;
	::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
	auto addr = resolve(self);
	if(::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) fail(ErrorCode::config_error, "bind " + self.host + ":" + std::to_string(self.port));
	if(::listen(s.fd(), 64) < 0) fail(ErrorCode::connection_lost, "listen");
	return s;
}

Socket connect_to(const wire::RosterEntry& peer, clock_type::time_point deadline) {
	const auto addr = resolve(peer);
	while(true) {
		Socket s(::socket(AF_INET, SOCK_STREAM, 0));
		if(!s) fail(ErrorCode::connection_lost, "socket");
		if(::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) == 0) return s;
		if(clock_type::now() >= deadline) fail(ErrorCode::connection_lost, "connect to rank " + std::to_string(peer.rank.value));
		std::this_thread::sleep_for(std::chrono::milliseconds(5));
	}
}

Socket accept_from(const Socket& listener, clock_type::time_point deadline) {
	while(true) {
		pollfd pfd{listener.fd(), POLLIN, 0};
		const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock_type::now()).count();
		if(left <= 0) throw Error(ErrorCode::connection_lost, "timed out waiting for peers");
		if(::poll(&pfd, 1, static_cast<int>(left)) <= 0) continue;
		Socket s(::accept(listener.fd(), nullptr, nullptr));
		if(s) return s;
		if(errno != EINTR && errno != EAGAIN) fail(ErrorCode::connection_lost, "accept");
	}
}

class TcpSubstrate final : public Substrate {
  public:
	TcpSubstrate(const std::vector<wire::RosterEntry>& roster, Rank self, std::chrono::milliseconds timeout) : m_self(self), m_peers(roster.size()) {
		const auto deadline = clock_type::now() + timeout;
		Socket listener = listen_on(roster.at(self.value));
		// Lower ranks accept, higher ranks connect; the hello carries the connecting rank.
		for(std::uint32_t j = 0; j < self.value; ++j) {
			Socket s = connect_to(roster[j], deadline);
			const std::uint32_t hello = self.value;
			write_all_blocking(s.fd(), &hello, sizeof(hello));
			m_peers[j].sock = std::move(s);
		}
		for(std::size_t n = self.value + 1; n < roster.size(); ++n) {
			Socket s = accept_from(listener, deadline);
			std::uint32_t hello = 0;
			read_all_blocking(s.fd(), &hello, sizeof(hello), deadline);
			if(hello <= self.value || hello >= roster.size() || m_peers[hello].sock) throw Error(ErrorCode::protocol_error, "unexpected hello from rank " + std::to_string(hello));
			m_peers[hello].sock = std::move(s);
		}
		for(auto& p : m_peers) {
			if(!p.sock) continue;
			set_nonblocking(p.sock.fd());
			set_nodelay(p.sock.fd());
		}
	}

	void send(std::uint64_t send_id, Rank dest, Tag tag, std::span<const std::byte> payload) override {
		if(dest == m_self) {
			m_self_inbox.push_back(InboundMessage{m_self, tag, std::vector<std::byte>(payload.begin(), payload.end())});
			m_self_handed.push_back(send_id);
			return;
		}
		auto& peer = m_peers.at(dest.value);
		wire::append_frame(peer.out, m_self, tag, payload);
		peer.pending.push_back({send_id, peer.out_base + peer.out.size()});
	}

	void progress(std::vector<std::uint64_t>& handed, std::vector<InboundMessage>& arrived) override {
		handed.insert(handed.end(), m_self_handed.begin(), m_self_handed.end());
		m_self_handed.clear();
		for(std::uint32_t r = 0; r < m_peers.size(); ++r) {
			auto& peer = m_peers[r];
			if(!peer.sock) continue;
			flush(r, peer, handed);
			drain(r, peer, arrived);
		}
		for(auto& msg : m_self_inbox) arrived.push_back(std::move(msg));
		m_self_inbox.clear();
	}

  private:
	struct PendingSend {
		std::uint64_t id;
		std::uint64_t end; // absolute stream offset of the frame's last byte + 1
	};
	struct Peer {
		Socket sock;
		std::vector<std::byte> out;
		std::size_t out_pos = 0;
		std::uint64_t out_base = 0; // absolute offset of out[0]
		std::deque<PendingSend> pending;
		std::vector<std::byte> in;
	};

	void flush(std::uint32_t rank, Peer& peer, std::vector<std::uint64_t>& handed) {
		while(peer.out_pos < peer.out.size()) {
			const auto w = ::send(peer.sock.fd(), peer.out.data() + peer.out_pos, peer.out.size() - peer.out_pos, MSG_NOSIGNAL);
			if(w < 0) {
				if(errno == EINTR) continue;
				if(errno == EAGAIN || errno == EWOULDBLOCK) break;
				fail(ErrorCode::connection_lost, "send to rank " + std::to_string(rank));
			}
			peer.out_pos += static_cast<std::size_t>(w);
		}
		const auto written = peer.out_base + peer.out_pos;
		while(!peer.pending.empty() && peer.pending.front().end <= written) {
			handed.push_back(peer.pending.front().id);
			peer.pending.pop_front();
		}
		if(peer.out_pos == peer.out.size()) {
			peer.out_base += peer.out.size();
			peer.out.clear();
			peer.out_pos = 0;
		}
	}

	void drain(std::uint32_t rank, Peer& peer, std::vector<InboundMessage>& arrived) {
		std::byte buf[64 * 1024];
		while(true) {
			const auto r = ::recv(peer.sock.fd(), buf, sizeof(buf), 0);
			if(r > 0) {
				peer.in.insert(peer.in.end(), buf, buf + r);
				continue;
			}
			if(r == 0) throw Error(ErrorCode::connection_lost, "rank " + std::to_string(rank) + " closed the connection");
			if(errno == EINTR) continue;
			if(errno == EAGAIN || errno == EWOULDBLOCK) break;
			fail(ErrorCode::connection_lost, "recv from rank " + std::to_string(rank));
		}
		std::size_t pos = 0;
		while(true) {
			const std::span<const std::byte> rest(peer.in.data() + pos, peer.in.size() - pos);
			const auto header = wire::decode_header(rest);
			if(!header || rest.size() < wire::header_size + header->length) break;
			if(header->source.value != rank) throw Error(ErrorCode::protocol_error, "frame source does not match connection");
			const auto* body = rest.data() + wire::header_size;
			arrived.push_back(InboundMessage{header->source, header->tag, std::vector<std::byte>(body, body + header->length)});
			pos += wire::header_size + header->length;
		}
		peer.in.erase(peer.in.begin(), peer.in.begin() + static_cast<std::ptrdiff_t>(pos));
	}

	Rank m_self;
	std::vector<Peer> m_peers;
	std::vector<InboundMessage> m_self_inbox;
	std::vector<std::uint64_t> m_self_handed;
};

} // namespace

std::vector<std::unique_ptr<Substrate>> make_tcp_substrates(
    const std::vector<wire::RosterEntry>& roster, std::span<const Rank> local, std::chrono::milliseconds timeout) {
	for(auto r : local) {
		if(r.value >= roster.size()) throw Error(ErrorCode::invalid_rank, "rank " + std::to_string(r.value) + " not in roster");
	}
	std::vector<std::unique_ptr<Substrate>> out(local.size());
	if(local.size() == 1) {
		out[0] = std::make_unique<TcpSubstrate>(roster, local[0], timeout);
		return out;
	}
	// Connection setup blocks on peers, so co-located ranks are brought up concurrently.
	std::vector<std::exception_ptr> errors(local.size());
	std::vector<std::thread> threads;
	for(std::size_t i = 0; i < local.size(); ++i) {
		threads.emplace_back([&, i] {
			try {
				out[i] = std::make_unique<TcpSubstrate>(roster, local[i], timeout);
			} catch(...) { errors[i] = std::current_exception(); }
		});
	}
	for(auto& t : threads) t.join();
	for(auto& e : errors) {
		if(e) std::rethrow_exception(e);
	}
	return out;
}

} // namespace contmsg
