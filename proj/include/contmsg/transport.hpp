#pragma once

// Non-blocking point-to-point messaging: operation handles, posted-receive
// matching with an unexpected-message queue, persistent requests and receive
// cancellation. The byte movement itself is delegated to a Substrate
// (in-process loopback or TCP).

#include "contmsg/core.hpp"
#include "contmsg/wire.hpp"

#include <atomic>
#include <chrono>
#include <cstddef>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

namespace contmsg {

class Endpoint;

namespace detail {

struct ContinuationNode; // defined by the progress engine

struct OpRecord {
	std::uint64_t id = 0;
	OpKind kind = OpKind::send;
	Endpoint* endpoint = nullptr;
	Rank peer;  // destination for sends, source filter for receives
	Tag tag;    // send tag or receive filter
	std::vector<std::byte> payload; // send payload, or receive storage sized to capacity

	// Written under the owning endpoint's matching lock, published by `done`.
	Status status;
	std::uint64_t completion_tick = 0;

	std::atomic<OpState> state{OpState::active};
	std::atomic<bool> done{false};
	std::atomic<bool> consumed{false};

	// Continuation slot: nullptr, a ContinuationNode*, or completed_slot once the
	// operation finished. At most one continuation per activation.
	std::atomic<void*> attached{nullptr};
	std::size_t attached_index = 0;
};

inline void* const completed_slot = reinterpret_cast<void*>(std::uintptr_t{1});

} // namespace detail

/// Handle to one non-blocking operation. Copies share the same operation;
/// once a handle is CONSUMED every copy observes it.
class OpHandle {
  public:
	OpHandle() = default;
	explicit OpHandle(std::shared_ptr<detail::OpRecord> rec) : m_rec(std::move(rec)) {}

	bool valid() const { return m_rec != nullptr; }
	explicit operator bool() const { return valid(); }

	std::uint64_t id() const { return m_rec->id; }
	OpKind kind() const { return m_rec->kind; }
	bool persistent() const { return is_persistent(m_rec->kind); }
	OpState state() const;

	/// Status of the last completed activation, if any.
	std::optional<Status> status() const;

	/// Received bytes (clipped to capacity) of the last completed receive.
	std::span<const std::byte> data() const;

	/// Poll count of the owning endpoint at which the operation completed.
	std::optional<std::uint64_t> completion_tick() const;

	Endpoint& endpoint() const { return *m_rec->endpoint; }
	detail::OpRecord& record() const { return *m_rec; }
	const std::shared_ptr<detail::OpRecord>& shared() const { return m_rec; }

	friend bool operator==(const OpHandle& a, const OpHandle& b) { return a.m_rec == b.m_rec; }

  private:
	std::shared_ptr<detail::OpRecord> m_rec;
};

struct InboundMessage {
	Rank source;
	Tag tag;
	std::vector<std::byte> payload;
};

/// Moves bytes between endpoints. Implementations are driven by exactly one
/// polling agent at a time (the owning endpoint serializes calls).
class Substrate {
  public:
	virtual ~Substrate() = default;

	/// Hands a message to the substrate. `send_id` is reported back through
	/// `progress` once the payload is fully handed over.
	virtual void send(std::uint64_t send_id, Rank dest, Tag tag, std::span<const std::byte> payload) = 0;

	/// Pushes pending output and drains input. Throws connection_lost on peer failure.
	virtual void progress(std::vector<std::uint64_t>& handed, std::vector<InboundMessage>& arrived) = 0;
};

/// In-process transport: one inbox per rank, shared by all substrates made from it.
class LoopbackFabric {
  public:
	explicit LoopbackFabric(std::size_t world_size);
	std::unique_ptr<Substrate> make_substrate(Rank rank);
	std::size_t world_size() const;

	struct Inboxes; // opaque

  private:
	std::shared_ptr<Inboxes> m_inboxes;
};

/// Opens one TCP substrate per rank in `local`, connecting every pair of ranks
/// in `roster` with one duplex connection. All listed ranks must be started
/// (in this or other processes) within `timeout`.
std::vector<std::unique_ptr<Substrate>> make_tcp_substrates(
    const std::vector<wire::RosterEntry>& roster, std::span<const Rank> local, std::chrono::milliseconds timeout = std::chrono::seconds(10));

class Endpoint {
  public:
	using CompletionHook = std::function<void(detail::ContinuationNode*, detail::OpRecord&)>;
	using EntryHook = std::function<void()>;

	Endpoint(Rank rank, std::size_t world_size, std::unique_ptr<Substrate> substrate);
	Endpoint(const Endpoint&) = delete;
	Endpoint& operator=(const Endpoint&) = delete;
	~Endpoint();

	Rank rank() const { return m_rank; }
	std::size_t world_size() const { return m_world_size; }

	OpHandle isend(Rank dest, Tag tag, std::span<const std::byte> payload);
	OpHandle irecv(Rank source, Tag tag, std::size_t capacity);
	OpHandle send_init(Rank dest, Tag tag, std::span<const std::byte> payload);
	OpHandle recv_init(Rank source, Tag tag, std::size_t capacity);

	void start(const OpHandle& op);
	void cancel(const OpHandle& op);

	/// Drains substrate events and performs matching. Returns ids of operations
	/// that became complete or cancelled. A concurrent call on the same endpoint
	/// returns immediately with nothing.
	std::vector<std::uint64_t> transport_poll();

	/// Returns the status if `op` is done and retires it: non-persistent
	/// handles become CONSUMED, persistent ones INACTIVE.
	std::optional<Status> reap(const OpHandle& op);

	std::uint64_t poll_count() const { return m_polls.load(std::memory_order_acquire); }
	std::size_t unexpected_count() const;
	std::size_t posted_count() const;

	// Hooks installed by the progress engine.
	void set_completion_hook(CompletionHook hook) { m_completion_hook = std::move(hook); }
	void set_entry_hook(EntryHook hook) { m_entry_hook = std::move(hook); }

  private:
	using RecordPtr = std::shared_ptr<detail::OpRecord>;

	RecordPtr make_record(OpKind kind, Rank peer, Tag tag);
	void check_dest(Rank dest, Tag tag) const;
	void check_source(Rank source) const;
	void activate_locked(const RecordPtr& rec, std::vector<RecordPtr>& completed);
	void deliver(detail::OpRecord& rec, InboundMessage& msg);
	void mark_done(detail::OpRecord& rec, const Status& st);
	void finish(const std::vector<RecordPtr>& completed);
	void enter();

	Rank m_rank;
	std::size_t m_world_size;
	std::unique_ptr<Substrate> m_substrate;

	mutable std::mutex m_match_mutex;
	std::list<RecordPtr> m_posted;
	std::list<InboundMessage> m_unexpected;
	std::vector<RecordPtr> m_out_queue;
	std::unordered_map<std::uint64_t, RecordPtr> m_in_flight;

	std::mutex m_poll_mutex;
	std::atomic<std::uint64_t> m_polls{0};

	CompletionHook m_completion_hook;
	EntryHook m_entry_hook;
};

} // namespace contmsg
