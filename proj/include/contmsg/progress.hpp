#pragma once

// Continuation engine.
//
// A continuation is a callback attached to one or more active operations and
// registered with a continuation request (CR). It becomes eligible once every
// operand has completed and is then either executed inline by the agent that
// detected the completion or placed on the CR's FIFO ready queue, depending on
// the CR's InfoConfig and on where the detecting agent currently is:
//
//   * attach never executes a continuation (callers may hold locks the
//     callback needs);
//   * a continuation body never runs another continuation (no nesting);
//   * poll_only CRs run continuations only inside cr_test/cr_wait on that CR;
//   * exec_context=application CRs never run on the dedicated progress agent;
//   * cr_test/cr_wait run at most max_poll continuations of the tested CR.
//
// CR states follow INACTIVE -> ACTIVE_REFERENCED <-> ACTIVE_IDLE -> COMPLETE,
// with COMPLETE and INACTIVE re-entering ACTIVE_REFERENCED on registration.

#include "contmsg/core.hpp"
#include "contmsg/transport.hpp"

#include <atomic>
#include <chrono>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <thread>
#include <variant>
#include <vector>

namespace contmsg {

enum class CrState : std::uint8_t { inactive, active_referenced, active_idle, complete, freed };
enum class CrEvent : std::uint8_t { registration, deregistration, completion_call, free, release };

std::string_view to_string(CrState s);
std::string_view to_string(CrEvent e);

struct CrCounters {
	std::uint64_t registered = 0; // currently registered (includes ready-queue entries)
	std::uint64_t enqueued = 0;
	std::uint64_t executed_inline = 0;
	std::uint64_t executed_deferred = 0;
	std::uint64_t immediate_completions = 0;
};

/// Callback signature: statuses of all operands (empty when statuses are
/// ignored) and the context token given at registration.
using ContinuationFn = std::function<void(std::span<const Status> statuses, void* context)>;

using TransitionObserver = std::function<void(CrState from, CrState to, CrEvent event)>;

class Runtime;

namespace detail {
struct CrShared;
}

/// Handle to a continuation request. Copies refer to the same CR.
class ContinuationRequest {
  public:
	ContinuationRequest() = default;

	bool valid() const { return m_cr != nullptr; }
	std::uint64_t id() const;
	CrState state() const;
	const InfoConfig& config() const;
	CrCounters counters() const;
	std::size_t ready_count() const;
	bool free_pending() const;

	/// Called under the CR's lock for every state-machine event; must not call
	/// back into the runtime.
	void set_transition_observer(TransitionObserver observer) const;

	friend bool operator==(const ContinuationRequest& a, const ContinuationRequest& b) { return a.m_cr == b.m_cr; }

  private:
	friend class Runtime;
	explicit ContinuationRequest(std::shared_ptr<detail::CrShared> cr) : m_cr(std::move(cr)) {}
	std::shared_ptr<detail::CrShared> m_cr;
};

/// Operand of an attach: an operation or another CR (chaining).
class RequestRef {
  public:
	RequestRef(OpHandle op) : m_ref(std::move(op)) {}                  // NOLINT(google-explicit-constructor)
	RequestRef(ContinuationRequest cr) : m_ref(std::move(cr)) {}       // NOLINT(google-explicit-constructor)

	bool is_op() const { return std::holds_alternative<OpHandle>(m_ref); }
	const OpHandle& op() const { return std::get<OpHandle>(m_ref); }
	const ContinuationRequest& cr() const { return std::get<ContinuationRequest>(m_ref); }

  private:
	std::variant<OpHandle, ContinuationRequest> m_ref;
};

class Runtime {
  public:
	/// All `world_size` ranks hosted in this process over the loopback fabric.
	static std::unique_ptr<Runtime> loopback(std::size_t world_size);

	/// Ranks in `local` hosted in this process, connected over TCP per roster.
	static std::unique_ptr<Runtime> tcp(const std::vector<wire::RosterEntry>& roster, std::vector<Rank> local,
	    std::chrono::milliseconds timeout = std::chrono::seconds(10));

	Runtime(std::size_t world_size, std::vector<std::unique_ptr<Endpoint>> endpoints);
	Runtime(const Runtime&) = delete;
	Runtime& operator=(const Runtime&) = delete;
	~Runtime();

	std::size_t world_size() const { return m_world_size; }
	Endpoint& endpoint(Rank rank);
	std::vector<Rank> local_ranks() const;

	ContinuationRequest continue_init(const InfoConfig& config = {});

	/// Attaches one continuation to all `ops` and registers it with `cr`.
	/// Returns true iff every operand was already complete and the CR does not
	/// enqueue complete continuations; the callback is then never invoked.
	/// `statuses` is empty (ignore) or holds one caller-owned slot per operand.
	bool attach(std::span<const RequestRef> ops, const ContinuationRequest& cr, ContinuationFn callback, void* context = nullptr,
	    std::span<Status> statuses = {});
	bool attach(std::initializer_list<RequestRef> ops, const ContinuationRequest& cr, ContinuationFn callback, void* context = nullptr,
	    std::span<Status> statuses = {});
	bool attach(const RequestRef& op, const ContinuationRequest& cr, ContinuationFn callback, void* context = nullptr);
	bool attach(const RequestRef& op, const ContinuationRequest& cr, ContinuationFn callback, void* context, Status& status);

	bool cr_test(const ContinuationRequest& cr);
	void cr_wait(const ContinuationRequest& cr);
	void cr_free(const ContinuationRequest& cr);

	/// One transport pass over every local endpoint plus dispatch of eligible
	/// deferred continuations. Returns continuations executed during the call.
	std::size_t progress_tick();

	/// One transport pass over every local endpoint.
	void poll_all();

	/// Progresses once and retires `op` if done.
	std::optional<Status> test(const OpHandle& op);
	Status wait(const OpHandle& op);

	/// Dedicated progress agent: a thread calling progress_tick with an idle backoff.
	void start_progress_agent(std::chrono::microseconds idle_backoff = std::chrono::microseconds(50));
	void stop_progress_agent();
	bool progress_agent_running() const { return m_agent.joinable(); }

	/// Continuation nesting depth of the calling thread.
	static std::size_t current_depth();
	/// Highest nesting depth ever observed by any thread.
	static std::size_t max_observed_depth();
	/// Marks the calling thread as a progress agent (exec_context filtering).
	static void mark_progress_agent(bool on);

  private:
	void on_library_entry();
	bool completion_call(detail::CrShared& cr);
	std::size_t drain(detail::CrShared& cr, std::int64_t limit);
	void drain_general();
	std::vector<std::shared_ptr<detail::CrShared>> snapshot();

	std::size_t m_world_size;
	std::vector<std::unique_ptr<Endpoint>> m_endpoints; // indexed by rank; null for remote ranks
	std::shared_ptr<std::atomic<std::int64_t>> m_general_ready;

	std::mutex m_registry_mutex;
	std::vector<std::weak_ptr<detail::CrShared>> m_registry;

	std::atomic<bool> m_agent_stop{false};
	std::thread m_agent;
};

} // namespace contmsg
