#pragma once

// Application-space request management without continuations: a fixed-size
// active array fed from a pending FIFO, and request groups polled in bounded
// round-robin subsets. Both rely on testsome.

#include "contmsg/progress.hpp"

#include <deque>
#include <functional>
#include <list>
#include <map>
#include <mutex>

namespace contmsg {

/// One transport pass, then the ascending indices of every op in `ops` that is
/// done. Done ops are retired (non-persistent ones become CONSUMED, persistent
/// ones INACTIVE); their statuses are returned alongside. Inactive or consumed
/// entries are skipped.
struct TestsomeResult {
	std::vector<std::size_t> indices;
	std::vector<Status> statuses;
};
TestsomeResult testsome(Runtime& rt, std::span<const OpHandle> ops);

/// Ticks between completion and detection, 1 when detected by the pass that
/// completed the op.
std::uint64_t detection_delay(const OpHandle& op);

struct DelayHistogram {
	std::vector<std::uint64_t> buckets; // buckets[d] = ops detected after d ticks
	void add(std::uint64_t delay);
	std::uint64_t total() const;
	std::uint64_t max() const;
};

struct ActiveSetConfig {
	std::size_t capacity = 32;
	std::size_t max_concurrent_out = 4;
};

class ActiveSetManager {
  public:
	/// Runs after the op was retired and its slot freed. A persistent op the
	/// callback restarts has to be posted again.
	using Callback = std::function<void(const OpHandle& op, const Status& status)>;

	struct Counters {
		std::uint64_t promotions = 0;
		std::uint64_t callbacks = 0;
		std::uint64_t sends_started = 0;
		DelayHistogram delays;
	};

	ActiveSetManager(Runtime& rt, ActiveSetConfig config = {});

	/// Callable from any agent; takes effect at the next tick.
	void post(OpHandle op, Callback cb);

	/// Outgoing data message started by a tick once fewer than
	/// max_concurrent_out outgoing messages are in flight.
	void post_outgoing(Rank source, Rank dest, Tag tag, std::vector<std::byte> payload, Callback cb);

	/// Single driver only. Returns callbacks executed.
	std::size_t tick();

	std::size_t active_size() const { return m_active.size(); }
	std::size_t pending_size() const { return m_pending.size(); }
	std::size_t outgoing_in_flight() const { return m_out_in_flight; }
	bool idle() const;
	const Counters& counters() const { return m_counters; }
	const ActiveSetConfig& config() const { return m_config; }

  private:
	struct Entry {
		OpHandle op;
		Callback cb;
	};
	struct Outgoing {
		Rank source, dest;
		Tag tag;
		std::vector<std::byte> payload;
		Callback cb;
	};
	void admit(Entry e);

	Runtime& m_rt;
	ActiveSetConfig m_config;
	std::vector<Entry> m_active;
	std::deque<Entry> m_pending;
	std::deque<Outgoing> m_out_waiting;
	std::size_t m_out_in_flight = 0;
	Counters m_counters;

	mutable std::mutex m_inbox_mutex;
	std::vector<Entry> m_inbox;
	std::vector<Outgoing> m_out_inbox;
};

class RequestGroupManager {
  public:
	/// Statuses in submission order.
	using Callback = std::function<void(std::span<const Status> statuses)>;

	struct Counters {
		std::uint64_t callbacks = 0;
		std::uint64_t ops_tested = 0;
		DelayHistogram delays;
	};

	explicit RequestGroupManager(Runtime& rt);

	/// Callable from any agent; tracked from the next poll on.
	std::uint64_t submit(std::vector<OpHandle> ops, Callback cb);

	/// Tests up to `max_n` tracked ops, continuing round-robin in insertion
	/// order from where the previous poll stopped. Returns callbacks fired.
	std::size_t poll(std::size_t max_n);

	std::size_t group_count() const { return m_groups.size(); }
	std::size_t tracked_ops() const { return m_ops.size(); }
	bool idle() const;
	const Counters& counters() const { return m_counters; }

  private:
	struct Group {
		std::vector<Status> statuses;
		std::size_t remaining = 0;
		Callback cb;
	};
	struct Tracked {
		OpHandle op;
		std::uint64_t group;
		std::size_t index;
	};
	struct Submission {
		std::uint64_t id;
		std::vector<OpHandle> ops;
		Callback cb;
	};
	void drain_inbox();

	Runtime& m_rt;
	std::map<std::uint64_t, Group> m_groups;
	std::list<Tracked> m_ops;
	std::list<Tracked>::iterator m_cursor;
	Counters m_counters;

	mutable std::mutex m_inbox_mutex;
	std::vector<Submission> m_inbox;
	std::uint64_t m_next_id = 1;
};

} // namespace contmsg
