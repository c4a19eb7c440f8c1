#pragma once

// Small task runtime: detached tasks whose dependency release waits for an
// event counter, registrable polling services, and a blocking wait built on
// a continuation that unparks the caller.

#include "contmsg/progress.hpp"

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>

namespace contmsg {

using TaskId = std::uint64_t;

class TaskPool {
  public:
	using Body = std::function<void()>;
	/// Polling service; returning false unregisters it.
	using PollFn = std::function<bool()>;

	/// With zero workers, tasks run on whoever calls wait_all/run_one.
	explicit TaskPool(std::size_t workers = std::max(1u, std::thread::hardware_concurrency()),
	    std::chrono::microseconds idle_backoff = std::chrono::microseconds(50));
	TaskPool(const TaskPool&) = delete;
	TaskPool& operator=(const TaskPool&) = delete;
	~TaskPool();

	/// The task becomes runnable once every task in `gated_on` has released
	/// its dependencies.
	TaskId spawn(Body body, const std::vector<TaskId>& gated_on = {});

	/// Only from the task's own body (NOT_BOUND otherwise).
	void event_increase(TaskId task, std::uint64_t n = 1);
	/// From anywhere. UNDERFLOW if the counter would drop below zero.
	void event_decrease(TaskId task, std::uint64_t n = 1);

	/// Task whose body is running on the calling thread, if any.
	static std::optional<TaskId> current_task();

	bool released(TaskId task) const;
	std::uint64_t event_count(TaskId task) const;
	std::size_t outstanding() const;

	void register_polling(const std::string& name, PollFn fn);
	/// Idempotent.
	void unregister_polling(const std::string& name);
	std::size_t polling_count() const;
	/// Runs every registered service once unless another agent is already
	/// doing so. Returns false if it could not.
	bool run_polling_services();

	/// Runs one ready task on the calling thread. Returns false if none was ready.
	bool run_one();

	/// Blocks until every spawned task has released its dependencies, helping
	/// with polling (and with tasks when there are no workers).
	void wait_all();

	std::size_t workers() const { return m_workers.size(); }

  private:
	struct Task {
		TaskId id = 0;
		Body body;
		// 2 * visible event count + 1 while the body has not returned.
		std::atomic<std::uint64_t> counter{1};
		std::vector<TaskId> successors;
		std::size_t gates = 0;
	};
	struct Service {
		std::string name;
		PollFn fn;
		std::atomic<bool> active{true};
	};

	std::shared_ptr<Task> find(TaskId id) const;
	void execute(const std::shared_ptr<Task>& task);
	void release(TaskId id);
	void worker_loop();

	std::chrono::microseconds m_idle_backoff;

	mutable std::mutex m_mutex;
	std::condition_variable m_cv;
	std::unordered_map<TaskId, std::shared_ptr<Task>> m_tasks; // not yet released
	std::deque<std::shared_ptr<Task>> m_ready;
	TaskId m_next_id = 1;
	bool m_stop = false;

	mutable std::mutex m_services_mutex;
	std::vector<std::shared_ptr<Service>> m_services;
	std::mutex m_poll_run;

	std::vector<std::thread> m_workers;
};

struct BlockingWaitOptions {
	/// Runs with the park lock held, between attach and the first park.
	/// Tests use it to force a completion before the caller parks.
	std::function<void()> after_attach;
	/// While parked, wake up every slice to drive progress (pool polling
	/// services if `pool` is set, otherwise a progress tick). Disable when a
	/// progress agent is known to serve the CR.
	bool drive_progress = true;
	std::chrono::microseconds park_slice{200};
	TaskPool* pool = nullptr;
};

struct BlockingWaitResult {
	std::vector<Status> statuses;
	bool immediate = false; // attach reported completion, no park
	std::uint32_t unparks = 0; // signals delivered by the continuation
};

/// Attaches a continuation to `ops` that unparks the caller, then parks until
/// it ran. The signal cannot be lost: attach and the park check happen under
/// the same lock the continuation takes.
BlockingWaitResult blocking_wait(Runtime& rt, std::span<const OpHandle> ops, const ContinuationRequest& cr, const BlockingWaitOptions& options = {});

} // namespace contmsg
