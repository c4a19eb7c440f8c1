#include "contmsg/taskpool.hpp"

namespace contmsg {

namespace {

thread_local std::optional<TaskId> running_task;

} // namespace

TaskPool::TaskPool(std::size_t workers, std::chrono::microseconds idle_backoff) : m_idle_backoff(idle_backoff) {
	for(std::size_t i = 0; i < workers; ++i) m_workers.emplace_back([this] { worker_loop(); });
}

TaskPool::~TaskPool() {
	{
		std::lock_guard lock(m_mutex);
		m_stop = true;
	}
	m_cv.notify_all();
	for(auto& w : m_workers) w.join();
}

TaskId TaskPool::spawn(Body body, const std::vector<TaskId>& gated_on) {
	auto task = std::make_shared<Task>();
	task->body = std::move(body);
	{
		std::lock_guard lock(m_mutex);
		for(auto g : gated_on) {
			if(g == 0 || g >= m_next_id) throw Error(ErrorCode::unknown_task, "task " + std::to_string(g));
		}
		task->id = m_next_id++;
		for(auto g : gated_on) {
			auto it = m_tasks.find(g);
			if(it == m_tasks.end()) continue; // already released
			it->second->successors.push_back(task->id);
			++task->gates;
		}
		m_tasks.emplace(task->id, task);
		if(task->gates == 0) m_ready.push_back(task);
	}
	m_cv.notify_one();
	return task->id;
}

std::shared_ptr<TaskPool::Task> TaskPool::find(TaskId id) const {
	std::lock_guard lock(m_mutex);
	auto it = m_tasks.find(id);
	if(it != m_tasks.end()) return it->second;
	if(id == 0 || id >= m_next_id) throw Error(ErrorCode::unknown_task, "task " + std::to_string(id));
	return nullptr;
}

void TaskPool::event_increase(TaskId id, std::uint64_t n) {
	if(running_task != id) throw Error(ErrorCode::not_bound, "event counter of task " + std::to_string(id) + " can only grow from its own body");
	auto task = find(id);
	task->counter.fetch_add(2 * n, std::memory_order_acq_rel);
}

void TaskPool::event_decrease(TaskId id, std::uint64_t n) {
	auto task = find(id);
	if(!task) throw Error(ErrorCode::underflow, "task " + std::to_string(id) + " already released");
	auto cur = task->counter.load(std::memory_order_acquire);
	std::uint64_t next = 0;
	do {
		if((cur >> 1) < n) throw Error(ErrorCode::underflow, "event counter of task " + std::to_string(id) + " below zero");
		next = cur - 2 * n;
	} while(!task->counter.compare_exchange_weak(cur, next, std::memory_order_acq_rel));
	if(next == 0) release(id);
}

std::optional<TaskId> TaskPool::current_task() { return running_task; }

bool TaskPool::released(TaskId id) const { return find(id) == nullptr; }

std::uint64_t TaskPool::event_count(TaskId id) const {
	auto task = find(id);
	return task ? task->counter.load() >> 1 : 0;
}

std::size_t TaskPool::outstanding() const {
	std::lock_guard lock(m_mutex);
	return m_tasks.size();
}

void TaskPool::execute(const std::shared_ptr<Task>& task) {
	const auto saved = running_task;
	running_task = task->id;
	try {
		if(task->body) task->body();
	} catch(...) {
		running_task = saved;
		if(task->counter.fetch_sub(1, std::memory_order_acq_rel) == 1) release(task->id);
		throw;
	}
	running_task = saved;
	if(task->counter.fetch_sub(1, std::memory_order_acq_rel) == 1) release(task->id);
}

void TaskPool::release(TaskId id) {
	{
		std::lock_guard lock(m_mutex);
		auto it = m_tasks.find(id);
		if(it == m_tasks.end()) return;
		auto task = std::move(it->second);
		m_tasks.erase(it);
		for(auto s : task->successors) {
			auto succ = m_tasks.find(s);
			if(succ != m_tasks.end() && --succ->second->gates == 0) m_ready.push_back(succ->second);
		}
	}
	m_cv.notify_all();
}

bool TaskPool::run_one() {
	std::shared_ptr<Task> task;
	{
		std::lock_guard lock(m_mutex);
		if(m_ready.empty()) return false;
		task = std::move(m_ready.front());
		m_ready.pop_front();
	}
	execute(task);
	return true;
}

void TaskPool::register_polling(const std::string& name, PollFn fn) {
	auto svc = std::make_shared<Service>();
	svc->name = name;
	svc->fn = std::move(fn);
	{
		std::lock_guard lock(m_services_mutex);
		for(const auto& s : m_services) {
			if(s->name == name) throw Error(ErrorCode::invalid_value, "polling service " + name + " already registered");
		}
		m_services.push_back(std::move(svc));
	}
	m_cv.notify_all();
}

void TaskPool::unregister_polling(const std::string& name) {
	std::lock_guard lock(m_services_mutex);
	std::erase_if(m_services, [&](const std::shared_ptr<Service>& s) {
		if(s->name != name) return false;
		s->active.store(false);
		return true;
	});
}

std::size_t TaskPool::polling_count() const {
	std::lock_guard lock(m_services_mutex);
	return m_services.size();
}

bool TaskPool::run_polling_services() {
	std::unique_lock run(m_poll_run, std::try_to_lock);
	if(!run.owns_lock()) return false;
	std::vector<std::shared_ptr<Service>> services;
	{
		std::lock_guard lock(m_services_mutex);
		services = m_services;
	}
	for(const auto& s : services) {
		if(!s->active.load()) continue;
		if(!s->fn()) unregister_polling(s->name);
	}
	return true;
}

void TaskPool::worker_loop() {
	while(true) {
		std::shared_ptr<Task> task;
		{
			std::unique_lock lock(m_mutex);
			if(m_ready.empty() && !m_stop) {
				if(polling_count() == 0) {
					m_cv.wait(lock, [&] { return m_stop || !m_ready.empty() || polling_count() != 0; });
				} else {
					m_cv.wait_for(lock, m_idle_backoff, [&] { return m_stop || !m_ready.empty(); });
				}
			}
			if(m_stop) return;
			if(!m_ready.empty()) {
				task = std::move(m_ready.front());
				m_ready.pop_front();
			}
		}
		if(task) execute(task);
		run_polling_services();
	}
}

void TaskPool::wait_all() {
	while(true) {
		{
			std::unique_lock lock(m_mutex);
			if(m_tasks.empty()) return;
		}
		if(m_workers.empty() && run_one()) continue;
		run_polling_services();
		std::unique_lock lock(m_mutex);
		m_cv.wait_for(lock, m_idle_backoff, [&] { return m_tasks.empty(); });
	}
}

BlockingWaitResult blocking_wait(Runtime& rt, std::span<const OpHandle> ops, const ContinuationRequest& cr, const BlockingWaitOptions& options) {
	struct Parker {
		std::mutex mutex;
		std::condition_variable cv;
		bool signaled = false;
		std::uint32_t unparks = 0;
	};
	auto parker = std::make_shared<Parker>();
	BlockingWaitResult result;
	result.statuses.resize(ops.size());
	std::vector<RequestRef> refs(ops.begin(), ops.end());

	std::unique_lock lock(parker->mutex);
	result.immediate = rt.attach(refs, cr, [parker](std::span<const Status>, void*) {
		std::lock_guard guard(parker->mutex);
		parker->signaled = true;
		++parker->unparks;
		parker->cv.notify_one();
	}, nullptr, result.statuses);
	if(options.after_attach) options.after_attach();
	if(result.immediate) return result;

	while(!parker->signaled) {
		if(!options.drive_progress) {
			parker->cv.wait(lock);
			continue;
		}
		if(parker->cv.wait_for(lock, options.park_slice, [&] { return parker->signaled; })) break;
		lock.unlock();
		if(options.pool) {
			options.pool->run_polling_services();
		} else {
			rt.progress_tick();
		}
		lock.lock();
	}
	result.unparks = parker->unparks;
	return result;
}

} // namespace contmsg
