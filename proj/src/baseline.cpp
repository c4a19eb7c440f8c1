#include "contmsg/baseline.hpp"

#include <algorithm>

namespace contmsg {

TestsomeResult testsome(Runtime& rt, std::span<const OpHandle> ops) {
	rt.poll_all();
	TestsomeResult out;
	for(std::size_t i = 0; i < ops.size(); ++i) {
		const auto state = ops[i].state();
		if(state != OpState::complete && state != OpState::cancelled) continue;
		if(auto st = ops[i].endpoint().reap(ops[i])) {
			out.indices.push_back(i);
			out.statuses.push_back(*st);
		}
	}
	return out;
}

std::uint64_t detection_delay(const OpHandle& op) {
	const auto done_at = op.completion_tick().value_or(0);
	return op.endpoint().poll_count() - done_at + 1;
}

void DelayHistogram::add(std::uint64_t delay) {
	if(buckets.size() <= delay) buckets.resize(delay + 1, 0);
	++buckets[delay];
}

std::uint64_t DelayHistogram::total() const {
	std::uint64_t n = 0;
	for(auto b : buckets) n += b;
	return n;
}

std::uint64_t DelayHistogram::max() const {
	for(std::size_t d = buckets.size(); d > 0; --d) {
		if(buckets[d - 1] != 0) return d - 1;
	}
	return 0;
}

// ActiveSetManager

ActiveSetManager::ActiveSetManager(Runtime& rt, ActiveSetConfig config) : m_rt(rt), m_config(config) {
	if(m_config.capacity == 0) throw Error(ErrorCode::invalid_value, "active set capacity must be positive");
	if(m_config.max_concurrent_out == 0) throw Error(ErrorCode::invalid_value, "max_concurrent_out must be positive");
}

void ActiveSetManager::post(OpHandle op, Callback cb) {
	std::lock_guard lock(m_inbox_mutex);
	m_inbox.push_back({std::move(op), std::move(cb)});
}

void ActiveSetManager::post_outgoing(Rank source, Rank dest, Tag tag, std::vector<std::byte> payload, Callback cb) {
	std::lock_guard lock(m_inbox_mutex);
	m_out_inbox.push_back({source, dest, tag, std::move(payload), std::move(cb)});
}

bool ActiveSetManager::idle() const {
	std::lock_guard lock(m_inbox_mutex);
	return m_inbox.empty() && m_out_inbox.empty() && m_active.empty() && m_pending.empty() && m_out_waiting.empty();
}

void ActiveSetManager::admit(Entry e) {
	if(m_active.size() < m_config.capacity) {
		m_active.push_back(std::move(e));
	} else {
		m_pending.push_back(std::move(e));
	}
}

std::size_t ActiveSetManager::tick() {
	std::vector<Entry> inbox;
	std::vector<Outgoing> out_inbox;
	{
		std::lock_guard lock(m_inbox_mutex);
		inbox.swap(m_inbox);
		out_inbox.swap(m_out_inbox);
	}
	for(auto& e : inbox) admit(std::move(e));
	for(auto& o : out_inbox) m_out_waiting.push_back(std::move(o));

	while(!m_out_waiting.empty() && m_out_in_flight < m_config.max_concurrent_out) {
		auto o = std::move(m_out_waiting.front());
		m_out_waiting.pop_front();
		auto op = m_rt.endpoint(o.source).isend(o.dest, o.tag, o.payload);
		++m_out_in_flight;
		++m_counters.sends_started;
		admit({std::move(op), [this, cb = std::move(o.cb)](const OpHandle& h, const Status& st) {
			       --m_out_in_flight;
			       if(cb) cb(h, st);
		       }});
	}

	std::vector<OpHandle> ops;
	ops.reserve(m_active.size());
	for(const auto& e : m_active) ops.push_back(e.op);
	const auto done = testsome(m_rt, ops);

	std::size_t executed = 0;
	std::vector<bool> keep(m_active.size(), true);
	for(auto i : done.indices) keep[i] = false;
	for(std::size_t k = 0; k < done.indices.size(); ++k) {
		const auto i = done.indices[k];
		auto& e = m_active[i];
		m_counters.delays.add(detection_delay(e.op));
		if(e.cb) e.cb(e.op, done.statuses[k]);
		++executed;
		++m_counters.callbacks;
	}
	std::size_t w = 0;
	for(std::size_t i = 0; i < m_active.size(); ++i) {
		if(keep[i]) {
			if(w != i) m_active[w] = std::move(m_active[i]);
			++w;
		}
	}
	m_active.resize(w);

	while(m_active.size() < m_config.capacity && !m_pending.empty()) {
		m_active.push_back(std::move(m_pending.front()));
		m_pending.pop_front();
		++m_counters.promotions;
	}
	return executed;
}

// RequestGroupManager

RequestGroupManager::RequestGroupManager(Runtime& rt) : m_rt(rt), m_cursor(m_ops.end()) {}

std::uint64_t RequestGroupManager::submit(std::vector<OpHandle> ops, Callback cb) {
	if(ops.empty()) throw Error(ErrorCode::invalid_value, "empty request group");
	std::lock_guard lock(m_inbox_mutex);
	const auto id = m_next_id++;
	m_inbox.push_back({id, std::move(ops), std::move(cb)});
	return id;
}

bool RequestGroupManager::idle() const {
	std::lock_guard lock(m_inbox_mutex);
	return m_inbox.empty() && m_groups.empty();
}

void RequestGroupManager::drain_inbox() {
	std::vector<Submission> inbox;
	{
		std::lock_guard lock(m_inbox_mutex);
		inbox.swap(m_inbox);
	}
	for(auto& s : inbox) {
		auto& g = m_groups[s.id];
		g.statuses.resize(s.ops.size());
		g.remaining = s.ops.size();
		g.cb = std::move(s.cb);
		for(std::size_t i = 0; i < s.ops.size(); ++i) {
			const bool was_empty = m_ops.empty();
			m_ops.push_back({std::move(s.ops[i]), s.id, i});
			if(was_empty) m_cursor = m_ops.begin();
		}
	}
}

std::size_t RequestGroupManager::poll(std::size_t max_n) {
	if(max_n == 0) throw Error(ErrorCode::invalid_value, "max_n must be at least 1");
	drain_inbox();
	if(m_ops.empty()) {
		m_rt.poll_all();
		return 0;
	}

	std::vector<std::list<Tracked>::iterator> picked;
	std::vector<OpHandle> ops;
	auto it = m_cursor;
	for(std::size_t n = std::min(max_n, m_ops.size()); n > 0; --n) {
		picked.push_back(it);
		ops.push_back(it->op);
		if(++it == m_ops.end()) it = m_ops.begin();
	}
	m_counters.ops_tested += ops.size();
	const auto done = testsome(m_rt, ops);

	std::vector<bool> removed(picked.size(), false);
	std::vector<std::uint64_t> finished;
	for(std::size_t k = 0; k < done.indices.size(); ++k) {
		const auto i = done.indices[k];
		auto& t = *picked[i];
		m_counters.delays.add(detection_delay(t.op));
		auto& g = m_groups.at(t.group);
		g.statuses[t.index] = done.statuses[k];
		if(--g.remaining == 0) finished.push_back(t.group);
		removed[i] = true;
	}
	// Resume after the last examined entry, skipping anything removed now.
	auto is_removed = [&](std::list<Tracked>::iterator x) {
		for(std::size_t i = 0; i < picked.size(); ++i) {
			if(picked[i] == x) return static_cast<bool>(removed[i]);
		}
		return false;
	};
	auto next = it;
	for(std::size_t guard = 0; guard <= picked.size() && is_removed(next); ++guard) {
		if(++next == m_ops.end()) next = m_ops.begin();
	}
	for(std::size_t i = 0; i < picked.size(); ++i) {
		if(removed[i]) m_ops.erase(picked[i]);
	}
	m_cursor = m_ops.empty() ? m_ops.end() : next;

	for(auto id : finished) {
		auto node = m_groups.extract(id);
		++m_counters.callbacks;
		if(node.mapped().cb) node.mapped().cb(node.mapped().statuses);
	}
	return finished.size();
}

} // namespace contmsg
