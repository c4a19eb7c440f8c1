#include "notifier.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>

// Tick-stepped model of wait-time driven task offloading.
//
// Every rank owns a queue of equal-cost tasks per iteration; rank 0 has
// `imbalance` times as many. A rank is ready once its local tasks ran and every
// task it offloaded came back (or was re-executed after an emergency). Ready
// ranks report to rank 0, which answers with a kick-off carrying everyone's
// ready tick; the kick-off starts the next iteration and feeds the offloading
// decisions for it.

namespace contmsg::scenarios {

namespace {

constexpr Tag tag_meta{10};
constexpr Tag tag_ready{11};
constexpr Tag tag_kickoff{12};
constexpr std::uint64_t payload_base = 1ULL << 32;
constexpr std::uint64_t result_base = 2ULL << 32;
constexpr std::size_t payload_bytes = 256;
constexpr std::size_t result_bytes = 32;

struct OutTask {
	std::uint32_t target = 0;
	bool resolved = false;
};

struct RemoteTask {
	std::uint32_t source = 0;
	std::uint64_t id = 0;
};

struct Work {
	bool remote = false;
	RemoteTask task;
	std::uint64_t left = 0;
};

struct HeldResult {
	std::uint64_t release_tick = 0;
	RemoteTask task;
};

struct RankState {
	std::uint32_t rank = 0;
	std::size_t iteration = 0;
	bool finished = false;

	std::uint64_t local = 0; // tasks not started yet
	std::deque<RemoteTask> remote;
	std::optional<Work> current;
	std::map<std::uint64_t, OutTask> outstanding;
	std::optional<std::uint64_t> idle_since; // local work done, results missing
	bool ready = false;
	std::uint64_t ready_tick = 0;
	std::vector<HeldResult> held;

	// Decision state, one entry per target rank.
	std::vector<double> budget;
	std::vector<int> consecutive;
	std::vector<std::size_t> blacklist_until; // first iteration allowed again
	std::vector<bool> emergency_now;
	bool may_offload = false;

	// Per-iteration counters.
	std::uint64_t offloaded = 0, emergencies = 0, received = 0;

	OpHandle meta_recv;
	bool meta_closed = false;
};

class OffloadSim {
  public:
	OffloadSim(const ScenarioConfig& cfg, OffloadReport& rep)
	    : m_cfg(cfg), m_rep(rep), m_rt(make_runtime(cfg)), m_notifier(make_notifier(*m_rt, cfg)), m_world(cfg.world),
	      m_deadband(cfg.deadband ? cfg.deadband : cfg.task_cost), m_slack(cfg.emergency_slack ? cfg.emergency_slack : 2 * cfg.task_cost),
	      m_ranks(cfg.world) {
		for(std::uint32_t r = 0; r < m_world; ++r) {
			auto& s = m_ranks[r];
			s.rank = r;
			s.budget.assign(m_world, 0.0);
			s.consecutive.assign(m_world, 0);
			s.blacklist_until.assign(m_world, 0);
			s.emergency_now.assign(m_world, false);
		}
		m_rep.world = m_world;
	}

	void run() {
		for(auto& s : m_ranks) {
			s.meta_recv = m_rt->endpoint(Rank{s.rank}).recv_init(any_source, tag_meta, 16);
			arm_meta(s);
		}
		post_ready_receives();
		for(auto& s : m_ranks) start_iteration(s);

		const std::uint64_t per_iter = static_cast<std::uint64_t>(std::ceil(m_cfg.tasks * m_cfg.imbalance)) * m_cfg.task_cost + m_slack + 1000;
		const std::uint64_t limit = per_iter * (m_cfg.iterations + 1) + (m_cfg.slow_delay + 1000) * 4;
		while(!drained() && m_now < limit) step();
		if(!drained()) fail("did not finish within " + std::to_string(limit) + " ticks");

		for(auto& s : m_ranks) m_rt->endpoint(Rank{s.rank}).cancel(s.meta_recv);
		for(std::uint64_t i = 0; i < 100000 && !all_meta_closed(); ++i) m_notifier->tick();
		if(!all_meta_closed()) fail("metadata receives not cancelled");
		m_notifier->close();
		build_table();
	}

  private:
	void fail(const std::string& what) { m_rep.result.failures.push_back(what); }

	bool all_meta_closed() const {
		return std::all_of(m_ranks.begin(), m_ranks.end(), [](const RankState& s) { return s.meta_closed; });
	}

	bool drained() const {
		if(m_results_pending != 0 || m_sends_pending != 0) return false;
		return std::all_of(m_ranks.begin(), m_ranks.end(), [](const RankState& s) { return s.finished && s.remote.empty() && !s.current && s.held.empty(); });
	}

	Endpoint& ep(std::uint32_t r) { return m_rt->endpoint(Rank{r}); }

	// Fire-and-forget sends still need retiring through the notifier.
	void send(std::uint32_t from, std::uint32_t to, Tag tag, std::vector<std::byte> payload) {
		++m_sends_pending;
		m_notifier->watch({ep(from).isend(Rank{to}, tag, payload)}, [this](std::span<const Status>) { --m_sends_pending; });
	}

	void arm_meta(RankState& s) {
		ep(s.rank).start(s.meta_recv);
		m_notifier->watch({s.meta_recv}, [this, &s](std::span<const Status> st) { on_meta(s, st[0]); });
	}

	void on_meta(RankState& s, const Status& st) {
		if(st.cancelled) {
			s.meta_closed = true;
			return;
		}
		const auto data = s.meta_recv.data();
		const RemoteTask task{static_cast<std::uint32_t>(get_u64(data, 0)), get_u64(data, 1)};
		++s.received;
		auto r = ep(s.rank).irecv(Rank{task.source}, Tag{payload_base + task.id}, payload_bytes);
		m_notifier->watch({r}, [&s, task](std::span<const Status>) { s.remote.push_back(task); });
		arm_meta(s);
	}

	void post_ready_receives() {
		m_ready_seen = 0;
		m_ready_table.assign(m_world, 0);
		m_emergency_table.assign(m_world, 0);
		for(std::uint32_t i = 0; i < m_world; ++i) {
			auto r = ep(0).irecv(any_source, tag_ready, 24);
			m_notifier->watch({r}, [this, r](std::span<const Status> st) {
				const auto data = r.data();
				const auto rank = get_u64(data, 0);
				m_ready_table[rank] = get_u64(data, 1);
				m_emergency_table[rank] = get_u64(data, 2);
				(void)st;
				if(++m_ready_seen == m_world) kickoff();
			});
		}
	}

	void kickoff() {
		std::vector<std::byte> payload;
		for(auto t : m_ready_table) put_u64(payload, t);
		for(auto m : m_emergency_table) put_u64(payload, m);
		for(std::uint32_t r = 0; r < m_world; ++r) send(0, r, tag_kickoff, payload);
		if(++m_kickoffs < m_cfg.iterations) post_ready_receives();
	}

	void start_iteration(RankState& s) {
		s.local = s.rank == 0 ? static_cast<std::uint64_t>(std::llround(static_cast<double>(m_cfg.tasks) * m_cfg.imbalance)) : m_cfg.tasks;
		s.outstanding.clear();
		s.idle_since.reset();
		s.ready = false;
		s.offloaded = s.emergencies = s.received = 0;
		std::fill(s.emergency_now.begin(), s.emergency_now.end(), false);

		auto k = ep(s.rank).irecv(Rank{0}, tag_kickoff, 16 * m_world);
		m_notifier->watch({k}, [this, &s, k](std::span<const Status>) { on_kickoff(s, k.data()); });

		record_iteration_view(s);
		if(!s.may_offload) return;
		const std::uint64_t cap = s.local / 2;
		for(std::uint32_t t = 0; t < m_world; ++t) {
			if(t == s.rank) continue;
			const auto n = static_cast<std::uint64_t>(std::floor(s.budget[t] + 0.5));
			if(n == 0) continue;
			if(blacklisted(s, t, s.iteration)) {
				fail("offload to blacklisted rank " + std::to_string(t));
				continue;
			}
			for(std::uint64_t i = 0; i < n && s.offloaded < cap; ++i) offload(s, t);
		}
	}

	bool blacklisted(const RankState& s, std::uint32_t target, std::size_t iteration) const { return iteration < s.blacklist_until[target]; }

	void offload(RankState& s, std::uint32_t target) {
		const auto id = m_next_task++;
		--s.local;
		++s.offloaded;
		s.outstanding[id] = OutTask{target, false};
		std::vector<std::byte> meta;
		put_u64(meta, s.rank);
		put_u64(meta, id);
		auto m = ep(s.rank).isend(Rank{target}, tag_meta, meta);
		auto p = ep(s.rank).isend(Rank{target}, Tag{payload_base + id}, std::vector<std::byte>(payload_bytes, std::byte{0x33}));
		++m_results_pending;
		m_notifier->watch({m, p}, [this, &s, target, id](std::span<const Status>) {
			// Result receives are posted only once the task is out.
			std::vector<OpHandle> results;
			for(std::uint64_t k = 0; k < 3; ++k) results.push_back(ep(s.rank).irecv(Rank{target}, Tag{result_base + 3 * id + k}, result_bytes));
			m_notifier->watch(std::move(results), [this, &s, id](std::span<const Status>) {
				--m_results_pending;
				auto it = s.outstanding.find(id);
				if(it != s.outstanding.end()) it->second.resolved = true; // late results are dropped
			});
		});
	}

	void on_kickoff(RankState& s, std::span<const std::byte> data) {
		std::vector<std::uint64_t> table(m_world);
		std::uint64_t late = 0; // targets anyone raised an emergency on
		for(std::uint32_t r = 0; r < m_world; ++r) {
			table[r] = get_u64(data, r);
			late |= get_u64(data, m_world + r);
		}
		const auto it = s.iteration;
		m_rep.raw_wait[it][s.rank] = m_now - s.ready_tick;
		m_rep.ready_tick[it][s.rank] = s.ready_tick;
		m_rep.offloaded[it][s.rank] = s.offloaded;
		m_rep.emergencies[it][s.rank] = s.emergencies;
		m_rep.received[it][s.rank] = s.received;

		decide(s, table, late, it + 1);
		s.iteration = it + 1;
		if(s.iteration == m_cfg.iterations) {
			s.finished = true;
		} else {
			start_iteration(s);
		}
	}

	// Offloading rule for the iteration `next`, from the ready ticks of the previous one.
	// Blacklisting uses the emergencies of all ranks, so every rank agrees on it.
	void decide(RankState& s, const std::vector<std::uint64_t>& table, std::uint64_t late, std::size_t next) {
		const auto latest = *std::max_element(table.begin(), table.end());
		const double c = static_cast<double>(m_cfg.task_cost);
		for(std::uint32_t t = 0; t < m_world; ++t) {
			if(t == s.rank) continue;
			if((late >> t) & 1U) {
				if(++s.consecutive[t] >= 2) {
					s.blacklist_until[t] = next + m_cfg.blacklist_window;
					s.budget[t] = 0;
					s.consecutive[t] = 0;
				}
			} else {
				s.consecutive[t] = 0;
			}
		}
		s.may_offload = latest - table[s.rank] <= m_deadband;
		if(!s.may_offload) return;
		const double own_wait = static_cast<double>(latest - table[s.rank]);
		for(std::uint32_t t = 0; t < m_world; ++t) {
			if(t == s.rank || blacklisted(s, t, next)) continue;
			const double diff = static_cast<double>(latest - table[t]) - own_wait;
			if(std::abs(diff) <= static_cast<double>(m_deadband)) continue;
			s.budget[t] = std::max(0.0, s.budget[t] + m_cfg.gain * diff / c);
		}
	}

	void record_iteration_view(const RankState& s) {
		const auto it = s.iteration;
		if(it >= m_cfg.iterations) return;
		m_rep.may_offload[it][s.rank] = s.may_offload;
		for(std::uint32_t t = 0; t < m_world; ++t) {
			if(t != s.rank && blacklisted(s, t, it)) m_rep.blacklisted[it][t] = true;
		}
	}

	void step() {
		++m_now;
		m_notifier->tick();
		for(auto& s : m_ranks) {
			release_results(s);
			for(std::size_t u = 0; u < m_cfg.workers; ++u) work_unit(s);
			check_ready(s);
		}
	}

	void work_unit(RankState& s) {
		if(!s.current) {
			if(!s.remote.empty()) {
				s.current = Work{true, s.remote.front(), m_cfg.task_cost};
				s.remote.pop_front();
			} else if(s.local > 0 && !s.finished) {
				--s.local;
				s.current = Work{false, {}, m_cfg.task_cost};
			} else {
				return;
			}
		}
		if(--s.current->left > 0) return;
		if(s.current->remote) {
			const bool slow = static_cast<std::int64_t>(s.rank) == m_cfg.slow_victim;
			s.held.push_back({m_now + (slow ? m_cfg.slow_delay : 0), s.current->task});
		}
		s.current.reset();
	}

	void release_results(RankState& s) {
		auto due = std::stable_partition(s.held.begin(), s.held.end(), [&](const HeldResult& h) { return h.release_tick > m_now; });
		for(auto it = due; it != s.held.end(); ++it) {
			for(std::uint64_t k = 0; k < 3; ++k) {
				send(s.rank, it->task.source, Tag{result_base + 3 * it->task.id + k}, std::vector<std::byte>(result_bytes, std::byte{0x44}));
			}
		}
		s.held.erase(due, s.held.end());
	}

	void check_ready(RankState& s) {
		if(s.finished || s.ready) return;
		if(s.local > 0 || (s.current && !s.current->remote)) return;
		bool missing = false;
		for(const auto& [id, t] : s.outstanding) missing = missing || !t.resolved;
		if(missing) {
			if(!s.idle_since) s.idle_since = m_now;
			if(m_now - *s.idle_since < m_slack) return;
			// Emergency: results are late. Run those tasks here and penalize the target.
			for(auto& [id, t] : s.outstanding) {
				if(t.resolved) continue;
				t.resolved = true;
				++s.local;
				if(!s.emergency_now[t.target]) {
					s.emergency_now[t.target] = true;
					++s.emergencies;
					s.budget[t.target] *= 0.5;
				}
			}
			return;
		}
		s.ready = true;
		s.ready_tick = m_now;
		std::vector<std::byte> payload;
		put_u64(payload, s.rank);
		put_u64(payload, m_now);
		std::uint64_t mask = 0;
		for(std::uint32_t t = 0; t < m_world; ++t) {
			if(s.emergency_now[t]) mask |= 1ULL << t;
		}
		put_u64(payload, mask);
		send(s.rank, 0, tag_ready, payload);
	}

	void build_table() {
		auto& table = m_rep.result.table;
		table.scenario = "offload";
		table.columns = {"iteration", "rank", "wait_time", "tasks_offloaded", "emergencies", "tasks_received"};
		for(std::size_t it = 0; it < m_cfg.iterations; ++it) {
			const auto& ready = m_rep.ready_tick[it];
			const auto& raw = m_rep.raw_wait[it];
			const auto crit = static_cast<std::size_t>(std::max_element(ready.begin(), ready.end()) - ready.begin());
			m_rep.critical[it] = crit;
			const auto max_raw = *std::max_element(raw.begin(), raw.end());
			for(std::uint32_t r = 0; r < m_world; ++r) {
				const auto w = r == crit ? -static_cast<std::int64_t>(max_raw - raw[r]) : static_cast<std::int64_t>(raw[r]);
				m_rep.wait_time[it][r] = w;
				table.rows.push_back({std::to_string(it), std::to_string(r), std::to_string(w), std::to_string(m_rep.offloaded[it][r]),
				    std::to_string(m_rep.emergencies[it][r]), std::to_string(m_rep.received[it][r])});
				if(m_rep.offloaded[it][r] > 0 && !m_rep.may_offload[it][r]) fail("rank " + std::to_string(r) + " offloaded outside the critical set");
			}
		}
	}

	const ScenarioConfig& m_cfg;
	OffloadReport& m_rep;
	std::unique_ptr<Runtime> m_rt;
	std::unique_ptr<Notifier> m_notifier;
	std::uint32_t m_world;
	std::uint64_t m_deadband;
	std::uint64_t m_slack;
	std::vector<RankState> m_ranks;

	std::uint64_t m_now = 0;
	std::uint64_t m_next_task = 0;
	std::uint64_t m_results_pending = 0;
	std::uint64_t m_sends_pending = 0;
	std::size_t m_kickoffs = 0;
	std::size_t m_ready_seen = 0;
	std::vector<std::uint64_t> m_ready_table;
	std::vector<std::uint64_t> m_emergency_table;
};

template <typename T>
std::vector<std::vector<T>> grid(std::size_t rows, std::size_t cols) {
	return std::vector<std::vector<T>>(rows, std::vector<T>(cols, T{}));
}

} // namespace

OffloadReport run_offload(const ScenarioConfig& cfg) {
	cfg.validate();
	OffloadReport rep;
	const auto n = cfg.iterations, w = cfg.world;
	rep.wait_time = grid<std::int64_t>(n, w);
	rep.raw_wait = rep.ready_tick = rep.offloaded = rep.emergencies = rep.received = grid<std::uint64_t>(n, w);
	rep.blacklisted = rep.may_offload = grid<bool>(n, w);
	rep.critical.assign(n, 0);
	OffloadSim sim(cfg, rep);
	sim.run();
	return rep;
}

} // namespace contmsg::scenarios
