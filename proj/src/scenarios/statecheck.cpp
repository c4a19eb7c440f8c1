#include "contmsg/scenarios.hpp"

#include <algorithm>
#include <random>
#include <set>

// Exercises the CR state machine: a directed script per legal edge, misuse
// that must be rejected, then a seeded random walk. Every transition the engine
// reports is checked against the legal edge list.

namespace contmsg::scenarios {

namespace {

std::string edge(CrState from, CrEvent ev, CrState to) {
	return std::string(to_string(from)) + " -" + std::string(to_string(ev)) + "-> " + std::string(to_string(to));
}

class Checker {
  public:
	Checker(const ScenarioConfig& cfg, StatecheckReport& rep) : m_rep(rep), m_rt(Runtime::loopback(2)), m_rng(cfg.seed), m_steps(cfg.iterations) {
		const auto& legal = legal_edges();
		m_legal.insert(legal.begin(), legal.end());
	}

	void run() {
		directed();
		misuse();
		walk();
		for(const auto& e : legal_edges()) {
			if(!m_rep.edge_hits.contains(e)) m_rep.missing_edges.push_back(e);
		}
		for(const auto& e : m_rep.missing_edges) m_rep.result.failures.push_back("edge never taken: " + e);
		for(const auto& e : m_rep.illegal_transitions) m_rep.result.failures.push_back("illegal transition: " + e);
		for(const auto& e : m_rep.accepted_non_edges) m_rep.result.failures.push_back("misuse accepted: " + e);

		auto& table = m_rep.result.table;
		table.scenario = "statecheck";
		table.columns = {"edge", "hits"};
		for(const auto& e : legal_edges()) {
			const auto it = m_rep.edge_hits.find(e);
			table.rows.push_back({e, std::to_string(it == m_rep.edge_hits.end() ? 0 : it->second)});
		}
		for(const auto& e : m_rep.illegal_transitions) table.rows.push_back({e, "illegal"});
	}

  private:
	ContinuationRequest make(const InfoConfig& cfg = {}) {
		auto cr = m_rt->continue_init(cfg);
		cr.set_transition_observer([this](CrState from, CrState to, CrEvent ev) {
			const auto e = edge(from, ev, to);
			if(m_legal.contains(e)) {
				++m_rep.edge_hits[e];
			} else {
				m_rep.illegal_transitions.push_back(e);
			}
		});
		return cr;
	}

	// A receive on rank 0 that stays pending until `complete` sends its message.
	OpHandle pending() { return m_rt->endpoint(Rank{0}).irecv(Rank{1}, Tag{m_next_tag++}, 8); }

	void complete(const OpHandle& recv) {
		const std::byte b{0};
		auto s = m_rt->endpoint(Rank{1}).isend(Rank{0}, recv.record().tag, std::span<const std::byte>(&b, 1));
		m_sends.push_back(s);
		while(!recv.record().done.load(std::memory_order_acquire)) m_rt->poll_all();
	}

	OpHandle done() {
		auto r = pending();
		complete(r);
		return r;
	}

	void check_invariant(const ContinuationRequest& cr) {
		const auto st = cr.state();
		const bool referenced = cr.counters().registered > 0;
		if((st == CrState::active_referenced) != referenced && st != CrState::freed) {
			m_rep.illegal_transitions.push_back("state " + std::string(to_string(st)) + " with " + std::to_string(cr.counters().registered) + " registered");
		}
	}

	static void noop(std::span<const Status>, void*) {}

	void directed() {
		// I -free-> I -release-> FREED
		m_rt->cr_free(make());

		// I -register-> AR -deregister-> AI -completion_call-> C -completion_call-> C
		{
			auto cr = make();
			auto r = pending();
			m_rt->attach(r, cr, noop);
			complete(r);
			m_rt->cr_test(cr); // AR -deregister-> AI, then AI -completion_call-> C
			m_rt->cr_test(cr);
			// C -register-> AR -free-> AR ... -deregister-> AI -release-> FREED
			auto r2 = pending();
			m_rt->attach(r2, cr, noop);
			m_rt->cr_free(cr);
			complete(r2);
			m_rt->progress_tick();
		}

		// I -completion_call-> C -free-> C -release-> FREED
		{
			auto cr = make();
			m_rt->cr_test(cr);
			m_rt->cr_free(cr);
		}

		// AR -register-> AR, AR -deregister-> AR, AR -completion_call-> AR
		{
			auto cr = make();
			auto a = pending();
			auto b = pending();
			m_rt->attach(a, cr, noop);
			m_rt->attach(b, cr, noop);
			m_rt->cr_test(cr);
			complete(a);
			m_rt->cr_test(cr);
			complete(b);
			m_rt->cr_test(cr);
			// AI -free-> AI -release-> FREED
			auto c = pending();
			m_rt->attach(c, cr, noop);
			complete(c);
			m_rt->progress_tick(); // AR -deregister-> AI
			m_rt->cr_free(cr);
		}

		// AI -register-> AR
		{
			auto cr = make();
			auto a = pending();
			m_rt->attach(a, cr, noop);
			complete(a);
			m_rt->progress_tick();
			auto b = pending();
			m_rt->attach(b, cr, noop);
			complete(b);
			m_rt->cr_wait(cr);
			m_rt->cr_free(cr);
		}

		// enqueue_complete registers an already complete op.
		{
			InfoConfig cfg;
			cfg.enqueue_complete = true;
			auto cr = make(cfg);
			m_rt->attach(done(), cr, noop);
			m_rt->cr_wait(cr);
			m_rt->cr_free(cr);
		}
	}

	template <typename F>
	void expect_rejected(const std::string& what, ErrorCode code, F&& f) {
		try {
			f();
		} catch(const Error& e) {
			if(e.code() == code) return;
			m_rep.accepted_non_edges.push_back(what + " (wrong error " + std::string(to_string(e.code())) + ")");
			return;
		}
		m_rep.accepted_non_edges.push_back(what);
	}

	void misuse() {
		auto freed = make();
		m_rt->cr_free(freed);
		expect_rejected("FREED -register->", ErrorCode::freed_cr, [&] { m_rt->attach(pending(), freed, noop); });
		expect_rejected("FREED -completion_call->", ErrorCode::freed_cr, [&] { m_rt->cr_test(freed); });
		expect_rejected("FREED -free->", ErrorCode::double_free, [&] { m_rt->cr_free(freed); });

		// Freed by the user but still referenced: no new work, no test, no second free.
		auto lingering = make();
		auto r = pending();
		m_rt->attach(r, lingering, noop);
		m_rt->cr_free(lingering);
		expect_rejected("free-pending -register->", ErrorCode::freed_cr, [&] { m_rt->attach(pending(), lingering, noop); });
		expect_rejected("free-pending -completion_call->", ErrorCode::freed_cr, [&] { m_rt->cr_test(lingering); });
		expect_rejected("free-pending -free->", ErrorCode::double_free, [&] { m_rt->cr_free(lingering); });
		complete(r);
		m_rt->progress_tick();
		if(lingering.state() != CrState::freed) m_rep.illegal_transitions.push_back("free-pending CR not released after its last continuation");

		auto self = make();
		expect_rejected("chain onto itself", ErrorCode::self_chain, [&] { m_rt->attach(RequestRef(self), self, noop); });
		m_rt->cr_free(self);
	}

	void walk() {
		struct Live {
			ContinuationRequest cr;
			std::vector<OpHandle> pending;
			bool freed = false;
		};
		std::vector<Live> crs;
		auto fresh = [&] {
			InfoConfig cfg;
			cfg.enqueue_complete = m_rng() % 2 == 0;
			cfg.poll_only = m_rng() % 3 == 0;
			crs.push_back({make(cfg), {}, false});
		};
		for(int i = 0; i < 4; ++i) fresh();

		for(std::size_t step = 0; step < m_steps; ++step) {
			++m_rep.walk_steps;
			auto& l = crs[m_rng() % crs.size()];
			const auto action = m_rng() % 7;
			if(l.freed) {
				if(!l.pending.empty()) {
					complete(l.pending.back());
					l.pending.pop_back();
					m_rt->progress_tick();
				}
				if(action == 0) fresh();
				continue;
			}
			switch(action) {
			case 0: {
				auto r = pending();
				m_rt->attach(r, l.cr, noop);
				l.pending.push_back(r);
				break;
			}
			case 1: m_rt->attach(done(), l.cr, noop); break;
			case 2:
				if(!l.pending.empty()) {
					const auto i = m_rng() % l.pending.size();
					complete(l.pending[i]);
					l.pending.erase(l.pending.begin() + static_cast<std::ptrdiff_t>(i));
				}
				break;
			case 3:
			case 4: m_rt->cr_test(l.cr); break;
			case 5: m_rt->progress_tick(); break;
			case 6:
				m_rt->cr_free(l.cr);
				l.freed = true;
				break;
			}
			for(const auto& c : crs) check_invariant(c.cr);
		}
		for(auto& l : crs) {
			for(auto& r : l.pending) complete(r);
			l.pending.clear();
			if(!l.freed) {
				m_rt->cr_wait(l.cr);
				m_rt->cr_free(l.cr);
			}
		}
		for(int i = 0; i < 4; ++i) m_rt->progress_tick();
		for(const auto& l : crs) {
			if(l.cr.state() != CrState::freed) m_rep.illegal_transitions.push_back("CR " + std::to_string(l.cr.id()) + " never released");
		}
		for(const auto& s : m_sends) m_rt->wait(s);
	}

	StatecheckReport& m_rep;
	std::unique_ptr<Runtime> m_rt;
	std::mt19937_64 m_rng;
	std::size_t m_steps;
	std::set<std::string> m_legal;
	std::uint64_t m_next_tag = 100;
	std::vector<OpHandle> m_sends;
};

} // namespace

const std::vector<std::string>& legal_edges() {
	using S = CrState;
	using E = CrEvent;
	static const std::vector<std::string> edges = {
	    edge(S::inactive, E::registration, S::active_referenced),
	    edge(S::inactive, E::completion_call, S::complete),
	    edge(S::active_referenced, E::registration, S::active_referenced),
	    edge(S::active_referenced, E::deregistration, S::active_referenced),
	    edge(S::active_referenced, E::deregistration, S::active_idle),
	    edge(S::active_referenced, E::completion_call, S::active_referenced),
	    edge(S::active_idle, E::registration, S::active_referenced),
	    edge(S::active_idle, E::completion_call, S::complete),
	    edge(S::complete, E::registration, S::active_referenced),
	    edge(S::complete, E::completion_call, S::complete),
	    edge(S::inactive, E::free, S::inactive),
	    edge(S::active_referenced, E::free, S::active_referenced),
	    edge(S::active_idle, E::free, S::active_idle),
	    edge(S::complete, E::free, S::complete),
	    edge(S::inactive, E::release, S::freed),
	    edge(S::active_idle, E::release, S::freed),
	    edge(S::complete, E::release, S::freed),
	};
	return edges;
}

StatecheckReport run_statecheck(const ScenarioConfig& cfg) {
	cfg.validate();
	StatecheckReport rep;
	Checker(cfg, rep).run();
	return rep;
}

} // namespace contmsg::scenarios
