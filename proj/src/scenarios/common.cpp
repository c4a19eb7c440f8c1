#include "notifier.hpp"

#include "contmsg/wire.hpp"

#include <ostream>
#include <sstream>

namespace contmsg::scenarios {

std::string_view to_string(Variant v) {
	switch(v) {
	case Variant::continuations: return "continuations";
	case Variant::activeset: return "activeset";
	case Variant::groups: return "groups";
	}
	return "?";
}

Variant parse_variant(std::string_view s) {
	if(s == "continuations") return Variant::continuations;
	if(s == "activeset") return Variant::activeset;
	if(s == "groups") return Variant::groups;
	throw Error(ErrorCode::config_error, "unknown variant " + std::string(s));
}

void ScenarioConfig::validate() const {
	auto bad = [](const std::string& what) { throw Error(ErrorCode::config_error, what); };
	if(scenario != "pingpong" && scenario != "burst" && scenario != "offload" && scenario != "statecheck") bad("unknown scenario " + scenario);
	if(transport != "loopback" && transport != "tcp") bad("unknown transport " + transport);
	if(transport == "tcp" && roster.empty()) bad("tcp transport needs --roster");
	if(world == 0) bad("world size must be positive");
	if(scenario == "pingpong" && world < 2) bad("pingpong needs at least 2 ranks");
	if(scenario == "burst" && world < 2) bad("burst needs at least 2 ranks");
	if(scenario == "offload" && world < 2) bad("offload needs at least 2 ranks");
	if(scenario == "offload" && world > 64) bad("offload supports at most 64 ranks");
	if(K == 0 || max_concurrent_out == 0 || group_poll == 0) bad("K, max-concurrent-out and group-poll must be positive");
	if(imbalance < 1.0) bad("imbalance must be at least 1");
	if(tasks == 0 || task_cost == 0 || workers == 0) bad("tasks, task-cost and workers must be positive");
	if(gain < 0) bad("gain must be non-negative");
	if(slow_victim >= static_cast<std::int64_t>(world)) bad("slow victim out of range");
	if(slow_victim == 0) bad("rank 0 cannot be the slow victim");
	try {
		cr_config();
	} catch(const Error& e) { bad(e.what()); }
}

InfoConfig ScenarioConfig::cr_config() const {
	InfoConfig c;
	c.poll_only = poll_only;
	c.enqueue_complete = enqueue_complete;
	c.max_poll = max_poll;
	c.validate();
	return c;
}

void write_csv(std::ostream& out, const Table& table) {
	out << "# contmsg-csv schema=1 scenario=" << table.scenario << '\n';
	for(std::size_t i = 0; i < table.columns.size(); ++i) out << (i ? "," : "") << table.columns[i];
	out << '\n';
	for(const auto& row : table.rows) {
		for(std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
		out << '\n';
	}
}

std::string to_csv(const Table& table) {
	std::ostringstream ss;
	write_csv(ss, table);
	return ss.str();
}

std::unique_ptr<Runtime> make_runtime(const ScenarioConfig& cfg) {
	if(cfg.transport == "loopback") return Runtime::loopback(cfg.world);
	auto roster = wire::load_roster(cfg.roster);
	if(roster.size() != cfg.world) throw Error(ErrorCode::config_error, "roster lists " + std::to_string(roster.size()) + " ranks, --world is " + std::to_string(cfg.world));
	std::vector<Rank> local;
	for(const auto& e : roster) local.push_back(e.rank);
	return Runtime::tcp(roster, local);
}

ScenarioResult run(const ScenarioConfig& cfg) {
	cfg.validate();
	if(cfg.scenario == "pingpong") return run_pingpong(cfg).result;
	if(cfg.scenario == "burst") return run_burst(cfg).result;
	if(cfg.scenario == "offload") return run_offload(cfg).result;
	return run_statecheck(cfg).result;
}

void put_u64(std::vector<std::byte>& out, std::uint64_t v) {
	for(int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(std::span<const std::byte> in, std::size_t index) {
	std::uint64_t v = 0;
	for(int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(std::to_integer<std::uint8_t>(in[index * 8 + i])) << (8 * i);
	return v;
}

// Notifiers

std::unique_ptr<Notifier> make_notifier(Runtime& rt, const ScenarioConfig& cfg) {
	switch(cfg.variant) {
	case Variant::continuations: return std::make_unique<ContinuationNotifier>(rt, cfg.cr_config());
	case Variant::activeset: return std::make_unique<ActiveSetNotifier>(rt, ActiveSetConfig{cfg.K, cfg.max_concurrent_out});
	case Variant::groups: return std::make_unique<GroupNotifier>(rt, cfg.group_poll);
	}
	throw Error(ErrorCode::config_error, "unknown variant");
}

ContinuationNotifier::ContinuationNotifier(Runtime& rt, const InfoConfig& config) : m_rt(rt), m_cr(rt.continue_init(config)) {}

void ContinuationNotifier::watch(std::vector<OpHandle> ops, Callback cb) {
	auto statuses = std::make_shared<std::vector<Status>>(ops.size());
	std::vector<RequestRef> refs(ops.begin(), ops.end());
	const bool done = m_rt.attach(refs, m_cr, [this, statuses, cb](std::span<const Status>, void*) {
		++m_calls;
		cb(*statuses);
	}, nullptr, *statuses);
	if(!done) return;
	// Already complete: the application runs the callback itself. Queued so a
	// chain of immediate completions does not recurse.
	m_immediate.push_back({statuses, std::move(cb)});
	run_immediate();
}

void ContinuationNotifier::run_immediate() {
	if(m_running_immediate) return;
	m_running_immediate = true;
	while(!m_immediate.empty()) {
		auto p = std::move(m_immediate.front());
		m_immediate.pop_front();
		++m_calls;
		p.cb(*p.statuses);
	}
	m_running_immediate = false;
}

std::size_t ContinuationNotifier::tick() {
	const auto before = m_calls;
	m_rt.cr_test(m_cr);
	return m_calls - before;
}

void ContinuationNotifier::close() {
	m_rt.cr_wait(m_cr);
	m_rt.cr_free(m_cr);
}

void ActiveSetNotifier::watch(std::vector<OpHandle> ops, Callback cb) {
	struct Group {
		std::vector<Status> statuses;
		std::size_t remaining;
		Callback cb;
	};
	auto g = std::make_shared<Group>(Group{std::vector<Status>(ops.size()), ops.size(), std::move(cb)});
	for(std::size_t i = 0; i < ops.size(); ++i) {
		m_mgr.post(ops[i], [this, g, i](const OpHandle&, const Status& st) {
			g->statuses[i] = st;
			if(--g->remaining == 0) {
				++m_calls;
				g->cb(g->statuses);
			}
		});
	}
}

std::size_t ActiveSetNotifier::tick() {
	const auto before = m_calls;
	m_mgr.tick();
	return m_calls - before;
}

void GroupNotifier::watch(std::vector<OpHandle> ops, Callback cb) { m_mgr.submit(std::move(ops), std::move(cb)); }

} // namespace contmsg::scenarios
