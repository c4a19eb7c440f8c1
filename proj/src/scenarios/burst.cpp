#include "notifier.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace contmsg::scenarios {

BurstReport run_burst(const ScenarioConfig& cfg) {
	cfg.validate();
	BurstReport rep;
	auto rt = make_runtime(cfg);
	auto notifier = make_notifier(*rt, cfg);
	const std::size_t m = cfg.messages ? cfg.messages : 4 * cfg.K;
	const std::size_t senders = cfg.world - 1;

	// The receiver pre-posts one receive per message; the senders fire all of
	// them at once, in a seeded order.
	rep.op_delay.assign(m, 0);
	std::size_t handled = 0;
	std::vector<OpHandle> recvs;
	for(std::size_t i = 0; i < m; ++i) {
		recvs.push_back(rt->endpoint(Rank{0}).irecv(any_source, Tag{i}, 64));
		notifier->watch({recvs.back()}, [&, i](std::span<const Status>) {
			rep.op_delay[i] = detection_delay(recvs[i]);
			rep.delays.add(rep.op_delay[i]);
			++handled;
		});
	}
	std::vector<std::size_t> order(m);
	std::iota(order.begin(), order.end(), 0);
	std::mt19937_64 rng(cfg.seed);
	std::shuffle(order.begin(), order.end(), rng);
	const std::vector<std::byte> payload(32, std::byte{0x17});
	std::vector<OpHandle> sends;
	for(std::size_t k = 0; k < m; ++k) {
		const Rank from{static_cast<std::uint32_t>(1 + k % senders)};
		sends.push_back(rt->endpoint(from).isend(Rank{0}, Tag{order[k]}, payload));
	}

	const std::uint64_t tick_limit = 100 * m + 1000;
	for(std::uint64_t t = 0; handled < m && t < tick_limit; ++t) {
		const auto n = notifier->tick();
		rep.handled_per_tick.push_back(n);
		rep.max_handled_per_tick = std::max<std::uint64_t>(rep.max_handled_per_tick, n);
	}
	if(handled < m) rep.result.failures.push_back("only " + std::to_string(handled) + " of " + std::to_string(m) + " messages handled");
	for(auto& s : sends) rt->wait(s);
	notifier->close();

	auto& table = rep.result.table;
	table.scenario = "burst";
	table.columns = {"variant", "K", "max_poll", "metric", "bucket", "value"};
	const std::string variant(to_string(cfg.variant));
	const auto k = std::to_string(cfg.K);
	const auto mp = std::to_string(cfg.max_poll);
	for(std::size_t d = 0; d < rep.delays.buckets.size(); ++d) {
		if(rep.delays.buckets[d] != 0) table.rows.push_back({variant, k, mp, "detection_delay_ticks", std::to_string(d), std::to_string(rep.delays.buckets[d])});
	}
	for(std::size_t t = 0; t < rep.handled_per_tick.size(); ++t) {
		table.rows.push_back({variant, k, mp, "handled_per_tick", std::to_string(t + 1), std::to_string(rep.handled_per_tick[t])});
	}
	return rep;
}

} // namespace contmsg::scenarios
