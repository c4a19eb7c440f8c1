#include "notifier.hpp"

#include <chrono>

namespace contmsg::scenarios {

namespace {

constexpr Tag ping_tag{1};
constexpr Tag pong_tag{2};

} // namespace

PingpongReport run_pingpong(const ScenarioConfig& cfg) {
	cfg.validate();
	PingpongReport rep;
	auto rt = make_runtime(cfg);
	auto notifier = make_notifier(*rt, cfg);
	auto& ep0 = rt->endpoint(Rank{0});
	auto& ep1 = rt->endpoint(Rank{1});
	const std::vector<std::byte> payload(cfg.msg_size, std::byte{0x42});

	// Rank 1 echoes every ping from a persistent receive restarted in its callback.
	auto ping_recv = ep1.recv_init(Rank{0}, ping_tag, cfg.capacity);
	bool ping_truncated = false;
	bool ping_closed = false;
	Notifier::Callback on_ping;
	on_ping = [&](std::span<const Status> st) {
		if(st[0].cancelled) {
			ping_closed = true;
			return;
		}
		ping_truncated = st[0].error == StatusError::truncated;
		ep1.isend(Rank{0}, pong_tag, std::vector<std::byte>(ping_recv.data().begin(), ping_recv.data().end()));
		ep1.start(ping_recv);
		notifier->watch({ping_recv}, on_ping);
	};
	ep1.start(ping_recv);
	notifier->watch({ping_recv}, on_ping);

	const std::uint64_t tick_limit = 100000;
	for(std::size_t it = 0; it < cfg.iterations; ++it) {
		bool done = false;
		Status pong;
		auto r = ep0.irecv(Rank{1}, pong_tag, cfg.capacity);
		notifier->watch({r}, [&](std::span<const Status> st) {
			pong = st[0];
			done = true;
		});
		const auto start = std::chrono::steady_clock::now();
		ep0.isend(Rank{1}, ping_tag, payload);
		std::uint64_t ticks = 0;
		while(!done && ticks < tick_limit) {
			notifier->tick();
			++ticks;
		}
		const auto us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start).count();
		if(!done) {
			rep.result.failures.push_back("iteration " + std::to_string(it) + ": no pong after " + std::to_string(tick_limit) + " ticks");
			break;
		}
		const bool truncated = ping_truncated || pong.error == StatusError::truncated;
		rep.round_trip_ticks.push_back(ticks);
		rep.round_trip_us.push_back(us);
		rep.truncated.push_back(truncated);
		rep.result.table.rows.push_back({std::to_string(it), std::string(to_string(cfg.variant)), std::to_string(ticks),
		    truncated ? "TRUNCATED" : "OK", cfg.transport == "tcp" ? std::to_string(static_cast<std::uint64_t>(us)) : ""});
	}

	ep1.cancel(ping_recv);
	for(std::uint64_t i = 0; i < tick_limit && !ping_closed; ++i) notifier->tick();
	if(!ping_closed) rep.result.failures.push_back("cancelled echo receive never reported");
	notifier->close();

	rep.result.table.scenario = "pingpong";
	rep.result.table.columns = {"iteration", "variant", "round_trip_ticks", "error", "round_trip_us"};
	return rep;
}

} // namespace contmsg::scenarios
