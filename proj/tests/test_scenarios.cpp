#include "contmsg/scenarios.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace contmsg;
namespace sc = contmsg::scenarios;

namespace {

sc::ScenarioConfig config(const std::string& scenario) {
	sc::ScenarioConfig cfg;
	cfg.scenario = scenario;
	return cfg;
}

const sc::Variant all_variants[] = {sc::Variant::continuations, sc::Variant::activeset, sc::Variant::groups};

// Serial replay of the diffusive rule on the recorded ready ticks: predicted
// number of tasks each rank sends in every iteration. Valid for runs without
// emergencies.
std::vector<std::vector<std::uint64_t>> replay_offloads(const sc::ScenarioConfig& cfg, const sc::OffloadReport& rep) {
	const auto w = cfg.world;
	const double c = static_cast<double>(cfg.task_cost);
	const double deadband = static_cast<double>(cfg.deadband ? cfg.deadband : cfg.task_cost);
	std::vector<std::vector<double>> budget(w, std::vector<double>(w, 0.0));
	std::vector<std::vector<std::uint64_t>> predicted(cfg.iterations, std::vector<std::uint64_t>(w, 0));
	for(std::size_t it = 1; it < cfg.iterations; ++it) {
		const auto& ready = rep.ready_tick[it - 1];
		const double latest = static_cast<double>(*std::max_element(ready.begin(), ready.end()));
		for(std::size_t r = 0; r < w; ++r) {
			const double own = latest - static_cast<double>(ready[r]);
			if(own > deadband) continue;
			const auto local = static_cast<std::uint64_t>(std::llround(cfg.tasks * (r == 0 ? cfg.imbalance : 1.0)));
			std::uint64_t sent = 0;
			for(std::size_t t = 0; t < w; ++t) {
				if(t == r) continue;
				const double diff = (latest - static_cast<double>(ready[t])) - own;
				if(std::abs(diff) > deadband) budget[r][t] = std::max(0.0, budget[r][t] + cfg.gain * diff / c);
				const auto n = static_cast<std::uint64_t>(std::floor(budget[r][t] + 0.5));
				sent += std::min(n, local / 2 - std::min(sent, local / 2));
			}
			predicted[it][r] = sent;
		}
	}
	return predicted;
}

} // namespace

TEST_CASE("csv carries a versioned schema line") {
	sc::Table t{"demo", {"a", "b"}, {{"1", "2"}}};
	CHECK(sc::to_csv(t) == "# contmsg-csv schema=1 scenario=demo\na,b\n1,2\n");
}

TEST_CASE("config validation rejects unusable combinations") {
	auto cfg = config("nope");
	CHECK_THROWS_AS(cfg.validate(), Error);
	cfg = config("pingpong");
	cfg.world = 1;
	try {
		cfg.validate();
		FAIL("accepted world=1");
	} catch(const Error& e) { CHECK(e.code() == ErrorCode::config_error); }
	CHECK_THROWS_AS(sc::parse_variant("fastest"), Error);
}

TEST_CASE("pingpong is deterministic per seed") {
	auto cfg = config("pingpong");
	cfg.iterations = 100;
	const auto a = sc::run(cfg);
	const auto b = sc::run(cfg);
	REQUIRE(a.ok());
	CHECK(sc::to_csv(a.table) == sc::to_csv(b.table));
	CHECK(a.table.rows.size() == 100);
}

TEST_CASE("pingpong completes every round trip in all variants") {
	for(auto v : all_variants) {
		CAPTURE(sc::to_string(v));
		auto cfg = config("pingpong");
		cfg.variant = v;
		const auto rep = sc::run_pingpong(cfg);
		CHECK(rep.result.ok());
		CHECK(rep.round_trip_ticks.size() == 100);
		CHECK(std::none_of(rep.truncated.begin(), rep.truncated.end(), [](bool t) { return t; }));
	}
}

TEST_CASE("pingpong reports truncation when the message outgrows the buffer") {
	auto cfg = config("pingpong");
	cfg.iterations = 3;
	cfg.msg_size = 128;
	cfg.capacity = 64;
	const auto rep = sc::run_pingpong(cfg);
	REQUIRE(rep.result.ok());
	for(const auto& row : rep.result.table.rows) CHECK(row[3] == "TRUNCATED");
}

TEST_CASE("burst: the active set delays detection once in-flight ops exceed K") {
	auto cfg = config("burst");
	cfg.world = 3;
	cfg.K = 8;
	cfg.variant = sc::Variant::activeset;
	const auto asm_rep = sc::run_burst(cfg);
	REQUIRE(asm_rep.result.ok());
	REQUIRE(asm_rep.op_delay.size() == 32);
	CHECK(asm_rep.delays.max() >= 2);

	cfg.variant = sc::Variant::continuations;
	const auto cont = sc::run_burst(cfg);
	REQUIRE(cont.result.ok());
	std::size_t strictly = 0;
	for(std::size_t i = 0; i < 32; ++i) {
		CHECK(cont.op_delay[i] <= asm_rep.op_delay[i]);
		strictly += cont.op_delay[i] < asm_rep.op_delay[i];
	}
	CHECK(strictly >= 32 - 8);
}

TEST_CASE("burst: a single message is detected in one tick by every variant") {
	for(auto v : all_variants) {
		auto cfg = config("burst");
		cfg.messages = 1;
		cfg.variant = v;
		const auto rep = sc::run_burst(cfg);
		REQUIRE(rep.result.ok());
		REQUIRE(rep.op_delay.size() == 1);
		CHECK(rep.op_delay[0] == 1);
	}
}

TEST_CASE("burst: max_poll caps callbacks per cr_test") {
	auto cfg = config("burst");
	cfg.world = 3;
	cfg.enqueue_complete = true;
	cfg.poll_only = true;
	cfg.max_poll = 8;
	const auto rep = sc::run_burst(cfg);
	REQUIRE(rep.result.ok());
	CHECK(rep.max_handled_per_tick == 8);
	for(auto n : rep.handled_per_tick) CHECK(n <= 8);
}

TEST_CASE("offload: balanced load never offloads") {
	auto cfg = config("offload");
	cfg.world = 4;
	cfg.imbalance = 1.0;
	cfg.iterations = 50;
	const auto rep = sc::run_offload(cfg);
	REQUIRE(rep.result.ok());
	for(const auto& it : rep.offloaded) {
		for(auto n : it) CHECK(n == 0);
	}
}

TEST_CASE("offload: only the overloaded rank offloads, as the diffusive rule predicts") {
	auto cfg = config("offload");
	cfg.world = 4;
	cfg.iterations = 200;
	const auto rep = sc::run_offload(cfg);
	REQUIRE(rep.result.ok());
	const auto predicted = replay_offloads(cfg, rep);
	std::uint64_t total = 0;
	for(std::size_t it = 0; it < cfg.iterations; ++it) {
		CAPTURE(it);
		for(std::size_t r = 0; r < cfg.world; ++r) {
			CAPTURE(r);
			CHECK(rep.emergencies[it][r] == 0);
			CHECK(rep.offloaded[it][r] == predicted[it][r]);
			if(r != 0) CHECK(rep.offloaded[it][r] == 0);
		}
		total += rep.offloaded[it][0];
	}
	CHECK(total > 0);
	// The critical rank ends up waited on less than at the start.
	CHECK(-rep.wait_time.back()[rep.critical.back()] < -rep.wait_time.front()[rep.critical.front()]);
}

TEST_CASE("offload: a slow victim triggers emergencies and a blacklist window") {
	auto cfg = config("offload");
	cfg.world = 4;
	cfg.iterations = 40;
	cfg.slow_victim = 2;
	cfg.slow_delay = 400;
	cfg.blacklist_window = 10;
	const auto rep = sc::run_offload(cfg);
	REQUIRE(rep.result.ok());
	std::uint64_t emergencies = 0;
	std::optional<std::size_t> first_blacklisted;
	for(std::size_t it = 0; it < cfg.iterations; ++it) {
		for(std::size_t r = 0; r < cfg.world; ++r) emergencies += rep.emergencies[it][r];
		if(rep.blacklisted[it][2]) {
			if(!first_blacklisted) first_blacklisted = it;
			CHECK(rep.received[it][2] == 0);
		}
	}
	CHECK(emergencies >= 1);
	REQUIRE(first_blacklisted);
	for(std::size_t it = *first_blacklisted; it < *first_blacklisted + cfg.blacklist_window; ++it) {
		CHECK(rep.blacklisted[it][2]);
		CHECK(rep.received[it][2] == 0);
	}
}

TEST_CASE("statecheck covers every edge and rejects misuse") {
	auto cfg = config("statecheck");
	cfg.iterations = 2000;
	const auto rep = sc::run_statecheck(cfg);
	CHECK(rep.missing_edges.empty());
	CHECK(rep.illegal_transitions.empty());
	CHECK(rep.accepted_non_edges.empty());
	CHECK(rep.result.ok());
	CHECK(rep.edge_hits.size() == sc::legal_edges().size());
}
