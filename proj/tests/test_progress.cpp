#include "contmsg/progress.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <thread>

using namespace contmsg;

namespace {

std::vector<std::byte> filled(std::size_t n, int v = 1) { return std::vector<std::byte>(n, static_cast<std::byte>(v)); }

ErrorCode code_of(auto&& fn) {
	try {
		fn();
	} catch(const Error& e) { return e.code(); }
	FAIL("expected an error");
	return ErrorCode::config_error;
}

// A send from rank 0 to rank 1 that is complete on both sides.
struct Done {
	OpHandle send, recv;
};

Done completed_pair(Runtime& rt, Tag tag) {
	auto r = rt.endpoint(Rank{1}).irecv(Rank{0}, tag, 8);
	auto s = rt.endpoint(Rank{0}).isend(Rank{1}, tag, filled(8));
	rt.poll_all();
	REQUIRE(r.status());
	REQUIRE(s.status());
	return {s, r};
}

} // namespace

TEST_CASE("fresh CR is inactive and tests complete") {
	auto rt = Runtime::loopback(2);
	auto cr = rt->continue_init();
	CHECK(cr.state() == CrState::inactive);
	CHECK(cr.counters().registered == 0);
	CHECK(rt->cr_test(cr));
	CHECK(cr.state() == CrState::complete);
}

TEST_CASE("immediate completion skips the callback") {
	auto rt = Runtime::loopback(2);
	auto cr = rt->continue_init();
	auto ops = completed_pair(*rt, Tag{1});
	int calls = 0;
	Status st;
	CHECK(rt->attach(ops.recv, cr, [&](auto, void*) { ++calls; }, nullptr, st));
	CHECK(st.count == 8);
	CHECK(ops.recv.state() == OpState::consumed);
	CHECK(cr.counters().registered == 0);
	CHECK(cr.state() == CrState::inactive);
	for(int i = 0; i < 3; ++i) rt->progress_tick();
	CHECK(rt->cr_test(cr));
	CHECK(calls == 0);
}

TEST_CASE("enqueue_complete defers an already complete group") {
	auto rt = Runtime::loopback(2);
	auto cr = rt->continue_init(info_config_new({{"enqueue_complete", "true"}}));
	auto ops = completed_pair(*rt, Tag{1});
	int calls = 0;
	CHECK_FALSE(rt->attach({ops.send, ops.recv}, cr, [&](auto, void*) { ++calls; }));
	CHECK(calls == 0);
	CHECK(cr.state() == CrState::active_referenced);
	CHECK(cr.ready_count() == 1);
	CHECK(rt->cr_test(cr));
	CHECK(calls == 1);
	CHECK(cr.counters().executed_deferred == 1);
}

TEST_CASE("attach-all fires once after the last member in every completion order") {
	for(std::size_t n : {2u, 3u}) {
		std::vector<std::size_t> perm(n);
		std::iota(perm.begin(), perm.end(), 0);
		do {
			auto rt = Runtime::loopback(2);
			auto cr = rt->continue_init();
			std::vector<RequestRef> ops;
			for(std::size_t i = 0; i < n; ++i) ops.emplace_back(rt->endpoint(Rank{0}).irecv(Rank{1}, Tag{i}, 4));
			std::vector<Status> statuses(n);
			int calls = 0;
			std::vector<Status> seen;
			CHECK_FALSE(rt->attach(ops, cr, [&](std::span<const Status> st, void*) {
				++calls;
				seen.assign(st.begin(), st.end());
			}, nullptr, statuses));
			for(std::size_t k = 0; k < n; ++k) {
				CHECK(calls == 0);
				rt->endpoint(Rank{1}).isend(Rank{0}, Tag{perm[k]}, filled(perm[k] + 1));
				rt->progress_tick(); // hands the message over
				rt->progress_tick(); // receiver drains it
			}
			CHECK(calls == 1);
			REQUIRE(seen.size() == n);
			for(std::size_t i = 0; i < n; ++i) {
				CHECK(seen[i].tag == Tag{i});
				CHECK(seen[i].count == i + 1);
			}
			CHECK(rt->cr_test(cr));
		} while(std::next_permutation(perm.begin(), perm.end()));
	}
}

TEST_CASE("send and receive group where the receive completes first") {
	auto rt = Runtime::loopback(3);
	auto cr = rt->continue_init();
	auto send = rt->endpoint(Rank{0}).isend(Rank{1}, Tag{1}, filled(3));
	auto recv = rt->endpoint(Rank{2}).irecv(Rank{1}, Tag{2}, 8);
	std::array<Status, 2> st{};
	int calls = 0;
	CHECK_FALSE(rt->attach({send, recv}, cr, [&](auto, void*) { ++calls; }, nullptr, st));
	rt->endpoint(Rank{1}).isend(Rank{2}, Tag{2}, filled(5));
	rt->endpoint(Rank{1}).transport_poll();
	rt->endpoint(Rank{2}).transport_poll();
	CHECK(recv.status());
	CHECK(calls == 0);
	rt->endpoint(Rank{0}).transport_poll();
	CHECK(rt->cr_test(cr));
	CHECK(calls == 1);
	CHECK(st[0] == Status{Rank{0}, Tag{1}, 3, false, StatusError::ok});
	CHECK(st[1] == Status{Rank{1}, Tag{2}, 5, false, StatusError::ok});
}

TEST_CASE("completion found inside a test of another CR runs inline") {
	auto rt = Runtime::loopback(2);
	auto target = rt->continue_init();
	auto other = rt->continue_init();
	auto r = rt->endpoint(Rank{1}).irecv(Rank{0}, Tag{1}, 8);
	std::thread::id ran_on;
	rt->attach(r, target, [&](auto, void*) { ran_on = std::this_thread::get_id(); });
	rt->endpoint(Rank{0}).isend(Rank{1}, Tag{1}, filled(1));
	rt->endpoint(Rank{0}).transport_poll();
	CHECK(rt->cr_test(other));
	CHECK(ran_on == std::this_thread::get_id());
	CHECK(target.counters().executed_inline == 1);
}

TEST_CASE("progress agent defers application-context continuations") {
	auto rt = Runtime::loopback(2);
	auto app = rt->continue_init();
	auto any = rt->continue_init(info_config_new({{"thread", "any"}}));
	auto r1 = rt->endpoint(Rank{1}).irecv(Rank{0}, Tag{1}, 8);
	auto r2 = rt->endpoint(Rank{1}).irecv(Rank{0}, Tag{2}, 8);
	std::atomic<int> app_calls{0}, any_calls{0};
	std::thread::id app_thread;
	rt->attach(r1, app, [&](auto, void*) { app_thread = std::this_thread::get_id(); ++app_calls; });
	rt->attach(r2, any, [&](auto, void*) { ++any_calls; });
	rt->start_progress_agent();
	rt->endpoint(Rank{0}).isend(Rank{1}, Tag{1}, filled(1));
	rt->endpoint(Rank{0}).isend(Rank{1}, Tag{2}, filled(1));
	while(any_calls.load() == 0 || app.ready_count() == 0) std::this_thread::yield();
	CHECK(app_calls.load() == 0);
	rt->stop_progress_agent();
	// Any library entry by an application agent runs it.
	rt->endpoint(Rank{0}).irecv(any_source, Tag{99}, 0);
	CHECK(app_calls.load() == 1);
	CHECK(app_thread == std::this_thread::get_id());
	CHECK(rt->cr_test(app));
	CHECK(rt->cr_test(any));
}

TEST_CASE("continuations never nest") {
	auto rt = Runtime::loopback(2);
	auto cr = rt->continue_init();
	auto& ep0 = rt->endpoint(Rank{0});
	auto& ep1 = rt->endpoint(Rank{1});
	std::vector<OpHandle> recvs;
	for(std::uint64_t t = 0; t < 4; ++t) recvs.push_back(ep1.irecv(Rank{0}, Tag{t}, 1));
	std::size_t deepest = 0;
	int calls = 0;
	for(auto& r : recvs) {
		rt->attach(r, cr, [&](auto, void*) {
			++calls;
			deepest = std::max(deepest, Runtime::current_depth());
			rt->poll_all(); // may complete the next receive; must not run its continuation here
			deepest = std::max(deepest, Runtime::current_depth());
		});
	}
	for(std::uint64_t t = 0; t < 4; ++t) ep0.isend(Rank{1}, Tag{t}, filled(1));
	ep0.transport_poll();
	rt->cr_wait(cr);
	CHECK(calls == 4);
	CHECK(deepest == 1);
	CHECK(Runtime::max_observed_depth() <= 1);
}

TEST_CASE("max_poll bounds executions per test") {
	auto rt = Runtime::loopback(2);
	auto cr = rt->continue_init(info_config_new({{"max_poll", "2"}, {"enqueue_complete", "true"}}));
	int calls = 0;
	// Completed up front: isend/irecv are library entries and would drain the queue.
	std::vector<Done> done;
	for(int i = 0; i < 3; ++i) done.push_back(completed_pair(*rt, Tag{static_cast<std::uint64_t>(i)}));
	for(auto& ops : done) rt->attach(ops.recv, cr, [&](auto, void*) { ++calls; });
	CHECK(cr.ready_count() == 3);
	CHECK_FALSE(rt->cr_test(cr));
	CHECK(calls == 2);
	CHECK(rt->cr_test(cr));
	CHECK(calls == 3);
}

TEST_CASE("poll_only continuations only run inside a test of their CR") {
	auto rt = Runtime::loopback(2);
	auto cr = rt->continue_init(info_config_new({{"poll_only", "true"}}));
	auto other = rt->continue_init();
	bool inside = false;
	int calls = 0, violations = 0;
	for(std::uint64_t t = 0; t < 5; ++t) {
		auto r = rt->endpoint(Rank{1}).irecv(Rank{0}, Tag{t}, 1);
		rt->attach(r, cr, [&](auto, void*) {
			++calls;
			if(!inside) ++violations;
		});
		rt->endpoint(Rank{0}).isend(Rank{1}, Tag{t}, filled(1));
	}
	for(int i = 0; i < 5; ++i) rt->progress_tick();
	rt->cr_test(other);
	rt->endpoint(Rank{0}).isend(Rank{0}, Tag{1}, {});
	CHECK(calls == 0);
	CHECK(cr.ready_count() == 5);
	inside = true;
	CHECK(rt->cr_test(cr));
	inside = false;
	CHECK(calls == 5);
	CHECK(violations == 0);
}

TEST_CASE("free on an active CR defers release") {
	auto rt = Runtime::loopback(2);
	auto cr = rt->continue_init();
	std::vector<std::pair<CrState, CrState>> edges;
	cr.set_transition_observer([&](CrState a, CrState b, CrEvent) { edges.emplace_back(a, b); });
	auto r = rt->endpoint(Rank{1}).irecv(Rank{0}, Tag{1}, 1);
	int calls = 0;
	rt->attach(r, cr, [&](auto, void*) { ++calls; });
	rt->cr_free(cr);
	CHECK(cr.free_pending());
	CHECK(code_of([&] { rt->attach(rt->endpoint(Rank{1}).irecv(Rank{0}, Tag{2}, 1), cr, [](auto, void*) {}); }) == ErrorCode::freed_cr);
	CHECK(code_of([&] { rt->cr_test(cr); }) == ErrorCode::freed_cr);
	CHECK(code_of([&] { rt->cr_free(cr); }) == ErrorCode::double_free);
	rt->endpoint(Rank{0}).isend(Rank{1}, Tag{1}, filled(1));
	rt->progress_tick();
	CHECK(calls == 1);
	CHECK(cr.state() == CrState::freed);
	CHECK(edges.back() == std::pair{CrState::active_idle, CrState::freed});
}

TEST_CASE("freed poll_only CR is drained by general progress") {
	auto rt = Runtime::loopback(2);
	auto cr = rt->continue_init(info_config_new({{"poll_only", "true"}}));
	auto r = rt->endpoint(Rank{1}).irecv(Rank{0}, Tag{1}, 1);
	int calls = 0;
	rt->attach(r, cr, [&](auto, void*) { ++calls; });
	rt->endpoint(Rank{0}).isend(Rank{1}, Tag{1}, filled(1));
	rt->progress_tick();
	CHECK(cr.ready_count() == 1);
	rt->cr_free(cr);
	rt->progress_tick();
	CHECK(calls == 1);
	CHECK(cr.state() == CrState::freed);
}

TEST_CASE("chaining a CR on another CR") {
	auto rt = Runtime::loopback(2);
	auto first = rt->continue_init();
	auto second = rt->continue_init();
	auto r = rt->endpoint(Rank{1}).irecv(Rank{0}, Tag{1}, 1);
	std::vector<std::string> order;
	rt->attach(r, first, [&](auto, void*) { order.push_back("op"); });
	Status chain_status;
	CHECK_FALSE(rt->attach(first, second, [&](auto, void*) { order.push_back("chain"); }, nullptr, chain_status));
	CHECK(code_of([&] { rt->attach(second, second, [](auto, void*) {}); }) == ErrorCode::self_chain);
	rt->endpoint(Rank{0}).isend(Rank{1}, Tag{1}, filled(1));
	rt->progress_tick();
	CHECK(order == std::vector<std::string>{"op"});
	CHECK(first.state() == CrState::active_idle);
	CHECK(rt->cr_test(first));
	CHECK(order == std::vector<std::string>{"op", "chain"});
	CHECK(chain_status.source == any_source);
	CHECK(rt->cr_test(second));

	// A CR that is already COMPLETE counts as a completed operand.
	int calls = 0;
	CHECK(rt->attach(first, second, [&](auto, void*) { ++calls; }));
	CHECK(calls == 0);
}

TEST_CASE("attach misuse") {
	auto rt = Runtime::loopback(2);
	auto cr = rt->continue_init();
	auto r = rt->endpoint(Rank{1}).irecv(Rank{0}, Tag{1}, 1);
	rt->attach(r, cr, [](auto, void*) {});
	CHECK(code_of([&] { rt->attach(r, cr, [](auto, void*) {}); }) == ErrorCode::request_consumed);

	auto p = rt->endpoint(Rank{1}).recv_init(Rank{0}, Tag{2}, 1);
	CHECK(code_of([&] { rt->attach(p, cr, [](auto, void*) {}); }) == ErrorCode::not_active);
	rt->endpoint(Rank{1}).start(p);
	rt->attach(p, cr, [](auto, void*) {});
	CHECK(p.state() == OpState::active);
	CHECK(code_of([&] { rt->attach(p, cr, [](auto, void*) {}); }) == ErrorCode::already_attached);
	CHECK(code_of([&] { rt->attach(std::span<const RequestRef>{}, cr, [](auto, void*) {}); }) == ErrorCode::invalid_value);
	rt->endpoint(Rank{1}).cancel(p);
	rt->endpoint(Rank{0}).isend(Rank{1}, Tag{1}, filled(1));
	rt->cr_wait(cr);
}

TEST_CASE("cancelled persistent receive is reported to its continuation") {
	auto rt = Runtime::loopback(2);
	auto cr = rt->continue_init();
	auto p = rt->endpoint(Rank{1}).recv_init(any_source, Tag{5}, 16);
	rt->endpoint(Rank{1}).start(p);
	bool cancelled = false;
	int calls = 0;
	Status st;
	rt->attach(p, cr, [&](std::span<const Status> s, void*) {
		++calls;
		if(s[0].cancelled) {
			cancelled = true;
			return;
		}
		rt->endpoint(Rank{1}).start(p);
	}, nullptr, st);
	rt->endpoint(Rank{1}).cancel(p);
	rt->cr_wait(cr);
	CHECK(calls == 1);
	CHECK(cancelled);
	CHECK(st.count == 0);
}

TEST_CASE("cr_wait with a progress agent") {
	auto rt = Runtime::loopback(2);
	auto cr = rt->continue_init(info_config_new({{"thread", "any"}}));
	std::atomic<int> calls{0};
	for(std::uint64_t t = 0; t < 50; ++t) {
		rt->attach(rt->endpoint(Rank{1}).irecv(Rank{0}, Tag{t}, 1), cr, [&](auto, void*) { ++calls; });
	}
	rt->start_progress_agent();
	std::thread sender([&] {
		for(std::uint64_t t = 0; t < 50; ++t) rt->endpoint(Rank{0}).isend(Rank{1}, Tag{t}, filled(1));
	});
	rt->cr_wait(cr);
	sender.join();
	rt->stop_progress_agent();
	CHECK(calls.load() == 50);
}

TEST_CASE("concurrent testers are rejected") {
	auto rt = Runtime::loopback(2);
	auto cr = rt->continue_init();
	auto r = rt->endpoint(Rank{1}).irecv(Rank{0}, Tag{1}, 1);
	ErrorCode seen = ErrorCode::config_error;
	rt->attach(r, cr, [&](auto, void*) {
		std::thread t([&] {
			try {
				rt->cr_test(cr);
			} catch(const Error& e) { seen = e.code(); }
		});
		t.join();
	});
	rt->endpoint(Rank{0}).isend(Rank{1}, Tag{1}, filled(1));
	rt->cr_wait(cr);
	CHECK(seen == ErrorCode::concurrent_test);
}
