#include "contmsg/progress.hpp"

#include <algorithm>
#include <deque>
#include <mutex>

namespace contmsg {

std::string_view to_string(CrState s) {
	switch(s) {
	case CrState::inactive: return "INACTIVE";
	case CrState::active_referenced: return "ACTIVE_REFERENCED";
	case CrState::active_idle: return "ACTIVE_IDLE";
	case CrState::complete: return "COMPLETE";
	case CrState::freed: return "FREED";
	}
	return "?";
}

std::string_view to_string(CrEvent e) {
	switch(e) {
	case CrEvent::registration: return "register";
	case CrEvent::deregistration: return "deregister";
	case CrEvent::completion_call: return "completion_call";
	case CrEvent::free: return "free";
	case CrEvent::release: return "release";
	}
	return "?";
}

namespace detail {

struct ContinuationNode {
	ContinuationFn callback;
	void* context = nullptr;
	std::span<Status> statuses;
	std::atomic<std::int64_t> remaining{0};
	std::shared_ptr<CrShared> owner;
};

using NodePtr = std::unique_ptr<ContinuationNode>;
using ChainList = std::vector<std::pair<ContinuationNode*, std::size_t>>;

struct CrShared {
	std::uint64_t id = 0;
	InfoConfig config;
	std::shared_ptr<std::atomic<std::int64_t>> general_ready;

	std::mutex mutex;
	CrState state = CrState::inactive;
	std::uint64_t registered = 0;
	std::deque<NodePtr> ready;
	ChainList chained;
	CrCounters counters;
	TransitionObserver observer;

	std::atomic<bool> freed_by_user{false};
	std::atomic<bool> testing{false};

	// Lock held.
	void transition(CrState to, CrEvent ev) {
		const auto from = state;
		state = to;
		if(observer) observer(from, to, ev);
	}

	bool generally_drainable() const { return !config.poll_only || freed_by_user.load(std::memory_order_acquire); }
};

} // namespace detail

namespace {

using detail::ChainList;
using detail::ContinuationNode;
using detail::CrShared;
using detail::NodePtr;

struct TestScope {
	CrShared* cr = nullptr;
	std::int64_t budget = -1; // -1: unlimited
};

struct AgentState {
	std::size_t depth = 0;
	int library = 0;
	bool progress_agent = false;
	TestScope* test = nullptr;
	std::size_t executed = 0;
};

thread_local AgentState agent;
std::atomic<std::size_t> max_depth{0};
std::atomic<std::uint64_t> next_cr_id{1};

// Status written for a CR used as an attach operand.
constexpr Status cr_operand_status{any_source, any_tag, 0, false, StatusError::ok};

struct LibraryScope {
	LibraryScope() { ++agent.library; }
	~LibraryScope() { --agent.library; }
	LibraryScope(const LibraryScope&) = delete;
	LibraryScope& operator=(const LibraryScope&) = delete;
};

struct TestScopeGuard {
	TestScope scope;
	TestScope* saved;
	TestScopeGuard(CrShared& cr) : scope{&cr, cr.config.max_poll}, saved(agent.test) { agent.test = &scope; }
	~TestScopeGuard() { agent.test = saved; }
	TestScopeGuard(const TestScopeGuard&) = delete;
	TestScopeGuard& operator=(const TestScopeGuard&) = delete;
};

struct TestingGuard {
	CrShared& cr;
	explicit TestingGuard(CrShared& c) : cr(c) {
		if(cr.testing.exchange(true, std::memory_order_acq_rel)) throw Error(ErrorCode::concurrent_test, "CR " + std::to_string(cr.id) + " is being tested by another agent");
	}
	~TestingGuard() { cr.testing.store(false, std::memory_order_release); }
	TestingGuard(const TestingGuard&) = delete;
	TestingGuard& operator=(const TestingGuard&) = delete;
};

void dispatch(NodePtr node);

void fire_chain(ChainList chained) {
	for(auto [node, index] : chained) {
		if(!node->statuses.empty()) node->statuses[index] = cr_operand_status;
		if(node->remaining.fetch_sub(1, std::memory_order_acq_rel) == 1) dispatch(NodePtr(node));
	}
}

// Lock held. Releases a freed CR once nothing is left to execute.
ChainList maybe_release(CrShared& cr) {
	if(!cr.freed_by_user.load(std::memory_order_acquire) || cr.registered != 0 || cr.state == CrState::freed) return {};
	cr.transition(CrState::freed, CrEvent::release);
	ChainList chained;
	chained.swap(cr.chained);
	return chained;
}

void enqueue(NodePtr node) {
	auto& cr = *node->owner;
	std::lock_guard lock(cr.mutex);
	if(cr.generally_drainable()) cr.general_ready->fetch_add(1, std::memory_order_acq_rel);
	cr.ready.push_back(std::move(node));
	++cr.counters.enqueued;
}

NodePtr pop_ready(CrShared& cr) {
	std::lock_guard lock(cr.mutex);
	if(cr.ready.empty()) return nullptr;
	auto node = std::move(cr.ready.front());
	cr.ready.pop_front();
	if(cr.generally_drainable()) cr.general_ready->fetch_sub(1, std::memory_order_acq_rel);
	return node;
}

void execute(NodePtr node, bool inline_exec) {
	auto owner = node->owner;
	++agent.depth;
	++agent.executed;
	for(auto seen = max_depth.load(std::memory_order_relaxed); agent.depth > seen;) {
		if(max_depth.compare_exchange_weak(seen, agent.depth)) break;
	}
	struct Finish {
		std::shared_ptr<CrShared>& owner;
		bool inline_exec;
		~Finish() {
			--agent.depth;
			ChainList chained;
			{
				std::lock_guard lock(owner->mutex);
				--owner->registered;
				--owner->counters.registered;
				if(inline_exec) {
					++owner->counters.executed_inline;
				} else {
					++owner->counters.executed_deferred;
				}
				owner->transition(owner->registered == 0 ? CrState::active_idle : CrState::active_referenced, CrEvent::deregistration);
				chained = maybe_release(*owner);
			}
			fire_chain(std::move(chained));
		}
	} finish{owner, inline_exec};
	node->callback(std::span<const Status>(node->statuses), node->context);
}

bool can_run_inline(CrShared& cr) {
	if(agent.depth > 0 || agent.library == 0) return false;
	if(agent.progress_agent && cr.config.exec_context == ExecContext::application) return false;
	const bool testing_this = agent.test != nullptr && agent.test->cr == &cr;
	if(cr.config.poll_only && !testing_this && !cr.freed_by_user.load(std::memory_order_acquire)) return false;
	if(testing_this && agent.test->budget >= 0) {
		if(agent.test->budget == 0) return false;
		--agent.test->budget;
	}
	return true;
}

void dispatch(NodePtr node) {
	if(can_run_inline(*node->owner)) {
		execute(std::move(node), true);
	} else {
		enqueue(std::move(node));
	}
}

void on_complete(ContinuationNode* node, detail::OpRecord& rec) {
	if(!node->statuses.empty()) node->statuses[rec.attached_index] = rec.status;
	if(node->remaining.fetch_sub(1, std::memory_order_acq_rel) == 1) dispatch(NodePtr(node));
}

} // namespace

// ContinuationRequest

std::uint64_t ContinuationRequest::id() const { return m_cr->id; }

CrState ContinuationRequest::state() const {
	std::lock_guard lock(m_cr->mutex);
	return m_cr->state;
}

const InfoConfig& ContinuationRequest::config() const { return m_cr->config; }

CrCounters ContinuationRequest::counters() const {
	std::lock_guard lock(m_cr->mutex);
	return m_cr->counters;
}

std::size_t ContinuationRequest::ready_count() const {
	std::lock_guard lock(m_cr->mutex);
	return m_cr->ready.size();
}

bool ContinuationRequest::free_pending() const {
	std::lock_guard lock(m_cr->mutex);
	return m_cr->freed_by_user.load() && m_cr->state != CrState::freed;
}

void ContinuationRequest::set_transition_observer(TransitionObserver observer) const {
	std::lock_guard lock(m_cr->mutex);
	m_cr->observer = std::move(observer);
}

// Runtime

std::unique_ptr<Runtime> Runtime::loopback(std::size_t world_size) {
	if(world_size == 0) throw Error(ErrorCode::config_error, "world size must be positive");
	LoopbackFabric fabric(world_size);
	std::vector<std::unique_ptr<Endpoint>> eps;
	for(std::uint32_t r = 0; r < world_size; ++r) eps.push_back(std::make_unique<Endpoint>(Rank{r}, world_size, fabric.make_substrate(Rank{r})));
	return std::make_unique<Runtime>(world_size, std::move(eps));
}

std::unique_ptr<Runtime> Runtime::tcp(const std::vector<wire::RosterEntry>& roster, std::vector<Rank> local, std::chrono::milliseconds timeout) {
	auto substrates = make_tcp_substrates(roster, local, timeout);
	std::vector<std::unique_ptr<Endpoint>> eps(roster.size());
	for(std::size_t i = 0; i < local.size(); ++i) eps[local[i].value] = std::make_unique<Endpoint>(local[i], roster.size(), std::move(substrates[i]));
	return std::make_unique<Runtime>(roster.size(), std::move(eps));
}

Runtime::Runtime(std::size_t world_size, std::vector<std::unique_ptr<Endpoint>> endpoints)
    : m_world_size(world_size), m_endpoints(std::move(endpoints)), m_general_ready(std::make_shared<std::atomic<std::int64_t>>(0)) {
	m_endpoints.resize(world_size);
	for(auto& ep : m_endpoints) {
		if(!ep) continue;
		ep->set_completion_hook(&on_complete);
		ep->set_entry_hook([this] { on_library_entry(); });
	}
}

Runtime::~Runtime() { stop_progress_agent(); }

Endpoint& Runtime::endpoint(Rank rank) {
	if(rank.value >= m_world_size || !m_endpoints[rank.value]) throw Error(ErrorCode::invalid_rank, "rank " + std::to_string(rank.value) + " is not hosted here");
	return *m_endpoints[rank.value];
}

std::vector<Rank> Runtime::local_ranks() const {
	std::vector<Rank> out;
	for(const auto& ep : m_endpoints) {
		if(ep) out.push_back(ep->rank());
	}
	return out;
}

ContinuationRequest Runtime::continue_init(const InfoConfig& config) {
	config.validate();
	auto cr = std::make_shared<CrShared>();
	cr->id = next_cr_id.fetch_add(1, std::memory_order_relaxed);
	cr->config = config;
	cr->general_ready = m_general_ready;
	std::lock_guard lock(m_registry_mutex);
	std::erase_if(m_registry, [](const auto& w) { return w.expired(); });
	m_registry.push_back(cr);
	return ContinuationRequest(std::move(cr));
}

bool Runtime::attach(std::initializer_list<RequestRef> ops, const ContinuationRequest& cr, ContinuationFn callback, void* context,
    std::span<Status> statuses) {
	return attach(std::span<const RequestRef>(ops.begin(), ops.size()), cr, std::move(callback), context, statuses);
}

bool Runtime::attach(const RequestRef& op, const ContinuationRequest& cr, ContinuationFn callback, void* context) {
	return attach(std::span<const RequestRef>(&op, 1), cr, std::move(callback), context);
}

bool Runtime::attach(const RequestRef& op, const ContinuationRequest& cr, ContinuationFn callback, void* context, Status& status) {
	return attach(std::span<const RequestRef>(&op, 1), cr, std::move(callback), context, std::span<Status>(&status, 1));
}

bool Runtime::attach(std::span<const RequestRef> ops, const ContinuationRequest& handle, ContinuationFn callback, void* context,
    std::span<Status> statuses) {
	if(!handle.valid()) throw Error(ErrorCode::invalid_value, "invalid continuation request");
	if(ops.empty()) throw Error(ErrorCode::invalid_value, "attach needs at least one operand");
	if(!statuses.empty() && statuses.size() != ops.size()) throw Error(ErrorCode::invalid_value, "one status slot per operand required");
	auto& cr = *handle.m_cr;
	if(cr.freed_by_user.load(std::memory_order_acquire)) throw Error(ErrorCode::freed_cr, "attach to freed CR " + std::to_string(cr.id));

	for(const auto& ref : ops) {
		if(ref.is_op()) {
			const auto& op = ref.op();
			if(!op.valid()) throw Error(ErrorCode::invalid_value, "invalid operation handle");
			auto& rec = op.record();
			if(rec.consumed.load(std::memory_order_acquire)) throw Error(ErrorCode::request_consumed, "operation " + std::to_string(rec.id));
			if(rec.state.load(std::memory_order_acquire) == OpState::inactive) throw Error(ErrorCode::not_active, "operation " + std::to_string(rec.id) + " is inactive");
			void* slot = rec.attached.load(std::memory_order_acquire);
			if(slot != nullptr && slot != detail::completed_slot) throw Error(ErrorCode::already_attached, "operation " + std::to_string(rec.id));
		} else {
			const auto& other = ref.cr();
			if(!other.valid()) throw Error(ErrorCode::invalid_value, "invalid continuation request operand");
			if(other.m_cr == handle.m_cr) throw Error(ErrorCode::self_chain, "CR " + std::to_string(cr.id) + " cannot wait on itself");
			if(other.m_cr->freed_by_user.load(std::memory_order_acquire)) throw Error(ErrorCode::freed_cr, "operand CR " + std::to_string(other.id()));
		}
	}

	auto* node = new ContinuationNode;
	node->callback = std::move(callback);
	node->context = context;
	node->statuses = statuses;
	node->owner = handle.m_cr;
	// One extra count keeps the node alive until registration is decided below.
	node->remaining.store(static_cast<std::int64_t>(ops.size()) + 1, std::memory_order_release);

	for(std::size_t i = 0; i < ops.size(); ++i) {
		const auto& ref = ops[i];
		if(ref.is_op()) {
			auto& rec = ref.op().record();
			rec.attached_index = i;
			void* expected = nullptr;
			if(!rec.attached.compare_exchange_strong(expected, node, std::memory_order_acq_rel)) {
				if(expected != detail::completed_slot) throw Error(ErrorCode::already_attached, "operation " + std::to_string(rec.id));
				if(!statuses.empty()) statuses[i] = rec.status;
				node->remaining.fetch_sub(1, std::memory_order_acq_rel);
			}
			if(!ref.op().persistent()) rec.consumed.store(true, std::memory_order_release);
		} else {
			auto& other = *ref.cr().m_cr;
			std::lock_guard lock(other.mutex);
			if(other.state == CrState::complete || other.state == CrState::freed) {
				if(!statuses.empty()) statuses[i] = cr_operand_status;
				node->remaining.fetch_sub(1, std::memory_order_acq_rel);
			} else {
				other.chained.emplace_back(node, i);
			}
		}
	}

	{
		std::unique_lock lock(cr.mutex);
		const bool all_done = node->remaining.load(std::memory_order_acquire) == 1;
		if(all_done) ++cr.counters.immediate_completions;
		if(all_done && !cr.config.enqueue_complete) {
			lock.unlock();
			delete node;
			return true;
		}
		++cr.registered;
		++cr.counters.registered;
		cr.transition(CrState::active_referenced, CrEvent::registration);
	}
	if(node->remaining.fetch_sub(1, std::memory_order_acq_rel) == 1) enqueue(NodePtr(node));
	return false;
}

void Runtime::on_library_entry() {
	if(agent.depth > 0 || m_general_ready->load(std::memory_order_acquire) <= 0) return;
	LibraryScope scope;
	drain_general();
}

std::vector<std::shared_ptr<CrShared>> Runtime::snapshot() {
	std::vector<std::shared_ptr<CrShared>> out;
	std::lock_guard lock(m_registry_mutex);
	out.reserve(m_registry.size());
	std::erase_if(m_registry, [&](const std::weak_ptr<CrShared>& w) {
		auto cr = w.lock();
		if(!cr) return true;
		out.push_back(std::move(cr));
		return false;
	});
	return out;
}

std::size_t Runtime::drain(CrShared& cr, std::int64_t limit) {
	std::size_t count = 0;
	while(limit < 0 || static_cast<std::int64_t>(count) < limit) {
		if(agent.progress_agent && cr.config.exec_context == ExecContext::application) break;
		auto node = pop_ready(cr);
		if(!node) break;
		execute(std::move(node), false);
		++count;
	}
	return count;
}

void Runtime::drain_general() {
	if(agent.depth > 0) return;
	for(const auto& cr : snapshot()) {
		if(!cr->generally_drainable()) continue;
		drain(*cr, cr->config.max_poll > 0 ? cr->config.max_poll : -1);
	}
}

void Runtime::poll_all() {
	LibraryScope scope;
	for(auto& ep : m_endpoints) {
		if(ep) ep->transport_poll();
	}
}

std::size_t Runtime::progress_tick() {
	LibraryScope scope;
	const auto before = agent.executed;
	poll_all();
	if(m_general_ready->load(std::memory_order_acquire) > 0) drain_general();
	return agent.executed - before;
}

bool Runtime::completion_call(CrShared& cr) {
	if(agent.depth == 0) {
		auto& budget = agent.test->budget;
		const auto ran = drain(cr, budget);
		if(budget > 0) budget -= static_cast<std::int64_t>(ran);
	}
	bool flag = false;
	ChainList chained;
	{
		std::lock_guard lock(cr.mutex);
		if(cr.registered == 0) {
			flag = true;
			cr.transition(CrState::complete, CrEvent::completion_call);
			chained.swap(cr.chained);
		} else {
			cr.transition(cr.state, CrEvent::completion_call);
		}
	}
	fire_chain(std::move(chained));
	return flag;
}

bool Runtime::cr_test(const ContinuationRequest& handle) {
	auto& cr = *handle.m_cr;
	if(cr.freed_by_user.load(std::memory_order_acquire)) throw Error(ErrorCode::freed_cr, "test on freed CR " + std::to_string(cr.id));
	TestingGuard testing(cr);
	LibraryScope scope;
	TestScopeGuard test_scope(cr);
	poll_all();
	return completion_call(cr);
}

void Runtime::cr_wait(const ContinuationRequest& handle) {
	auto& cr = *handle.m_cr;
	if(cr.freed_by_user.load(std::memory_order_acquire)) throw Error(ErrorCode::freed_cr, "wait on freed CR " + std::to_string(cr.id));
	TestingGuard testing(cr);
	LibraryScope scope;
	unsigned idle_rounds = 0;
	while(true) {
		TestScopeGuard test_scope(cr);
		const auto before = agent.executed;
		poll_all();
		if(completion_call(cr)) return;
		if(agent.executed != before) {
			idle_rounds = 0;
		} else if(++idle_rounds < 64) {
			std::this_thread::yield();
		} else {
			const auto shift = std::min(idle_rounds - 64, 10u);
			std::this_thread::sleep_for(std::chrono::microseconds(1u << shift));
		}
	}
}

void Runtime::cr_free(const ContinuationRequest& handle) {
	auto& cr = *handle.m_cr;
	ChainList chained;
	{
		std::lock_guard lock(cr.mutex);
		if(cr.freed_by_user.exchange(true, std::memory_order_acq_rel)) throw Error(ErrorCode::double_free, "CR " + std::to_string(cr.id));
		if(cr.config.poll_only) cr.general_ready->fetch_add(static_cast<std::int64_t>(cr.ready.size()), std::memory_order_acq_rel);
		cr.transition(cr.state, CrEvent::free);
		chained = maybe_release(cr);
	}
	fire_chain(std::move(chained));
}

std::optional<Status> Runtime::test(const OpHandle& op) {
	poll_all();
	return op.endpoint().reap(op);
}

Status Runtime::wait(const OpHandle& op) {
	unsigned rounds = 0;
	while(true) {
		if(auto st = test(op)) return *st;
		if(++rounds > 64) std::this_thread::sleep_for(std::chrono::microseconds(20));
	}
}

void Runtime::start_progress_agent(std::chrono::microseconds idle_backoff) {
	if(m_agent.joinable()) return;
	m_agent_stop.store(false);
	m_agent = std::thread([this, idle_backoff] {
		mark_progress_agent(true);
		while(!m_agent_stop.load(std::memory_order_acquire)) {
			if(progress_tick() == 0) std::this_thread::sleep_for(idle_backoff);
		}
	});
}

void Runtime::stop_progress_agent() {
	if(!m_agent.joinable()) return;
	m_agent_stop.store(true, std::memory_order_release);
	m_agent.join();
}

std::size_t Runtime::current_depth() { return agent.depth; }
std::size_t Runtime::max_observed_depth() { return max_depth.load(); }
void Runtime::mark_progress_agent(bool on) { agent.progress_agent = on; }

} // namespace contmsg
