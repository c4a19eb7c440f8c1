#include "contmsg/transport.hpp"

#include <algorithm>
#include <cstring>
#include <deque>

namespace contmsg {

namespace {

std::atomic<std::uint64_t> next_op_id{1};

bool matches(const detail::OpRecord& recv, Rank source, Tag tag) {
	return (recv.peer == any_source || recv.peer == source) && (recv.tag == any_tag || recv.tag == tag);
}

} // namespace

// OpHandle

OpState OpHandle::state() const {
	if(m_rec->consumed.load(std::memory_order_acquire)) return OpState::consumed;
	return m_rec->state.load(std::memory_order_acquire);
}

std::optional<Status> OpHandle::status() const {
	if(!m_rec->done.load(std::memory_order_acquire)) return std::nullopt;
	return m_rec->status;
}

std::span<const std::byte> OpHandle::data() const {
	if(!is_receive(m_rec->kind) || !m_rec->done.load(std::memory_order_acquire)) return {};
	return std::span<const std::byte>(m_rec->payload).first(static_cast<std::size_t>(m_rec->status.count));
}

std::optional<std::uint64_t> OpHandle::completion_tick() const {
	if(!m_rec->done.load(std::memory_order_acquire)) return std::nullopt;
	return m_rec->completion_tick;
}

// Loopback

struct LoopbackFabric::Inboxes {
	struct Box {
		std::mutex mutex;
		std::deque<InboundMessage> messages;
	};
	std::vector<Box> boxes;
	explicit Inboxes(std::size_t n) : boxes(n) {}
};

namespace {

class LoopbackSubstrate final : public Substrate {
  public:
	template <typename Inboxes>
	LoopbackSubstrate(Rank rank, std::shared_ptr<Inboxes> inboxes)
	    : m_rank(rank), m_keepalive(inboxes), m_own(&inboxes->boxes[rank.value]), m_push([inboxes](Rank dest, InboundMessage msg) {
		      auto& box = inboxes->boxes[dest.value];
		      std::lock_guard lock(box.mutex);
		      box.messages.push_back(std::move(msg));
	      }) {}

	void send(std::uint64_t send_id, Rank dest, Tag tag, std::span<const std::byte> payload) override {
		m_push(dest, InboundMessage{m_rank, tag, std::vector<std::byte>(payload.begin(), payload.end())});
		m_handed.push_back(send_id);
	}

	void progress(std::vector<std::uint64_t>& handed, std::vector<InboundMessage>& arrived) override {
		handed.insert(handed.end(), m_handed.begin(), m_handed.end());
		m_handed.clear();
		std::lock_guard lock(m_own->mutex);
		while(!m_own->messages.empty()) {
			arrived.push_back(std::move(m_own->messages.front()));
			m_own->messages.pop_front();
		}
	}

  private:
	Rank m_rank;
	std::shared_ptr<void> m_keepalive;
	LoopbackFabric::Inboxes::Box* m_own;
	std::function<void(Rank, InboundMessage)> m_push;
	std::vector<std::uint64_t> m_handed;
};

} // namespace

LoopbackFabric::LoopbackFabric(std::size_t world_size) : m_inboxes(std::make_shared<Inboxes>(world_size)) {}

std::size_t LoopbackFabric::world_size() const { return m_inboxes->boxes.size(); }

std::unique_ptr<Substrate> LoopbackFabric::make_substrate(Rank rank) {
	if(rank.value >= world_size()) throw Error(ErrorCode::invalid_rank, "loopback rank out of range");
	return std::make_unique<LoopbackSubstrate>(rank, m_inboxes);
}

// Endpoint

Endpoint::Endpoint(Rank rank, std::size_t world_size, std::unique_ptr<Substrate> substrate)
    : m_rank(rank), m_world_size(world_size), m_substrate(std::move(substrate)) {
	if(rank.value >= world_size) throw Error(ErrorCode::invalid_rank, "endpoint rank out of range");
}

Endpoint::~Endpoint() = default;

void Endpoint::check_dest(Rank dest, Tag tag) const {
	if(dest == any_source || dest.value >= m_world_size) throw Error(ErrorCode::invalid_rank, "destination " + std::to_string(dest.value));
	if(tag == any_tag) throw Error(ErrorCode::invalid_tag, "ANY_TAG is not a valid send tag");
}

void Endpoint::check_source(Rank source) const {
	if(source != any_source && source.value >= m_world_size) throw Error(ErrorCode::invalid_rank, "source " + std::to_string(source.value));
}

Endpoint::RecordPtr Endpoint::make_record(OpKind kind, Rank peer, Tag tag) {
	auto rec = std::make_shared<detail::OpRecord>();
	rec->id = next_op_id.fetch_add(1, std::memory_order_relaxed);
	rec->kind = kind;
	rec->endpoint = this;
	rec->peer = peer;
	rec->tag = tag;
	return rec;
}

void Endpoint::enter() {
	if(m_entry_hook) m_entry_hook();
}

OpHandle Endpoint::isend(Rank dest, Tag tag, std::span<const std::byte> payload) {
	check_dest(dest, tag);
	enter();
	auto rec = make_record(OpKind::send, dest, tag);
	rec->payload.assign(payload.begin(), payload.end());
	{
		std::lock_guard lock(m_match_mutex);
		m_out_queue.push_back(rec);
	}
	return OpHandle(std::move(rec));
}

OpHandle Endpoint::irecv(Rank source, Tag tag, std::size_t capacity) {
	check_source(source);
	enter();
	auto rec = make_record(OpKind::recv, source, tag);
	rec->payload.resize(capacity);
	std::vector<RecordPtr> completed;
	{
		std::lock_guard lock(m_match_mutex);
		activate_locked(rec, completed);
	}
	finish(completed);
	return OpHandle(std::move(rec));
}

OpHandle Endpoint::send_init(Rank dest, Tag tag, std::span<const std::byte> payload) {
	check_dest(dest, tag);
	auto rec = make_record(OpKind::persistent_send, dest, tag);
	rec->payload.assign(payload.begin(), payload.end());
	rec->state.store(OpState::inactive);
	return OpHandle(std::move(rec));
}

OpHandle Endpoint::recv_init(Rank source, Tag tag, std::size_t capacity) {
	check_source(source);
	auto rec = make_record(OpKind::persistent_recv, source, tag);
	rec->payload.resize(capacity);
	rec->state.store(OpState::inactive);
	return OpHandle(std::move(rec));
}

void Endpoint::activate_locked(const RecordPtr& rec, std::vector<RecordPtr>& completed) {
	rec->state.store(OpState::active, std::memory_order_release);
	if(!is_receive(rec->kind)) {
		m_out_queue.push_back(rec);
		return;
	}
	// Unexpected messages first, in arrival order.
	auto it = std::find_if(m_unexpected.begin(), m_unexpected.end(), [&](const InboundMessage& m) { return matches(*rec, m.source, m.tag); });
	if(it != m_unexpected.end()) {
		deliver(*rec, *it);
		m_unexpected.erase(it);
		mark_done(*rec, rec->status);
		completed.push_back(rec);
		return;
	}
	m_posted.push_back(rec);
}

void Endpoint::start(const OpHandle& op) {
	auto& rec = op.record();
	if(rec.endpoint != this) throw Error(ErrorCode::not_active, "operation belongs to another endpoint");
	if(!op.persistent()) throw Error(ErrorCode::not_persistent, "start on a non-persistent operation");
	std::vector<RecordPtr> completed;
	{
		std::lock_guard lock(m_match_mutex);
		if(rec.state.load() == OpState::active) throw Error(ErrorCode::second_start, "operation " + std::to_string(rec.id) + " is already active");
		rec.done.store(false, std::memory_order_release);
		rec.status = Status{};
		rec.attached.store(nullptr, std::memory_order_release);
		activate_locked(op.shared(), completed);
	}
	finish(completed);
}

void Endpoint::cancel(const OpHandle& op) {
	auto& rec = op.record();
	if(!is_receive(rec.kind)) throw Error(ErrorCode::cannot_cancel_send, "only receives can be cancelled");
	if(rec.consumed.load(std::memory_order_acquire)) throw Error(ErrorCode::request_consumed, "cancel on a consumed handle");
	std::vector<RecordPtr> completed;
	{
		std::lock_guard lock(m_match_mutex);
		auto it = std::find(m_posted.begin(), m_posted.end(), op.shared());
		if(it == m_posted.end()) return; // matched, complete or inactive: no-op
		m_posted.erase(it);
		Status st;
		st.source = rec.peer;
		st.tag = rec.tag;
		st.cancelled = true;
		mark_done(rec, st);
		completed.push_back(op.shared());
	}
	finish(completed);
}

void Endpoint::deliver(detail::OpRecord& rec, InboundMessage& msg) {
	const std::size_t n = std::min(msg.payload.size(), rec.payload.size());
	if(n > 0) std::memcpy(rec.payload.data(), msg.payload.data(), n);
	rec.status.source = msg.source;
	rec.status.tag = msg.tag;
	rec.status.count = n;
	rec.status.cancelled = false;
	rec.status.error = msg.payload.size() > rec.payload.size() ? StatusError::truncated : StatusError::ok;
}

void Endpoint::mark_done(detail::OpRecord& rec, const Status& st) {
	rec.status = st;
	rec.completion_tick = m_polls.load(std::memory_order_relaxed);
	rec.state.store(st.cancelled ? OpState::cancelled : OpState::complete, std::memory_order_release);
	rec.done.store(true, std::memory_order_release);
}

void Endpoint::finish(const std::vector<RecordPtr>& completed) {
	for(const auto& rec : completed) {
		void* prev = rec->attached.exchange(detail::completed_slot, std::memory_order_acq_rel);
		if(prev != nullptr && prev != detail::completed_slot && m_completion_hook) {
			m_completion_hook(static_cast<detail::ContinuationNode*>(prev), *rec);
		}
	}
}

std::vector<std::uint64_t> Endpoint::transport_poll() {
	std::unique_lock poll_lock(m_poll_mutex, std::try_to_lock);
	if(!poll_lock.owns_lock()) return {};

	std::vector<RecordPtr> to_send;
	{
		std::lock_guard lock(m_match_mutex);
		m_polls.fetch_add(1, std::memory_order_acq_rel);
		to_send.swap(m_out_queue);
		for(const auto& rec : to_send) m_in_flight.emplace(rec->id, rec);
	}
	for(const auto& rec : to_send) m_substrate->send(rec->id, rec->peer, rec->tag, rec->payload);

	std::vector<std::uint64_t> handed;
	std::vector<InboundMessage> arrived;
	m_substrate->progress(handed, arrived);

	std::vector<RecordPtr> completed;
	{
		std::lock_guard lock(m_match_mutex);
		for(auto id : handed) {
			auto it = m_in_flight.find(id);
			if(it == m_in_flight.end()) continue;
			auto rec = std::move(it->second);
			m_in_flight.erase(it);
			Status st;
			st.source = m_rank;
			st.tag = rec->tag;
			st.count = rec->payload.size();
			mark_done(*rec, st);
			completed.push_back(rec);
		}
		for(auto& msg : arrived) {
			auto it = std::find_if(m_posted.begin(), m_posted.end(), [&](const RecordPtr& r) { return matches(*r, msg.source, msg.tag); });
			if(it == m_posted.end()) {
				m_unexpected.push_back(std::move(msg));
				continue;
			}
			auto rec = *it;
			m_posted.erase(it);
			deliver(*rec, msg);
			mark_done(*rec, rec->status);
			completed.push_back(rec);
		}
	}
	poll_lock.unlock();

	finish(completed);
	std::vector<std::uint64_t> ids;
	ids.reserve(completed.size());
	for(const auto& rec : completed) ids.push_back(rec->id);
	return ids;
}

std::optional<Status> Endpoint::reap(const OpHandle& op) {
	auto& rec = op.record();
	std::lock_guard lock(m_match_mutex);
	if(rec.consumed.load(std::memory_order_acquire)) throw Error(ErrorCode::request_consumed, "operation " + std::to_string(rec.id));
	if(!rec.done.load(std::memory_order_acquire)) return std::nullopt;
	if(op.persistent()) {
		rec.state.store(OpState::inactive, std::memory_order_release);
	} else {
		rec.consumed.store(true, std::memory_order_release);
	}
	return rec.status;
}

std::size_t Endpoint::unexpected_count() const {
	std::lock_guard lock(m_match_mutex);
	return m_unexpected.size();
}

std::size_t Endpoint::posted_count() const {
	std::lock_guard lock(m_match_mutex);
	return m_posted.size();
}

} // namespace contmsg
