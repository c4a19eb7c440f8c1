#pragma once

// Uniform "call me when these ops are done" front end over the continuation
// engine and both baselines, so each scenario is written once per variant.

#include "contmsg/scenarios.hpp"

#include <deque>

namespace contmsg::scenarios {

class Notifier {
  public:
	using Callback = std::function<void(std::span<const Status>)>;
	virtual ~Notifier() = default;

	/// `cb` runs once every op in `ops` has completed.
	virtual void watch(std::vector<OpHandle> ops, Callback cb) = 0;

	/// One driver step: progress plus completion detection. Returns callbacks run.
	virtual std::size_t tick() = 0;

	/// Final cleanup once nothing is watched any more.
	virtual void close() {}
};

std::unique_ptr<Notifier> make_notifier(Runtime& rt, const ScenarioConfig& cfg);

class ContinuationNotifier final : public Notifier {
  public:
	ContinuationNotifier(Runtime& rt, const InfoConfig& config);
	void watch(std::vector<OpHandle> ops, Callback cb) override;
	std::size_t tick() override;
	void close() override;
	const ContinuationRequest& cr() const { return m_cr; }

  private:
	struct Pending {
		std::shared_ptr<std::vector<Status>> statuses;
		Callback cb;
	};
	void run_immediate();

	Runtime& m_rt;
	ContinuationRequest m_cr;
	std::size_t m_calls = 0;
	std::deque<Pending> m_immediate;
	bool m_running_immediate = false;
};

class ActiveSetNotifier final : public Notifier {
  public:
	ActiveSetNotifier(Runtime& rt, ActiveSetConfig config) : m_mgr(rt, config) {}
	void watch(std::vector<OpHandle> ops, Callback cb) override;
	std::size_t tick() override;
	const ActiveSetManager& manager() const { return m_mgr; }

  private:
	ActiveSetManager m_mgr;
	std::size_t m_calls = 0;
};

class GroupNotifier final : public Notifier {
  public:
	GroupNotifier(Runtime& rt, std::size_t max_n) : m_mgr(rt), m_max_n(max_n) {}
	void watch(std::vector<OpHandle> ops, Callback cb) override;
	std::size_t tick() override { return m_mgr.poll(m_max_n); }

  private:
	RequestGroupManager m_mgr;
	std::size_t m_max_n;
};

// Little-endian scalar packing for scenario payloads.
void put_u64(std::vector<std::byte>& out, std::uint64_t v);
std::uint64_t get_u64(std::span<const std::byte> in, std::size_t index);

} // namespace contmsg::scenarios
