#pragma once

// Desk-scale experiments comparing the continuation engine with the polling
// baselines. Every scenario is a single-driver, tick-stepped program: on the
// loopback transport a seed fully determines its output.

#include "contmsg/baseline.hpp"
#include "contmsg/progress.hpp"

#include <iosfwd>
#include <map>
#include <memory>
#include <string>

namespace contmsg::scenarios {

enum class Variant { continuations, activeset, groups };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view s);

struct ScenarioConfig {
	std::string scenario = "pingpong";
	std::size_t world = 2;
	std::string transport = "loopback"; // or "tcp" (all roster ranks hosted in-process)
	std::string roster;                 // roster file, tcp only
	std::uint64_t seed = 1;
	std::size_t iterations = 100;
	Variant variant = Variant::continuations;

	// Baselines.
	std::size_t K = 32;
	std::size_t max_concurrent_out = 4;
	std::size_t group_poll = 32; // ops handed to testsome per group poll

	// Continuation request.
	std::int64_t max_poll = -1;
	bool poll_only = false;
	bool enqueue_complete = false;

	// pingpong
	std::size_t msg_size = 64;
	std::size_t capacity = 64;

	// burst: in-flight receives; 0 means 4 * K
	std::size_t messages = 0;

	// offload
	double imbalance = 2.0;
	std::size_t tasks = 16;          // tasks per rank per iteration at imbalance 1
	std::uint64_t task_cost = 10;    // ticks per task
	std::size_t workers = 1;         // task ticks processed per rank per driver tick
	double gain = 0.1;
	std::uint64_t deadband = 0;      // ticks; 0 means one task cost
	std::uint64_t emergency_slack = 0; // ticks; 0 means two task costs
	std::size_t blacklist_window = 10;
	std::int64_t slow_victim = -1;
	std::uint64_t slow_delay = 0;

	/// Throws config_error on unusable combinations.
	void validate() const;
	InfoConfig cr_config() const;
};

/// Tabular scenario output.
struct Table {
	std::string scenario;
	std::vector<std::string> columns;
	std::vector<std::vector<std::string>> rows;
};

/// `# contmsg-csv schema=1 scenario=<name>` followed by the header row and data.
void write_csv(std::ostream& out, const Table& table);
std::string to_csv(const Table& table);

struct ScenarioResult {
	Table table;
	std::vector<std::string> failures; // violated internal assertions
	bool ok() const { return failures.empty(); }
};

/// Builds the runtime the config asks for.
std::unique_ptr<Runtime> make_runtime(const ScenarioConfig& cfg);

/// One-stop dispatch used by the CLI.
ScenarioResult run(const ScenarioConfig& cfg);

// Per-scenario entry points with structured reports.

struct PingpongReport {
	std::vector<std::uint64_t> round_trip_ticks;
	std::vector<double> round_trip_us;
	std::vector<bool> truncated;
	ScenarioResult result;
};
PingpongReport run_pingpong(const ScenarioConfig& cfg);

struct BurstReport {
	std::vector<std::uint64_t> op_delay;      // indexed by message
	std::vector<std::uint64_t> handled_per_tick;
	DelayHistogram delays;
	std::uint64_t max_handled_per_tick = 0;
	ScenarioResult result;
};
BurstReport run_burst(const ScenarioConfig& cfg);

struct OffloadReport {
	std::size_t world = 0;
	// [iteration][rank]
	std::vector<std::vector<std::int64_t>> wait_time;    // signed: negative for the critical rank
	std::vector<std::vector<std::uint64_t>> raw_wait;    // kickoff receipt - ready
	std::vector<std::vector<std::uint64_t>> ready_tick;
	std::vector<std::vector<std::uint64_t>> offloaded;   // tasks sent by rank
	std::vector<std::vector<std::uint64_t>> emergencies; // raised by rank as source
	std::vector<std::vector<std::uint64_t>> received;    // remote tasks arriving at rank
	std::vector<std::vector<bool>> blacklisted;          // [iteration][target] per the critical source's view
	std::vector<std::vector<bool>> may_offload;          // rank was in the critical set when deciding
	std::vector<std::size_t> critical;                   // latest-ready rank per iteration
	ScenarioResult result;
};
OffloadReport run_offload(const ScenarioConfig& cfg);

struct StatecheckReport {
	std::map<std::string, std::uint64_t> edge_hits; // "FROM -event-> TO"
	std::vector<std::string> missing_edges;
	std::vector<std::string> illegal_transitions;
	std::vector<std::string> accepted_non_edges; // misuse that was not rejected
	std::size_t walk_steps = 0;
	ScenarioResult result;
};
StatecheckReport run_statecheck(const ScenarioConfig& cfg);

/// The legal CR transitions as "FROM -event-> TO" strings.
const std::vector<std::string>& legal_edges();

} // namespace contmsg::scenarios
