// contmsg run <scenario> [options]

#include "contmsg/scenarios.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>

namespace sc = contmsg::scenarios;

namespace {

constexpr int exit_assertion = 2;
constexpr int exit_config = 3;

void setup_logging() {
	auto logger = spdlog::stderr_color_mt("contmsg");
	spdlog::set_default_logger(logger);
	spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
	const char* env = std::getenv("CONTMSG_LOG");
	const std::string level = env ? env : "error";
	if(level == "trace") {
		spdlog::set_level(spdlog::level::trace);
	} else if(level == "info") {
		spdlog::set_level(spdlog::level::info);
	} else {
		if(level != "error") spdlog::warn("CONTMSG_LOG={} not understood, using error", level);
		spdlog::set_level(spdlog::level::err);
	}
}

} // namespace

int main(int argc, char** argv) {
	setup_logging();

	CLI::App app{"Desk-scale experiments for the contmsg continuation runtime"};
	app.require_subcommand(1);
	auto* run = app.add_subcommand("run", "Run one scenario and emit CSV");

	sc::ScenarioConfig cfg;
	std::string variant = "continuations";
	std::string csv_path;

	run->add_option("scenario", cfg.scenario, "pingpong | burst | offload | statecheck")->required();
	run->add_option("--world", cfg.world, "Number of ranks");
	run->add_option("--transport", cfg.transport, "loopback | tcp");
	run->add_option("--roster", cfg.roster, "Roster file (tcp)");
	run->add_option("--seed", cfg.seed);
	run->add_option("--iters", cfg.iterations, "Iterations (offload, pingpong) or walk steps (statecheck)");
	run->add_option("--variant", variant, "continuations | activeset | groups");
	run->add_option("--K", cfg.K, "Active-set capacity");
	run->add_option("--max-concurrent-out", cfg.max_concurrent_out, "Active-set send throttle");
	run->add_option("--group-poll", cfg.group_poll, "Ops tested per request-group poll");
	run->add_option("--max-poll", cfg.max_poll, "Continuations per cr_test, -1 for unlimited");
	run->add_flag("--poll-only", cfg.poll_only);
	run->add_flag("--enqueue-complete", cfg.enqueue_complete);
	run->add_option("--msg-size", cfg.msg_size, "pingpong payload bytes");
	run->add_option("--capacity", cfg.capacity, "Receive buffer bytes");
	run->add_option("--messages", cfg.messages, "burst in-flight receives, 0 for 4*K");
	run->add_option("--imbalance", cfg.imbalance, "Load factor of rank 0");
	run->add_option("--tasks", cfg.tasks, "Tasks per rank per iteration");
	run->add_option("--task-cost", cfg.task_cost, "Ticks per task");
	run->add_option("--workers", cfg.workers, "Task ticks per rank per driver tick");
	run->add_option("--gain", cfg.gain, "Diffusive gain");
	run->add_option("--deadband", cfg.deadband, "Ticks, 0 for one task cost");
	run->add_option("--emergency-slack", cfg.emergency_slack, "Ticks, 0 for two task costs");
	run->add_option("--blacklist-window", cfg.blacklist_window, "Iterations");
	run->add_option("--slow-victim", cfg.slow_victim, "Rank that delays its results, -1 for none");
	run->add_option("--slow-delay", cfg.slow_delay, "Ticks the slow victim holds results");
	run->add_option("--csv", csv_path, "Write CSV here instead of stdout");

	try {
		app.parse(argc, argv);
	} catch(const CLI::ParseError& e) {
		const int rc = app.exit(e);
		return rc == 0 ? 0 : exit_config;
	}

	sc::ScenarioResult result;
	try {
		cfg.variant = sc::parse_variant(variant);
		spdlog::info("running {} world={} transport={} variant={} seed={}", cfg.scenario, cfg.world, cfg.transport, variant, cfg.seed);
		const auto start = std::chrono::steady_clock::now();
		result = sc::run(cfg);
		const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
		spdlog::info("{} finished in {:.3f}s, {} rows", cfg.scenario, took.count(), result.table.rows.size());
	} catch(const contmsg::Error& e) {
		spdlog::error("{}: {}", contmsg::to_string(e.code()), e.what());
		std::cerr << "contmsg: " << e.what() << "\n";
		return e.code() == contmsg::ErrorCode::config_error || e.code() == contmsg::ErrorCode::invalid_value ? exit_config : exit_assertion;
	}

	if(csv_path.empty()) {
		sc::write_csv(std::cout, result.table);
	} else {
		std::ofstream out(csv_path);
		if(!out) {
			std::cerr << "contmsg: cannot write " << csv_path << "\n";
			return exit_config;
		}
		sc::write_csv(out, result.table);
	}

	for(const auto& f : result.failures) {
		spdlog::trace("assertion: {}", f);
		std::cerr << "contmsg: assertion failed: " << f << "\n";
	}
	return result.ok() ? 0 : exit_assertion;
}
