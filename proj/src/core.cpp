#include "contmsg/core.hpp"

#include <charconv>

namespace contmsg {

std::string_view to_string(ErrorCode code) {
	switch(code) {
	case ErrorCode::unknown_key: return "UNKNOWN_KEY";
	case ErrorCode::invalid_value: return "INVALID_VALUE";
	case ErrorCode::invalid_combination: return "INVALID_COMBINATION";
	case ErrorCode::invalid_rank: return "INVALID_RANK";
	case ErrorCode::invalid_tag: return "INVALID_TAG";
	case ErrorCode::second_start: return "SECOND_START";
	case ErrorCode::not_persistent: return "NOT_PERSISTENT";
	case ErrorCode::not_active: return "NOT_ACTIVE";
	case ErrorCode::request_consumed: return "REQUEST_CONSUMED";
	case ErrorCode::cannot_cancel_send: return "CANNOT_CANCEL_SEND";
	case ErrorCode::connection_lost: return "CONNECTION_LOST";
	case ErrorCode::protocol_error: return "PROTOCOL_ERROR";
	case ErrorCode::already_attached: return "ALREADY_ATTACHED";
	case ErrorCode::freed_cr: return "FREED_CR";
	case ErrorCode::double_free: return "DOUBLE_FREE";
	case ErrorCode::self_chain: return "SELF_CHAIN";
	case ErrorCode::concurrent_test: return "CONCURRENT_TEST";
	case ErrorCode::underflow: return "UNDERFLOW";
	case ErrorCode::not_bound: return "NOT_BOUND";
	case ErrorCode::unknown_task: return "UNKNOWN_TASK";
	case ErrorCode::config_error: return "CONFIG_ERROR";
	}
	return "UNKNOWN";
}

Error::Error(ErrorCode code, const std::string& what) : std::runtime_error(std::string(to_string(code)) + ": " + what), m_code(code) {}

Error::Error(ErrorCode code) : std::runtime_error(std::string(to_string(code))), m_code(code) {}

std::string_view to_string(OpKind kind) {
	switch(kind) {
	case OpKind::send: return "send";
	case OpKind::recv: return "recv";
	case OpKind::persistent_send: return "persistent_send";
	case OpKind::persistent_recv: return "persistent_recv";
	}
	return "?";
}

std::string_view to_string(OpState state) {
	switch(state) {
	case OpState::inactive: return "inactive";
	case OpState::active: return "active";
	case OpState::complete: return "complete";
	case OpState::cancelled: return "cancelled";
	case OpState::consumed: return "consumed";
	}
	return "?";
}

void InfoConfig::validate() const {
	if(max_poll < -1) { throw Error(ErrorCode::invalid_value, "max_poll must be >= -1"); }
	if(poll_only && max_poll == 0) {
		throw Error(ErrorCode::invalid_combination, "poll_only with max_poll = 0 never executes a continuation");
	}
}

namespace {

bool parse_bool(const std::string& key, const std::string& v) {
	if(v == "true" || v == "1") return true;
	if(v == "false" || v == "0") return false;
	throw Error(ErrorCode::invalid_value, key + "=" + v);
}

} // namespace

InfoConfig InfoConfig::from_pairs(const std::map<std::string, std::string>& overrides) {
	InfoConfig cfg;
	for(const auto& [raw_key, value] : overrides) {
		std::string_view key = raw_key;
		if(key.starts_with("mpi_continue_")) key.remove_prefix(13);

		if(key == "poll_only") {
			cfg.poll_only = parse_bool(raw_key, value);
		} else if(key == "enqueue_complete") {
			cfg.enqueue_complete = parse_bool(raw_key, value);
		} else if(key == "async_signal_safe") {
			cfg.async_signal_safe = parse_bool(raw_key, value);
		} else if(key == "max_poll") {
			std::int64_t n = 0;
			const auto* end = value.data() + value.size();
			auto [ptr, ec] = std::from_chars(value.data(), end, n);
			if(ec != std::errc{} || ptr != end) throw Error(ErrorCode::invalid_value, raw_key + "=" + value);
			cfg.max_poll = n;
		} else if(key == "thread" || key == "exec_context") {
			if(value == "application") {
				cfg.exec_context = ExecContext::application;
			} else if(value == "any") {
				cfg.exec_context = ExecContext::any;
			} else {
				throw Error(ErrorCode::invalid_value, raw_key + "=" + value);
			}
		} else {
			throw Error(ErrorCode::unknown_key, raw_key);
		}
	}
	cfg.validate();
	return cfg;
}

InfoConfig info_config_new(const std::map<std::string, std::string>& overrides) { return InfoConfig::from_pairs(overrides); }

} // namespace contmsg
