#pragma once

// Domain types shared by every contmsg module: ranks, tags, statuses,
// behavior configuration for continuation requests, and the error type.

#include <compare>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

namespace contmsg {

enum class ErrorCode {
	unknown_key,
	invalid_value,
	invalid_combination,
	invalid_rank,
	invalid_tag,
	second_start,
	not_persistent,
	not_active,
	request_consumed,
	cannot_cancel_send,
	connection_lost,
	protocol_error,
	already_attached,
	freed_cr,
	double_free,
	self_chain,
	concurrent_test,
	underflow,
	not_bound,
	unknown_task,
	config_error,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
  public:
	Error(ErrorCode code, const std::string& what);
	explicit Error(ErrorCode code);

	ErrorCode code() const noexcept { return m_code; }

  private:
	ErrorCode m_code;
};

/// Endpoint index inside one runtime instance.
struct Rank {
	std::uint32_t value = 0;
	friend constexpr auto operator<=>(Rank, Rank) = default;
};

/// Wildcard source, legal only on receives.
inline constexpr Rank any_source{std::numeric_limits<std::uint32_t>::max()};

struct Tag {
	std::uint64_t value = 0;
	friend constexpr auto operator<=>(Tag, Tag) = default;
};

/// Wildcard tag, legal only on receives. No application tag may use it.
inline constexpr Tag any_tag{std::numeric_limits<std::uint64_t>::max()};

enum class StatusError : std::uint8_t { ok, truncated };

/// Completion record of one operation.
///
/// For receives, `source`/`tag` are the matched message's envelope and `count`
/// the delivered (possibly clipped) byte length. For sends, `source` is the
/// sender's own rank, `tag` the send tag and `count` the bytes sent.
/// A cancelled operation always has count 0 and error ok.
struct Status {
	Rank source{};
	Tag tag{};
	std::uint64_t count = 0;
	bool cancelled = false;
	StatusError error = StatusError::ok;

	friend bool operator==(const Status&, const Status&) = default;
};

enum class OpKind : std::uint8_t { send, recv, persistent_send, persistent_recv };
enum class OpState : std::uint8_t { inactive, active, complete, cancelled, consumed };

constexpr bool is_persistent(OpKind k) { return k == OpKind::persistent_send || k == OpKind::persistent_recv; }
constexpr bool is_receive(OpKind k) { return k == OpKind::recv || k == OpKind::persistent_recv; }

std::string_view to_string(OpKind kind);
std::string_view to_string(OpState state);

enum class ExecContext : std::uint8_t { application, any };

/// Behavior controls of a continuation request.
///
/// Keys accepted by `from_pairs`: `poll_only`, `enqueue_complete`, `max_poll`,
/// `thread` (values `application` / `any`) and `async_signal_safe`.
/// The `mpi_continue_` prefix is accepted and stripped.
struct InfoConfig {
	bool poll_only = false;
	bool enqueue_complete = false;
	std::int64_t max_poll = -1; // -1: unlimited
	ExecContext exec_context = ExecContext::application;
	bool async_signal_safe = false; // stored only; no signal delivery path exists

	/// Throws invalid_combination / invalid_value if the combination is unusable.
	void validate() const;

	static InfoConfig from_pairs(const std::map<std::string, std::string>& overrides);

	friend bool operator==(const InfoConfig&, const InfoConfig&) = default;
};

/// Convenience wrapper equivalent to `InfoConfig::from_pairs`.
InfoConfig info_config_new(const std::map<std::string, std::string>& overrides = {});

} // namespace contmsg
