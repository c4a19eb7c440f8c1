#pragma once

// Frame layout used by the TCP substrate (all integers little-endian):
//
//   offset  size  field
//   0       4     magic "CONT" (0x43 0x4F 0x4E 0x54)
//   4       1     version (1)
//   5       1     kind (1 = DATA)
//   6       4     source rank
//   10      8     tag
//   18      4     payload length
//   22      len   payload

#include "contmsg/core.hpp"

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace contmsg::wire {

inline constexpr std::array<std::byte, 4> magic{std::byte{0x43}, std::byte{0x4F}, std::byte{0x4E}, std::byte{0x54}};
inline constexpr std::uint8_t version = 1;
inline constexpr std::uint8_t kind_data = 1;
inline constexpr std::size_t header_size = 22;

struct FrameHeader {
	Rank source;
	Tag tag;
	std::uint32_t length = 0;
};

std::vector<std::byte> encode_frame(Rank source, Tag tag, std::span<const std::byte> payload);

/// Appends an encoded frame to `out` without an intermediate allocation.
void append_frame(std::vector<std::byte>& out, Rank source, Tag tag, std::span<const std::byte> payload);

/// Returns nullopt if fewer than header_size bytes are available.
/// Throws protocol_error on bad magic, version or kind.
std::optional<FrameHeader> decode_header(std::span<const std::byte> bytes);

/// One `rank host:port` entry per line, ranks 0..P-1 in order.
struct RosterEntry {
	Rank rank;
	std::string host;
	std::uint16_t port = 0;
};

std::vector<RosterEntry> parse_roster(std::string_view text);
std::vector<RosterEntry> load_roster(const std::string& path);

} // namespace contmsg::wire
