#include "contmsg/wire.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace contmsg::wire {

namespace {

template <typename T>
void put_le(std::vector<std::byte>& out, T value) {
	for(std::size_t i = 0; i < sizeof(T); ++i) {
		out.push_back(static_cast<std::byte>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
	}
}

template <typename T>
T get_le(std::span<const std::byte> bytes, std::size_t offset) {
	std::uint64_t v = 0;
	for(std::size_t i = 0; i < sizeof(T); ++i) {
		v |= static_cast<std::uint64_t>(std::to_integer<std::uint8_t>(bytes[offset + i])) << (8 * i);
	}
	return static_cast<T>(v);
}

} // namespace

void append_frame(std::vector<std::byte>& out, Rank source, Tag tag, std::span<const std::byte> payload) {
	out.reserve(out.size() + header_size + payload.size());
	out.insert(out.end(), magic.begin(), magic.end());
	out.push_back(std::byte{version});
	out.push_back(std::byte{kind_data});
	put_le<std::uint32_t>(out, source.value);
	put_le<std::uint64_t>(out, tag.value);
	put_le<std::uint32_t>(out, static_cast<std::uint32_t>(payload.size()));
	out.insert(out.end(), payload.begin(), payload.end());
}

std::vector<std::byte> encode_frame(Rank source, Tag tag, std::span<const std::byte> payload) {
	std::vector<std::byte> out;
	append_frame(out, source, tag, payload);
	return out;
}

std::optional<FrameHeader> decode_header(std::span<const std::byte> bytes) {
	if(bytes.size() < header_size) return std::nullopt;
	if(!std::equal(magic.begin(), magic.end(), bytes.begin())) throw Error(ErrorCode::protocol_error, "bad frame magic");
	const auto ver = std::to_integer<std::uint8_t>(bytes[4]);
	if(ver != version) throw Error(ErrorCode::protocol_error, "unsupported frame version " + std::to_string(ver));
	const auto kind = std::to_integer<std::uint8_t>(bytes[5]);
	if(kind != kind_data) throw Error(ErrorCode::protocol_error, "unknown frame kind " + std::to_string(kind));
	FrameHeader h;
	h.source = Rank{get_le<std::uint32_t>(bytes, 6)};
	h.tag = Tag{get_le<std::uint64_t>(bytes, 10)};
	h.length = get_le<std::uint32_t>(bytes, 18);
	return h;
}

std::vector<RosterEntry> parse_roster(std::string_view text) {
	std::vector<RosterEntry> entries;
	std::istringstream in{std::string(text)};
	std::string line;
	std::size_t lineno = 0;
	while(std::getline(in, line)) {
		++lineno;
		if(line.find_first_not_of(" \t\r") == std::string::npos) continue;
		std::istringstream ls(line);
		std::uint32_t rank = 0;
		std::string addr;
		if(!(ls >> rank >> addr)) throw Error(ErrorCode::config_error, "roster line " + std::to_string(lineno) + ": expected `rank host:port`");
		const auto colon = addr.rfind(':');
		if(colon == std::string::npos || colon == 0) throw Error(ErrorCode::config_error, "roster line " + std::to_string(lineno) + ": missing host:port");
		std::uint32_t port = 0;
		const auto port_str = addr.substr(colon + 1);
		auto [ptr, ec] = std::from_chars(port_str.data(), port_str.data() + port_str.size(), port);
		if(ec != std::errc{} || ptr != port_str.data() + port_str.size() || port == 0 || port > 65535) {
			throw Error(ErrorCode::config_error, "roster line " + std::to_string(lineno) + ": bad port");
		}
		if(rank != entries.size()) throw Error(ErrorCode::config_error, "roster ranks must be listed 0..P-1 in order");
		entries.push_back({Rank{rank}, addr.substr(0, colon), static_cast<std::uint16_t>(port)});
	}
	if(entries.empty()) throw Error(ErrorCode::config_error, "empty roster");
	return entries;
}

std::vector<RosterEntry> load_roster(const std::string& path) {
	std::ifstream f(path);
	if(!f) throw Error(ErrorCode::config_error, "cannot open roster " + path);
	std::stringstream ss;
	ss << f.rdbuf();
	return parse_roster(ss.str());
}

} // namespace contmsg::wire
