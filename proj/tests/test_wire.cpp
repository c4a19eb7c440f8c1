#include "contmsg/wire.hpp"

#include <doctest.h>

using namespace contmsg;

namespace {

std::vector<std::byte> bytes(std::initializer_list<int> v) {
	std::vector<std::byte> out;
	for(int b : v) out.push_back(static_cast<std::byte>(b));
	return out;
}

} // namespace

TEST_CASE("frame layout is bit exact") {
	const auto payload = bytes({0xAA, 0xBB, 0xCC});
	const auto frame = wire::encode_frame(Rank{0x01020304}, Tag{0x1122334455667788ULL}, payload);
	const auto expected = bytes({
	    0x43, 0x4F, 0x4E, 0x54,                         // CONT
	    0x01,                                           // version
	    0x01,                                           // DATA
	    0x04, 0x03, 0x02, 0x01,                         // source
	    0x88, 0x77, 0x66, 0x55, 0x44, 0x33, 0x22, 0x11, // tag
	    0x03, 0x00, 0x00, 0x00,                         // length
	    0xAA, 0xBB, 0xCC,
	});
	CHECK(frame == expected);
}

TEST_CASE("header round trip and short input") {
	const auto frame = wire::encode_frame(Rank{3}, Tag{42}, bytes({1, 2}));
	auto h = wire::decode_header(frame);
	REQUIRE(h);
	CHECK(h->source == Rank{3});
	CHECK(h->tag == Tag{42});
	CHECK(h->length == 2);
	CHECK_FALSE(wire::decode_header(std::span(frame).first(21)));
}

TEST_CASE("bad magic, version or kind is a protocol error") {
	for(std::size_t pos : {0u, 4u, 5u}) {
		auto frame = wire::encode_frame(Rank{0}, Tag{1}, {});
		frame[pos] = std::byte{0x7F};
		CHECK_THROWS_AS(wire::decode_header(frame), Error);
	}
}

TEST_CASE("roster parsing") {
	const auto r = wire::parse_roster("0 127.0.0.1:9000\n\n1 localhost:9001\n");
	REQUIRE(r.size() == 2);
	CHECK(r[1].rank == Rank{1});
	CHECK(r[1].host == "localhost");
	CHECK(r[1].port == 9001);
	CHECK_THROWS_AS(wire::parse_roster("1 127.0.0.1:9000\n"), Error);
	CHECK_THROWS_AS(wire::parse_roster("0 127.0.0.1\n"), Error);
	CHECK_THROWS_AS(wire::parse_roster("0 127.0.0.1:99999\n"), Error);
	CHECK_THROWS_AS(wire::parse_roster(""), Error);
}
