#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <string_view>

namespace pflow {

/// Random (version 4) UUID, drawn from the kernel CSPRNG. 122 random bits.
std::string make_uuid();

/// RFC 3339 UTC timestamp with millisecond precision, e.g. 2024-05-01T12:00:00.123Z
std::string format_timestamp(std::chrono::system_clock::time_point tp);
std::string now_timestamp();

bool iequals(std::string_view a, std::string_view b);

std::string trim(std::string_view s);

} // namespace pflow
