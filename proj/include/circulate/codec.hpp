#pragma once

#include <string>
#include <string_view>

namespace circulate {

// Payloads travel as raw byte strings.
using Bytes = std::string;

// Lowercase 64-hex-char SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

std::string base64_encode(std::string_view data);
// Throws Error(kMalformedDocument) on invalid input.
Bytes base64_decode(std::string_view text);

// Random version-4 UUID in canonical 36-char form.
std::string new_uuid();

}  // namespace circulate
