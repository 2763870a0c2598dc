#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>

#include "circulate/codec.hpp"

namespace circulate {

// A colocated service operation: input payloads in binding order, output
// payload back. Throwing signals a service failure.
using Service = std::function<Bytes(std::span<const std::string_view> inputs)>;
using ServiceRegistry = std::map<std::string, Service, std::less<>>;

}  // namespace circulate
