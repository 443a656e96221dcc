#pragma once

#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

namespace lfx::cli {

// Exit codes. Errors print one line "error: <kind>: <message>" on stderr.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailed = 1;  // a check ran and did not pass
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitShape = 4;

// Sets a dotted key ("train.lr=1e-3") in a JSON document. The value is parsed
// as JSON when possible and kept as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lfx::cli
