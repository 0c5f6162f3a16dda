#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dgossip/engine.hpp"

namespace dgossip {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kConfig = 2;
inline constexpr int kDivergence = 3;
inline constexpr int kIo = 4;
}  // namespace exit_code

/// Entry point shared by the `dgossip` binary and the tests. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<RoundRecord>& series);

/// `value` is formatted so that parsing it back yields the same double.
std::string format_real(double value);

}  // namespace dgossip
