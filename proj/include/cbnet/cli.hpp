#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cbnet/composite.hpp"

namespace cbnet {

// Flags shared by every subcommand.
struct RunConfig {
  std::size_t k = 2;
  std::string style = "ahlc";
  bool share_weights = false;
  bool accelerated = false;
  std::uint64_t seed = 42;
  std::size_t steps = 200;
  double lr = 0.05;
  std::size_t dataset_size = 64;
  std::string out_dir = "out";
  std::string weights_in;
  std::string weights_out;
  double tolerance = 1e-3;
  bool toy = false;
  std::vector<std::size_t> levels;

  CBNetConfig net_config() const;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Subcommands: summarize, train, eval, gradcheck, flops, viz. args excludes
// the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cbnet
