// Command-line front end. run_cli owns argument parsing and dispatch so
// tests can drive the exact shipped surface: gen-data, train, eval,
// compare, gradcheck.
#pragma once

#include <string>
#include <vector>

#include "rcf/tensor.hpp"

namespace rcf {

// args excludes argv[0]. Returns the process exit code; never throws
// (errors are printed to stderr).
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

// 16-bit binary portable graymap, values scaled so cap meters = 65535.
void write_pgm16(const std::string& path, const Tensor<float>& depth, double cap = 80.0);

}  // namespace rcf
