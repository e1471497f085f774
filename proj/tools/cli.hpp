#pragma once

#include <memory>

#include "synthpsych/transport.hpp"

namespace synthpsych::cli {

// Runs the synthpsych command line; returns the process exit code.
// A non-null backend replaces the HTTPS client for live calls.
int run_cli(int argc, char** argv, std::shared_ptr<transport::HttpBackend> backend = nullptr);

}  // namespace synthpsych::cli
