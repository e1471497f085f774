#include "cli.hpp"

int main(int argc, char** argv) { return synthpsych::cli::run_cli(argc, argv); }
