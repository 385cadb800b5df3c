#include "dualstyle/cli.hpp"

int main(int argc, char** argv) { return dualstyle::cli::parse_and_run(argc, argv); }
