#include "amsnet/cli.hpp"

int main(int argc, char** argv) { return ams::cli::run_cli(argc, argv); }
