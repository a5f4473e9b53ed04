#include "phnn/cli.hpp"

int main(int argc, char** argv) { return phnn::cli::run_cli(argc, argv); }
