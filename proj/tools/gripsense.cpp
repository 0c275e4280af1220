#include "gripsense/cli.hpp"

int main(int argc, char** argv) { return gripsense::run_subcommand(argc, argv); }
