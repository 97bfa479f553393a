#include "popbench/cli.hpp"

int main(int argc, char** argv) { return popbench::cli_main(argc, argv); }
