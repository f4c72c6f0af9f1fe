#include "crossdiff/cli.hpp"

int main(int argc, char** argv) { return crossdiff::cli::main(argc, argv); }
