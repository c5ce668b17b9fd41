#include "cli.hpp"

int main(int argc, char** argv) { return rlim::cli::run(argc, argv); }
