#include "cli.hpp"

int main(int argc, char** argv) { return hybridcast::cli::run(argc, argv); }
