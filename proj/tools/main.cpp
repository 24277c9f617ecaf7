#include "cli.hpp"

int main(int argc, char** argv) { return vreid::cli::run(argc, argv); }
