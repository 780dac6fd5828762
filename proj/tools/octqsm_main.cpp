#include "octqsm/cli.hpp"

int main(int argc, char** argv) { return octqsm::cli::run(argc, argv); }
