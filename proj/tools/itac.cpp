#include "itac/cli.hpp"

int main(int argc, char** argv) { return itac::run_cli(argc, argv); }
