#include "hopmix/cli.hpp"

int main(int argc, char** argv) { return hopmix::cli_main(argc, argv); }
