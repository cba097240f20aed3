#include "rcf/cli.hpp"

int main(int argc, char** argv) { return rcf::run_cli(argc, argv); }
