#include "degcg/cli.hpp"

int main(int argc, char** argv) { return degcg::run_cli(argc, argv); }
