#include "refground/cli.hpp"

int main(int argc, char** argv) { return refground::run_cli(argc, argv); }
