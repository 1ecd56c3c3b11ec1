#include "dnadepth/cli.hpp"

int main(int argc, char** argv) { return dnadepth::run_cli(argc, argv); }
