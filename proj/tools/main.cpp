#include "diffconv/cli.hpp"

int main(int argc, char** argv) { return diffconv::run_cli(argc, argv); }
