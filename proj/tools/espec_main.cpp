#include "espec/cli.hpp"

int main(int argc, char** argv) { return espec::cli::run_cli(argc, argv); }
