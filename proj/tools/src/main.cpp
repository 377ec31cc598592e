#include "setdet_cli/commands.hpp"

int main(int argc, char** argv) { return setdet::cli::run(argc, argv); }
