#include "commands.hpp"

int main(int argc, char** argv) { return ucdr::run_cli(argc, argv); }
