#include "mvhoi/cli.hpp"

int main(int argc, char** argv) { return mvhoi::cli::main(argc, argv); }
