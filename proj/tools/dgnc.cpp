#include "dgnc/cli.hpp"

int main(int argc, char** argv) { return dgnc::cli_main(argc, argv); }
