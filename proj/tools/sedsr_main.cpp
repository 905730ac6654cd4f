#include "sedsr/cli.hpp"

int main(int argc, char** argv) { return sedsr::cli_main(argc, argv); }
