#include "patchdb/cli.hpp"

int main(int argc, char** argv) { return patchdb::cli_main(argc, argv); }
