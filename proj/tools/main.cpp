#include "gazedepth/cli.hpp"

int main(int argc, char** argv) { return gazedepth::cli_main(argc, argv); }
