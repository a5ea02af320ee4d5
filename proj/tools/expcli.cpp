#include "sdsd/cli.hpp"

int main(int argc, char** argv) { return sdsd::cli_main(argc, argv); }
