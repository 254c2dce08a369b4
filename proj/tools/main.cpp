#include <iostream>

#include "ftcaqr/cli.hpp"

int main(int argc, char** argv) { return ftcaqr::cli_main(argc, argv, std::cout, std::cerr); }
