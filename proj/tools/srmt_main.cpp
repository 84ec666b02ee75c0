#include <iostream>

#include "srmt/commands.hpp"

int main(int argc, char** argv) { return srmt::run_cli(argc, argv, std::cout, std::cerr); }
