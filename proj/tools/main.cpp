#include <iostream>

#include "commands.hpp"

int main(int argc, char** argv) { return bbox::cli::parse_and_dispatch(argc, argv, std::cout, std::cerr); }
