#include <iostream>

#include "mgh/cli.hpp"

int main(int argc, char** argv)
{
    return mgh::run_cli(argc, argv, std::cout, std::cerr);
}
