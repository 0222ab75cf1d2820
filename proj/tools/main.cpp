#include "onionpos/cli.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    return onionpos::runCli(argc, argv, std::cout, std::cerr);
}
