#include <iostream>
#include <rotmarg/cli.hpp>

int main(int argc, char** argv)
{
    return rotmarg::cli::run_cli(argc, argv, std::cout, std::cerr);
}
