#include <iostream>

#include "smlab/cli.hpp"

int main(int argc, char** argv)
{
    return smlab::cli::dispatch(argc, argv, std::cout, std::cerr);
}
