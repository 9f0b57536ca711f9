#include "snowball/harness.hpp"

int main(int argc, char** argv)
{
    return snowball::cli_run(argc, argv);
}
