#include "voxelfm/cli.hpp"

int main(int argc, char** argv) { return voxelfm::cli_dispatch(argc, argv); }
