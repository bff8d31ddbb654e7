#include "safr/cli.hpp"

int main(int argc, char** argv) { return safr::cli::dispatch(argc, argv); }
