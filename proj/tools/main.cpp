#include "cli.hpp"

int main(int argc, char** argv) { return ruda::cli::dispatch(argc, argv); }
