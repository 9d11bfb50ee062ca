#include "ibpcat/cli.hpp"

int main(int argc, char** argv) { return ibpcat::cli::dispatch(argc, argv); }
