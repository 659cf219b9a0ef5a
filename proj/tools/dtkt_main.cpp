#include "dtkt/cli.hpp"

int main(int argc, char** argv) { return dtkt::cli::run(argc, argv); }
