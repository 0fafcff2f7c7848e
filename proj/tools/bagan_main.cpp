#include "bagan/cli.hpp"

int main(int argc, char** argv) { return bagan::cli::run(argc, argv); }
