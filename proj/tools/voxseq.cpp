#include "voxseq/cli.hpp"

int main(int argc, char** argv) { return voxseq::cli::run(argc, argv); }
