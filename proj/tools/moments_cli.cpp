#include "moments_nerf/cli.hpp"

int main(int argc, char** argv) { return moments_nerf::cli::run_cli(argc, argv); }
