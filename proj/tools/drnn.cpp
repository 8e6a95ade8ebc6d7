#include "drnn/cli.hpp"

int main(int argc, char** argv) { return drnn::run_cli(argc, argv); }
