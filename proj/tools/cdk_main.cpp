#include "cdk/cli.hpp"

int main(int argc, char** argv) { return cdk::run_cli(argc, argv); }
