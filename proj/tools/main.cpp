#include "supersal/cli.hpp"

int main(int argc, char** argv) { return sal::run_cli(argc, argv); }
