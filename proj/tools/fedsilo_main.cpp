#include "fedsilo/harness.hpp"

int main(int argc, char** argv) { return fedsilo::harness::run_cli(argc, argv); }
