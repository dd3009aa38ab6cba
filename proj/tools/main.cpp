#include "cli.hpp"

int main(int argc, char** argv) { return profact::cli::run({argv, argv + argc}); }
