#include "defx/cli.hpp"

int main(int argc, char** argv) { return defx::cli::run(argc, argv); }
