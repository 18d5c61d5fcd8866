#include "cotclip/cli.hpp"

int main(int argc, char** argv) { return cotclip::cli::run(argc, argv); }
