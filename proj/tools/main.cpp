#include "commands.hpp"

int main(int argc, char** argv) { return surgicam::cli::run(argc, argv); }
