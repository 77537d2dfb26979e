#include "hnrfs/commands.hpp"

int main(int argc, char** argv) { return hnrfs::run_cli(argc, argv); }
