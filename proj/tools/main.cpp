#include "mapfm/cli.hpp"

int main(int argc, char** argv) { return mapfm::dispatch(argc, argv); }
