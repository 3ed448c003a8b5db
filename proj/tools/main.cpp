#include "riser/cli_app.hpp"

int main(int argc, char** argv) { return riser::cli_main(argc, argv); }
