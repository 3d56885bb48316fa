#include "chatgate/cli.hpp"

int main(int argc, char** argv) { return chatgate::cli::dispatch(argc, argv); }
