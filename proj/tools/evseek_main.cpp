#include "evseek/commands.hpp"

int main(int argc, char** argv) { return evseek::dispatch(argc, argv); }
