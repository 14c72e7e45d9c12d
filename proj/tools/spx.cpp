#include "spx/cli.hpp"

int main(int argc, char ** argv) {
    return spx::dispatch(argc, argv);
}
