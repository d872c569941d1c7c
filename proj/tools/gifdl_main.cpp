#include "gifdl/cli.hpp"

int main(int argc, char** argv) {
    return gifdl::run_cli({argv + 1, argv + argc});
}
