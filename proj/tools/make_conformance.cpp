#include <cstdio>

#include "vosh/conformance.hpp"

int main(int argc, char** argv) {
    if (argc != 2) {
        std::fprintf(stderr, "usage: make_conformance <out-dir>\n");
        return 2;
    }
    try {
        vosh::write_conformance(argv[1]);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }
    return 0;
}
