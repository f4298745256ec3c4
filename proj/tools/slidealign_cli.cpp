#include <cstdio>

int main() {
    std::puts("slidealign: CLI under construction");
    return 0;
}
