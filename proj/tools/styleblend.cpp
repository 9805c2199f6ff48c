#include <styleblend/cli.hpp>

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return styleblend::cli_main(std::move(args));
}
