#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <iostream>

#include "sglab/cli.hpp"

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("sglab"));
    return sglab::run_command(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
