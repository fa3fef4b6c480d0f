// crcterm <subcommand> --config <file> [--out <dir>] [--seed <n>]

#if __has_include(<CLI/CLI.hpp>)
#include <CLI/CLI.hpp>
#else
#include <CLI11.hpp>
#endif

#include <iostream>

#include "crcterm/app.hpp"

int main(int argc, char** argv) {
    CLI::App cli{"crcterm: forward-characteristic surfaces, CRC simulation and calibration"};
    cli.set_version_flag("--version", std::string(CRCTERM_VERSION_STRING));
    cli.require_subcommand(1);

    crcterm::app::CommandLine cl;
    std::string out;
    std::uint64_t seed = 0;
    const std::pair<const char*, const char*> commands[] = {
        {"riccati", "tabulate Riccati flows over the grid"},
        {"fit-hw", "fit a Hull-White extension to an initial surface"},
        {"simulate", "simulate CRC paths"},
        {"calibrate", "estimate Heston parameters from observed paths"},
        {"verify", "run consistency checks"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = cli.add_subcommand(name, help);
        sub->add_option("--config,-c", cl.config_path, "scenario INI file")->required();
        sub->add_option("--out,-o", out, "output directory (overrides io.out)");
        sub->add_option("--seed", seed, "seed (overrides run.seed)");
    }

    try {
        cli.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = cli.exit(e);
        return code == 0 ? 0 : crcterm::app::kConfigError;
    }
    auto* sub = cli.get_subcommands().front();
    cl.subcommand = sub->get_name();
    if (sub->count("--out")) cl.out = out;
    if (sub->count("--seed")) cl.seed = seed;
    return crcterm::app::run_command(cl);
}
