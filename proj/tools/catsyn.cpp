#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <catsyn/cli.hpp>

int main(int argc, char** argv) {
    namespace cli = catsyn::cli;
    CLI::App app{"stabilizer-to-PCC syndrome mapping simulations"};
    app.require_subcommand(1);

    app.add_subcommand("list", "list experiments and their parameters");

    cli::RunRequest req;
    CLI::App* run = app.add_subcommand("run", "run one experiment");
    run->add_option("id", req.id, "experiment id")->required();
    run->add_option("--set", req.sets, "override a field, key=value (repeatable)");
    run->add_option("--config", req.config_path, "config file of key = value lines");
    run->add_option("--out", req.out_path, "output file")->required();
    run->add_option("--format", req.format, "json or csv");

    std::string suite = "quick";
    CLI::App* verify = app.add_subcommand("verify", "run the acceptance checks");
    verify->add_option("--suite", suite, "quick or full");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return cli::kExitUsage;
    }

    if (app.got_subcommand("list")) return cli::cmd_list(std::cout);
    if (app.got_subcommand("run")) return cli::cmd_run(req, std::cerr);
    return cli::cmd_verify(suite, std::cout, std::cerr);
}
