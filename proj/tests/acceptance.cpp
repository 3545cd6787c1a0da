#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <catsyn/verify.hpp>

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string suite = "quick";
    std::vector<int> only;
    app.add_option("--suite", suite, "quick or full")->check(CLI::IsMember({"quick", "full"}));
    app.add_option("--only", only, "criterion ids to run (overrides the suite selection)");
    CLI11_PARSE(app, argc, argv);
    const auto reports = catsyn::verify::run_suite(suite, std::cout, std::set<int>(only.begin(), only.end()));
    for (const auto& r : reports)
        if (!r.pass()) return 1;
    return 0;
}
