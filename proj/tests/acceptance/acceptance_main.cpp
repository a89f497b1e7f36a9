#include <CLI11.hpp>

#include <algorithm>
#include <exception>
#include <iostream>

#include "acceptance/acceptance.hpp"

namespace sslbd::acceptance {

Outcome guarded(int criterion, const std::function<Outcome()>& body) {
  try {
    Outcome o = body();
    o.criterion = criterion;
    return o;
  } catch (const std::exception& e) {
    return {criterion, false, std::string("exception: ") + e.what()};
  }
}

}  // namespace sslbd::acceptance

int main(int argc, char** argv) {
  using namespace sslbd::acceptance;
  CLI::App app{"acceptance checks; one PASS/FAIL line per criterion"};
  std::string suite = "all";
  DeskOptions desk;
  desk.work_dir = "desk_runs";
  app.add_option("--suite", suite, "oracles | desk | all")->check(CLI::IsMember({"oracles", "desk", "all"}));
  app.add_option("--work", desk.work_dir, "cache directory for desk-scale runs");
  app.add_option("--threads", desk.threads, "torch intra-op threads")->check(CLI::PositiveNumber);
  app.add_option("--epochs", desk.epochs, "pretext epochs per desk-scale training")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  std::vector<Outcome> outcomes;
  if (suite != "desk") {
    auto o = run_oracle_suite();
    outcomes.insert(outcomes.end(), o.begin(), o.end());
  }
  if (suite != "oracles") {
    auto o = run_desk_suite(desk);
    outcomes.insert(outcomes.end(), o.begin(), o.end());
  }
  std::sort(outcomes.begin(), outcomes.end(), [](const Outcome& a, const Outcome& b) { return a.criterion < b.criterion; });
  int failed = 0;
  for (const auto& o : outcomes) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << o.criterion << ": " << o.detail << std::endl;
    failed += o.pass ? 0 : 1;
  }
  std::cout << outcomes.size() - failed << "/" << outcomes.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
