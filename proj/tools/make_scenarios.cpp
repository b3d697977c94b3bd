// Writes the shipped scenario files: make_scenarios <dir>
#include <fstream>
#include <iostream>

#include "hpa/experiments.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_scenarios <dir>\n";
    return 2;
  }
  for (const hpa::Scenario& s : hpa::shipped_scenarios()) {
    const std::string path = std::string(argv[1]) + "/" + s.name + ".json";
    std::ofstream os(path);
    os << hpa::scenario_to_json(s) << '\n';
    if (!os) {
      std::cerr << "cannot write " << path << '\n';
      return 1;
    }
    std::cout << path << '\n';
  }
  return 0;
}
