// Stand-in for a locally hosted model: reads NDJSON requests on stdin and
// answers each with hash embeddings in reverse index order.
//   process_helper <dim> [--fail-after N]

#include <iostream>
#include <string>

#include <json.hpp>

#include "sscd/embed.hpp"

int main(int argc, char** argv) {
  std::size_t dim = argc > 1 ? std::stoul(argv[1]) : 32;
  long fail_after = -1;
  if (argc > 3 && std::string(argv[2]) == "--fail-after") fail_after = std::stol(argv[3]);
  std::string line;
  long served = 0;
  while (std::getline(std::cin, line)) {
    if (fail_after >= 0 && served >= fail_after) return 7;
    auto req = nlohmann::json::parse(line);
    const auto& input = req.at("input");
    nlohmann::json data = nlohmann::json::array();
    for (std::size_t i = input.size(); i-- > 0;) {
      auto v = sscd::hash_embed(input[i].get<std::string>(), dim, 99);
      for (auto& x : v) x *= 3.0f;  // unnormalized on purpose
      data.push_back({{"index", i}, {"embedding", v}});
    }
    std::cout << nlohmann::json{{"data", data}}.dump() << std::endl;
    ++served;
  }
  return 0;
}
