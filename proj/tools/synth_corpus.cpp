// Writes a synthetic JSON-lines review corpus for trying out the pipeline.

#include <iostream>

#include <CLI11.hpp>

#include "synth_data.hpp"

int main(int argc, char** argv) {
  CLI::App app{"synthetic review-corpus generator"};
  std::string out_path;
  synth::CorpusSpec spec;
  app.add_option("--out", out_path, "output JSON-lines path")->required();
  app.add_option("--users", spec.users, "number of users");
  app.add_option("--items", spec.items, "number of items");
  app.add_option("--per-user", spec.interactions_per_user, "interactions per user");
  app.add_option("--seed", spec.seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  auto interactions = synth::generate(spec);
  synth::write_jsonl_file(interactions, out_path);
  std::cout << "wrote " << interactions.size() << " interactions to " << out_path << "\n";
  return 0;
}
