// Regenerates the bundled synthetic demo corpus (dataset, traces,
// activations, mock script) under a target directory. Deterministic for a
// given spec + seed.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "cotclip/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"write a synthetic offline corpus + mock script"};
  std::string out_dir = "fixtures/demo";
  cotclip::synth::CorpusSpec spec;
  spec.examples = 12;
  spec.min_chunks = 8;
  spec.max_chunks = 12;
  spec.seed = 7;
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--examples", spec.examples, "number of examples");
  app.add_option("--min-chunks", spec.min_chunks, "minimum chunks per trace");
  app.add_option("--max-chunks", spec.max_chunks, "maximum chunks per trace");
  app.add_option("--dim", spec.activation_dim, "activation dimension");
  app.add_option("--seed", spec.seed, "corpus seed");
  app.add_option("--stable-fraction", spec.stable_fraction,
                 "fraction of chunks after which probe answers stabilize");
  CLI11_PARSE(app, argc, argv);

  try {
    auto corpus = cotclip::synth::make_corpus(spec);
    std::filesystem::create_directories(out_dir);
    cotclip::write_dataset(corpus.dataset, out_dir + "/dataset.jsonl");
    cotclip::write_traces(corpus.traces, out_dir + "/traces.jsonl");
    cotclip::write_activations(corpus.activations, out_dir + "/activations.jsonl");
    cotclip::backend::write_script(corpus.script, out_dir + "/mock_script.jsonl");
    std::cout << "wrote " << corpus.dataset.size() << " examples to " << out_dir << "\n";
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
  return 0;
}
