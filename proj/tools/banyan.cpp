// banyan: train / eval / bench / export.

#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "banyan/banyan.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitError = 1;
constexpr int kExitNumeric = 2;

// BANYAN_THREADS caps worker threads. Every stage currently runs on the
// calling thread, so the cap is only validated.
void check_thread_env() {
  if (const char* v = std::getenv("BANYAN_THREADS")) {
    const std::string s(v);
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos || std::stoul(s) == 0) {
      throw banyan::ConfigError("BANYAN_THREADS must be a positive integer");
    }
  }
}

banyan::TrainConfig resolve_config(const std::string& path, std::optional<std::uint64_t> seed) {
  auto config = path.empty() ? banyan::TrainConfig{} : banyan::load_config(path);
  if (seed) config.seed = *seed;
  config.validate();
  return config;
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = banyan::detail::trim(item);
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw banyan::ConfigError("bad batch size: '" + item + "'");
    }
    out.push_back(std::stoul(item));
  }
  if (out.empty()) throw banyan::ConfigError("no batch sizes given");
  return out;
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw banyan::CorpusError(std::string(what) + " not found: " + path);
}

// Writes to `path`, or stdout when empty.
template <class F>
void emit(const std::string& path, F&& write) {
  if (path.empty()) {
    write(std::cout);
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw banyan::CorpusError("cannot write " + path);
  write(out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Banyan: entangled-tree representation learning"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train a model on a corpus");
  std::string corpus, config_path, out_dir;
  std::optional<std::uint64_t> seed;
  bool pretokenized = false, timing = false;
  train->add_option("--corpus", corpus, "UTF-8 text, one sentence per line")->required();
  train->add_option("--config", config_path, "key = value config file");
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--seed", seed, "override the config seed");
  train->add_flag("--pretokenized", pretokenized, "corpus lines are space-separated token ids");
  train->add_flag("--timing", timing, "record wall_ms in metrics.csv");

  // eval
  auto* eval = app.add_subcommand("eval", "zero-shot similarity evaluation");
  std::string model_path, data_path, task = "sentence", pool = "root";
  eval->add_option("--model", model_path, "run directory or model.bnyn")->required();
  eval->add_option("--data", data_path, "TSV text_a<TAB>text_b<TAB>score")->required();
  eval->add_option("--task", task, "word | sentence")->check(CLI::IsMember({"word", "sentence"}));
  eval->add_option("--pool", pool, "root | mean-nodes")->check(CLI::IsMember({"root", "mean-nodes"}));

  // bench
  auto* bench = app.add_subcommand("bench", "node growth of entangled vs sentential structure");
  std::string bench_corpus, bench_config, batch_sizes = "32,64,128,256,512", bench_out, bench_dat, bench_model;
  std::optional<std::uint64_t> bench_seed;
  bench->add_option("--corpus", bench_corpus, "UTF-8 text, one sentence per line")->required();
  bench->add_option("--batch-sizes", batch_sizes, "comma-separated batch sizes");
  bench->add_option("--config", bench_config, "config for a freshly initialised model");
  bench->add_option("--model", bench_model, "use a trained model instead of a fresh one");
  bench->add_option("--seed", bench_seed, "override the config seed");
  bench->add_option("--out", bench_out, "CSV output (default stdout)");
  bench->add_option("--dat", bench_dat, "also write a gnuplot data file");

  // export
  auto* exp = app.add_subcommand("export", "export embeddings (tsv) or an induced graph (graph-json)");
  std::string format = "tsv", exp_model, exp_corpus, exp_out, structure = "entangled";
  std::size_t exp_batch = banyan::kDefaultBatchSize;
  exp->add_option("--model", exp_model, "run directory or model.bnyn")->required();
  exp->add_option("--format", format, "tsv | graph-json")->check(CLI::IsMember({"tsv", "graph-json"}));
  exp->add_option("--corpus", exp_corpus, "sentences for graph-json (first batch is exported)");
  exp->add_option("--batch-size", exp_batch, "sentences in the exported graph");
  exp->add_option("--structure", structure, "entangled | sentential")
      ->check(CLI::IsMember({"entangled", "sentential"}));
  exp->add_option("--out", exp_out, "output file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    check_thread_env();

    if (*train) {
      require_file(corpus, "corpus");
      const auto config = resolve_config(config_path, seed);
      try {
        auto result = banyan::train_to_directory(config, corpus, out_dir, {pretokenized, timing});
        if (!result.epochs.empty()) {
          const auto& last = result.epochs.back();
          std::cout << "epoch " << last.epoch << ": loss " << banyan::format_float(last.loss) << ", recon_acc "
                    << banyan::format_float(last.recon_acc) << ", steps " << last.steps << '\n';
        }
      } catch (const banyan::NumericError& e) {
        std::cerr << "training aborted: " << e.what() << " (last good checkpoint kept in " << out_dir << ")\n";
        return kExitNumeric;
      }
      return 0;
    }

    if (*eval) {
      const auto model = banyan::load_model(model_path);
      require_file(data_path, "dataset");
      const auto level = task == "word" ? banyan::TaskLevel::word : banyan::TaskLevel::sentence;
      const auto ds = banyan::read_dataset(data_path, level);
      const auto report =
          banyan::evaluate(model, ds, pool == "root" ? banyan::Pooling::root : banyan::Pooling::mean_nodes);
      std::cout << report.to_json().dump() << '\n';
      return 0;
    }

    if (*bench) {
      require_file(bench_corpus, "corpus");
      const auto sizes = parse_sizes(batch_sizes);
      const auto config = resolve_config(bench_config, bench_seed);
      const auto lines = banyan::read_lines(bench_corpus);
      std::vector<banyan::NodeGrowthRow> rows;
      if (!bench_model.empty()) {
        const auto model = banyan::load_model(bench_model);
        const auto seqs = banyan::tokenize_corpus(lines, model.vocab, config.max_len);
        rows = banyan::node_growth<float>(seqs, sizes, model.params);
      } else {
        const auto vocab = banyan::build_vocab(lines, config.min_count);
        const auto seqs = banyan::tokenize_corpus(lines, vocab, config.max_len);
        const auto params = banyan::init_parameters<float>(config.functions, vocab.size(), config.embedding(),
                                                           config.init_range, banyan::mix_seed(config.seed, 0x1417));
        rows = banyan::node_growth<float>(seqs, sizes, params);
      }
      emit(bench_out, [&](std::ostream& o) { banyan::write_node_growth_csv(o, rows); });
      if (!bench_dat.empty()) emit(bench_dat, [&](std::ostream& o) { banyan::write_node_growth_dat(o, rows); });
      return 0;
    }

    if (*exp) {
      const auto model = banyan::load_model(exp_model);
      if (format == "tsv") {
        emit(exp_out, [&](std::ostream& o) { banyan::write_embeddings_tsv(o, model); });
        return 0;
      }
      if (exp_corpus.empty()) throw banyan::ConfigError("graph-json export needs --corpus");
      require_file(exp_corpus, "corpus");
      if (exp_batch == 0) throw banyan::ConfigError("batch size must be positive");
      auto seqs = banyan::tokenize_corpus(banyan::read_lines(exp_corpus), model.vocab);
      if (seqs.empty()) throw banyan::CorpusError("empty corpus");
      if (seqs.size() > exp_batch) seqs.resize(exp_batch);
      const auto kind = structure == "entangled" ? banyan::StructureKind::entangled : banyan::StructureKind::sentential;
      const auto graph = banyan::induce(kind, std::span<const banyan::TokenSequence>(seqs), model.params);
      emit(exp_out, [&](std::ostream& o) { o << banyan::to_json(graph).dump() << '\n'; });
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return 0;
}
