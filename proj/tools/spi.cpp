// Command-line front end: ingest, filter, train-embeddings, train, predict,
// evaluate, sweep, serve.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "spi/pipeline.hpp"
#include "spi/review.hpp"
#include "spi/schema.hpp"
#include "spi/service.hpp"

namespace fs = std::filesystem;

namespace {

std::vector<spi::CommitRecord> read_corpus_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw spi::Error("missing_input", spi::concat("cannot open corpus ", path.string()));
  return spi::read_corpus(in);
}

void write_corpus_file(const fs::path& path, const std::vector<spi::CommitRecord>& records) {
  std::ofstream out(path);
  if (!out) throw spi::Error("io_error", spi::concat("cannot write ", path.string()));
  spi::write_corpus(records, out);
}

std::map<std::string, spi::Label> read_labels_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw spi::Error("missing_input", spi::concat("cannot open labels ", path.string()));
  return spi::read_label_table(in);
}

void emit(const nlohmann::json& j, const std::string& output) {
  if (output.empty() || output == "-") {
    std::cout << j.dump(2) << '\n';
  } else {
    spi::write_json_file(output, j);
  }
}

void print_error(const std::string& code, const std::string& message) {
  std::cerr << nlohmann::json{{"format_version", spi::kFormatVersion}, {"error", {{"code", code}, {"message", message}}}}.dump()
            << '\n';
}

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(static_cast<std::size_t>(std::stoul(item)));
    } catch (const std::logic_error&) {
      throw spi::Error("invalid_config", spi::concat("'", item, "' in list '", s, "' is not a positive integer"));
    }
  }
  return out;
}

httplib::Server* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Security patch identification pipeline"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON config file (SPI_* environment variables override it)");
  app.add_option("--seed", seed, "Seed for every random choice");

  auto* ingest = app.add_subcommand("ingest", "Parse log-with-patches exports into corpus JSONL");
  std::vector<std::string> ingest_inputs;
  std::string ingest_project, ingest_output = "-", ingest_labels;
  ingest->add_option("--input", ingest_inputs, "Export files ('-' for stdin)")->required();
  ingest->add_option("--project", ingest_project, "Project name stored on every record")->required();
  ingest->add_option("--output", ingest_output, "Corpus JSONL ('-' for stdout)");
  ingest->add_option("--labels", ingest_labels, "hash<TAB>SP|NSP table applied to the records");

  auto* filter = app.add_subcommand("filter", "Keep commits whose messages match a security keyword");
  std::string filter_corpus, filter_output, filter_report, filter_keywords;
  filter->add_option("--corpus", filter_corpus, "Input corpus JSONL")->required();
  filter->add_option("--output", filter_output, "Kept commits as JSONL")->required();
  filter->add_option("--report", filter_report, "FilterReport JSON ('-' for stdout)")->required();
  filter->add_option("--keywords", filter_keywords, "Keyword directory (general.txt plus <project>.txt)");

  auto* embed = app.add_subcommand("train-embeddings", "Pretrain message and code word2vec embeddings");
  std::string embed_corpus, embed_output;
  embed->add_option("--corpus", embed_corpus, "Corpus JSONL")->required();
  embed->add_option("--output", embed_output, "Directory receiving msg.emb and code.emb")->required();

  auto* train = app.add_subcommand("train", "Train SPI-CM, SPI-CR and the ensemble into a bundle");
  std::string train_corpus, train_bundle_dir, train_embeddings, train_labels;
  train->add_option("--corpus", train_corpus, "Labeled corpus JSONL")->required();
  train->add_option("--labels", train_labels, "Optional hash<TAB>SP|NSP table applied before training");
  train->add_option("--bundle", train_bundle_dir, "Output bundle directory")->required();
  train->add_option("--embeddings", train_embeddings, "Directory with pretrained msg.emb and code.emb");

  auto* predict = app.add_subcommand("predict", "Score commits with a trained bundle");
  std::string predict_bundle, predict_corpus, predict_output = "-";
  std::optional<double> predict_weight, predict_threshold;
  predict->add_option("--bundle", predict_bundle, "Bundle directory")->required();
  predict->add_option("--corpus", predict_corpus, "Corpus JSONL")->required();
  predict->add_option("--output", predict_output, "Prediction JSONL ('-' for stdout)");
  predict->add_option("--weight", predict_weight, "Override the ensemble weight w");
  predict->add_option("--threshold", predict_threshold, "Override the decision threshold");

  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against labels");
  std::string eval_predictions, eval_labels, eval_corpus, eval_bucket = "none", eval_output = "-";
  evaluate->add_option("--predictions", eval_predictions, "Prediction JSONL")->required();
  auto* labels_opt = evaluate->add_option("--labels", eval_labels, "hash<TAB>SP|NSP table");
  auto* corpus_opt = evaluate->add_option("--corpus", eval_corpus, "Labeled corpus JSONL (needed for buckets)");
  labels_opt->excludes(corpus_opt);
  evaluate->add_option("--bucket", eval_bucket, "none, message or code length bins")
      ->check(CLI::IsMember({"none", "message", "code"}));
  evaluate->add_option("--output", eval_output, "Metrics JSON ('-' for stdout)");

  auto* sweep = app.add_subcommand("sweep", "Train and evaluate over a grid of embedding dims and LSTM units");
  std::string sweep_corpus, sweep_dims = "100,200,300,400", sweep_units = "32,64,128", sweep_target = "ensemble",
                            sweep_output = "-";
  sweep->add_option("--corpus", sweep_corpus, "Labeled corpus JSONL")->required();
  sweep->add_option("--dims", sweep_dims, "Comma-separated embedding dimensions");
  sweep->add_option("--units", sweep_units, "Comma-separated LSTM unit counts");
  sweep->add_option("--target", sweep_target, "ensemble, cm or cr")->check(CLI::IsMember({"ensemble", "cm", "cr"}));
  sweep->add_option("--output", sweep_output, "Results table JSON ('-' for stdout)");

  auto* serve = app.add_subcommand("serve", "Run the HTTP review and prediction service");
  std::string serve_bundle, serve_queue, serve_previous, serve_validation, serve_journal, serve_host, serve_static;
  std::optional<int> serve_port;
  serve->add_option("--bundle", serve_bundle, "Bundle directory")->required();
  serve->add_option("--queue", serve_queue, "Corpus JSONL to predict and enqueue for review");
  serve->add_option("--previous", serve_previous, "Labeled corpus the bundle was trained on");
  serve->add_option("--validation", serve_validation, "Labeled corpus used to compare bundles on retrain");
  serve->add_option("--journal", serve_journal, "Label journal path (overrides service.journal)");
  serve->add_option("--host", serve_host, "Listen address (overrides service.host)");
  serve->add_option("--port", serve_port, "Listen port (overrides service.port)");
  serve->add_option("--static", serve_static, "Directory served at / (overrides service.static_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    auto config = spi::load_config(config_path.empty() ? std::nullopt : std::optional<fs::path>(config_path));
    if (seed) config["seed"] = *seed;

    if (*ingest) {
      std::vector<spi::CommitRecord> records;
      std::size_t binary = 0;
      for (const auto& input : ingest_inputs) {
        spi::ParseResult parsed;
        if (input == "-") {
          parsed = spi::parse_commit_stream(std::cin, ingest_project);
        } else {
          std::ifstream in(input, std::ios::binary);
          if (!in) throw spi::Error("missing_input", spi::concat("cannot open export ", input));
          parsed = spi::parse_commit_stream(in, ingest_project);
        }
        binary += parsed.binary_files_skipped;
        records.insert(records.end(), parsed.commits.begin(), parsed.commits.end());
      }
      std::size_t labeled = 0;
      if (!ingest_labels.empty()) labeled = spi::apply_labels(records, read_labels_file(ingest_labels));
      if (ingest_output == "-") {
        spi::write_corpus(records, std::cout);
      } else {
        write_corpus_file(ingest_output, records);
        std::cerr << nlohmann::json{{"commits", records.size()}, {"labeled", labeled}, {"binary_files_skipped", binary}}.dump()
                  << '\n';
      }
    } else if (*filter) {
      if (!filter_keywords.empty()) config["keywords"]["dir"] = filter_keywords;
      const auto result = spi::filter_corpus(read_corpus_file(filter_corpus), spi::keywords_from_config(config));
      write_corpus_file(filter_output, result.kept);
      emit(result.report.to_json(), filter_report);
    } else if (*embed) {
      const auto pair = spi::train_embeddings(read_corpus_file(embed_corpus), config);
      spi::save_embeddings(embed_output, pair);
      std::cout << nlohmann::json{{"format_version", spi::kFormatVersion},
                                  {"message_vocabulary", pair.message.size()},
                                  {"code_vocabulary", pair.code.size()},
                                  {"dim", pair.message.dim()}}
                       .dump()
                << '\n';
    } else if (*train) {
      auto corpus = read_corpus_file(train_corpus);
      if (!train_labels.empty()) spi::apply_labels(corpus, read_labels_file(train_labels));
      std::optional<spi::EmbeddingPair> embeddings;
      if (!train_embeddings.empty()) embeddings = spi::load_embeddings(train_embeddings);
      auto bundle = spi::train_bundle(corpus, config, std::move(embeddings));
      spi::save_bundle(train_bundle_dir, bundle);
      std::cout << nlohmann::json{{"format_version", spi::kFormatVersion},
                                  {"bundle", train_bundle_dir},
                                  {"cm_best_epoch", bundle.cm_log.best_epoch},
                                  {"cr_best_epoch", bundle.cr_log.best_epoch},
                                  {"weight", bundle.model.weight}}
                       .dump()
                << '\n';
    } else if (*predict) {
      auto bundle = spi::load_bundle(predict_bundle);
      if (predict_weight) bundle.model.weight = *predict_weight;
      if (predict_threshold) bundle.model.threshold = *predict_threshold;
      const auto preds = spi::predict_corpus(bundle.model, read_corpus_file(predict_corpus));
      if (predict_output == "-") {
        spi::write_predictions(preds, std::cout);
      } else {
        std::ofstream out(predict_output);
        if (!out) throw spi::Error("io_error", spi::concat("cannot write ", predict_output));
        spi::write_predictions(preds, out);
      }
    } else if (*evaluate) {
      std::ifstream in(eval_predictions);
      if (!in) throw spi::Error("missing_input", spi::concat("cannot open predictions ", eval_predictions));
      const auto preds = spi::read_predictions(in);
      const auto bucket = eval_bucket == "message" ? spi::models::BucketBy::MessageLength
                          : eval_bucket == "code"  ? spi::models::BucketBy::CodeLength
                                                   : spi::models::BucketBy::None;
      spi::models::Evaluation result;
      if (!eval_corpus.empty()) {
        result = spi::evaluate_against(preds, read_corpus_file(eval_corpus), bucket);
      } else if (!eval_labels.empty()) {
        if (bucket != spi::models::BucketBy::None) {
          throw spi::Error("invalid_config", "length buckets need --corpus rather than --labels");
        }
        result = spi::models::evaluate(preds, read_labels_file(eval_labels));
      } else {
        throw spi::Error("missing_input", "evaluate needs --labels or --corpus");
      }
      emit(result.to_json(), eval_output);
    } else if (*sweep) {
      const auto target = sweep_target == "cm"   ? spi::SweepTarget::Cm
                          : sweep_target == "cr" ? spi::SweepTarget::Cr
                                                 : spi::SweepTarget::Ensemble;
      const auto cells = spi::sweep(read_corpus_file(sweep_corpus), config, parse_list(sweep_dims),
                                    parse_list(sweep_units), target);
      emit(spi::sweep_table(cells), sweep_output);
    } else if (*serve) {
      auto& s = config["service"];
      if (!serve_journal.empty()) s["journal"] = serve_journal;
      if (!serve_host.empty()) s["host"] = serve_host;
      if (serve_port) s["port"] = *serve_port;
      if (!serve_static.empty()) s["static_dir"] = serve_static;
      auto bundle = std::make_shared<const spi::Bundle>(spi::load_bundle(serve_bundle));
      spi::review::LabelStore store(s.at("journal").get<std::string>(), s.at("compact_every").get<std::size_t>());
      if (!serve_queue.empty()) {
        const auto commits = read_corpus_file(serve_queue);
        const auto preds = spi::predict_corpus(bundle->model, commits);
        std::vector<spi::review::QueueItem> items;
        for (std::size_t i = 0; i < commits.size(); ++i) items.push_back({commits[i], preds[i]});
        store.add_items(items);
      }
      std::vector<spi::CommitRecord> previous, validation;
      if (!serve_previous.empty()) previous = read_corpus_file(serve_previous);
      if (!serve_validation.empty()) validation = read_corpus_file(serve_validation);
      spi::service::Service service(config, bundle, store, previous, validation);
      httplib::Server server;
      service.bind(server, s.at("static_dir").get<std::string>());
      g_server = &server;
      std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
      });
      std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
      });
      const auto host = s.at("host").get<std::string>();
      const int port = s.at("port").get<int>();
      std::cerr << nlohmann::json{{"listening", spi::concat(host, ":", port)}}.dump() << '\n';
      if (!server.listen(host, port)) throw spi::Error("io_error", spi::concat("cannot listen on ", host, ":", port));
    }
  } catch (const spi::Error& e) {
    print_error(e.code(), e.what());
    return 1;
  } catch (const nlohmann::json::exception& e) {
    print_error("invalid_config", e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}
