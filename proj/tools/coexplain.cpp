// Command-line front end. Every subcommand reads files, calls one library
// operation and prints JSON (or CSV for bench-finetune) on stdout.
// Exit status: 0 ok, 2 invalid input, 1 anything else.

#include "coexplain/gateway.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>

using namespace coexplain;

namespace {

struct DataArgs {
  std::string data;
  std::string schema;
  std::string label;
  std::string split;
  std::uint64_t seed = 0;

  void add_to(CLI::App* cmd, bool split_flag = true) {
    cmd->add_option("--data", data, "CSV file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--schema", schema, "schema JSON (attributes, label, classes, split)")->check(CLI::ExistingFile);
    cmd->add_option("--label", label, "label column, when no schema is given (kinds are inferred)");
    if (split_flag) cmd->add_option("--split", split, "guideline predicate, e.g. \"sex==Female\"; overrides the schema's");
    cmd->add_option("--seed", seed, "seed for the train/test shuffle and training");
  }

  DatasetSpec spec(const std::string& csv) const {
    DatasetSpec s;
    if (!schema.empty()) {
      s = dataset_spec_from_json(read_json(schema));
    } else if (!label.empty()) {
      s = infer_spec(csv, label);
    } else {
      throw ValidationError("give --schema or --label");
    }
    if (!split.empty()) s.split = parse_predicate(split);
    return s;
  }

  Dataset load() const {
    const auto csv = SessionStore::read_file(data);
    PartitionConfig pc;
    pc.seed = seed;
    auto ds = load_dataset(csv, spec(csv), pc);
    ds.validate();
    return ds;
  }

  Dataset load_split() const {
    auto ds = load();
    if (ds.indices(TagFilter::of(Distribution::guideline, Fold::train)).empty() ||
        ds.indices(TagFilter::of(Distribution::pretrained, Fold::train)).empty()) {
      throw ValidationError("a guideline/pretrained split is required (--split or the schema's \"split\")");
    }
    return ds;
  }

  static Json read_json(const std::string& path) {
    try {
      return Json::parse(SessionStore::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(path + ": " + e.what());
    }
  }
};

DecisionTree read_rules(const std::string& path, const Dataset& ds) {
  return from_jsonlogic_text(SessionStore::read_file(path), ds.schema, ds.class_names);
}

Json dist_shift_json(const DistShiftReport& r) {
  Json j = Json::object();
  j["per_feature_wasserstein"] = r.per_feature_wasserstein;
  j["mean_wasserstein"] = r.mean_wasserstein;
  j["label_kl"] = r.label_kl;
  return j;
}

void print(const Json& j) { std::cout << j.dump(2) << "\n"; }

ModelConfig model_config(std::uint64_t seed, std::size_t epochs) {
  ModelConfig mc;
  mc.train.seed = seed;
  mc.train.epochs = epochs;
  return mc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Co-editing of model explanations: rule compilation, distillation and enhancement"};
  app.require_subcommand(1);

  DataArgs d;

  auto* ingest = app.add_subcommand("ingest", "load a dataset and report its partition and distribution shift");
  d.add_to(ingest);

  std::size_t epochs = 5;
  std::string model_out;
  auto* guideline = app.add_subcommand("guideline", "train the guideline model and print its rules");
  d.add_to(guideline);
  guideline->add_option("--epochs", epochs, "training epochs");
  guideline->add_option("--model-out", model_out, "also write the network checkpoint here");

  std::string rules;
  ParseConfig pc;
  auto* parse_cmd = app.add_subcommand("parse", "compile rules into a network checkpoint");
  d.add_to(parse_cmd, false);
  parse_cmd->add_option("--rules", rules, "JSONLogic rules")->required()->check(CLI::ExistingFile);
  parse_cmd->add_option("--steepness", pc.steepness, "sigmoid steepness k");
  parse_cmd->add_option("--pad", pc.pad_width_factor, "hidden width factor");
  parse_cmd->add_option("--extra-layers", pc.extra_layers, "pass-through layers before the output");

  std::string checkpoint;
  std::size_t depth = 4;
  bool fixed_depth = false;
  auto* distill_cmd = app.add_subcommand("distill", "explain a network checkpoint with a decision tree");
  d.add_to(distill_cmd, false);
  distill_cmd->add_option("--checkpoint", checkpoint, "network checkpoint")->required()->check(CLI::ExistingFile);
  distill_cmd->add_option("--depth", depth, "maximum tree depth");
  distill_cmd->add_flag("--fixed-depth", fixed_depth, "use exactly --depth instead of the shallowest faithful depth");

  std::string mode = "values";
  int prediction = 50, structure = 50;
  std::vector<std::string> locked, restricted;
  std::size_t enhance_epochs = 10;
  double timeout = 0.0;
  bool report = false;
  auto* enhance_cmd = app.add_subcommand("enhance", "enhance rules against data; prints the enhanced rules");
  d.add_to(enhance_cmd);
  enhance_cmd->add_option("--mode", mode, "values | flowchart")->check(CLI::IsMember({"values", "flowchart"}));
  enhance_cmd->add_option("--rules", rules, "JSONLogic rules")->required()->check(CLI::ExistingFile);
  enhance_cmd->add_option("--prediction-similarity", prediction, "0..100")->check(CLI::Range(0, 100));
  enhance_cmd->add_option("--structure-similarity", structure, "0..100")->check(CLI::Range(0, 100));
  enhance_cmd->add_option("--lock", locked, "rule path of a node whose threshold stays fixed (\"\" is the root)");
  enhance_cmd->add_option("--restrict", restricted, "rule path of a node that is costlier to change");
  enhance_cmd->add_option("--epochs", enhance_epochs, "training epochs");
  enhance_cmd->add_option("--timeout", timeout, "seconds; 0 disables");
  enhance_cmd->add_flag("--report", report, "print the full result (script, metrics, loss history)");

  std::string guideline_rules;
  auto* eval = app.add_subcommand("eval", "accuracy, faithfulness and distance-to-guideline of a model");
  d.add_to(eval);
  eval->add_option("--checkpoint", checkpoint, "network checkpoint; default trains one on the pretrained rows")
      ->check(CLI::ExistingFile);
  eval->add_option("--rules", rules, "explanation rules; default distills the network")->check(CLI::ExistingFile);
  eval->add_option("--guideline", guideline_rules, "guideline rules; default trains the guideline model")
      ->check(CLI::ExistingFile);
  eval->add_option("--epochs", epochs, "epochs for models trained here");

  std::vector<double> fractions{0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0};
  auto* bench = app.add_subcommand("bench-finetune", "fine-tuning baseline curve as CSV");
  d.add_to(bench);
  bench->add_option("--fractions", fractions, "shares of the guideline training rows")->delimiter(',');
  bench->add_option("--checkpoint", checkpoint, "pretrained network; default trains one")->check(CLI::ExistingFile);
  bench->add_option("--guideline", guideline_rules, "labeling rules; default trains the guideline model")
      ->check(CLI::ExistingFile);
  bench->add_option("--epochs", epochs, "epochs for models trained here");

  std::string bind;
  std::string data_dir;
  auto* serve = app.add_subcommand("serve", "run the HTTP API (env COEXPLAIN_BIND, COEXPLAIN_DATA_DIR)");
  serve->add_option("--bind", bind, "host:port, default $COEXPLAIN_BIND or 127.0.0.1:8080");
  serve->add_option("--data-dir", data_dir, "session storage, default $COEXPLAIN_DATA_DIR or ./coexplain-data");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*ingest) {
      const auto ds = d.load();
      Json j = Json::object();
      j["rows"] = ds.size();
      j["class_names"] = ds.class_names;
      j["attributes"] = schema_to_json(ds.schema);
      Json parts = Json::object();
      for (const auto dist : {Distribution::guideline, Distribution::pretrained}) {
        for (const auto fold : {Fold::train, Fold::test}) {
          const std::string key = std::string(dist == Distribution::guideline ? "guideline" : "pretrained") + "_" +
                                  (fold == Fold::train ? "train" : "test");
          parts[key] = ds.indices(TagFilter::of(dist, fold)).size();
        }
      }
      j["partition"] = std::move(parts);
      const auto g = ds.filter(TagFilter{Distribution::guideline, std::nullopt});
      const auto p = ds.filter(TagFilter{Distribution::pretrained, std::nullopt});
      if (!g.empty() && !p.empty()) j["shift"] = dist_shift_json(dist_shift(g, p));
      print(j);
    } else if (*guideline) {
      const auto ds = d.load_split();
      const auto m = generate_guideline(ds, model_config(d.seed, epochs));
      if (!model_out.empty()) {
        std::ofstream out(model_out);
        out << to_checkpoint(m.net).dump() << "\n";
        if (!out) throw std::runtime_error("cannot write " + model_out);
      }
      print(to_jsonlogic(m.tree, ds.schema));
    } else if (*parse_cmd) {
      const auto ds = d.load();
      pc.validate();
      print(to_checkpoint(parse(read_rules(rules, ds), ds.num_features(), pc)));
    } else if (*distill_cmd) {
      const auto ds = d.load();
      const auto net = from_checkpoint(DataArgs::read_json(checkpoint));
      if (net.input_width() != ds.num_features()) throw ValidationError("checkpoint input width does not match the data");
      const auto train = ds.filter(TagFilter::of(Fold::train));
      const auto r = fixed_depth ? distill(net, train.rows, ds.class_names, depth)
                                 : tune_depth(net, train.rows, ds.class_names, depth);
      print(to_jsonlogic(r.tree, ds.schema));
    } else if (*enhance_cmd) {
      const auto ds = d.load();
      const auto user = read_rules(rules, ds);
      Json cj = Json::object();
      cj["prediction_similarity"] = prediction;
      cj["structure_similarity"] = structure;
      cj["locked"] = locked;
      cj["restricted"] = restricted;
      const auto c = constraints_from_json(cj, user);
      EnhanceConfig ec;
      ec.train.epochs = enhance_epochs;
      ec.train.seed = d.seed;
      ec.deadline_seconds = timeout;
      // With a split the model learns the pretrained side; otherwise every row.
      const bool split = !ds.indices(TagFilter::of(Distribution::guideline, Fold::train)).empty();
      const auto train = split ? ds.filter(TagFilter::of(Distribution::pretrained, Fold::train))
                               : ds.filter(TagFilter::of(Fold::train));
      const auto test = split ? ds.filter(TagFilter::of(Distribution::pretrained, Fold::test))
                              : ds.filter(TagFilter::of(Fold::test));
      const auto r = enhance(enhance_mode_from_string(mode), user, train, test, ec, c);
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
      print(report ? enhance_result_to_json(r, ds.schema) : to_jsonlogic(r.tree, ds.schema));
    } else if (*eval) {
      const auto ds = d.load_split();
      const auto mc = model_config(d.seed, epochs);
      const auto pre_train = ds.filter(TagFilter::of(Distribution::pretrained, Fold::train));
      Network net;
      DecisionTree explanation;
      if (checkpoint.empty()) {
        auto m = train_explained_model(pre_train, mc);
        net = std::move(m.net);
        explanation = std::move(m.tree);
      } else {
        net = from_checkpoint(DataArgs::read_json(checkpoint));
        if (net.input_width() != ds.num_features()) {
          throw ValidationError("checkpoint input width does not match the data");
        }
        explanation = tune_depth(net, ds.filter(TagFilter::of(Fold::train)).rows, ds.class_names).tree;
      }
      if (!rules.empty()) explanation = read_rules(rules, ds);
      const auto guide = guideline_rules.empty() ? generate_guideline(ds, mc).tree : read_rules(guideline_rules, ds);
      auto j = evaluation_block(ds, net, explanation, guide);
      j["explanation"] = to_jsonlogic(explanation, ds.schema);
      print(j);
    } else if (*bench) {
      const auto ds = d.load_split();
      const auto mc = model_config(d.seed, epochs);
      const auto net = checkpoint.empty()
                           ? train_explained_model(ds.filter(TagFilter::of(Distribution::pretrained, Fold::train)), mc).net
                           : from_checkpoint(DataArgs::read_json(checkpoint));
      const auto oracle = guideline_rules.empty() ? generate_guideline(ds, mc).tree : read_rules(guideline_rules, ds);
      FinetuneConfig fc;
      fc.train.seed = d.seed;
      const auto curve = finetune_baseline(net, ds, oracle, fractions, fc);
      std::cout << "fraction,rows,guideline_accuracy,pretrained_accuracy,ted_to_guideline,ted_to_pretrained\n";
      for (const auto& p : curve) {
        std::cout << p.fraction << "," << p.rows << "," << p.guideline_accuracy << "," << p.pretrained_accuracy << ","
                  << p.ted_to_guideline << "," << p.ted_to_pretrained << "\n";
      }
    } else if (*serve) {
      GatewayConfig gc;
      gc.data_dir = data_dir.empty() ? env_or("COEXPLAIN_DATA_DIR", "coexplain-data") : data_dir;
      const auto addr = parse_bind_address(bind.empty() ? env_or("COEXPLAIN_BIND", "") : bind);
      Gateway gateway(gc);
      HttpServer server(gateway);
      std::cerr << "serving on " << addr.host << ":" << addr.port << ", data in " << gc.data_dir.string() << "\n";
      server.run(addr);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what();
    if (!e.path().empty()) std::cerr << " (at " << e.path() << ")";
    std::cerr << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
