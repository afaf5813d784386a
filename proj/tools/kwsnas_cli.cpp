// SPDX-License-Identifier: Apache-2.0
//
// Copyright 2026 The kwsnas Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// kwsnas: feature prep, architecture search, retraining, bit sweeps, cost
// reports and evaluation.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>

#include <iostream>

#include "kwsnas/config.hpp"
#include "kwsnas/kwsnas.hpp"

namespace fs = std::filesystem;
using namespace kwsnas;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Options {
  std::string config_path;
  ConfigMap flags;
  std::string arch_path;
  std::string checkpoint_path;
  std::string split = "test";
  std::string bits_list = "1,2,3,4,5,6,7,8";
  std::optional<std::string> epochs;
};

template <typename F>
void write_text(const fs::path& p, F&& body) {
  write_file_atomically(p, [&](std::ostream& os) {
    os.imbue(std::locale::classic());
    body(os);
  });
}

std::string bits_label(const QuantMode& q) { return q ? std::to_string(q->bits) : "off"; }

double model_bytes(const OpCost& c, const QuantMode& q, bool include_exempt) {
  if (!q) return 4.0 * static_cast<double>(c.weights + (include_exempt ? c.exempt_params : 0));
  return c.bytes(*q, include_exempt);
}

ArchitectureDescription load_arch(const std::string& path) {
  if (path.empty()) throw UsageError("--arch is required");
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open architecture file " + path);
  return read_architecture(is);
}

RunConfig config_for(const Options& o, const char* epochs_key) {
  ConfigMap file;
  if (!o.config_path.empty()) file = load_config_file(o.config_path);
  ConfigMap flags = o.flags;
  if (o.epochs) {
    if (!epochs_key) throw UsageError("--epochs is not used by this command");
    flags[epochs_key] = *o.epochs;
  }
  RunConfig c = resolve_config(file, flags);
  fs::create_directories(c.out);
  return c;
}

DataSplits splits_for(const RunConfig& c, bool augment = true) {
  LoadedDataset d = load_dataset(c);
  return make_splits(d.manifest, d.store, c.mfcc(), augment);
}

void check_classes(const ArchitectureDescription& a, const DataSplits& s) {
  if (a.num_classes != s.num_classes()) {
    throw std::runtime_error("architecture has " + std::to_string(a.num_classes) + " classes, dataset has " +
                             std::to_string(s.num_classes()));
  }
}

// Commands -----------------------------------------------------------------------

int cmd_features(const Options& o) {
  const RunConfig c = config_for(o, nullptr);
  LoadedDataset d = load_dataset(c);
  SampleLoader loader(d.manifest, d.store, c.mfcc());
  const fs::path data = c.out / "features.f32", side = c.out / "features.manifest";
  write_file_atomically(side, [&](std::ostream& sidecar) {
    sidecar.imbue(std::locale::classic());
    write_file_atomically(data, [&](std::ostream& os) { write_feature_cache(os, sidecar, loader); });
  });
  std::cout << "wrote " << d.manifest.entries.size() << " feature matrices to " << data.string() << '\n';
  return 0;
}

int cmd_search(const Options& o) {
  const RunConfig c = config_for(o, "search_epochs");
  DataSplits s = splits_for(c);
  Supernet net(network_config(c, s.num_classes()), c.seed);
  SearchConfig sc;
  sc.schedule = c.schedule;
  sc.tradeoff = c.tradeoff();
  sc.quant = c.quant;
  sc.seed = c.seed;
  sc.checkpoint_path = c.out / "supernet.ckpt";
  sc.on_epoch = [](const SearchLogRow& r) {
    std::cout << "epoch " << r.epoch << " ce_train " << format_number(r.ce_train, 5) << " ce_val "
              << format_number(r.ce_val, 5) << " expected_ops " << format_number(r.expected_ops, 6) << '\n';
  };
  SearchResult r = run_search(net, *s.train, *s.validation, sc);
  write_text(c.out / "search_log.csv", [&](std::ostream& os) { write_search_log(os, r.log); });
  write_text(c.out / "architecture.txt", [&](std::ostream& os) { write_architecture(os, r.architecture); });
  const OpCost cost = model_cost(r.architecture);
  std::cout << "derived architecture: " << r.architecture.active_layer_count() << " active layers, "
            << cost.ops << " ops -> " << (c.out / "architecture.txt").string() << '\n';
  return 0;
}

void write_summary(std::ostream& os, const QuantMode& q, const TrainResult& r, const OpCost& cost) {
  os << "bits,acc_train,acc_val,acc_test,ops,weights,exempt_params,bytes,bytes_with_exempt\n"
     << bits_label(q) << ',' << format_number(r.acc_train) << ',' << format_number(r.acc_val) << ','
     << format_number(r.acc_test) << ',' << cost.ops << ',' << cost.weights << ',' << cost.exempt_params << ','
     << format_number(model_bytes(cost, q, false), 12) << ',' << format_number(model_bytes(cost, q, true), 12)
     << '\n';
}

int cmd_train(const Options& o) {
  const ArchitectureDescription arch = load_arch(o.arch_path);
  const RunConfig c = config_for(o, "retrain_epochs");
  DataSplits s = splits_for(c);
  check_classes(arch, s);
  TrainResult r = retrain(arch, s, c.schedule, c.quant, c.seed);
  const OpCost cost = model_cost(arch);
  write_text(c.out / "metrics.csv", [&](std::ostream& os) { write_metrics(os, r.metrics); });
  write_text(c.out / "summary.csv", [&](std::ostream& os) { write_summary(os, c.quant, r, cost); });
  save_checkpoint(c.out / "model.ckpt", network_checkpoint(r.network, c.quant));
  if (c.quant) {
    write_file_atomically(c.out / "model.kwsq",
                          [&](std::ostream& os) { write_quantized_blob(os, r.network.parameters(), *c.quant); });
  }
  std::cout << "bits " << bits_label(c.quant) << " test accuracy " << format_number(r.acc_test, 4) << '\n';
  return 0;
}

std::vector<int> parse_bits(const std::string& list) {
  std::vector<int> out;
  std::stringstream ss(list);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const QuantMode q = parse_quant_bits("bits", trim(tok));
    if (!q) throw ConfigError("bits", "entries must be in 1-8");
    out.push_back(q->bits);
  }
  if (out.empty()) throw ConfigError("bits", "empty list");
  return out;
}

int cmd_bitsweep(const Options& o) {
  const ArchitectureDescription arch = load_arch(o.arch_path);
  const std::vector<int> bits = parse_bits(o.bits_list);
  const RunConfig c = config_for(o, "retrain_epochs");
  DataSplits s = splits_for(c);
  check_classes(arch, s);
  const OpCost cost = model_cost(arch);
  // Full precision training is shared by every post-rounded row.
  TrainResult fp = retrain(arch, s, c.schedule, std::nullopt, c.seed);
  std::ostringstream rows;
  rows.imbue(std::locale::classic());
  rows << "bits,method,accuracy,bytes\n";
  for (int k : bits) {
    const QuantizerSpec spec(k);
    TrainResult ste = retrain(arch, s, c.schedule, spec, c.seed);
    Network rounded = fp.network;
    post_quantize(rounded.parameters(), spec);
    const double post_acc = evaluate(rounded, *s.test, std::nullopt).accuracy;
    const std::string bytes = format_number(cost.bytes(spec), 12);
    rows << k << ",ste," << format_number(ste.acc_test) << ',' << bytes << '\n';
    rows << k << ",post," << format_number(post_acc) << ',' << bytes << '\n';
    std::cout << "bits " << k << " ste " << format_number(ste.acc_test, 4) << " post " << format_number(post_acc, 4)
              << '\n';
  }
  write_text(c.out / "bitsweep.csv", [&](std::ostream& os) { os << rows.str(); });
  return 0;
}

int cmd_cost(const Options& o) {
  const ArchitectureDescription arch = load_arch(o.arch_path);
  const RunConfig c = config_for(o, nullptr);
  const OpCost cost = model_cost(arch);
  std::ostringstream csv;
  csv.imbue(std::locale::classic());
  csv << "bits,ops,weights,exempt_params,bytes,bytes_with_exempt\n"
      << bits_label(c.quant) << ',' << cost.ops << ',' << cost.weights << ',' << cost.exempt_params << ','
      << format_number(model_bytes(cost, c.quant, false), 12) << ','
      << format_number(model_bytes(cost, c.quant, true), 12) << '\n';
  std::cout << csv.str();
  write_text(c.out / "cost.csv", [&](std::ostream& os) { os << csv.str(); });
  return 0;
}

int cmd_eval(const Options& o) {
  if (o.checkpoint_path.empty()) throw UsageError("--checkpoint is required");
  SplitRole role;
  try {
    role = parse_split(o.split);
  } catch (const std::exception&) {
    throw UsageError("--split must be train, validation or test");
  }
  const RunConfig c = config_for(o, nullptr);
  LoadedNetwork m = network_from_checkpoint(load_checkpoint(o.checkpoint_path));
  DataSplits s = splits_for(c, false);
  check_classes(m.network.architecture(), s);
  SplitData& split = role == SplitRole::Train ? *s.train : role == SplitRole::Validation ? *s.validation : *s.test;
  const EvalResult r = evaluate(m.network, split, m.quant);
  const auto& names = s.loader->manifest().class_names;
  write_text(c.out / "confusion.csv", [&](std::ostream& os) {
    os << "true";
    for (const auto& n : names) os << ',' << n;
    os << '\n';
    for (std::size_t i = 0; i < names.size(); ++i) {
      os << names[i];
      for (auto v : r.confusion[i]) os << ',' << v;
      os << '\n';
    }
  });
  write_text(c.out / "eval.csv", [&](std::ostream& os) {
    os << "split,count,accuracy,loss\n"
       << split_name(role) << ',' << r.count << ',' << format_number(r.accuracy) << ',' << format_number(r.loss)
       << '\n';
  });
  std::cout << split_name(role) << " accuracy " << format_number(r.accuracy, 4) << " (" << r.count << " clips)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable architecture search and quantization-aware training for keyword spotting"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;

  app.add_option("--config", o.config_path, "key=value config file");
  // Every config key is also a flag; flags win over the file.
  std::map<std::string, std::string> flag_values;
  const std::vector<std::pair<std::string, std::string>> flag_keys = {
      {"--seed", "seed"},
      {"--out", "out"},
      {"--dataset", "dataset"},
      {"--num-mfcc", "num_mfcc"},
      {"--omega", "omega"},
      {"--base-channels", "base_channels"},
      {"--beta", "beta"},
      {"--ops-target", "ops_target"},
      {"--quant-bits", "quant_bits"},
      {"--pretrain-epochs", "pretrain_epochs"},
      {"--search-epochs", "search_epochs"},
      {"--retrain-epochs", "retrain_epochs"},
      {"--batch-size", "batch_size"},
      {"--pretrain-lr", "pretrain_lr"},
      {"--search-lr", "search_lr"},
      {"--retrain-lr", "retrain_lr"},
      {"--arch-lr", "arch_lr"},
      {"--toy-classes", "toy_classes"},
      {"--toy-per-class", "toy_per_class"},
  };
  for (const auto& [flag, key] : flag_keys) app.add_option(flag, flag_values[key], key);

  auto* features = app.add_subcommand("features", "write the MFCC feature cache");
  auto* search = app.add_subcommand("search", "search an architecture");
  auto* train = app.add_subcommand("train", "retrain an architecture from scratch");
  auto* bitsweep = app.add_subcommand("bitsweep", "STE vs post-rounding accuracy per bit-width");
  auto* cost = app.add_subcommand("cost", "ops and memory of an architecture");
  auto* eval = app.add_subcommand("eval", "evaluate a trained checkpoint");
  for (auto* sub : {search, train, bitsweep}) {
    sub->add_option("--epochs", o.epochs, "epochs of the command's main phase");
  }
  for (auto* sub : {train, bitsweep, cost}) sub->add_option("--arch", o.arch_path, "architecture file")->required();
  bitsweep->add_option("--bits", o.bits_list, "comma-separated bit-widths");
  eval->add_option("--checkpoint", o.checkpoint_path, "model checkpoint")->required();
  eval->add_option("--split", o.split, "train, validation or test");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }
  for (const auto& [flag, key] : flag_keys) {
    if (app.count(flag) > 0) o.flags[key] = flag_values[key];
  }

  try {
    if (*features) return cmd_features(o);
    if (*search) return cmd_search(o);
    if (*train) return cmd_train(o);
    if (*bitsweep) return cmd_bitsweep(o);
    if (*cost) return cmd_cost(o);
    if (*eval) return cmd_eval(o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const SearchDiverged& e) {
    std::cerr << "error: " << e.what();
    if (!e.last_good_checkpoint().empty()) std::cerr << " (last checkpoint: " << e.last_good_checkpoint() << ')';
    std::cerr << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
