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

// Supernet pretraining, alternating weight/architecture optimization, and
// retraining of the derived network.
//
// Weight steps sample one gate per layer from softmax(alpha) and train the
// sampled path on a training batch. Architecture steps use a validation
// batch: the sampled path gives the cross-entropy and dL/dm for every layer
// output m, every candidate o_j is evaluated on the same layer input to form
// dL/dg_j = <dL/dm, o_j(x)>, dL/dp_j is approximated by dL/dg_j, and the
// softmax Jacobian maps that to alpha. The expected-ops regularizer
// contributes its exact gradient.

#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <numbers>

#include "kwsnas/checkpoint.hpp"
#include "kwsnas/dataset.hpp"
#include "kwsnas/supernet.hpp"

namespace kwsnas {

struct SearchSchedule {
  std::size_t pretrain_epochs = 40;
  double pretrain_lr = 0.05;
  std::size_t search_epochs = 120;
  double search_lr = 0.2;
  std::size_t batch_size = 100;
  double arch_lr = 3e-3;  // constant
  std::size_t retrain_epochs = 120;
  double retrain_lr = 0.2;
};

/// lr0 * (1 + cos(pi * t / T)) / 2.
inline double cosine_lr(double step, double total, double lr0) {
  if (total <= 0.0) return lr0;
  if (step < 0.0 || step > total) throw std::out_of_range("cosine_lr step outside [0, total]");
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * step / total));
}

class SearchDiverged : public std::runtime_error {
 public:
  SearchDiverged(const std::string& what, std::string checkpoint)
      : std::runtime_error(what), checkpoint_(std::move(checkpoint)) {}
  /// Path of the last checkpoint written before divergence (may be empty).
  const std::string& last_good_checkpoint() const { return checkpoint_; }

 private:
  std::string checkpoint_;
};

/// Which split fed each kind of update.
struct RoleLedger {
  std::array<std::size_t, 3> weight_batches{};
  std::array<std::size_t, 3> arch_batches{};

  void weight(SplitRole r) { ++weight_batches[static_cast<std::size_t>(r)]; }
  void arch(SplitRole r) { ++arch_batches[static_cast<std::size_t>(r)]; }
};

inline void require_role(const Batch& b, SplitRole want, const char* step) {
  if (b.role != want) {
    throw std::logic_error(std::string(step) + " requires a " + split_name(want) +
                           " batch, got " + split_name(b.role));
  }
}

inline ForwardContext training_context(const QuantMode& quant) {
  ForwardContext ctx;
  ctx.quant = quant;
  return ctx;
}

/// Forward, cross-entropy, backward and SGD on any model with
/// forward/backward/parameters. Returns the batch loss and correct count.
template <typename Model>
std::pair<double, std::size_t> train_on_batch(Model& model, const Batch& batch, double lr,
                                              const QuantMode& quant) {
  auto params = model.parameters();
  zero_grads(params);
  const ForwardContext ctx = training_context(quant);
  Tensor logits = model.forward(batch.inputs, ctx);
  LossResult loss = softmax_cross_entropy(logits, batch.labels);
  model.backward(loss.grad_logits, ctx);
  sgd_step(params, lr);
  std::size_t correct = 0;
  const std::size_t K = logits.dim(1);
  for (std::size_t n = 0; n < batch.labels.size(); ++n) {
    const double* row = logits.data().data() + n * K;
    correct += static_cast<int>(std::max_element(row, row + K) - row) == batch.labels[n];
  }
  return {loss.loss, correct};
}

/// One pretraining step: gates drawn uniformly, alpha untouched.
template <typename Rng>
double pretrain_step(Supernet& net, const Batch& batch, double lr, const QuantMode& quant, Rng& rng) {
  require_role(batch, SplitRole::Train, "pretrain_step");
  net.sample_uniform_gates(rng);
  return train_on_batch(net, batch, lr, quant).first;
}

/// One weight step: gates drawn from softmax(alpha), alpha frozen.
template <typename Rng>
double weight_step(Supernet& net, const Batch& batch, double lr, const QuantMode& quant, Rng& rng) {
  require_role(batch, SplitRole::Train, "weight_step");
  net.sample_gates(rng);
  return train_on_batch(net, batch, lr, quant).first;
}

struct ArchStepOptions {
  /// Replaces the data loss by a constant (its gate gradients become zero).
  std::optional<double> constant_ce;
};

struct ArchStepResult {
  double ce = 0.0;
  double arch_loss = 0.0;
  double expected_ops = 0.0;
  std::vector<std::vector<double>> alpha_grads;
};

/// Exact gradient of ce * (log ops_exp / log target)^beta w.r.t. every alpha,
/// holding ce fixed.
inline std::vector<std::vector<double>> regularizer_alpha_gradient(const Supernet& net, double ce,
                                                                   const TradeoffConfig& cfg) {
  const ArchLoss terms = arch_loss_terms(ce, expected_ops(net), cfg);
  std::vector<std::vector<double>> out;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto p = net.layer(l).choice().probs();
    const auto ops = net.layer(l).candidate_ops();
    std::vector<double> gp(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) gp[j] = terms.d_loss_d_ops * ops[j];
    out.push_back(softmax_backward(p, gp));
  }
  return out;
}

/// One architecture step on a validation batch; updates alpha only.
template <typename Rng>
ArchStepResult arch_step(Supernet& net, const Batch& batch, const TradeoffConfig& cfg,
                         double arch_lr, const QuantMode& quant, Rng& rng,
                         const ArchStepOptions& opts = {}) {
  require_role(batch, SplitRole::Validation, "arch_step");
  net.sample_gates(rng);
  ForwardContext ctx;
  ctx.training = true;
  ctx.update_stats = false;
  ctx.param_grads = false;
  ctx.quant = quant;

  ArchStepResult r;
  std::vector<std::vector<double>> gate_grads(net.num_layers());
  if (opts.constant_ce) {
    r.ce = *opts.constant_ce;
    for (std::size_t l = 0; l < net.num_layers(); ++l) gate_grads[l].assign(net.layer(l).size(), 0.0);
  } else {
    Tensor logits = net.forward(batch.inputs, ctx);
    LossResult loss = softmax_cross_entropy(logits, batch.labels);
    net.backward(loss.grad_logits, ctx);
    r.ce = loss.loss;
    for (std::size_t l = 0; l < net.num_layers(); ++l) gate_grads[l] = net.layer(l).gate_gradients(ctx);
  }
  r.expected_ops = expected_ops(net);
  if (!std::isfinite(r.ce)) {
    // Leave alpha untouched; the caller sees the non-finite loss.
    r.arch_loss = r.ce;
    return r;
  }
  const ArchLoss terms = arch_loss_terms(r.ce, r.expected_ops, cfg);
  r.arch_loss = terms.loss;

  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto p = net.layer(l).choice().probs();
    const auto ops = net.layer(l).candidate_ops();
    std::vector<double> gp(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) {
      gp[j] = terms.d_loss_d_ce * gate_grads[l][j] + terms.d_loss_d_ops * ops[j];
    }
    r.alpha_grads.push_back(softmax_backward(p, gp));
  }
  for (const auto& ga : r.alpha_grads) {
    for (double v : ga) {
      if (!std::isfinite(v)) {
        r.arch_loss = std::numeric_limits<double>::quiet_NaN();
        return r;
      }
    }
  }
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    auto& choice = net.layer(l).choice();
    const auto& ga = r.alpha_grads[l];
    for (std::size_t i = 0; i < ga.size(); ++i) choice.alphas[i] -= arch_lr * ga[i];
    choice.alpha_grad = ga;
  }
  return r;
}

struct SearchLogRow {
  std::size_t epoch = 0;
  double ce_train = 0.0;
  double ce_val = 0.0;
  double expected_ops = 0.0;
  double arch_loss = 0.0;
  double lr = 0.0;
  std::vector<std::size_t> argmax;
};

inline std::string format_number(double v, int precision = 9) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(precision) << v;
  return os.str();
}

inline void write_search_log(std::ostream& os, std::span<const SearchLogRow> rows) {
  os << "epoch,ce_train,ce_val,expected_ops,arch_loss,lr,per_layer_argmax\n";
  for (const auto& r : rows) {
    os << r.epoch << ',' << format_number(r.ce_train) << ',' << format_number(r.ce_val) << ','
       << format_number(r.expected_ops, 12) << ',' << format_number(r.arch_loss) << ','
       << format_number(r.lr) << ',';
    for (std::size_t i = 0; i < r.argmax.size(); ++i) os << (i ? ";" : "") << r.argmax[i];
    os << '\n';
  }
}

struct SearchConfig {
  SearchSchedule schedule;
  TradeoffConfig tradeoff;
  QuantMode quant = QuantizerSpec(8);
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_path;  // empty: no checkpoints
  std::function<void(const SearchLogRow&)> on_epoch;
};

struct SearchResult {
  ArchitectureDescription architecture;
  std::vector<SearchLogRow> log;
  std::vector<double> pretrain_losses;  // one per pretraining batch
  RoleLedger roles;
};

inline std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

/// Pretraining followed by alternating weight and architecture steps, one
/// architecture step (next validation batch, cycling) after each weight step.
inline SearchResult run_search(Supernet& net, SplitData& train, SplitData& validation,
                               const SearchConfig& cfg) {
  if (train.role() != SplitRole::Train || validation.role() != SplitRole::Validation) {
    throw std::logic_error("run_search needs train and validation splits");
  }
  if (validation.size() < 2 || train.size() < 2) throw std::invalid_argument("splits too small");
  cfg.tradeoff.validate();
  std::mt19937_64 data_rng(cfg.seed ^ 0xda7aull);
  std::mt19937_64 gate_rng(cfg.seed ^ 0x6a7eull);
  SearchResult out;
  const auto& s = cfg.schedule;
  std::string last_checkpoint;

  auto check = [&](double loss, const char* where) {
    if (!std::isfinite(loss)) {
      throw SearchDiverged(std::string("loss became non-finite during ") + where, last_checkpoint);
    }
  };

  for (std::size_t epoch = 0; epoch < s.pretrain_epochs; ++epoch) {
    const double lr = cosine_lr(static_cast<double>(epoch), static_cast<double>(s.pretrain_epochs), s.pretrain_lr);
    for (const auto& idx : train.batches(s.batch_size, data_rng, true)) {
      Batch b = train.load_batch(idx, data_rng);
      out.roles.weight(b.role);
      const double loss = pretrain_step(net, b, lr, cfg.quant, gate_rng);
      check(loss, "pretraining");
      out.pretrain_losses.push_back(loss);
    }
  }

  for (std::size_t epoch = 0; epoch < s.search_epochs; ++epoch) {
    const double lr = cosine_lr(static_cast<double>(epoch), static_cast<double>(s.search_epochs), s.search_lr);
    auto train_batches = train.batches(s.batch_size, data_rng, true);
    auto val_batches = validation.batches(s.batch_size, data_rng, true);
    double ce_train = 0.0, ce_val = 0.0, aloss = 0.0;
    for (std::size_t i = 0; i < train_batches.size(); ++i) {
      Batch tb = train.load_batch(train_batches[i], data_rng);
      out.roles.weight(tb.role);
      const double wl = weight_step(net, tb, lr, cfg.quant, gate_rng);
      check(wl, "weight step");
      ce_train += wl;

      Batch vb = validation.load_batch(val_batches[i % val_batches.size()], data_rng);
      out.roles.arch(vb.role);
      const ArchStepResult ar = arch_step(net, vb, cfg.tradeoff, s.arch_lr, cfg.quant, gate_rng);
      check(ar.arch_loss, "architecture step");
      ce_val += ar.ce;
      aloss += ar.arch_loss;
    }
    const double n = static_cast<double>(train_batches.size());
    SearchLogRow row{epoch, ce_train / n, ce_val / n, expected_ops(net), aloss / n, lr, net.argmax_gates()};
    out.log.push_back(row);
    if (!cfg.checkpoint_path.empty()) {
      Checkpoint ck = supernet_checkpoint(net);
      ck.metadata["epoch"] = std::to_string(epoch);
      ck.metadata["rng_data"] = rng_state(data_rng);
      ck.metadata["rng_gate"] = rng_state(gate_rng);
      save_checkpoint(cfg.checkpoint_path, ck);
      last_checkpoint = cfg.checkpoint_path.string();
    }
    if (cfg.on_epoch) cfg.on_epoch(row);
  }
  out.architecture = derive_architecture(net);
  return out;
}

// Evaluation and retraining ----------------------------------------------------

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::size_t count = 0;
};

template <typename Model>
EvalResult evaluate(Model& model, SplitData& split, const QuantMode& quant, std::size_t batch_size = 100) {
  if (split.size() == 0) throw std::invalid_argument(std::string(split_name(split.role())) + " split is empty");
  const std::size_t K = split.num_classes();
  EvalResult r;
  r.confusion.assign(K, std::vector<std::size_t>(K, 0));
  std::mt19937_64 rng(0);  // unused by non-augmented splits
  const ForwardContext ctx = ForwardContext::inference(quant);
  std::size_t correct = 0;
  for (const auto& idx : split.batches(batch_size, rng, false)) {
    Batch b = split.load_batch(idx, rng);
    Tensor logits = model.forward(b.inputs, ctx);
    r.loss += softmax_cross_entropy(logits, b.labels).loss * static_cast<double>(b.labels.size());
    for (std::size_t n = 0; n < b.labels.size(); ++n) {
      const double* row = logits.data().data() + n * K;
      const auto pred = static_cast<std::size_t>(std::max_element(row, row + K) - row);
      ++r.confusion.at(static_cast<std::size_t>(b.labels[n])).at(pred);
      correct += pred == static_cast<std::size_t>(b.labels[n]);
    }
    r.count += b.labels.size();
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.count);
  r.loss /= static_cast<double>(r.count);
  return r;
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss_train = 0.0;
  double acc_train = 0.0;
  double acc_val = 0.0;
};

inline void write_metrics(std::ostream& os, std::span<const EpochMetrics> rows) {
  os << "epoch,loss_train,acc_train,acc_val\n";
  for (const auto& r : rows) {
    os << r.epoch << ',' << format_number(r.loss_train) << ',' << format_number(r.acc_train) << ','
       << format_number(r.acc_val) << '\n';
  }
}

struct TrainResult {
  Network network;
  std::vector<EpochMetrics> metrics;
  double acc_train = 0.0;
  double acc_val = 0.0;
  double acc_test = 0.0;
};

/// Trains a network for `epochs` with cosine-decayed SGD. Validation accuracy
/// is measured after every epoch, test accuracy once at the end.
inline TrainResult train_network(Network net, DataSplits& data, std::size_t epochs, double lr0,
                                 std::size_t batch_size, const QuantMode& quant, std::uint64_t seed) {
  TrainResult out{std::move(net), {}, 0, 0, 0};
  std::mt19937_64 rng(seed ^ 0x7e7a1full);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const double lr = cosine_lr(static_cast<double>(epoch), static_cast<double>(epochs), lr0);
    double loss = 0.0;
    std::size_t correct = 0, seen = 0, nb = 0;
    for (const auto& idx : data.train->batches(batch_size, rng, true)) {
      Batch b = data.train->load_batch(idx, rng);
      auto [l, c] = train_on_batch(out.network, b, lr, quant);
      if (!std::isfinite(l)) throw std::runtime_error("training loss became non-finite");
      loss += l;
      correct += c;
      seen += b.labels.size();
      ++nb;
    }
    EpochMetrics m{epoch, loss / static_cast<double>(nb), static_cast<double>(correct) / static_cast<double>(seen),
                   evaluate(out.network, *data.validation, quant).accuracy};
    out.metrics.push_back(m);
  }
  out.acc_train = out.metrics.empty() ? evaluate(out.network, *data.train, quant).accuracy
                                      : out.metrics.back().acc_train;
  out.acc_val = evaluate(out.network, *data.validation, quant).accuracy;
  out.acc_test = evaluate(out.network, *data.test, quant).accuracy;
  return out;
}

/// Fresh initialization of `arch`, then training with STE quantization at `quant`.
inline TrainResult retrain(const ArchitectureDescription& arch, DataSplits& data,
                           const SearchSchedule& schedule, const QuantMode& quant, std::uint64_t seed) {
  return train_network(Network(arch, seed), data, schedule.retrain_epochs, schedule.retrain_lr,
                       schedule.batch_size, quant, seed);
}

/// Full-precision training followed by rounding every quantize-flagged weight.
inline TrainResult retrain_post_quantized(const ArchitectureDescription& arch, DataSplits& data,
                                          const SearchSchedule& schedule, const QuantizerSpec& spec,
                                          std::uint64_t seed) {
  TrainResult r = retrain(arch, data, schedule, std::nullopt, seed);
  post_quantize(r.network.parameters(), spec);
  r.acc_val = evaluate(r.network, *data.validation, std::nullopt).accuracy;
  r.acc_test = evaluate(r.network, *data.test, std::nullopt).accuracy;
  return r;
}

}  // namespace kwsnas
