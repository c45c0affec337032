// SPDX-License-Identifier: Apache-2.0
#include "lmdf/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "lmdf/ops.hpp"

namespace lmdf {
namespace {

void put_adam(KeyValues& kv, const AdamConfig& a) {
  kv["adam_beta1"] = format_double(a.beta1);
  kv["adam_beta2"] = format_double(a.beta2);
  kv["adam_epsilon"] = format_double(a.epsilon);
}

AdamConfig get_adam(const KeyValues& kv) {
  AdamConfig a;
  a.beta1 = get_double(kv, "adam_beta1", a.beta1);
  a.beta2 = get_double(kv, "adam_beta2", a.beta2);
  a.epsilon = get_double(kv, "adam_epsilon", a.epsilon);
  return a;
}

void check_adam(const AdamConfig& a) {
  if (!(a.beta1 >= 0.0 && a.beta1 < 1.0 && a.beta2 >= 0.0 && a.beta2 < 1.0 && a.epsilon > 0.0)) {
    throw ValidationError("Adam needs beta1, beta2 in [0, 1) and epsilon > 0");
  }
}

// Cycles through a shuffled index list, reshuffling at every wrap.
class Cursor {
 public:
  Cursor(std::vector<std::size_t> items, std::mt19937_64& rng) : items_(std::move(items)), rng_(rng) {
    std::shuffle(items_.begin(), items_.end(), rng_);
  }
  std::size_t next() {
    if (pos_ == items_.size()) {
      std::shuffle(items_.begin(), items_.end(), rng_);
      pos_ = 0;
    }
    return items_[pos_++];
  }

 private:
  std::vector<std::size_t> items_;
  std::mt19937_64& rng_;
  std::size_t pos_ = 0;
};

std::uint64_t frame_key(std::size_t entry, std::size_t frame) {
  return (std::uint64_t(entry) << 32) ^ std::uint64_t(frame);
}

Tensor row_of(const Tensor& m, std::size_t r) {
  const std::size_t n = m.dim(1);
  Tensor out({n});
  std::copy_n(m.data().begin() + static_cast<std::ptrdiff_t>(r * n), n, out.data().begin());
  return out;
}

struct SeqEval {
  double loss = 0.0;
  double accuracy = 0.0;
};

SeqEval evaluate_sequences(const TemporalHead<float>& head, std::span<const LabelledSequence<float>> seqs) {
  double loss = 0.0;
  std::size_t n = 0, correct = 0;
  for (const auto& s : seqs) {
    const auto preds = predict_sequence(head, s.inputs);
    for (std::size_t t = 0; t < s.length(); ++t) {
      if (s.labels[t] == kUnlabeled) continue;
      const double p = preds[t].probs.data()[static_cast<std::size_t>(s.labels[t])];
      loss -= std::log(std::max(p, 1e-30));
      correct += preds[t].label == static_cast<std::size_t>(s.labels[t]);
      ++n;
    }
  }
  if (n == 0) return {};
  return {loss / double(n), double(correct) / double(n)};
}

struct ClipRef {
  std::size_t entry;
  const ClipManifest* clip;
};

std::vector<ClipRef> clip_refs(const Corpus& corpus) {
  std::vector<ClipRef> out;
  for (const auto& c : corpus.clips) out.push_back({corpus.index_of(c.source()), &c});
  return out;
}

}  // namespace

std::vector<FrameRef> static_frame_refs(const Corpus& corpus, std::size_t interval) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < corpus.entries.size(); ++i) index[corpus.entries[i].source] = i;
  std::vector<FrameRef> out;
  for (const auto& s : sample_static_set(corpus.clips, interval)) {
    const auto it = index.find(s.source);
    if (it == index.end()) throw ValidationError("clip refers to unknown source '" + s.source + "'");
    out.push_back({it->second, s.frame, s.label});
  }
  return out;
}

PatchSource corpus_patch_source(const Corpus& corpus, const MCNNConfig& mcnn, const PatchOptions& options) {
  return [&corpus, mcnn, options](const FrameRef& ref) {
    const CorpusEntry& e = corpus.entries.at(ref.entry);
    return frame_patches(e.frames->frame(ref.frame), e.landmarks.at(ref.frame), mcnn, options,
                         frame_key(ref.entry, ref.frame));
  };
}

std::string format_metrics_csv(std::span<const MetricRow> rows, const std::string& manifest) {
  std::string s = "# manifest: " + manifest + "\nstep,split,loss,accuracy\n";
  for (const auto& r : rows) {
    s += std::to_string(r.step) + ',' + r.split + ',' + format_double(r.loss) + ',' + format_double(r.accuracy) + '\n';
  }
  return s;
}

// ---------------------------------------------------------------------------

void MCNNTrainConfig::validate() const {
  if (!(lr > 0.0) || steps == 0 || batch == 0) throw ValidationError("MCNN training needs lr > 0, steps and batch >= 1");
  check_adam(adam);
}

KeyValues MCNNTrainConfig::to_map() const {
  KeyValues kv;
  kv["mcnn_lr"] = format_double(lr);
  kv["mcnn_steps"] = std::to_string(steps);
  kv["mcnn_batch"] = std::to_string(batch);
  kv["mcnn_eval_every"] = std::to_string(eval_every);
  kv["mcnn_checkpoint_every"] = std::to_string(checkpoint_every);
  kv["mcnn_balanced"] = balanced ? "true" : "false";
  kv["mcnn_train_seed"] = std::to_string(seed);
  put_adam(kv, adam);
  return kv;
}

MCNNTrainConfig MCNNTrainConfig::from_map(const KeyValues& kv) {
  MCNNTrainConfig c;
  c.lr = get_double(kv, "mcnn_lr", c.lr);
  c.steps = get_u64(kv, "mcnn_steps", c.steps);
  c.batch = get_u64(kv, "mcnn_batch", c.batch);
  c.eval_every = get_u64(kv, "mcnn_eval_every", c.eval_every);
  c.checkpoint_every = get_u64(kv, "mcnn_checkpoint_every", c.checkpoint_every);
  c.balanced = get_bool(kv, "mcnn_balanced", c.balanced);
  c.seed = get_u64(kv, "mcnn_train_seed", c.seed);
  c.adam = get_adam(kv);
  return c;
}

StaticEval evaluate_static(const MCNN<float>& model, const PatchSource& patches, std::span<const FrameRef> refs) {
  StaticEval ev;
  std::size_t correct = 0;
  for (const auto& r : refs) {
    MCNNCache<float> cache;
    const auto out = model.forward(patches(r), &cache);
    ev.loss += softmax_xent(cache.logits, one_hot<float>(static_cast<std::size_t>(r.label), 2)).loss;
    ev.predicted.push_back(static_cast<int>(out.predicted));
    correct += out.predicted == static_cast<std::size_t>(r.label);
  }
  if (!refs.empty()) {
    ev.loss /= double(refs.size());
    ev.accuracy = double(correct) / double(refs.size());
  }
  return ev;
}

TrainLog train_mcnn(MCNN<float>& model, const StaticSet& train_set, const StaticSet& test_set,
                    const MCNNTrainConfig& config, const std::function<void(std::size_t step)>& on_checkpoint) {
  config.validate();
  const std::span<const FrameRef> train = train_set.refs;
  const PatchSource& patches = train_set.patches;
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].label != 0 && train[i].label != 1) throw ValidationError("static labels must be 0 or 1");
    by_class[train[i].label].push_back(i);
  }
  if (by_class[0].empty() || by_class[1].empty()) {
    throw ValidationError("the static training set needs at least one sample of each class");
  }

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> all(train.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  Cursor plain(all, rng), normal(by_class[0], rng), drowsy(by_class[1], rng);
  const std::size_t eval_every =
      config.eval_every ? config.eval_every : (train.size() + config.batch - 1) / config.batch;

  TrainLog log;
  double run_loss = 0.0;
  std::size_t run_n = 0, run_correct = 0;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    model.zero_grad();
    double loss = 0.0;
    for (std::size_t k = 0; k < config.batch; ++k) {
      const std::size_t i = !config.balanced ? plain.next() : (k % 2 ? drowsy.next() : normal.next());
      const FrameRef& r = train[i];
      MCNNCache<float> cache;
      const auto out = model.forward(patches(r), &cache);
      loss += model.backward(cache, static_cast<std::size_t>(r.label), 1.0 / double(config.batch));
      run_correct += out.predicted == static_cast<std::size_t>(r.label);
    }
    model.adam_step(config.lr, config.adam);
    log.step_loss.push_back(loss / double(config.batch));
    run_loss += loss;
    run_n += config.batch;

    if (step % eval_every == 0 || step == config.steps) {
      log.metrics.push_back({step, "train", run_loss / double(run_n), double(run_correct) / double(run_n)});
      run_loss = 0.0;
      run_n = run_correct = 0;
      if (!test_set.refs.empty()) {
        const StaticEval ev = evaluate_static(model, test_set.patches, test_set.refs);
        log.metrics.push_back({step, "test", ev.loss, ev.accuracy});
      }
    }
    if (on_checkpoint && config.checkpoint_every && step % config.checkpoint_every == 0) on_checkpoint(step);
  }
  return log;
}

// ---------------------------------------------------------------------------

std::vector<Tensor> extract_representations(const MCNN<float>& model, const Corpus& corpus,
                                            const PatchOptions& options) {
  const std::size_t dim = model.config().representation_dim;
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < corpus.entries.size(); ++i) {
    const CorpusEntry& e = corpus.entries[i];
    Tensor reps({e.length(), dim});
    for (std::size_t t = 0; t < e.length(); ++t) {
      const auto patches = frame_patches(e.frames->frame(t), e.landmarks[t], model.config(), options, frame_key(i, t));
      const auto rep = model.forward(patches).representation;
      std::copy(rep.data().begin(), rep.data().end(), reps.data().begin() + static_cast<std::ptrdiff_t>(t * dim));
    }
    out.push_back(std::move(reps));
  }
  return out;
}

void save_representations(const std::filesystem::path& path, const Corpus& corpus,
                          std::span<const Tensor> representations) {
  if (representations.size() != corpus.entries.size()) throw ValidationError("one representation tensor per source");
  std::vector<NamedTensor> named;
  for (std::size_t i = 0; i < representations.size(); ++i) {
    named.push_back({"rep/" + corpus.entries[i].source, representations[i]});
  }
  save_checkpoint(path, named);
}

std::vector<Tensor> load_representations(const std::filesystem::path& path, const Corpus& corpus, std::size_t dim) {
  const auto named = load_checkpoint(path);
  std::vector<Tensor> out;
  for (const auto& e : corpus.entries) out.push_back(find_tensor(named, "rep/" + e.source, {e.length(), dim}));
  return out;
}

std::vector<LabelledSequence<float>> clip_sequences(const Corpus& corpus, std::span<const Tensor> representations,
                                                    bool label_padding) {
  if (representations.size() != corpus.entries.size()) throw ValidationError("one representation tensor per source");
  std::vector<LabelledSequence<float>> out;
  for (const auto& [entry, clip] : clip_refs(corpus)) {
    const Tensor& reps = representations[entry];
    const std::size_t dim = reps.dim(1), n = clip->frames.size();
    if (clip->end > reps.dim(0)) throw ValidationError("clip " + clip->clip_id + " runs past its representations");
    LabelledSequence<float> s{Tensor({n, dim}), std::vector<int>(n)};
    std::copy_n(reps.data().begin() + static_cast<std::ptrdiff_t>(clip->start * dim), n * dim, s.inputs.data().begin());
    for (std::size_t i = 0; i < n; ++i) {
      s.labels[i] = clip->frames[i] == ClipFrame::padding ? (label_padding ? 0 : kUnlabeled) : clip->label(i);
    }
    out.push_back(std::move(s));
  }
  return out;
}

void TemporalTrainConfig::validate() const {
  if (!(lr > 0.0) || max_memory_steps == 0 || batch_sequences == 0 || iterations == 0) {
    throw ValidationError("temporal training needs lr > 0 and positive window, batch and iterations");
  }
  check_adam(adam);
}

KeyValues TemporalTrainConfig::to_map() const {
  KeyValues kv;
  kv["lstm_lr"] = format_double(lr);
  kv["max_memory_steps"] = std::to_string(max_memory_steps);
  kv["lstm_batch"] = std::to_string(batch_sequences);
  kv["lstm_iterations"] = std::to_string(iterations);
  kv["lstm_eval_every"] = std::to_string(eval_every);
  kv["joint_finetune"] = joint ? "true" : "false";
  kv["lstm_train_seed"] = std::to_string(seed);
  put_adam(kv, adam);
  return kv;
}

TemporalTrainConfig TemporalTrainConfig::from_map(const KeyValues& kv) {
  TemporalTrainConfig c;
  c.lr = get_double(kv, "lstm_lr", c.lr);
  c.max_memory_steps = get_u64(kv, "max_memory_steps", c.max_memory_steps);
  c.batch_sequences = get_u64(kv, "lstm_batch", c.batch_sequences);
  c.iterations = get_u64(kv, "lstm_iterations", c.iterations);
  c.eval_every = get_u64(kv, "lstm_eval_every", c.eval_every);
  c.joint = get_bool(kv, "joint_finetune", c.joint);
  c.seed = get_u64(kv, "lstm_train_seed", c.seed);
  c.adam = get_adam(kv);
  return c;
}

TrainLog train_temporal(TemporalHead<float>& head, std::span<const LabelledSequence<float>> train,
                        std::span<const LabelledSequence<float>> test, const TemporalTrainConfig& config) {
  config.validate();
  TBPTTConfig tb;
  tb.lr = config.lr;
  tb.max_memory_steps = config.max_memory_steps;
  tb.batch_sequences = config.batch_sequences;
  tb.iterations = config.iterations;
  tb.seed = config.seed;
  tb.adam = config.adam;

  TrainLog log;
  std::size_t reported = 0;
  auto report = [&](const TrainTrace& trace) {
    const std::size_t steps = trace.loss.size();
    if (steps > reported) {
      double loss = 0.0, acc = 0.0;
      for (std::size_t i = reported; i < steps; ++i) {
        loss += trace.loss[i];
        acc += trace.accuracy[i];
      }
      log.metrics.push_back({steps, "train", loss / double(steps - reported), acc / double(steps - reported)});
    }
    reported = steps;
    if (!test.empty()) {
      const SeqEval ev = evaluate_sequences(head, test);
      log.metrics.push_back({steps, "test", ev.loss, ev.accuracy});
    }
  };
  const TrainTrace trace = tbptt_train<float>(head, train, tb, [&](std::size_t it, const TrainTrace& t) {
    if (config.eval_every && (it + 1) % config.eval_every == 0 && it + 1 != config.iterations) report(t);
  });
  report(trace);
  log.step_loss = trace.loss;
  return log;
}

TrainLog train_stage2(LMDFModel& model, const Corpus& train, const Corpus& test, const TemporalTrainConfig& config,
                      const PatchOptions& options, std::span<const Tensor> cached) {
  config.validate();
  if (!config.joint) {
    std::vector<Tensor> own;
    if (cached.empty()) {
      own = extract_representations(model.mcnn, train, options);
      cached = own;
    }
    const auto train_seqs = clip_sequences(train, cached, true);
    std::vector<LabelledSequence<float>> test_seqs;
    if (!test.entries.empty()) test_seqs = clip_sequences(test, extract_representations(model.mcnn, test, options), false);
    return train_temporal(model.head, train_seqs, test_seqs, config);
  }

  // Joint fine-tuning: representations are recomputed with caches for every
  // window so the gradient reaches the convolutional paths.
  const auto clips = clip_refs(train);
  if (clips.empty()) throw ValidationError("no training clips");
  const std::size_t dim = model.config.mcnn.representation_dim;
  const std::size_t b = std::min(config.batch_sequences, clips.size());
  std::vector<std::size_t> order(clips.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(config.seed);
  Cursor cursor(order, rng);
  std::vector<ParamTensor<float>*> features;
  for (auto* p : model.mcnn.parameters()) {
    if (p != &model.mcnn.head_w && p != &model.mcnn.head_b) features.push_back(p);
  }

  TrainLog log;
  for (std::size_t it = 0; it < config.iterations; ++it) {
    std::vector<ClipRef> batch;
    std::size_t longest = 0;
    for (std::size_t k = 0; k < b; ++k) {
      batch.push_back(clips[cursor.next()]);
      longest = std::max(longest, batch.back().clip->frames.size());
    }
    LSTMState<float> state = model.head.initial_state(b);
    for (std::size_t start = 0; start < longest; start += config.max_memory_steps) {
      const std::size_t len = std::min(config.max_memory_steps, longest - start);
      std::vector<Tensor> xs(len, Tensor({b, dim}));
      std::vector<std::vector<int>> ys(len, std::vector<int>(b, kUnlabeled));
      std::vector<std::vector<MCNNCache<float>>> caches(b);
      for (std::size_t r = 0; r < b; ++r) {
        const auto& [entry, clip] = batch[r];
        const CorpusEntry& e = train.entries[entry];
        for (std::size_t t = 0; t < len && start + t < clip->frames.size(); ++t) {
          const std::size_t f = clip->start + start + t;
          const auto patches = frame_patches(e.frames->frame(f), e.landmarks[f], model.config.mcnn, options,
                                             frame_key(entry, f));
          caches[r].emplace_back();
          const auto rep = model.mcnn.forward(patches, &caches[r].back()).representation;
          std::copy(rep.data().begin(), rep.data().end(), xs[t].data().begin() + static_cast<std::ptrdiff_t>(r * dim));
          ys[t][r] = clip->frames[start + t] == ClipFrame::padding ? 0 : clip->label(start + t);
        }
      }
      model.head.zero_grad();
      model.mcnn.zero_grad();
      std::vector<Tensor> grads;
      const WindowStats st = window_backward<float>(model.head, state, xs, ys, &grads);
      if (st.labelled == 0) continue;
      for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t t = 0; t < caches[r].size(); ++t) {
          model.mcnn.backward_representation(caches[r][t], row_of(grads[t], r));
        }
      }
      model.head.adam_step(config.lr, config.adam);
      for (auto* p : features) adam_step(*p, config.lr, config.adam);
      log.step_loss.push_back(st.loss);
    }
  }
  double loss = 0.0;
  for (double l : log.step_loss) loss += l;
  log.metrics.push_back({log.step_loss.size(), "train", log.step_loss.empty() ? 0.0 : loss / double(log.step_loss.size()),
                         std::nan("")});
  if (!test.entries.empty()) {
    const auto seqs = clip_sequences(test, extract_representations(model.mcnn, test, options), false);
    const SeqEval ev = evaluate_sequences(model.head, seqs);
    log.metrics.push_back({log.step_loss.size(), "test", ev.loss, ev.accuracy});
  }
  return log;
}

// ---------------------------------------------------------------------------

FramePredictions predict_clips(const LMDFModel& model, const Corpus& corpus, std::span<const Tensor> representations,
                               bool temporal) {
  if (representations.size() != corpus.entries.size()) throw ValidationError("one representation tensor per source");
  FramePredictions out;
  for (const auto& [entry, clip] : clip_refs(corpus)) {
    const Tensor& reps = representations[entry];
    if (clip->end > reps.dim(0)) throw ValidationError("clip " + clip->clip_id + " runs past its representations");
    const std::string& scenario = clip->scenario;
    LSTMState<float> state = model.head.initial_state();
    for (std::size_t i = 0; i < clip->frames.size(); ++i) {
      const bool core = clip->frames[i] != ClipFrame::padding;
      if (!temporal && !core) continue;
      const Tensor x = row_of(reps, clip->start + i);
      Tensor probs;
      if (temporal) {
        auto [next, h] = model.head.stack_step(state, x);
        state = std::move(next);
        if (!core) continue;
        probs = model.head.predict(h).probs;
      } else {
        probs = softmax(model.mcnn.head_logits(x));
      }
      out.truth.push_back(clip->label(i));
      out.predicted.push_back(static_cast<int>(argmax<float>(probs.data())));
      out.p_drowsy.push_back(probs.data()[1]);
      out.scenario.push_back(scenario);
    }
  }
  return out;
}

KeyValues run_manifest(const KeyValues& config, std::uint64_t seed, const std::string& data_hash) {
  KeyValues kv = config;
  kv["seed"] = std::to_string(seed);
  kv["data_hash"] = data_hash;
  return kv;
}

}  // namespace lmdf
