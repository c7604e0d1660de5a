#include "gloss/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "gloss/optim.hpp"

namespace gloss {

namespace {

constexpr int32_t kSentinelBase = 4;

bool is_sentinel_id(int32_t id) {
  return id >= kSentinelBase && id < kSentinelBase + Tokenizer::kNumSentinels;
}

}  // namespace

int64_t sample_span_len(Rng& rng, int64_t max_len) {
  require(max_len >= 1, Errc::invalid_argument, "sample_span_len needs max_len >= 1");
  const int64_t len = std::clamp<int64_t>(rng.poisson(2.0), 1, 4);
  return std::min(len, max_len);
}

SpanCorruption corrupt_spans(const std::vector<int32_t>& toks, Rng& rng) {
  require(!toks.empty(), Errc::invalid_argument, "cannot corrupt an empty sequence");
  for (int32_t id : toks)
    require(!is_sentinel_id(id), Errc::invalid_argument,
            "sequence already contains sentinel ids");

  const int64_t n = static_cast<int64_t>(toks.size());
  const int n_spans = n > 20 ? 2 : 1;

  struct Sp {
    int64_t start, len;
  };
  std::vector<Sp> spans;
  for (int k = 0; k < n_spans; ++k) {
    for (int tries = 0;; ++tries) {
      // Two spans of at most 4 over more than 20 tokens always leave room,
      // so rejection terminates quickly; the cap is a defensive bound.
      require(tries < 1000, Errc::invalid_argument, "could not place corruption spans");
      const int64_t len = sample_span_len(rng, n);
      const int64_t start = rng.below(n - len + 1);
      bool overlaps = false;
      for (const auto& sp : spans)
        if (start < sp.start + sp.len && sp.start < start + len) overlaps = true;
      if (!overlaps) {
        spans.push_back({start, len});
        break;
      }
    }
  }
  std::sort(spans.begin(), spans.end(), [](const Sp& a, const Sp& b) { return a.start < b.start; });

  SpanCorruption out;
  int64_t pos = 0;
  for (size_t k = 0; k < spans.size(); ++k) {
    const int32_t sentinel = kSentinelBase + static_cast<int32_t>(k);
    for (; pos < spans[k].start; ++pos) out.src.push_back(toks[pos]);
    out.src.push_back(sentinel);
    out.tgt.push_back(sentinel);
    for (int64_t j = 0; j < spans[k].len; ++j) out.tgt.push_back(toks[pos++]);
  }
  for (; pos < n; ++pos) out.src.push_back(toks[pos]);
  out.tgt.push_back(kSentinelBase + static_cast<int32_t>(spans.size()));
  return out;
}

std::vector<int32_t> splice_corrupted(const std::vector<int32_t>& src,
                                      const std::vector<int32_t>& tgt) {
  std::vector<int32_t> out;
  size_t ti = 0;
  for (int32_t id : src) {
    if (!is_sentinel_id(id)) {
      out.push_back(id);
      continue;
    }
    require(ti < tgt.size() && tgt[ti] == id, Errc::parse_error,
            "span listing does not open with sentinel " + std::to_string(id));
    ++ti;
    size_t span_len = 0;
    while (ti < tgt.size() && !is_sentinel_id(tgt[ti])) {
      out.push_back(tgt[ti++]);
      ++span_len;
    }
    require(span_len > 0, Errc::parse_error,
            "empty span for sentinel " + std::to_string(id));
  }
  require(ti + 1 == tgt.size() && is_sentinel_id(tgt[ti]), Errc::parse_error,
          "span listing does not close with a final sentinel");
  return out;
}

std::string target_text(const Sense& sense) { return sense.pos + "。" + sense.gloss; }

Instance make_finetune_instance(const Tokenizer& tok, const Sense& sense, size_t example_idx) {
  require(example_idx < sense.examples.size(), Errc::invalid_argument,
          "sense " + sense.sense_id + " has no example " + std::to_string(example_idx));
  const ExampleSpan& ex = sense.examples[example_idx];

  Instance inst;
  inst.src = tok.encode(format_marked_sentence(ex.text, ex.start, ex.end));
  inst.src.push_back(Tokenizer::kEos);
  inst.keep.assign(inst.src.size(), 0);
  // The open mark lands at ex.start, shifting the span one to the right.
  for (int64_t p = ex.start + 1; p < ex.end + 1; ++p) inst.keep[static_cast<size_t>(p)] = 1;
  inst.tgt = tok.encode(target_text(sense));
  inst.tgt.push_back(Tokenizer::kEos);
  return inst;
}

Instance make_denoise_instance(const Tokenizer& tok, const Sense& sense, Rng& rng) {
  const auto corrupted = corrupt_spans(tok.encode(sense.gloss), rng);
  Instance inst;
  inst.src = corrupted.src;
  inst.src.push_back(Tokenizer::kEos);
  inst.tgt = corrupted.tgt;
  inst.tgt.push_back(Tokenizer::kEos);
  return inst;
}

Batch make_batch(const std::vector<Instance>& instances, const std::vector<int64_t>& idxs,
                 bool pooled) {
  require(!idxs.empty(), Errc::invalid_argument, "empty batch");
  Batch bt;
  bt.pooled = pooled;
  bt.b = static_cast<int64_t>(idxs.size());
  for (int64_t i : idxs) {
    require(i >= 0 && i < static_cast<int64_t>(instances.size()), Errc::invalid_argument,
            "batch index out of range");
    const Instance& inst = instances[static_cast<size_t>(i)];
    require(!inst.src.empty() && !inst.tgt.empty(), Errc::invalid_argument,
            "instance with empty source or target");
    bt.s = std::max(bt.s, static_cast<int64_t>(inst.src.size()));
    bt.tt = std::max(bt.tt, static_cast<int64_t>(inst.tgt.size()));
  }
  bt.src.assign(static_cast<size_t>(bt.b * bt.s), Tokenizer::kPad);
  bt.keep.assign(static_cast<size_t>(bt.b * bt.s), 0);
  bt.prefix.assign(static_cast<size_t>(bt.b * bt.tt), Tokenizer::kPad);
  bt.labels.assign(static_cast<size_t>(bt.b * bt.tt), Tokenizer::kPad);
  for (int64_t row = 0; row < bt.b; ++row) {
    const Instance& inst = instances[static_cast<size_t>(idxs[static_cast<size_t>(row)])];
    for (size_t j = 0; j < inst.src.size(); ++j) {
      bt.src[static_cast<size_t>(row * bt.s) + j] = inst.src[j];
      if (pooled && j < inst.keep.size())
        bt.keep[static_cast<size_t>(row * bt.s) + j] = inst.keep[j];
    }
    bt.prefix[static_cast<size_t>(row * bt.tt)] = Tokenizer::kBos;
    for (size_t j = 0; j + 1 < inst.tgt.size(); ++j)
      bt.prefix[static_cast<size_t>(row * bt.tt) + 1 + j] = inst.tgt[j];
    for (size_t j = 0; j < inst.tgt.size(); ++j)
      bt.labels[static_cast<size_t>(row * bt.tt) + j] = inst.tgt[j];
  }
  return bt;
}

double batch_loss(Transformer<float>& model, const Batch& bt, bool backward, Rng* rng) {
  Tape<float> tape;
  Forward<float> f{model, tape, Tokenizer::kPad, /*training=*/backward, rng, nullptr};
  const auto logits = bt.pooled
                          ? f.bottleneck_logits(bt.src, bt.b, bt.s, bt.keep, bt.prefix, bt.tt)
                          : f.seq2seq_logits(bt.src, bt.b, bt.s, bt.prefix, bt.tt);
  const auto flat = tape.reshape(logits, {bt.b * bt.tt, model.cfg.vocab_size});
  const auto loss = tape.cross_entropy(flat, bt.labels, Tokenizer::kPad);
  const double value = tape.val(loss).data[0];
  if (backward) tape.backward(loss);
  return value;
}

const char* stage_name(Stage s) { return s == Stage::denoise ? "denoise" : "finetune"; }

void TrainConfig::validate() const {
  require(batch_size >= 1, Errc::config_error, "batch_size must be at least 1");
  require(epochs >= 1, Errc::config_error, "epochs must be at least 1");
  require(lr > 0.0, Errc::config_error, "lr must be positive");
  require(weight_decay >= 0.0, Errc::config_error, "weight_decay must be non-negative");
  require(diverge_loss > 0.0, Errc::config_error, "diverge_loss must be positive");
}

TrainStats train_stage(Transformer<float>& model, const Tokenizer& tok,
                       const std::vector<Sense>& senses, Stage stage, const TrainConfig& cfg) {
  cfg.validate();
  require(!senses.empty(), Errc::invalid_argument, "no senses to train on");

  const Rng root(cfg.seed);
  Rng dropout_rng = root.fork("dropout");

  // Fine-tuning instances are fixed for the whole stage; denoising draws a
  // fresh corruption of every gloss each epoch.
  std::vector<Instance> instances;
  if (stage == Stage::finetune) {
    for (const auto& s : senses)
      for (size_t k = 0; k < s.examples.size(); ++k)
        instances.push_back(make_finetune_instance(tok, s, k));
  } else {
    instances.resize(senses.size());
  }

  auto rebuild_denoise = [&](int64_t epoch) {
    Rng corrupt_rng = root.fork("corrupt:" + std::to_string(epoch));
    for (size_t i = 0; i < senses.size(); ++i)
      instances[i] = make_denoise_instance(tok, senses[i], corrupt_rng);
  };

  auto check_lengths = [&](int64_t epoch) {
    for (size_t i = 0; i < instances.size(); ++i) {
      const int64_t s = static_cast<int64_t>(instances[i].src.size());
      const int64_t t = static_cast<int64_t>(instances[i].tgt.size());
      require(s <= model.cfg.max_len && t <= model.cfg.max_len, Errc::invalid_argument,
              std::string(stage_name(stage)) + " instance " + std::to_string(i) + " (epoch " +
                  std::to_string(epoch) + ") needs " + std::to_string(std::max(s, t)) +
                  " positions but max_len is " + std::to_string(model.cfg.max_len));
    }
  };

  const int64_t n = static_cast<int64_t>(instances.size());
  const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t total_steps = steps_per_epoch * cfg.epochs;

  AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;
  ocfg.clip_norm = cfg.clip_norm;
  AdamW<float> opt(model.params, ocfg);

  TrainStats stats;
  int64_t global_step = 0;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (stage == Stage::denoise) rebuild_denoise(epoch);
    check_lengths(epoch);

    std::vector<int64_t> order(n);
    for (int64_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng = root.fork("order:" + std::to_string(epoch));
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(shuffle_rng.below(i + 1))]);

    double epoch_sum = 0.0;
    int64_t epoch_batches = 0;
    for (int64_t begin = 0; begin < n; begin += cfg.batch_size) {
      const int64_t end = std::min(n, begin + cfg.batch_size);
      const std::vector<int64_t> idxs(order.begin() + begin, order.begin() + end);
      const Batch bt = make_batch(instances, idxs, stage == Stage::finetune);
      const double loss = batch_loss(model, bt, /*backward=*/true, &dropout_rng);
      if (!std::isfinite(loss) || loss >= cfg.diverge_loss)
        fail(Errc::train_diverged, std::string(stage_name(stage)) + " stage diverged at epoch " +
                                       std::to_string(epoch) + " step " +
                                       std::to_string(global_step) + ": loss " +
                                       std::to_string(loss));
      const double lr_now = linear_lr(cfg.lr, global_step, total_steps);
      opt.step(lr_now);
      stats.step_log.push_back({global_step, epoch, lr_now, loss});
      ++global_step;
      epoch_sum += loss;
      ++epoch_batches;
    }
    stats.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_batches));
  }
  stats.steps = global_step;
  stats.final_loss = stats.epoch_loss.back();
  return stats;
}

std::string generate_definition(Transformer<float>& model, const Tokenizer& tok, const Sense& sense,
                                size_t example_idx, int64_t max_new) {
  const Instance inst = make_finetune_instance(tok, sense, example_idx);
  const int64_t s = static_cast<int64_t>(inst.src.size());
  require(s <= model.cfg.max_len, Errc::invalid_argument,
          "marked context for " + sense.sense_id + " needs " + std::to_string(s) +
              " positions but max_len is " + std::to_string(model.cfg.max_len));
  const Tensor<float> v = encode_and_pool(model, inst.src, 1, s, inst.keep, Tokenizer::kPad);
  const Tensor<float> memory = Tensor<float>::from({1, 1, model.cfg.d_model}, v.data);
  const auto res = greedy_decode(model, memory, {1}, Tokenizer::kBos, Tokenizer::kEos,
                                 Tokenizer::kPad, max_new);
  return tok.decode(res.ids);
}

}  // namespace gloss
