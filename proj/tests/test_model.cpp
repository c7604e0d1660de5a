// Transformer contracts: shapes, masking semantics, the single-vector
// bottleneck, determinism, and full-model gradient correctness.

#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "gloss/kernels.hpp"
#include "gloss/model.hpp"
#include "testutil.hpp"

using namespace gloss;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.vocab_size = 14;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_enc_layers = 2;
  cfg.n_dec_layers = 2;
  cfg.d_ff = 16;
  cfg.max_len = 16;
  cfg.dropout = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("config validation rejects bad settings") {
  auto cfg = tiny_config();
  cfg.d_model = 10;  // not divisible by n_heads=2? it is; make it odd
  cfg.n_heads = 4;
  CHECK_THROWS_AS(cfg.validate(), Error);

  cfg = tiny_config();
  cfg.vocab_size = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);

  cfg = tiny_config();
  cfg.dropout = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);

  CHECK_NOTHROW(tiny_config().validate());
}

TEST_CASE("parameter count matches the closed form, tied and untied") {
  auto cfg = tiny_config();
  Rng rng(3);
  auto tied = Transformer<float>::make(cfg, rng);
  CHECK(tied.params.total_size() == Transformer<float>::expected_param_count(cfg));
  CHECK(tied.params.find("out_proj") == nullptr);

  cfg.tie_embeddings = false;
  auto untied = Transformer<float>::make(cfg, rng);
  CHECK(untied.params.total_size() == Transformer<float>::expected_param_count(cfg));
  CHECK(untied.params.find("out_proj") != nullptr);
  CHECK(untied.params.total_size() ==
        tied.params.total_size() + cfg.vocab_size * cfg.d_model);
}

TEST_CASE("initialization is seed-deterministic and within the trunc-normal clip") {
  auto cfg = tiny_config();
  Rng r1(77), r2(77), r3(78);
  auto a = Transformer<float>::make(cfg, r1);
  auto b = Transformer<float>::make(cfg, r2);
  auto c = Transformer<float>::make(cfg, r3);

  bool all_equal = true, any_diff_seed = false;
  for (auto* pa : a.params.all()) {
    const auto& pb = b.params.at(pa->name);
    const auto& pc = c.params.at(pa->name);
    if (pa->value.data != pb.value.data) all_equal = false;
    if (pa->value.data != pc.value.data) any_diff_seed = true;
  }
  CHECK(all_equal);
  CHECK(any_diff_seed);

  // Weight entries honor the 2-sigma clip around std 0.02.
  const auto& emb = a.params.at("tok_emb");
  for (float v : emb.value.data) CHECK(std::fabs(v) <= 0.04f + 1e-7f);
  // Gains are exactly one, biases exactly zero.
  for (float v : a.params.at("enc0.ln1.g").value.data) CHECK(v == 1.0f);
  for (float v : a.params.at("enc0.attn.bq").value.data) CHECK(v == 0.0f);
}

TEST_CASE("encoder shapes, eval determinism, and position sensitivity") {
  auto cfg = tiny_config();
  Rng rng(5);
  auto model = Transformer<float>::make(cfg, rng);
  const std::vector<int32_t> ids{1, 4, 5, 6, 2, 0,   // one padded row
                                 1, 7, 8, 9, 2, 10};
  auto run = [&] {
    Tape<float> tape;
    Forward<float> fwd{model, tape, 0, false, nullptr, nullptr};
    return tape.val(fwd.encode(ids, 2, 6));
  };
  auto e1 = run();
  CHECK(e1.shape == Shape{2, 6, 8});
  CHECK(e1.data == run().data);  // same params, same input: bitwise stable

  // Swapping two source tokens must change the states (positions matter).
  auto swapped = ids;
  std::swap(swapped[1], swapped[2]);
  Tape<float> tape;
  Forward<float> fwd{model, tape, 0, false, nullptr, nullptr};
  auto e2 = tape.val(fwd.encode(swapped, 2, 6));
  CHECK(e1.data != e2.data);
}

TEST_CASE("padding does not leak into non-pad states or the pooled vector") {
  auto cfg = tiny_config();
  Rng rng(6);
  auto model = Transformer<float>::make(cfg, rng);
  const std::vector<int32_t> short_ids{1, 4, 5, 2};
  const std::vector<int32_t> padded_ids{1, 4, 5, 2, 0, 0, 0};

  // Under the scalar backend trailing pads append exact-zero terms to each
  // reduction, so the shared positions must agree bitwise.
  kern::force_backend(kern::Backend::scalar);
  Tape<float> t1, t2;
  Forward<float> f1{model, t1, 0, false, nullptr, nullptr};
  Forward<float> f2{model, t2, 0, false, nullptr, nullptr};
  auto a = t1.val(f1.encode(short_ids, 1, 4));
  auto b = t2.val(f2.encode(padded_ids, 1, 7));
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 8; ++j) CHECK(a.at3(0, i, j) == b.at3(0, i, j));
  kern::reset_backend();

  // Pooling over the same kept positions is then identical too.
  std::vector<uint8_t> keep_short{0, 1, 1, 0};
  std::vector<uint8_t> keep_padded{0, 1, 1, 0, 0, 0, 0};
  kern::force_backend(kern::Backend::scalar);
  auto va = encode_and_pool(model, short_ids, 1, 4, keep_short, 0);
  auto vb = encode_and_pool(model, padded_ids, 1, 7, keep_padded, 0);
  CHECK(va.data == vb.data);
  kern::reset_backend();
}

TEST_CASE("pooled vector equals the plain mean of kept encoder rows") {
  auto cfg = tiny_config();
  Rng rng(7);
  auto model = Transformer<float>::make(cfg, rng);
  const std::vector<int32_t> ids{1, 4, 5, 6, 2};
  std::vector<uint8_t> keep{0, 1, 1, 0, 0};

  Tape<float> tape;
  Forward<float> fwd{model, tape, 0, false, nullptr, nullptr};
  auto enc = fwd.encode(ids, 1, 5);
  auto pooled = tape.val(fwd.pool_target(enc, keep));
  const auto& states = tape.val(enc);
  for (int64_t j = 0; j < 8; ++j)
    CHECK(pooled.at2(0, j) ==
          doctest::Approx((states.at3(0, 1, j) + states.at3(0, 2, j)) / 2).epsilon(1e-6));
}

TEST_CASE("bottleneck composition is bitwise-identical to the fused path") {
  auto cfg = tiny_config();
  Rng rng(8);
  auto model = Transformer<float>::make(cfg, rng);
  const std::vector<int32_t> src{1, 4, 5, 6, 7, 2};
  const std::vector<uint8_t> keep{0, 0, 1, 1, 0, 0};
  const std::vector<int32_t> prefix{1, 11, 12, 13};

  // Fused: one call on one tape.
  Tape<float> fused_tape;
  Forward<float> fused{model, fused_tape, 0, false, nullptr, nullptr};
  auto fused_logits = fused_tape.val(fused.bottleneck_logits(src, 1, 6, keep, prefix, 4));

  // Composition: three separate tapes, tensors carried across by value.
  auto vsem = encode_and_pool(model, src, 1, 6, keep, 0);
  Tape<float> dec_tape;
  Forward<float> dec{model, dec_tape, 0, false, nullptr, nullptr};
  auto logits = dec_tape.val(dec.decode_from_vector(dec_tape.leaf(vsem), prefix, 4));

  CHECK(fused_logits.shape == Shape{1, 4, 14});
  CHECK(fused_logits.data == logits.data);
}

TEST_CASE("decoder sees the memory only through cross-attention: injected vectors rule") {
  auto cfg = tiny_config();
  Rng rng(9);
  auto model = Transformer<float>::make(cfg, rng);
  Rng prng(19);
  testutil::randomize_params(model.params, prng, 0.35);

  const std::vector<int32_t> src_a{1, 4, 5, 6, 2};
  const std::vector<int32_t> src_b{1, 9, 10, 3, 2};
  const std::vector<uint8_t> keep{0, 1, 1, 0, 0};

  auto va = encode_and_pool(model, src_a, 1, 5, keep, 0);
  auto vb = encode_and_pool(model, src_b, 1, 5, keep, 0);
  CHECK(va.data != vb.data);

  // The injected vector is the decoder's only view of the source, so the
  // teacher-forced logits must move with it...
  const std::vector<int32_t> prefix{1, 11, 12};
  auto logits_for = [&](const Tensor<float>& v) {
    Tape<float> tape;
    Forward<float> fwd{model, tape, 0, false, nullptr, nullptr};
    return tape.val(fwd.decode_from_vector(tape.leaf(v), prefix, 3)).data;
  };
  CHECK(logits_for(va) != logits_for(vb));

  // ...and an identical vector pins the generation exactly, no matter which
  // carrier produced it. (Generation-level divergence between different
  // vectors is a property of trained models; an untrained net may collapse
  // to the same argmax fixed point, so it is checked on the trained model in
  // the acceptance suite.)
  auto mem = [&](const Tensor<float>& v) {
    auto m = v;
    m.shape = {1, 1, 8};
    return m;
  };
  auto gen_a = greedy_decode(model, mem(va), {1}, 1, 2, 0, 10);
  auto gen_a2 = greedy_decode(model, mem(va), {1}, 1, 2, 0, 10);
  CHECK(gen_a.ids == gen_a2.ids);
}

TEST_CASE("attention traces: rows sum to one; length-1 memory weights are exactly 1") {
  auto cfg = tiny_config();
  Rng rng(10);
  auto model = Transformer<float>::make(cfg, rng);
  const std::vector<int32_t> src{1, 4, 5, 2};
  const std::vector<uint8_t> keep{0, 1, 1, 0};
  const std::vector<int32_t> prefix{1, 11, 12};

  Tape<float> tape;
  AttnTrace<float> trace;
  Forward<float> fwd{model, tape, 0, false, nullptr, &trace};
  fwd.bottleneck_logits(src, 1, 4, keep, prefix, 3);

  CHECK(trace.enc_self.size() == 2);
  CHECK(trace.dec_self.size() == 2);
  CHECK(trace.dec_cross.size() == 2);

  for (const auto& t : trace.enc_self) {
    const int64_t rows = t.numel() / t.shape.back();
    for (int64_t r = 0; r < rows; ++r) {
      float s = 0;
      for (int64_t k = 0; k < t.shape.back(); ++k)
        s += t.data[static_cast<size_t>(r * t.shape.back() + k)];
      CHECK(s == doctest::Approx(1.0f).epsilon(1e-5));
    }
  }
  // Single-slot memory: softmax over one element is exactly 1.0.
  for (const auto& t : trace.dec_cross) {
    CHECK(t.shape.back() == 1);
    for (float w : t.data) CHECK(w == 1.0f);
  }
}

TEST_CASE("bos_and_self masking matches causal on the first two rows only") {
  auto cfg = tiny_config();
  Rng rng(11);
  auto model = Transformer<float>::make(cfg, rng);
  const std::vector<int32_t> prefix{1, 11, 12, 13};
  Tensor<float> memory = Tensor<float>::zeros({1, 1, 8});
  Rng vr(4);
  for (auto& x : memory.data) x = static_cast<float>(vr.uniform() - 0.5);
  const std::vector<uint8_t> mem_valid{1};

  auto states = [&](SelfAttnMode mode) {
    Tape<float> tape;
    Forward<float> fwd{model, tape, 0, false, nullptr, nullptr};
    return tape.val(fwd.decode_states(tape.leaf(memory), mem_valid, prefix, 1, 4, mode));
  };
  auto causal = states(SelfAttnMode::causal);
  auto starved = states(SelfAttnMode::bos_and_self);

  for (int64_t j = 0; j < 8; ++j) {
    CHECK(causal.at3(0, 0, j) == starved.at3(0, 0, j));  // sees {0} either way
    CHECK(causal.at3(0, 1, j) == starved.at3(0, 1, j));  // sees {0,1} either way
  }
  bool row2_differs = false;
  for (int64_t j = 0; j < 8; ++j)
    if (causal.at3(0, 2, j) != starved.at3(0, 2, j)) row2_differs = true;
  CHECK(row2_differs);
}

TEST_CASE("training dropout is rng-driven and reproducible") {
  auto cfg = tiny_config();
  cfg.dropout = 0.1;
  Rng rng(12);
  auto model = Transformer<float>::make(cfg, rng);
  const std::vector<int32_t> ids{1, 4, 5, 2};

  auto run = [&](uint64_t seed) {
    Rng drop(seed);
    Tape<float> tape;
    Forward<float> fwd{model, tape, 0, true, &drop, nullptr};
    return tape.val(fwd.encode(ids, 1, 4));
  };
  CHECK(run(100).data == run(100).data);
  CHECK(run(100).data != run(101).data);

  // Training forward without an rng is an error.
  Tape<float> tape;
  Forward<float> fwd{model, tape, 0, true, nullptr, nullptr};
  CHECK_THROWS_AS(fwd.encode(ids, 1, 4), Error);
}

TEST_CASE("untied head uses its own projection") {
  auto cfg = tiny_config();
  cfg.tie_embeddings = false;
  Rng rng(13);
  auto model = Transformer<float>::make(cfg, rng);
  const std::vector<int32_t> prefix{1, 5};
  Tensor<float> memory = Tensor<float>::full({1, 1, 8}, 0.3f);

  Tape<float> tape;
  Forward<float> fwd{model, tape, 0, false, nullptr, nullptr};
  auto logits =
      tape.val(fwd.logits_from_states(fwd.decode_states(tape.leaf(memory), {1}, prefix, 1, 2,
                                                        SelfAttnMode::causal)));
  CHECK(logits.shape == Shape{1, 2, 14});

  // Zeroing out_proj zeroes the logits; with tying that would be impossible
  // without also destroying the embeddings.
  auto& proj = model.params.at("out_proj");
  std::fill(proj.value.data.begin(), proj.value.data.end(), 0.0f);
  Tape<float> tape2;
  Forward<float> fwd2{model, tape2, 0, false, nullptr, nullptr};
  auto logits2 =
      tape2.val(fwd2.logits_from_states(fwd2.decode_states(tape2.leaf(memory), {1}, prefix, 1, 2,
                                                           SelfAttnMode::causal)));
  for (float v : logits2.data) CHECK(v == 0.0f);
}

TEST_CASE("greedy decode stops at EOS or reports hitting the cap") {
  auto cfg = tiny_config();
  Rng rng(14);
  auto model = Transformer<float>::make(cfg, rng);
  Tensor<float> memory = Tensor<float>::full({1, 1, 8}, 0.25f);

  auto gen = greedy_decode(model, memory, {1}, 1, 2, 0, 6);
  CHECK(gen.ids.front() == 1);
  if (gen.hit_max) {
    CHECK(gen.ids.size() == 7);  // BOS + 6 generated
  } else {
    CHECK(gen.ids.back() == 2);
  }

  // An untrained model rarely emits EOS immediately; force the cap low and
  // confirm the flag trips when no EOS appears in one step.
  auto one = greedy_decode(model, memory, {1}, 1, 2, 0, 1);
  CHECK(one.ids.size() <= 2);
}

TEST_CASE("sequence length and id bounds are enforced") {
  auto cfg = tiny_config();
  Rng rng(15);
  auto model = Transformer<float>::make(cfg, rng);

  Tape<float> tape;
  Forward<float> fwd{model, tape, 0, false, nullptr, nullptr};
  std::vector<int32_t> too_long(static_cast<size_t>(cfg.max_len) + 1, 1);
  CHECK_THROWS_AS(fwd.encode(too_long, 1, static_cast<int64_t>(too_long.size())), Error);

  Tape<float> tape2;
  Forward<float> fwd2{model, tape2, 0, false, nullptr, nullptr};
  CHECK_THROWS_AS(fwd2.encode({1, 99}, 1, 2), Error);  // 99 outside vocab of 14
}

TEST_CASE("full-model gradients match finite differences (double, tiny config)") {
  auto cfg = tiny_config();
  cfg.ln_eps = 1e-3;  // keeps 1/sqrt(var+eps) curvature FD-resolvable
  Rng rng(16);
  auto model = Transformer<double>::make(cfg, rng);
  Rng prng(17);
  testutil::randomize_params(model.params, prng, 0.35);

  const std::vector<int32_t> src{1, 4, 5, 6, 2, 0, 1, 7, 8, 2, 0, 0};  // (2, 6)
  const std::vector<uint8_t> keep{0, 1, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0};
  const std::vector<int32_t> prefix{1, 11, 12, 13, 1, 9, 10, 0};  // (2, 4)
  const std::vector<int32_t> labels{11, 12, 13, 2, 9, 10, 2, 0};
  const int32_t pad = 0;

  SUBCASE("bottleneck loss") {
    testutil::gradcheck(model.params, [&](Tape<double>& tape) {
      Forward<double> fwd{model, tape, pad, false, nullptr, nullptr};
      auto logits = fwd.bottleneck_logits(src, 2, 6, keep, prefix, 4);
      return tape.cross_entropy(tape.reshape(logits, {8, cfg.vocab_size}), labels, pad);
    });
  }

  SUBCASE("seq2seq loss") {
    testutil::gradcheck(model.params, [&](Tape<double>& tape) {
      Forward<double> fwd{model, tape, pad, false, nullptr, nullptr};
      auto logits = fwd.seq2seq_logits(src, 2, 6, prefix, 4);
      return tape.cross_entropy(tape.reshape(logits, {8, cfg.vocab_size}), labels, pad);
    });
  }
}
