#include "gloss/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <string>

namespace gloss {

namespace {

// Character pools. Lemmas draw ordered pairs of distinct codepoints from the
// lemma pool; property/entity chars are indexed by arithmetic on the lemma's
// codepoints, so every gloss slot is a pure function of the lemma. The pools
// are disjoint from each other and from the template literals so slot
// content never collides with structural text.
constexpr std::u32string_view kLemmaPool =
    U"山林床門馬魚鳥蟲書筆燈窗雨雪風雲星月江河"
    U"湖海田園城牆刀劍弓旗鐘鼓琴棋詩畫茶酒飯麵"
    U"糖鹽油燭布衣帽鞋杯盤壺碗箱櫃梯橋船車輪鈴"
    U"針線簾幕傘扇";
constexpr std::u32string_view kPropPool = U"紅大冷新圓快亮軟甜高直輕濕粗靜滿";
constexpr std::u32string_view kEntityPool = U"器瓶罐籃盒匣甕簍";

// Example sentence frames; '~' marks where the lemma is spliced in.
constexpr std::u32string_view kNounFrames[] = {
    U"桌上有一個~。", U"他買了~回家。", U"這個~很特別。", U"我看見了~。", U"那裡放著一個~。"};
constexpr std::u32string_view kVerbFrames[] = {
    U"他們正在~。", U"她想要~一下。", U"大家一起~吧。", U"他昨天~了。", U"請不要~。"};
constexpr std::u32string_view kAdvFrames[] = {
    U"他~地點了頭。", U"這裡~安靜。", U"她~同意了。", U"天氣~轉涼。", U"他們~完成了任務。"};
constexpr std::u32string_view kOtherFrames[] = {
    U"這句話裡有~兩個字。", U"文中出現了~。", U"他寫下了~。", U"字典收錄了~。",
    U"老師解釋了~的用法。"};
constexpr std::u32string_view kNameFrames[] = {
    U"~來了。", U"我認識~。", U"~說話了。", U"大家都喜歡~。", U"~在哪裡。"};

struct FrameSet {
  const std::u32string_view* data;
  int64_t count;
};

FrameSet frames_for(PosCategory cat) {
  switch (cat) {
    case PosCategory::noun: return {kNounFrames, 5};
    case PosCategory::verb: return {kVerbFrames, 5};
    case PosCategory::adverb: return {kAdvFrames, 5};
    case PosCategory::other: return {kOtherFrames, 5};
    case PosCategory::proper_noun: return {kNameFrames, 5};
  }
  fail(Errc::invalid_argument, "bad PosCategory value");
}

const char* raw_label_for(PosCategory cat) {
  switch (cat) {
    case PosCategory::noun: return "Na";
    case PosCategory::verb: return "VC";
    case PosCategory::adverb: return "D";
    case PosCategory::other: return "Caa";
    case PosCategory::proper_noun: return "Nb";
  }
  fail(Errc::invalid_argument, "bad PosCategory value");
}

struct Part {
  std::u32string text;
  const char* type;
};

// Gloss templates. The register mark (通/特) sits in the opener; the chunks
// whose wording it forces come at least two tokens later, so a decoder that
// can only see the immediately preceding token cannot resolve them.
std::vector<Part> gloss_parts(PosCategory cat, bool reg, const std::u32string& prop,
                              char32_t entity, bool negated) {
  const char32_t mark = reg ? U'特' : U'通';
  std::vector<Part> parts;
  switch (cat) {
    case PosCategory::noun:
      parts.push_back({std::u32string(U"指") + mark, "--"});
      parts.push_back({prop, "Property"});
      parts.push_back({U"的", "Function"});
      parts.push_back({std::u32string(1, entity), "Entity"});
      parts.push_back({std::u32string(1, reg ? U'體' : U'物') + U"。", "Kind"});
      break;
    case PosCategory::verb:
      parts.push_back({std::u32string(U"以") + mark, "--"});
      parts.push_back({prop, "Property"});
      parts.push_back({U"方式", "Function"});
      if (negated) parts.push_back({U"不", "Negation"});
      parts.push_back({reg ? std::u32string(U"做出") : std::u32string(U"進行"), "Action"});
      parts.push_back({U"動作。", "Event"});
      break;
    case PosCategory::adverb:
      parts.push_back({std::u32string(U"表") + mark, "--"});
      parts.push_back({prop, "Property"});
      parts.push_back({U"的", "Function"});
      parts.push_back({(reg ? std::u32string(U"幅度") : std::u32string(U"程度")) + U"。", "Degree"});
      break;
    case PosCategory::other:
      parts.push_back({std::u32string(U"與") + mark, "--"});
      parts.push_back({prop, "Property"});
      parts.push_back({reg ? std::u32string(U"相連") : std::u32string(U"有關"), "Relation"});
      parts.push_back({U"之詞。", "Function"});
      break;
    case PosCategory::proper_noun:
      parts.push_back({reg ? std::u32string(U"地名。") : std::u32string(U"人名。"), "--"});
      break;
  }
  return parts;
}

}  // namespace

void SynthSpec::validate() const {
  require(n_senses >= 1, Errc::config_error, "n_senses must be at least 1");
  // Lemmas are ordered pairs of distinct pool chars; stay well under the
  // pair capacity so rejection sampling stays cheap.
  const int64_t cap = static_cast<int64_t>(kLemmaPool.size()) *
                      (static_cast<int64_t>(kLemmaPool.size()) - 1) / 2;
  require(n_senses <= cap, Errc::config_error,
          "n_senses must be at most " + std::to_string(cap) + " (lemma inventory)");
  double sum = 0.0;
  for (double w : pos_mix) {
    require(w >= 0.0, Errc::config_error, "pos_mix entries must be non-negative");
    sum += w;
  }
  require(std::fabs(sum - 1.0) <= 1e-6, Errc::config_error, "pos_mix must sum to 1");
  require(nb_fraction >= 0.0 && nb_fraction <= 1.0, Errc::config_error,
          "nb_fraction must be in [0, 1]");
  require(max_examples >= 1 && max_examples <= 5, Errc::config_error,
          "max_examples must be in [1, 5]");
}

SynthResult synth_corpus(const SynthSpec& spec) {
  spec.validate();
  Rng rng = Rng(spec.seed).fork("synth");

  std::set<std::pair<int64_t, int64_t>> used_pairs;
  SynthResult out;
  out.senses.reserve(spec.n_senses);
  out.annotations.reserve(spec.n_senses);

  for (int64_t si = 0; si < spec.n_senses; ++si) {
    // Category: proper-name coin first, then the 4-way mix.
    PosCategory cat;
    if (rng.uniform() < spec.nb_fraction) {
      cat = PosCategory::proper_noun;
    } else {
      const double v = rng.uniform();
      double acc = 0.0;
      int pick = 3;
      for (int k = 0; k < 4; ++k) {
        acc += spec.pos_mix[k];
        if (v < acc) {
          pick = k;
          break;
        }
      }
      cat = std::array<PosCategory, 4>{PosCategory::noun, PosCategory::verb, PosCategory::adverb,
                                       PosCategory::other}[pick];
    }

    // Lemma: an unused ordered pair of distinct pool chars.
    int64_t i0 = 0, i1 = 0;
    for (int tries = 0;; ++tries) {
      require(tries < 100000, Errc::config_error, "lemma inventory exhausted");
      i0 = rng.below(static_cast<int64_t>(kLemmaPool.size()));
      i1 = rng.below(static_cast<int64_t>(kLemmaPool.size()));
      if (i0 == i1) continue;
      if (used_pairs.emplace(std::min(i0, i1), std::max(i0, i1)).second) break;
    }
    const char32_t c0 = kLemmaPool[static_cast<size_t>(i0)];
    const char32_t c1 = kLemmaPool[static_cast<size_t>(i1)];

    // Register. Proper names always derive it from the lemma; other
    // categories follow the configured mode.
    bool reg;
    if (cat == PosCategory::proper_noun || spec.register_mode == SynthSpec::RegisterMode::derived)
      reg = (c0 & 1u) != 0;
    else
      reg = rng.below(2) != 0;

    // Slot material, all pure functions of the lemma.
    const int prop_len = 1 + static_cast<int>((c0 + c1) % 2u);
    std::u32string prop(1, kPropPool[c0 % kPropPool.size()]);
    if (prop_len == 2) prop.push_back(kPropPool[c1 % kPropPool.size()]);
    const char32_t entity = kEntityPool[(c0 >> 4) % kEntityPool.size()];
    const bool negated = ((c0 ^ c1) & 1u) != 0;

    Sense s;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "syn%05lld", static_cast<long long>(si));
    s.sense_id = idbuf;
    s.pos = raw_label_for(cat);
    s.category = cat;
    s.lemma = utf8_encode(std::u32string{c0, c1});

    SenseAnnotation ann;
    ann.sense_id = s.sense_id;
    std::u32string gloss;
    for (const auto& part : gloss_parts(cat, reg, prop, entity, negated)) {
      ChunkSpan c;
      c.start = static_cast<int64_t>(gloss.size());
      gloss += part.text;
      c.end = static_cast<int64_t>(gloss.size());
      c.type = part.type;
      ann.chunks.push_back(std::move(c));
    }
    s.gloss = utf8_encode(gloss);

    // Examples: 1..max_examples distinct frames, chosen by partial shuffle.
    const FrameSet frames = frames_for(cat);
    const int64_t n_ex = 1 + rng.below(std::min(spec.max_examples, frames.count));
    std::vector<int64_t> order(frames.count);
    for (int64_t j = 0; j < frames.count; ++j) order[j] = j;
    for (int64_t j = 0; j < n_ex; ++j)
      std::swap(order[j], order[j + rng.below(frames.count - j)]);
    for (int64_t j = 0; j < n_ex; ++j) {
      const std::u32string_view frame = frames.data[order[j]];
      const size_t hole = frame.find(U'~');
      ExampleSpan ex;
      ex.start = static_cast<int64_t>(hole);
      ex.end = ex.start + 2;
      std::u32string text(frame.substr(0, hole));
      text += std::u32string{c0, c1};
      text += frame.substr(hole + 1);
      ex.text = utf8_encode(text);
      s.examples.push_back(std::move(ex));
    }

    out.senses.push_back(std::move(s));
    out.annotations.push_back(std::move(ann));
  }
  return out;
}

bool is_slot_chunk_type(const std::string& type) {
  return type == "Property" || type == "Entity" || type == "Negation";
}

bool is_forced_chunk_type(const std::string& type) {
  return type == "Function" || type == "Kind" || type == "Action" || type == "Event" ||
         type == "Degree" || type == "Relation";
}

bool synth_gloss_well_formed(PosCategory cat, const std::string& gloss) {
  std::u32string g;
  try {
    g = utf8_decode(gloss);
  } catch (const Error&) {
    return false;
  }

  if (cat == PosCategory::proper_noun) return g == U"人名。" || g == U"地名。";

  size_t i = 0;
  auto take = [&](std::u32string_view want) {
    if (g.compare(i, want.size(), want) != 0) return false;
    i += want.size();
    return true;
  };

  // Opener + register mark.
  switch (cat) {
    case PosCategory::noun:
      if (!take(U"指")) return false;
      break;
    case PosCategory::verb:
      if (!take(U"以")) return false;
      break;
    case PosCategory::adverb:
      if (!take(U"表")) return false;
      break;
    case PosCategory::other:
      if (!take(U"與")) return false;
      break;
    default: return false;
  }
  if (i >= g.size() || (g[i] != U'通' && g[i] != U'特')) return false;
  const bool reg = g[i] == U'特';
  ++i;

  // One or two property characters. The property pool is disjoint from all
  // template literals, so greedy consumption is unambiguous.
  size_t n_prop = 0;
  while (i < g.size() && kPropPool.find(g[i]) != std::u32string_view::npos) {
    ++i;
    ++n_prop;
  }
  if (n_prop < 1 || n_prop > 2) return false;

  switch (cat) {
    case PosCategory::noun: {
      if (!take(U"的")) return false;
      if (i >= g.size() || kEntityPool.find(g[i]) == std::u32string_view::npos) return false;
      ++i;
      if (!take(reg ? U"體" : U"物")) return false;
      break;
    }
    case PosCategory::verb: {
      if (!take(U"方式")) return false;
      if (i < g.size() && g[i] == U'不') ++i;
      if (!take(reg ? std::u32string_view(U"做出") : std::u32string_view(U"進行"))) return false;
      if (!take(U"動作")) return false;
      break;
    }
    case PosCategory::adverb: {
      if (!take(U"的")) return false;
      if (!take(reg ? std::u32string_view(U"幅度") : std::u32string_view(U"程度"))) return false;
      break;
    }
    case PosCategory::other: {
      if (!take(reg ? std::u32string_view(U"相連") : std::u32string_view(U"有關"))) return false;
      if (!take(U"之詞")) return false;
      break;
    }
    default: return false;
  }
  return take(U"。") && i == g.size();
}

std::u32string_view synth_lemma_pool() { return kLemmaPool; }
std::u32string_view synth_prop_pool() { return kPropPool; }
std::u32string_view synth_entity_pool() { return kEntityPool; }

}  // namespace gloss
