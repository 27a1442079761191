#include "dropbp/dataset.hpp"

#include <fstream>
#include <iterator>
#include <sstream>
#include <unordered_set>

#include "dropbp/error.hpp"
#include "dropbp/ops.hpp"

namespace dropbp {

namespace {

// Opening of "A Tale of Two Cities" (Dickens, 1859) and the Gettysburg
// Address (Lincoln, 1863), both in the public domain.
constexpr std::string_view kCorpus =
    "It was the best of times, it was the worst of times, it was the age of wisdom, it was "
    "the age of foolishness, it was the epoch of belief, it was the epoch of incredulity, it "
    "was the season of Light, it was the season of Darkness, it was the spring of hope, it "
    "was the winter of despair, we had everything before us, we had nothing before us, we "
    "were all going direct to Heaven, we were all going direct the other way - in short, the "
    "period was so far like the present period, that some of its noisiest authorities "
    "insisted on its being received, for good or for evil, in the superlative degree of "
    "comparison only.\n"
    "There were a king with a large jaw and a queen with a plain face, on the throne of "
    "England; there were a king with a large jaw and a queen with a fair face, on the throne "
    "of France. In both countries it was clearer than crystal to the lords of the State "
    "preserves of loaves and fishes, that things in general were settled for ever.\n"
    "It was the year of Our Lord one thousand seven hundred and seventy-five. Spiritual "
    "revelations were conceded to England at that favoured period, as at this.\n"
    "Four score and seven years ago our fathers brought forth on this continent, a new "
    "nation, conceived in Liberty, and dedicated to the proposition that all men are created "
    "equal.\n"
    "Now we are engaged in a great civil war, testing whether that nation, or any nation so "
    "conceived and so dedicated, can long endure. We are met on a great battle-field of that "
    "war. We have come to dedicate a portion of that field, as a final resting place for "
    "those who here gave their lives that that nation might live. It is altogether fitting "
    "and proper that we should do this.\n"
    "But, in a larger sense, we can not dedicate - we can not consecrate - we can not hallow "
    "- this ground. The brave men, living and dead, who struggled here, have consecrated it, "
    "far above our poor power to add or detract. The world will little note, nor long "
    "remember what we say here, but it can never forget what they did here. It is for us the "
    "living, rather, to be dedicated here to the unfinished work which they who fought here "
    "have thus far so nobly advanced. It is rather for us to be here dedicated to the great "
    "task remaining before us - that from these honored dead we take increased devotion to "
    "that cause for which they gave the last full measure of devotion - that we here highly "
    "resolve that these dead shall not have died in vain - that this nation, under God, shall "
    "have a new birth of freedom - and that government of the people, by the people, for the "
    "people, shall not perish from the earth.\n";

std::string read_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open corpus '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void check_fraction(double val_fraction) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ArgumentError("val_fraction must lie in (0, 1)");
  }
}

// The first n_train examples train; the rest, minus any that also occur in
// train, validate.
Dataset split_and_dedupe(std::vector<Example> all, std::size_t n_train, std::size_t vocab,
                         std::size_t seq_len) {
  if (n_train == 0 || n_train >= all.size()) {
    throw InputError("dataset too small to split: " + std::to_string(all.size()) + " windows");
  }
  std::vector<Example> train(std::make_move_iterator(all.begin()),
                             std::make_move_iterator(all.begin() + static_cast<long>(n_train)));
  std::unordered_set<std::uint64_t> seen;
  for (const auto& ex : train) seen.insert(hash_example(ex));
  std::vector<Example> val;
  for (auto it = all.begin() + static_cast<long>(n_train); it != all.end(); ++it) {
    if (!seen.contains(hash_example(*it))) val.push_back(std::move(*it));
  }
  if (val.empty()) throw InputError("validation split is empty after removing train overlap");
  return Dataset(std::move(train), std::move(val), vocab, seq_len);
}

Dataset make_copy_task(const DatasetSpec& spec) {
  if (spec.seq_len < 2 || spec.seq_len % 2 != 0) {
    throw ArgumentError("copy task needs an even seq_len >= 2");
  }
  check_fraction(spec.val_fraction);
  if (spec.copy_symbols < 2) throw ArgumentError("copy task needs at least 2 symbols");
  const std::size_t half = spec.seq_len / 2;
  const int sep = static_cast<int>(spec.copy_symbols);
  Rng rng(spec.seed, 0x636f7079);  // "copy"
  std::vector<Example> all;
  all.reserve(spec.copy_examples);
  std::unordered_set<std::uint64_t> unique;
  std::size_t attempts = 0;
  while (all.size() < spec.copy_examples) {
    if (++attempts > 20 * spec.copy_examples + 1000) {
      throw ArgumentError("copy task space too small for " + std::to_string(spec.copy_examples) +
                          " distinct examples");
    }
    // Window: symbols, separator, echo; inputs drop the last token.
    std::vector<int> window;
    window.reserve(2 * half + 1);
    for (std::size_t i = 0; i < half; ++i) {
      window.push_back(static_cast<int>(rng.uniform_index(spec.copy_symbols)));
    }
    window.push_back(sep);
    for (std::size_t i = 0; i < half; ++i) window.push_back(window[i]);
    Example ex;
    ex.input.assign(window.begin(), window.end() - 1);
    ex.target.assign(spec.seq_len, ops::kIgnoreIndex);
    // Position t predicts window[t + 1]; only echo tokens are scored.
    for (std::size_t t = half; t < spec.seq_len; ++t) ex.target[t] = window[t + 1];
    if (unique.insert(hash_example(ex)).second) all.push_back(std::move(ex));
  }
  const auto n_val =
      static_cast<std::size_t>(static_cast<double>(all.size()) * spec.val_fraction);
  const std::size_t n_train = all.size() - n_val;
  return split_and_dedupe(std::move(all), n_train, spec.copy_symbols + 1, spec.seq_len);
}

Dataset make_char_lm(const DatasetSpec& spec) {
  const std::string text =
      spec.corpus_path.empty() ? std::string(kCorpus) : read_corpus(spec.corpus_path);
  if (text.empty()) throw InputError("corpus is empty");
  if (spec.seq_len == 0) throw ArgumentError("seq_len must be positive");
  check_fraction(spec.val_fraction);
  if (text.size() < spec.seq_len + 1) {
    throw InputError("corpus shorter than one window of " + std::to_string(spec.seq_len + 1) +
                     " bytes");
  }
  const std::size_t stride = spec.window_stride ? spec.window_stride : std::max<std::size_t>(1, spec.seq_len / 2);
  // Contiguous split of the text so train and val windows never straddle.
  const auto cut = static_cast<std::size_t>(static_cast<double>(text.size()) * (1.0 - spec.val_fraction));
  auto windows = [&](std::size_t begin, std::size_t end) {
    std::vector<Example> out;
    for (std::size_t s = begin; s + spec.seq_len + 1 <= end; s += stride) {
      Example ex;
      for (std::size_t t = 0; t < spec.seq_len; ++t) {
        ex.input.push_back(static_cast<unsigned char>(text[s + t]));
        ex.target.push_back(static_cast<unsigned char>(text[s + t + 1]));
      }
      out.push_back(std::move(ex));
    }
    return out;
  };
  auto train = windows(0, cut);
  auto val = windows(cut, text.size());
  if (train.empty() || val.empty()) {
    throw InputError("corpus too small to split into train and val windows");
  }
  std::vector<Example> all = std::move(train);
  const std::size_t n_train = all.size();
  for (auto& ex : val) all.push_back(std::move(ex));
  return split_and_dedupe(std::move(all), n_train, 256, spec.seq_len);
}

}  // namespace

const char* to_string(DatasetKind kind) {
  return kind == DatasetKind::char_lm ? "char-lm" : "copy-task";
}

DatasetKind parse_dataset_kind(const std::string& text) {
  if (text == "char-lm") return DatasetKind::char_lm;
  if (text == "copy-task") return DatasetKind::copy_task;
  throw InputError("unknown dataset kind '" + text + "' (expected char-lm or copy-task)");
}

std::string_view bundled_corpus() { return kCorpus; }

std::uint64_t hash_example(const Example& ex) {
  // FNV-1a over inputs then targets.
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](int v) {
    auto u = static_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) {
      h ^= (u >> (8 * b)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  for (int v : ex.input) mix(v);
  mix(-7);
  for (int v : ex.target) mix(v);
  return h;
}

Dataset::Dataset(std::vector<Example> train, std::vector<Example> val, std::size_t vocab_size,
                 std::size_t seq_len)
    : train_(std::move(train)), val_(std::move(val)), vocab_size_(vocab_size), seq_len_(seq_len) {
  for (const auto* split : {&train_, &val_}) {
    for (const auto& ex : *split) {
      if (ex.input.size() != seq_len_ || ex.target.size() != seq_len_) {
        throw DimensionError("example length differs from seq_len " + std::to_string(seq_len_));
      }
    }
  }
}

Batch Dataset::batch(Split split, const std::vector<std::size_t>& indices) const {
  const auto& src = examples(split);
  Batch b;
  b.batch_size = indices.size();
  b.seq = seq_len_;
  b.tokens.reserve(indices.size() * seq_len_);
  b.targets.reserve(indices.size() * seq_len_);
  for (std::size_t i : indices) {
    const Example& ex = src.at(i);
    b.tokens.insert(b.tokens.end(), ex.input.begin(), ex.input.end());
    b.targets.insert(b.targets.end(), ex.target.begin(), ex.target.end());
  }
  return b;
}

Batch Dataset::sample_train(std::size_t batch_size, Rng& rng) const {
  std::vector<std::size_t> idx(batch_size);
  for (auto& i : idx) i = rng.uniform_index(train_.size());
  return batch(Split::train, idx);
}

std::vector<Batch> Dataset::val_batches(std::size_t batch_size, std::size_t max_examples) const {
  if (batch_size == 0) throw ArgumentError("batch size must be positive");
  const std::size_t n = std::min(max_examples, val_.size());
  std::vector<Batch> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(n, start + batch_size); ++i) idx.push_back(i);
    out.push_back(batch(Split::val, idx));
  }
  return out;
}

Dataset make_dataset(const DatasetSpec& spec) {
  return spec.kind == DatasetKind::copy_task ? make_copy_task(spec) : make_char_lm(spec);
}

}  // namespace dropbp
