#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dropbp/model.hpp"
#include "dropbp/rng.hpp"

namespace dropbp {

enum class DatasetKind { char_lm, copy_task };

const char* to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(const std::string& text);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::copy_task;
  std::size_t seq_len = 16;     // model input length per example
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  // copy task: seq_len / 2 random symbols, a separator, then the echo
  std::size_t copy_symbols = 8;  // alphabet size; the separator is token copy_symbols
  std::size_t copy_examples = 20000;
  // char-lm: byte-level windows over a corpus; empty path = bundled text
  std::string corpus_path;
  std::size_t window_stride = 0;  // 0 = seq_len / 2

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

// One training window: input tokens and next-token targets of equal length.
// Targets of positions that carry no loss are ops::kIgnoreIndex.
struct Example {
  std::vector<int> input;
  std::vector<int> target;
};

enum class Split { train, val };

class Dataset {
 public:
  Dataset(std::vector<Example> train, std::vector<Example> val, std::size_t vocab_size,
          std::size_t seq_len);

  const std::vector<Example>& examples(Split split) const {
    return split == Split::train ? train_ : val_;
  }
  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t seq_len() const { return seq_len_; }

  Batch batch(Split split, const std::vector<std::size_t>& indices) const;
  // Uniform draw with replacement from the train split.
  Batch sample_train(std::size_t batch_size, Rng& rng) const;
  // Deterministic val batches covering at most max_examples examples.
  std::vector<Batch> val_batches(std::size_t batch_size, std::size_t max_examples) const;

 private:
  std::vector<Example> train_;
  std::vector<Example> val_;
  std::size_t vocab_size_ = 0;
  std::size_t seq_len_ = 0;
};

// Deterministic for a given spec. Val windows whose tokens also occur as a
// train window are removed, so the splits never share a window.
Dataset make_dataset(const DatasetSpec& spec);

std::string_view bundled_corpus();
std::uint64_t hash_example(const Example& ex);

}  // namespace dropbp
