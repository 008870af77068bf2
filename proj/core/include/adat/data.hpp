#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "adat/features.hpp"

namespace adat {

// Token table with fixed reserved ids. Content ids start at kReserved and
// are assigned by descending corpus frequency, ties broken lexicographically.
struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kSos = 2;
  static constexpr int kEos = 3;
  static constexpr int kReserved = 4;

  std::vector<std::string> id_to_token;  // ids 0..3 hold the reserved names
  std::unordered_map<std::string, int> token_to_id;

  Vocab();
  int size() const { return static_cast<int>(id_to_token.size()); }
  int add(const std::string& token);           // appends, returns new id
  int id_of(const std::string& token) const;   // kUnk when missing
  const std::string& token_of(int id) const;
  bool operator==(const Vocab& other) const { return id_to_token == other.id_to_token; }
};

struct SampleRecord {
  FrameStack frames;              // padded with zero frames to the dataset max
  std::vector<int> gloss_ids;     // [<sos> ... <eos> <pad>...], dataset max length
  std::vector<int> text_ids;      // same layout
  std::vector<int> alignment;     // per-frame gloss id; blank id on padded frames
  std::size_t frame_count = 0;    // lengths before padding
  std::size_t gloss_len = 0;
  std::size_t text_len = 0;
  bool operator==(const SampleRecord& other) const = default;
};

struct Dataset {
  std::vector<SampleRecord> records;
  Vocab gloss_vocab;
  Vocab text_vocab;
  std::size_t max_video_len = 0;  // padded frame count
  std::size_t max_gloss_len = 0;  // padded id-sequence length (includes sos/eos)
  std::size_t max_text_len = 0;
  std::size_t channels = 0, height = 0, width = 0;
  double fps = 30.0;
  std::string provenance;
  std::uint64_t seed = 0;

  // Blank class used by frame-level heads; one past the last vocab id.
  int gloss_blank_id() const { return gloss_vocab.size(); }
  bool operator==(const Dataset& other) const = default;
};

struct SynthSpec {
  std::size_t n_samples = 100;
  std::size_t gloss_vocab_size = 20;  // content tokens
  std::size_t text_vocab_size = 40;   // content tokens, function words included
  std::size_t max_gloss_len = 10;     // content tokens per sample
  std::size_t frames_per_gloss_min = 2;
  std::size_t frames_per_gloss_max = 4;
  std::size_t channels = 1, height = 16, width = 16;
  double noise = 0.05;
  std::size_t function_word_every = 3;
  std::size_t function_word_count = 5;
  std::size_t max_video_len = 64;
  double fps = 30.0;
};

struct SplitResult {
  std::vector<std::vector<std::size_t>> folds;  // disjoint record indices
  std::vector<std::size_t> test;
};

Vocab build_vocab(const std::vector<std::vector<std::string>>& corpus);

// [<sos>, ids..., <eos>, <pad>...] of exactly max_len entries; unknown tokens
// map to <unk>; over-long sequences keep their prefix.
std::vector<int> encode_sequence(const Vocab& vocab, const std::vector<std::string>& tokens,
                                 std::size_t max_len);

// Content ids with <sos>/<eos>/<pad> stripped.
std::vector<int> strip_specials(const std::vector<int>& ids);
std::vector<std::string> decode_ids(const Vocab& vocab, const std::vector<int>& ids);

// Deterministic synthetic dataset: each gloss renders a fixed template image
// repeated for a seeded number of frames plus uniform noise; text follows a
// fixed grammar over the gloss sequence. All randomness derives from
// seed ^ sample_index, so per-sample generation order does not matter.
Dataset synth_generate(const SynthSpec& spec, std::uint64_t seed);

SplitResult split_dataset(const Dataset& dataset, double test_fraction, std::size_t folds,
                          std::uint64_t seed);

// Container format "ADSL": magic, version byte 0x01, length-prefixed UTF-8
// key=value header, then per-record binary blocks. Round-trips bit-exactly.
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace adat
