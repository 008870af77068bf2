#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "adat/data.hpp"
#include "adat/tensor_io.hpp"
#include "adat/model.hpp"

using namespace adat;

TEST_CASE("vocabulary ids follow frequency order with lexicographic ties") {
  Vocab v = build_vocab({{"a", "b"}, {"b", "c"}});
  CHECK(v.id_of("b") == 4);  // frequency 2
  CHECK(v.id_of("a") == 5);  // ties broken lexicographically
  CHECK(v.id_of("c") == 6);
  CHECK(v.id_of("zzz") == Vocab::kUnk);
  CHECK(v.size() == 7);

  Vocab single = build_vocab({{"only"}});
  CHECK(single.size() == 5);  // 4 reserved + 1

  CHECK_THROWS_AS(build_vocab({}), std::invalid_argument);
}

TEST_CASE("sequence encoding pads, truncates and maps unknowns") {
  Vocab v = build_vocab({{"a", "b"}, {"b", "c"}});
  CHECK(encode_sequence(v, {"a", "b"}, 5) ==
        std::vector<int>{Vocab::kSos, 5, 4, Vocab::kEos, Vocab::kPad});
  CHECK(encode_sequence(v, {"mystery"}, 4) ==
        std::vector<int>{Vocab::kSos, Vocab::kUnk, Vocab::kEos, Vocab::kPad});
  CHECK(encode_sequence(v, {}, 4) ==
        std::vector<int>{Vocab::kSos, Vocab::kEos, Vocab::kPad, Vocab::kPad});
  // over-long sequences keep their prefix
  CHECK(encode_sequence(v, {"a", "b", "c", "a"}, 4) ==
        std::vector<int>{Vocab::kSos, 5, 4, Vocab::kEos});
  CHECK_THROWS_AS(encode_sequence(v, {"a"}, 1), std::invalid_argument);

  // decode recovers tokens up to unknown substitution and truncation
  const std::vector<int> ids = encode_sequence(v, {"a", "b"}, 6);
  const std::vector<int> content = strip_specials(ids);
  CHECK(decode_ids(v, content) == std::vector<std::string>{"a", "b"});
}

TEST_CASE("synthetic generation is a pure function of spec and seed") {
  SynthSpec spec;
  spec.n_samples = 6;
  spec.gloss_vocab_size = 8;
  spec.text_vocab_size = 16;
  spec.max_gloss_len = 4;
  spec.channels = 1;
  spec.height = 8;
  spec.width = 8;
  spec.noise = 0.05;
  spec.max_video_len = 16;

  Dataset a = synth_generate(spec, 31);
  Dataset b = synth_generate(spec, 31);
  CHECK(a == b);
  Dataset c = synth_generate(spec, 32);
  CHECK_FALSE(a == c);
}

TEST_CASE("zero noise renders identical frames within one gloss segment") {
  SynthSpec spec;
  spec.n_samples = 3;
  spec.gloss_vocab_size = 5;
  spec.text_vocab_size = 12;
  spec.max_gloss_len = 3;
  spec.channels = 1;
  spec.height = 6;
  spec.width = 6;
  spec.noise = 0.0;
  spec.max_video_len = 12;
  Dataset ds = synth_generate(spec, 7);
  const std::size_t fs = spec.channels * spec.height * spec.width;
  for (const SampleRecord& rec : ds.records) {
    for (std::size_t f = 1; f < rec.frame_count; ++f) {
      if (rec.alignment[f] != rec.alignment[f - 1]) continue;  // same segment only
      for (std::size_t i = 0; i < fs; ++i)
        CHECK(rec.frames.values[f * fs + i] == rec.frames.values[(f - 1) * fs + i]);
    }
  }
}

TEST_CASE("synthetic records respect the documented bounds and alignment law") {
  SynthSpec spec;
  spec.n_samples = 40;
  spec.gloss_vocab_size = 10;
  spec.text_vocab_size = 25;
  spec.channels = 1;
  spec.height = 6;
  spec.width = 6;
  spec.max_video_len = 40;
  Dataset ds = synth_generate(spec, 123);
  CHECK(ds.records.size() == 40);
  for (const SampleRecord& rec : ds.records) {
    CHECK(rec.gloss_len >= 1);
    CHECK(rec.gloss_len <= 10);  // emulated annotation bound
    CHECK(rec.alignment.size() == rec.frames.frames);
    CHECK(rec.frame_count <= ds.max_video_len);
    // frame-level alignment collapses to exactly the gloss sequence
    std::vector<int> aligned(rec.alignment.begin(),
                             rec.alignment.begin() + static_cast<std::ptrdiff_t>(rec.frame_count));
    CHECK(collapse_decode(aligned, ds.gloss_blank_id()) == strip_specials(rec.gloss_ids));
    // padding only after the end marker
    bool saw_pad = false;
    for (int id : rec.text_ids) {
      if (id == Vocab::kPad) saw_pad = true;
      else CHECK_FALSE(saw_pad);
    }
  }
  // vocab covers every non-reserved token: no <unk> in encoded sequences
  for (const SampleRecord& rec : ds.records) {
    for (int id : rec.gloss_ids) CHECK(id != Vocab::kUnk);
    for (int id : rec.text_ids) CHECK(id != Vocab::kUnk);
  }
}

TEST_CASE("generator validates its spec") {
  SynthSpec spec;
  spec.n_samples = 2;
  spec.gloss_vocab_size = 30;
  spec.text_vocab_size = 20;  // too small for an injective word mapping
  spec.channels = 1;
  spec.height = 6;
  spec.width = 6;
  CHECK_THROWS_AS(synth_generate(spec, 1), std::invalid_argument);

  SynthSpec tight;
  tight.n_samples = 2;
  tight.gloss_vocab_size = 4;
  tight.text_vocab_size = 12;
  tight.max_gloss_len = 10;
  tight.frames_per_gloss_max = 10;
  tight.max_video_len = 20;  // 10 glosses x 10 frames cannot fit
  tight.channels = 1;
  tight.height = 6;
  tight.width = 6;
  CHECK_THROWS_AS(synth_generate(tight, 1), std::invalid_argument);
}

TEST_CASE("splits are deterministic, disjoint and exhaustive") {
  SynthSpec spec;
  spec.n_samples = 100;
  spec.gloss_vocab_size = 6;
  spec.text_vocab_size = 14;
  spec.max_gloss_len = 2;
  spec.channels = 1;
  spec.height = 6;
  spec.width = 6;
  spec.max_video_len = 8;
  Dataset ds = synth_generate(spec, 5);

  SplitResult split = split_dataset(ds, 0.2, 5, 99);
  CHECK(split.test.size() == 20);
  REQUIRE(split.folds.size() == 5);
  for (const auto& fold : split.folds) CHECK(fold.size() == 16);

  std::set<std::size_t> seen(split.test.begin(), split.test.end());
  std::size_t total = split.test.size();
  for (const auto& fold : split.folds) {
    seen.insert(fold.begin(), fold.end());
    total += fold.size();
  }
  CHECK(total == 100);
  CHECK(seen.size() == 100);  // disjoint and exhaustive

  SplitResult again = split_dataset(ds, 0.2, 5, 99);
  CHECK(again.test == split.test);
  CHECK(again.folds == split.folds);
  SplitResult other = split_dataset(ds, 0.2, 5, 100);
  CHECK_FALSE(other.test == split.test);

  Dataset tiny = ds;
  tiny.records.resize(5);
  CHECK_THROWS_AS(split_dataset(tiny, 0.2, 5, 1), std::invalid_argument);
}

TEST_CASE("dataset container round-trips bit-exactly") {
  SynthSpec spec;
  spec.n_samples = 3;
  spec.gloss_vocab_size = 5;
  spec.text_vocab_size = 12;
  spec.max_gloss_len = 3;
  spec.channels = 1;
  spec.height = 6;
  spec.width = 6;
  spec.max_video_len = 12;
  Dataset ds = synth_generate(spec, 2718);

  const std::string path = "dataset_roundtrip_test.adsl";
  save_dataset(ds, path);
  Dataset back = load_dataset(path);
  CHECK(back == ds);

  // truncated file: parse error with offset, not a crash
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(path + ".trunc", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 10));
  }
  CHECK_THROWS_AS(load_dataset(path + ".trunc"), ParseError);

  // version byte mismatch: explicit unsupported-version error
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    bytes[4] = 0x02;
    std::ofstream out(path + ".vers", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_WITH_AS(load_dataset(path + ".vers"), doctest::Contains("unsupported"),
                       ParseError);

  std::remove(path.c_str());
  std::remove((path + ".trunc").c_str());
  std::remove((path + ".vers").c_str());
}
