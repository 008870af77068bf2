#include "adat/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "adat/rng.hpp"
#include "adat/tensor_io.hpp"

namespace adat {

namespace {

constexpr char kDatasetMagic[4] = {'A', 'D', 'S', 'L'};
constexpr unsigned char kDatasetVersion = 0x01;

double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

Vocab::Vocab() {
  id_to_token = {"<pad>", "<unk>", "<sos>", "<eos>"};
  for (int i = 0; i < kReserved; ++i) token_to_id[id_to_token[i]] = i;
}

int Vocab::add(const std::string& token) {
  auto it = token_to_id.find(token);
  if (it != token_to_id.end()) return it->second;
  const int id = size();
  id_to_token.push_back(token);
  token_to_id[token] = id;
  return id;
}

int Vocab::id_of(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnk : it->second;
}

const std::string& Vocab::token_of(int id) const {
  if (id < 0 || id >= size())
    throw std::invalid_argument("Vocab: id " + std::to_string(id) + " out of range");
  return id_to_token[static_cast<std::size_t>(id)];
}

Vocab build_vocab(const std::vector<std::vector<std::string>>& corpus) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, std::size_t> freq;
  for (const auto& seq : corpus)
    for (const auto& tok : seq) ++freq[tok];
  std::vector<std::pair<std::string, std::size_t>> order(freq.begin(), freq.end());
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab vocab;
  for (const auto& [tok, n] : order) vocab.add(tok);
  return vocab;
}

std::vector<int> encode_sequence(const Vocab& vocab, const std::vector<std::string>& tokens,
                                 std::size_t max_len) {
  if (max_len < 2) throw std::invalid_argument("encode_sequence: max_len must be at least 2");
  std::vector<int> ids;
  ids.reserve(max_len);
  ids.push_back(Vocab::kSos);
  const std::size_t keep = std::min(tokens.size(), max_len - 2);  // prefix on overflow
  for (std::size_t i = 0; i < keep; ++i) ids.push_back(vocab.id_of(tokens[i]));
  ids.push_back(Vocab::kEos);
  ids.resize(max_len, Vocab::kPad);
  return ids;
}

std::vector<int> strip_specials(const std::vector<int>& ids) {
  std::vector<int> out;
  for (int id : ids) {
    if (id == Vocab::kPad || id == Vocab::kSos) continue;
    if (id == Vocab::kEos) break;
    out.push_back(id);
  }
  return out;
}

std::vector<std::string> decode_ids(const Vocab& vocab, const std::vector<int>& ids) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(vocab.token_of(id));
  return out;
}

namespace {

std::string gloss_token(std::size_t i) { return "g" + std::to_string(i); }
std::string word_token(std::size_t i) { return "w" + std::to_string(i); }
std::string function_token(std::size_t i) { return "fw" + std::to_string(i); }

// Fixed per-gloss template image; independent of the run seed so the same
// gloss always renders the same pattern.
std::vector<double> gloss_template(std::size_t gloss_index, std::size_t pixels) {
  Rng rng(0x7EA71A7Eu + gloss_index);
  std::vector<double> img(pixels);
  for (double& v : img) v = quantize_f32(rng.uniform(0.1, 0.9));
  return img;
}

}  // namespace

Dataset synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.n_samples == 0 || spec.gloss_vocab_size == 0 || spec.text_vocab_size == 0 ||
      spec.max_gloss_len == 0 || spec.frames_per_gloss_min == 0)
    throw std::invalid_argument("synth_generate: extents must be positive");
  if (spec.frames_per_gloss_max < spec.frames_per_gloss_min)
    throw std::invalid_argument("synth_generate: bad frames-per-gloss range");
  if (spec.max_gloss_len * spec.frames_per_gloss_max > spec.max_video_len)
    throw std::invalid_argument("synth_generate: max_gloss_len x frames_per_gloss_max exceeds "
                                "max_video_len");
  if (spec.text_vocab_size < spec.function_word_count ||
      spec.text_vocab_size - spec.function_word_count < spec.gloss_vocab_size)
    throw std::invalid_argument("synth_generate: text vocabulary too small for the grammar");
  if (!(spec.noise >= 0.0 && spec.noise < 0.5))
    throw std::invalid_argument("synth_generate: noise level must be in [0, 0.5)");

  const std::size_t n_words = spec.text_vocab_size - spec.function_word_count;
  // Gloss i maps to word (7i + 3) mod n_words; injective whenever
  // gloss_vocab_size <= n_words and gcd(7, n_words) == 1, checked directly.
  std::vector<std::size_t> word_of(spec.gloss_vocab_size);
  {
    std::vector<bool> used(n_words, false);
    for (std::size_t i = 0; i < spec.gloss_vocab_size; ++i) {
      std::size_t w = (7 * i + 3) % n_words;
      while (used[w]) w = (w + 1) % n_words;
      used[w] = true;
      word_of[i] = w;
    }
  }

  struct Raw {
    std::vector<std::size_t> gloss_seq;       // indices into the synthetic gloss alphabet
    std::vector<std::string> gloss_tokens;
    std::vector<std::string> text_tokens;
    std::vector<std::size_t> frames_per_gloss;
    std::vector<double> frames;
    std::size_t frame_count = 0;
  };

  const std::size_t frame_pixels = spec.channels * spec.height * spec.width;
  std::vector<Raw> raws(spec.n_samples);
  for (std::size_t s = 0; s < spec.n_samples; ++s) {
    Rng rng(seed ^ static_cast<std::uint64_t>(s));
    Raw& raw = raws[s];
    const std::size_t len = 1 + rng.index(spec.max_gloss_len);
    raw.gloss_seq.reserve(len);
    for (std::size_t j = 0; j < len; ++j) {
      std::size_t gi = rng.index(spec.gloss_vocab_size);
      // no immediate repeats, so collapsing the frame alignment recovers the
      // gloss sequence exactly
      while (j > 0 && gi == raw.gloss_seq[j - 1] && spec.gloss_vocab_size > 1)
        gi = rng.index(spec.gloss_vocab_size);
      raw.gloss_seq.push_back(gi);
      raw.gloss_tokens.push_back(gloss_token(gi));
      raw.text_tokens.push_back(word_token(word_of[gi]));
      if ((j + 1) % spec.function_word_every == 0 && j + 1 < len) {
        raw.text_tokens.push_back(
            function_token(((j + 1) / spec.function_word_every - 1) % spec.function_word_count));
      }
    }
    for (std::size_t j = 0; j < len; ++j) {
      const std::size_t reps =
          spec.frames_per_gloss_min +
          rng.index(spec.frames_per_gloss_max - spec.frames_per_gloss_min + 1);
      raw.frames_per_gloss.push_back(reps);
      const std::vector<double> base = gloss_template(raw.gloss_seq[j], frame_pixels);
      for (std::size_t r = 0; r < reps; ++r) {
        for (std::size_t px = 0; px < frame_pixels; ++px) {
          double v = base[px];
          if (spec.noise > 0.0)
            v = std::clamp(v + rng.uniform(-spec.noise, spec.noise), 0.0, 1.0);
          raw.frames.push_back(quantize_f32(v));
        }
      }
      raw.frame_count += reps;
    }
  }

  std::vector<std::vector<std::string>> gloss_corpus, text_corpus;
  std::size_t max_frames = 0, max_gloss = 0, max_text = 0;
  for (const Raw& raw : raws) {
    gloss_corpus.push_back(raw.gloss_tokens);
    text_corpus.push_back(raw.text_tokens);
    max_frames = std::max(max_frames, raw.frame_count);
    max_gloss = std::max(max_gloss, raw.gloss_tokens.size());
    max_text = std::max(max_text, raw.text_tokens.size());
  }

  Dataset ds;
  ds.gloss_vocab = build_vocab(gloss_corpus);
  ds.text_vocab = build_vocab(text_corpus);
  ds.max_video_len = max_frames;
  ds.max_gloss_len = max_gloss + 2;  // room for <sos>/<eos>
  ds.max_text_len = max_text + 2;
  ds.channels = spec.channels;
  ds.height = spec.height;
  ds.width = spec.width;
  ds.fps = spec.fps;
  ds.seed = seed;
  {
    std::ostringstream prov;
    prov << "synthetic seed=" << seed << " n=" << spec.n_samples
         << " gloss_vocab=" << spec.gloss_vocab_size << " text_vocab=" << spec.text_vocab_size
         << " noise=" << format_double(spec.noise);
    ds.provenance = prov.str();
  }

  const int blank = ds.gloss_blank_id();
  for (const Raw& raw : raws) {
    SampleRecord rec;
    rec.frame_count = raw.frame_count;
    rec.gloss_len = raw.gloss_tokens.size();
    rec.text_len = raw.text_tokens.size();
    rec.frames.frames = max_frames;
    rec.frames.channels = spec.channels;
    rec.frames.height = spec.height;
    rec.frames.width = spec.width;
    rec.frames.fps = spec.fps;
    rec.frames.values = raw.frames;
    rec.frames.values.resize(max_frames * frame_pixels, 0.0);  // zero-pad trailing frames
    rec.gloss_ids = encode_sequence(ds.gloss_vocab, raw.gloss_tokens, ds.max_gloss_len);
    rec.text_ids = encode_sequence(ds.text_vocab, raw.text_tokens, ds.max_text_len);
    for (std::size_t j = 0; j < raw.gloss_seq.size(); ++j) {
      const int gid = ds.gloss_vocab.id_of(gloss_token(raw.gloss_seq[j]));
      rec.alignment.insert(rec.alignment.end(), raw.frames_per_gloss[j], gid);
    }
    rec.alignment.resize(max_frames, blank);
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

SplitResult split_dataset(const Dataset& dataset, double test_fraction, std::size_t folds,
                          std::uint64_t seed) {
  const std::size_t n = dataset.records.size();
  if (folds == 0) throw std::invalid_argument("split_dataset: need at least one fold");
  if (n < folds + 1)
    throw std::invalid_argument("split_dataset: " + std::to_string(n) +
                                " records cannot fill " + std::to_string(folds) +
                                " folds plus a test set");
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("split_dataset: test fraction must be in (0, 1)");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::size_t n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
  n_test = std::min(std::max<std::size_t>(n_test, 1), n - folds);
  SplitResult split;
  split.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  const std::size_t rest = n - n_test;
  std::size_t cursor = n_test;
  split.folds.resize(folds);
  for (std::size_t f = 0; f < folds; ++f) {
    std::size_t size = rest / folds + (f < rest % folds ? 1 : 0);
    split.folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                          order.begin() + static_cast<std::ptrdiff_t>(cursor + size));
    cursor += size;
  }
  return split;
}

namespace {

void write_id_array(std::ostream& os, const std::vector<int>& ids) {
  write_u32(os, static_cast<std::uint32_t>(ids.size()));
  for (int id : ids) write_u32(os, static_cast<std::uint32_t>(id));
}

std::vector<int> read_id_array(std::istream& is, std::uint64_t* offset) {
  const std::uint32_t n = read_u32(is, offset);
  if (n > (1u << 24)) throw ParseError("implausible id array length", *offset - 4);
  std::vector<int> ids(n);
  for (std::uint32_t i = 0; i < n; ++i) ids[i] = static_cast<int>(read_u32(is, offset));
  return ids;
}

std::string vocab_line(const Vocab& v) {
  std::string line;
  for (int id = Vocab::kReserved; id < v.size(); ++id) {
    if (id > Vocab::kReserved) line += ' ';
    line += v.token_of(id);
  }
  return line;
}

Vocab vocab_from_line(const std::string& line) {
  Vocab v;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) v.add(tok);
  return v;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write(kDatasetMagic, 4);
  os.put(static_cast<char>(kDatasetVersion));

  std::ostringstream header;
  header << "n_records=" << dataset.records.size() << '\n'
         << "max_video_len=" << dataset.max_video_len << '\n'
         << "max_gloss_len=" << dataset.max_gloss_len << '\n'
         << "max_text_len=" << dataset.max_text_len << '\n'
         << "channels=" << dataset.channels << '\n'
         << "height=" << dataset.height << '\n'
         << "width=" << dataset.width << '\n'
         << "fps=" << format_double(dataset.fps) << '\n'
         << "seed=" << dataset.seed << '\n'
         << "provenance=" << dataset.provenance << '\n'
         << "gloss_vocab=" << vocab_line(dataset.gloss_vocab) << '\n'
         << "text_vocab=" << vocab_line(dataset.text_vocab) << '\n';
  const std::string head = header.str();
  write_u32(os, static_cast<std::uint32_t>(head.size()));
  os.write(head.data(), static_cast<std::streamsize>(head.size()));

  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const SampleRecord& rec = dataset.records[i];
    write_u32(os, static_cast<std::uint32_t>(i));
    write_tensor(os, TensorData({rec.frames.frames, rec.frames.channels, rec.frames.height,
                                 rec.frames.width},
                                rec.frames.values));
    write_id_array(os, rec.gloss_ids);
    write_id_array(os, rec.text_ids);
    write_id_array(os, rec.alignment);
    write_u32(os, static_cast<std::uint32_t>(rec.frame_count));
    write_u32(os, static_cast<std::uint32_t>(rec.gloss_len));
    write_u32(os, static_cast<std::uint32_t>(rec.text_len));
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::uint64_t offset = 0;
  char magic[4];
  read_bytes(is, magic, 4, &offset);
  if (std::memcmp(magic, kDatasetMagic, 4) != 0) throw ParseError("bad dataset magic", 0);
  char version;
  read_bytes(is, &version, 1, &offset);
  if (static_cast<unsigned char>(version) != kDatasetVersion)
    throw ParseError("unsupported dataset version " +
                         std::to_string(static_cast<unsigned>(static_cast<unsigned char>(version))),
                     4);
  const std::uint32_t head_len = read_u32(is, &offset);
  if (head_len > (1u << 24)) throw ParseError("implausible header length", offset - 4);
  std::string head(head_len, '\0');
  read_bytes(is, head.data(), head_len, &offset);

  Dataset ds;
  std::size_t n_records = 0;
  {
    std::istringstream hs(head);
    std::string line;
    while (std::getline(hs, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError("malformed header line '" + line + "'", offset);
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 1);
      if (key == "n_records") n_records = std::stoull(value);
      else if (key == "max_video_len") ds.max_video_len = std::stoull(value);
      else if (key == "max_gloss_len") ds.max_gloss_len = std::stoull(value);
      else if (key == "max_text_len") ds.max_text_len = std::stoull(value);
      else if (key == "channels") ds.channels = std::stoull(value);
      else if (key == "height") ds.height = std::stoull(value);
      else if (key == "width") ds.width = std::stoull(value);
      else if (key == "fps") ds.fps = std::stod(value);
      else if (key == "seed") ds.seed = std::stoull(value);
      else if (key == "provenance") ds.provenance = value;
      else if (key == "gloss_vocab") ds.gloss_vocab = vocab_from_line(value);
      else if (key == "text_vocab") ds.text_vocab = vocab_from_line(value);
      else throw ParseError("unknown header key '" + key + "'", offset);
    }
  }

  ds.records.reserve(n_records);
  for (std::size_t i = 0; i < n_records; ++i) {
    const std::uint32_t index = read_u32(is, &offset);
    if (index != i) throw ParseError("record index mismatch", offset - 4);
    SampleRecord rec;
    TensorData frames = read_tensor(is, &offset);
    if (frames.shape.size() != 4) throw ParseError("frame tensor must have rank 4", offset);
    rec.frames.frames = frames.shape[0];
    rec.frames.channels = frames.shape[1];
    rec.frames.height = frames.shape[2];
    rec.frames.width = frames.shape[3];
    rec.frames.fps = ds.fps;
    rec.frames.values = std::move(frames.values);
    rec.gloss_ids = read_id_array(is, &offset);
    rec.text_ids = read_id_array(is, &offset);
    rec.alignment = read_id_array(is, &offset);
    rec.frame_count = read_u32(is, &offset);
    rec.gloss_len = read_u32(is, &offset);
    rec.text_len = read_u32(is, &offset);
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace adat
