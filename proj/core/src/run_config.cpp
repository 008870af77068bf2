#include "adat/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <type_traits>

namespace adat {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  std::from_chars_result res;
  if constexpr (std::is_floating_point_v<T>) {
    res = std::from_chars(first, last, out);
  } else {
    res = std::from_chars(first, last, out, 10);
  }
  if (res.ec != std::errc() || res.ptr != last)
    throw ConfigError("key '" + key + "': cannot parse '" + value + "'");
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

struct KeyDef {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<KeyDef>& schema() {
  static const std::vector<KeyDef> defs = [] {
    std::vector<KeyDef> s;
    auto num = [&s](const std::string& name, auto member) {
      using T = std::remove_reference_t<decltype(std::declval<RunConfig&>().*member)>;
      s.push_back({name,
                   [name, member](RunConfig& c, const std::string& v) {
                     c.*member = parse_number<T>(name, v);
                   },
                   [member](const RunConfig& c) {
                     if constexpr (std::is_floating_point_v<T>)
                       return format_double(c.*member);
                     else
                       return std::to_string(c.*member);
                   }});
    };
    auto model_num = [&s](const std::string& name, auto member) {
      using T = std::remove_reference_t<decltype(std::declval<ModelConfig&>().*member)>;
      s.push_back({name,
                   [name, member](RunConfig& c, const std::string& v) {
                     c.model.*member = parse_number<T>(name, v);
                   },
                   [member](const RunConfig& c) {
                     if constexpr (std::is_floating_point_v<T>)
                       return format_double(c.model.*member);
                     else
                       return std::to_string(c.model.*member);
                   }});
    };
    auto synth_num = [&s](const std::string& name, auto member) {
      using T = std::remove_reference_t<decltype(std::declval<SynthSpec&>().*member)>;
      s.push_back({name,
                   [name, member](RunConfig& c, const std::string& v) {
                     c.synth.*member = parse_number<T>(name, v);
                   },
                   [member](const RunConfig& c) {
                     if constexpr (std::is_floating_point_v<T>)
                       return format_double(c.synth.*member);
                     else
                       return std::to_string(c.synth.*member);
                   }});
    };
    auto str = [&s](const std::string& name, std::string RunConfig::*member) {
      s.push_back({name,
                   [member](RunConfig& c, const std::string& v) { c.*member = v; },
                   [member](const RunConfig& c) { return c.*member; }});
    };

    s.push_back({"precision",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "f64") c.precision = Precision::f64;
                   else if (v == "f32") c.precision = Precision::f32;
                   else throw ConfigError("key 'precision': expected f64 or f32, got '" + v + "'");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.precision == Precision::f64 ? "f64" : "f32");
                 }});
    num("seed", &RunConfig::seed);
    s.push_back({"variant",
                 [](RunConfig& c, const std::string& v) { c.model.variant = variant_from_string(v); },
                 [](const RunConfig& c) { return to_string(c.model.variant); }});
    s.push_back({"mode",
                 [](RunConfig& c, const std::string& v) { c.model.mode = mode_from_string(v); },
                 [](const RunConfig& c) { return to_string(c.model.mode); }});
    model_num("num_encoders", &ModelConfig::num_encoders);
    model_num("num_decoders", &ModelConfig::num_decoders);
    model_num("d_model", &ModelConfig::d_model);
    model_num("heads", &ModelConfig::heads);
    model_num("ff_size", &ModelConfig::ff_size);
    model_num("stack_depth", &ModelConfig::stack_depth);
    model_num("dropout", &ModelConfig::dropout);
    model_num("learning_rate", &ModelConfig::learning_rate);
    model_num("weight_decay", &ModelConfig::weight_decay);
    model_num("gloss_vocab", &ModelConfig::gloss_vocab);
    model_num("text_vocab", &ModelConfig::text_vocab);
    model_num("max_video_len", &ModelConfig::max_video_len);
    model_num("max_gloss_len", &ModelConfig::max_gloss_len);
    model_num("max_text_len", &ModelConfig::max_text_len);
    model_num("frame_channels", &ModelConfig::frame_channels);
    model_num("frame_height", &ModelConfig::frame_height);
    model_num("frame_width", &ModelConfig::frame_width);
    model_num("conv_filters", &ModelConfig::conv_filters);
    num("plateau_factor", &RunConfig::plateau_factor);
    num("min_lr", &RunConfig::min_lr);
    num("plateau_patience", &RunConfig::plateau_patience);
    num("early_stop_patience", &RunConfig::early_stop_patience);
    num("label_smoothing", &RunConfig::label_smoothing);
    num("max_epochs", &RunConfig::max_epochs);
    num("batch_size", &RunConfig::batch_size);
    synth_num("synth_samples", &SynthSpec::n_samples);
    synth_num("synth_gloss_vocab", &SynthSpec::gloss_vocab_size);
    synth_num("synth_text_vocab", &SynthSpec::text_vocab_size);
    synth_num("synth_max_gloss_len", &SynthSpec::max_gloss_len);
    synth_num("synth_frames_per_gloss_min", &SynthSpec::frames_per_gloss_min);
    synth_num("synth_frames_per_gloss_max", &SynthSpec::frames_per_gloss_max);
    synth_num("synth_noise", &SynthSpec::noise);
    synth_num("synth_function_word_every", &SynthSpec::function_word_every);
    synth_num("synth_function_word_count", &SynthSpec::function_word_count);
    synth_num("synth_max_video_len", &SynthSpec::max_video_len);
    num("test_fraction", &RunConfig::test_fraction);
    num("folds", &RunConfig::folds);
    num("val_fold", &RunConfig::val_fold);
    str("data", &RunConfig::data_path);
    str("checkpoint", &RunConfig::checkpoint_path);
    str("gloss_file", &RunConfig::gloss_file);
    str("text_file", &RunConfig::text_file);
    s.push_back({"eval_split",
                 [](RunConfig& c, const std::string& v) {
                   if (v != "test" && v != "val" && v != "train" && v != "all")
                     throw ConfigError("key 'eval_split': expected test|val|train|all");
                   c.eval_split = v;
                 },
                 [](const RunConfig& c) { return c.eval_split; }});
    num("flops_enc_len", &RunConfig::flops_enc_len);
    num("flops_mem_len", &RunConfig::flops_mem_len);
    num("flops_tgt_len", &RunConfig::flops_tgt_len);
    return s;
  }();
  return defs;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const KeyDef& def : schema()) {
    if (def.name == key) {
      def.set(*this, value);
      return;
    }
  }
  throw ConfigError("unknown key '" + key + "'");
}

void RunConfig::merge_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + line + "'", line_no);
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), line_no);
    }
  }
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  for (const KeyDef& def : schema()) os << def.name << '=' << def.get(*this) << '\n';
  return os.str();
}

void RunConfig::apply_preset(const std::string& name) {
  if (name == "table3-s2g2t") {
    const ModelConfig keep = model;
    model = ModelConfig::table3_s2g2t();
    model.gloss_vocab = keep.gloss_vocab;
    model.text_vocab = keep.text_vocab;
  } else if (name == "table3-s2t") {
    const ModelConfig keep = model;
    model = ModelConfig::table3_s2t();
    model.gloss_vocab = keep.gloss_vocab;
    model.text_vocab = keep.text_vocab;
  } else if (name == "table5") {
    model.variant = Variant::adat;
    model.num_encoders = 1;
    model.num_decoders = 1;
    model.d_model = 512;
    model.heads = 8;
    model.ff_size = 2048;
    model.stack_depth = 2;
    model.dropout = 0.1;
    model.learning_rate = 5e-5;
    model.gloss_vocab = 1115;
    model.text_vocab = 3000;
    model.frame_channels = 3;
    model.frame_height = 52;
    model.frame_width = 65;
    model.max_video_len = 371;
    model.max_gloss_len = 29;
    model.max_text_len = 54;
    flops_enc_len = 371;
    flops_mem_len = 27;
    flops_tgt_len = 52;
  } else if (name == "desk-small") {
    model.variant = Variant::adat;
    model.mode = Mode::s2t;
    model.num_encoders = 1;
    model.num_decoders = 1;
    model.d_model = 64;
    model.heads = 4;
    model.ff_size = 256;
    model.stack_depth = 2;
    model.dropout = 0.0;
    model.learning_rate = 2e-3;
    model.weight_decay = 0.0;
    model.frame_channels = 1;
    model.frame_height = 16;
    model.frame_width = 16;
    model.max_video_len = 64;
    model.max_gloss_len = 12;
    model.max_text_len = 16;
    synth.n_samples = 300;
    synth.gloss_vocab_size = 30;
    synth.text_vocab_size = 60;
    synth.max_gloss_len = 10;
    synth.frames_per_gloss_min = 2;
    synth.frames_per_gloss_max = 4;
    synth.channels = 1;
    synth.height = 16;
    synth.width = 16;
    synth.noise = 0.05;
    synth.max_video_len = 64;
    batch_size = 16;
    max_epochs = 60;
    test_fraction = 1.0 / 6.0;
    folds = 5;
    val_fold = 0;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
}

std::vector<std::string> preset_names() {
  return {"table3-s2g2t", "table3-s2t", "table5", "desk-small"};
}

TrainSchedule RunConfig::schedule() const {
  TrainSchedule s;
  s.initial_lr = model.learning_rate;
  s.plateau_factor = plateau_factor;
  s.min_lr = min_lr;
  s.plateau_patience = plateau_patience;
  s.early_stop_patience = early_stop_patience;
  s.label_smoothing = label_smoothing;
  s.max_epochs = max_epochs;
  s.batch_size = batch_size;
  s.seed = seed;
  return s;
}

void RunConfig::validate() const {
  schedule().validate();
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test_fraction must lie in (0, 1)");
  if (folds < 1) throw ConfigError("folds must be at least 1");
  if (val_fold < 0 || val_fold >= folds) throw ConfigError("val_fold must lie in [0, folds)");
}

}  // namespace adat
