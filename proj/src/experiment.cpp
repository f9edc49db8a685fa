#include "mpl/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "mpl/error.hpp"
#include "mpl/ops.hpp"

namespace mpl {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Field-by-field reader that reports the dotted path of the offending key
// and rejects keys it never consumed.
class Reader {
 public:
  Reader(const Json& node, std::string path)
      : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) fail(path_, "expected an object");
  }

  [[noreturn]] static void fail(const std::string& path,
                                const std::string& what) {
    throw ConfigError("config field '" + path + "': " + what);
  }

  std::string field(const char* key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  bool has(const char* key) {
    seen_.insert(key);
    return node_.contains(key);
  }

  const Json& raw(const char* key) {
    seen_.insert(key);
    return node_.at(key);
  }

  void read(const char* key, std::size_t& out) {
    if (!has(key)) return;
    const Json& v = node_.at(key);
    if (!v.is_number_unsigned()) fail(field(key), "expected a non-negative integer");
    out = v.get<std::size_t>();
  }

  void read(const char* key, double& out) {
    if (!has(key)) return;
    const Json& v = node_.at(key);
    if (!v.is_number()) fail(field(key), "expected a number");
    out = v.get<double>();
  }

  void read(const char* key, bool& out) {
    if (!has(key)) return;
    const Json& v = node_.at(key);
    if (!v.is_boolean()) fail(field(key), "expected true or false");
    out = v.get<bool>();
  }

  void read(const char* key, std::string& out) {
    if (!has(key)) return;
    const Json& v = node_.at(key);
    if (!v.is_string()) fail(field(key), "expected a string");
    out = v.get<std::string>();
  }

  template <typename T>
  void read(const char* key, std::vector<T>& out) {
    if (!has(key)) return;
    const Json& v = node_.at(key);
    if (!v.is_array()) fail(field(key), "expected an array");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number_unsigned()) {
        fail(field(key) + "[" + std::to_string(i) + "]",
             "expected a non-negative integer");
      }
      out.push_back(v[i].get<T>());
    }
  }

  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (!seen_.contains(it.key())) fail(field(it.key().c_str()), "unknown key");
    }
  }

 private:
  const Json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

Json parse_text(std::string_view text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    std::size_t line = 1, column = 1;
    const std::size_t end = std::min<std::size_t>(e.byte ? e.byte - 1 : 0,
                                                  text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    std::string what = e.what();
    if (const auto pos = what.find("syntax error"); pos != std::string::npos) {
      what = what.substr(pos);
    }
    throw ConfigError("config line " + std::to_string(line) + ", column " +
                      std::to_string(column) + ": " + what);
  }
}

std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("cannot read " + file.string());
  return ss.str();
}

void read_encoder(Reader r, EncoderConfig& c, bool vision) {
  r.read("layers", c.num_layers);
  r.read("heads", c.num_heads);
  r.read("width", c.width);
  r.read("mlp_ratio", c.mlp_ratio);
  r.read("init_std", c.init_std);
  if (vision) {
    r.read("image_height", c.image_height);
    r.read("image_width", c.image_width);
    r.read("patch_size", c.patch_size);
  } else {
    r.read("vocab_size", c.vocab_size);
    r.read("max_seq_len", c.max_seq_len);
  }
  r.finish();
}

Json encoder_json(const EncoderConfig& c, bool vision) {
  Json j;
  j["layers"] = c.num_layers;
  j["heads"] = c.num_heads;
  j["width"] = c.width;
  j["mlp_ratio"] = c.mlp_ratio;
  j["init_std"] = c.init_std;
  if (vision) {
    j["image_height"] = c.image_height;
    j["image_width"] = c.image_width;
    j["patch_size"] = c.patch_size;
  } else {
    j["vocab_size"] = c.vocab_size;
    j["max_seq_len"] = c.max_seq_len;
  }
  return j;
}

void read_model(Reader r, ModelConfig& m) {
  if (r.has("text")) read_encoder(Reader(r.raw("text"), r.field("text")), m.text, false);
  if (r.has("vision")) {
    read_encoder(Reader(r.raw("vision"), r.field("vision")), m.vision, true);
  }
  r.read("embed_dim", m.embed_dim);
  r.read("text_prompt_rows", m.text_prompt_rows);
  r.read("temperature", m.temperature);
  r.read("template_tokens", m.template_tokens);
  r.read("backbone_seed", m.backbone_seed);
  r.finish();
}

Json model_json(const ModelConfig& m) {
  Json j;
  j["text"] = encoder_json(m.text, false);
  j["vision"] = encoder_json(m.vision, true);
  j["embed_dim"] = m.embed_dim;
  j["text_prompt_rows"] = m.text_prompt_rows;
  j["temperature"] = m.temperature;
  j["template_tokens"] = m.template_tokens;
  j["backbone_seed"] = m.backbone_seed;
  return j;
}

ScheduleSpec read_schedule(Reader r) {
  ScheduleSpec s;
  r.read("kind", s.kind);
  if (s.kind == "mpl") {
    r.read("add", s.add);
    r.read("remove", s.remove);
    r.read("depth", s.depth);
  } else if (s.kind == "deep_vpt" || s.kind == "shallow") {
    r.read("prompts", s.prompts);
  } else if (s.kind == "explicit") {
    r.read("depth", s.depth);
    if (!r.has("entries")) Reader::fail(r.field("entries"), "required for explicit schedules");
    const Json& list = r.raw("entries");
    if (!list.is_array()) Reader::fail(r.field("entries"), "expected an array");
    for (std::size_t i = 0; i < list.size(); ++i) {
      Reader e(list[i], r.field("entries") + "[" + std::to_string(i) + "]");
      ScheduleEntry entry;
      e.read("add", entry.add);
      e.read("remove", entry.remove);
      e.read("carry", entry.carry);
      e.finish();
      s.entries.push_back(entry);
    }
  } else if (s.kind != "none") {
    Reader::fail(r.field("kind"),
                 "unknown schedule kind '" + s.kind +
                     "' (expected mpl, deep_vpt, shallow, none or explicit)");
  }
  r.finish();
  return s;
}

void read_train(Reader r, TrainConfig& t) {
  r.read("shots", t.shots);
  r.read("lr", t.lr);
  r.read("epochs", t.epochs);
  r.read("batch_size", t.batch_size_train);
  r.read("eval_batch_size", t.batch_size_eval);
  if (r.has("warmup_steps")) {
    const Json& v = r.raw("warmup_steps");
    if (v.is_null()) {
      t.warmup_steps.reset();
    } else if (v.is_number_unsigned()) {
      t.warmup_steps = v.get<std::size_t>();
    } else {
      Reader::fail(r.field("warmup_steps"), "expected a non-negative integer or null");
    }
  }
  r.read("min_lr", t.min_lr);
  r.read("momentum", t.momentum);
  r.read("weight_decay", t.weight_decay);
  r.finish();
}

Json train_json(const TrainConfig& t) {
  Json j;
  j["shots"] = t.shots;
  j["lr"] = t.lr;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size_train;
  j["eval_batch_size"] = t.batch_size_eval;
  j["warmup_steps"] = t.warmup_steps ? Json(*t.warmup_steps) : Json(nullptr);
  j["min_lr"] = t.min_lr;
  j["momentum"] = t.momentum;
  j["weight_decay"] = t.weight_decay;
  return j;
}

DataSource read_source(Reader r, std::string default_name) {
  DataSource d;
  d.name = std::move(default_name);
  r.read("name", d.name);
  if (r.has("path")) {
    std::string p;
    r.read("path", p);
    d.path = p;
  }
  if (r.has("synthetic")) {
    if (d.path) Reader::fail(r.field("synthetic"), "give either path or synthetic, not both");
    Reader s(r.raw("synthetic"), r.field("synthetic"));
    SyntheticSpec& sp = d.synthetic;
    s.read("classes", sp.classes);
    s.read("per_class", sp.per_class);
    s.read("noise", sp.noise);
    s.read("seed", sp.seed);
    s.read("height", sp.height);
    s.read("width", sp.width);
    s.read("patch_size", sp.patch_size);
    s.read("vocab_size", sp.vocab_size);
    s.read("name_length", sp.name_length);
    s.read("first_name_token", sp.first_name_token);
    s.read("prototype_shift", sp.prototype_shift);
    s.read("shift_seed", sp.shift_seed);
    s.finish();
  }
  r.finish();
  return d;
}

Json source_json(const DataSource& d) {
  Json j;
  j["name"] = d.name;
  if (d.path) {
    j["path"] = *d.path;
    return j;
  }
  const SyntheticSpec& s = d.synthetic;
  Json sj;
  sj["classes"] = s.classes;
  sj["per_class"] = s.per_class;
  sj["noise"] = s.noise;
  sj["seed"] = s.seed;
  sj["height"] = s.height;
  sj["width"] = s.width;
  sj["patch_size"] = s.patch_size;
  sj["vocab_size"] = s.vocab_size;
  sj["name_length"] = s.name_length;
  sj["first_name_token"] = s.first_name_token;
  sj["prototype_shift"] = s.prototype_shift;
  sj["shift_seed"] = s.shift_seed;
  j["synthetic"] = sj;
  return j;
}

Json metrics_json(const Metrics& m) {
  Json j;
  j["accuracy"] = m.accuracy;
  j["per_class_accuracy"] = m.per_class_accuracy;
  j["loss_curve"] = m.loss_curve;
  j["wall_time_seconds"] = m.wall_time_seconds;
  return j;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string_view protocol_name(Protocol p) {
  switch (p) {
    case Protocol::plain: return "plain";
    case Protocol::base_to_new: return "base_to_new";
    case Protocol::cross_dataset: return "cross_dataset";
  }
  return "plain";
}

PromptSchedule ScheduleSpec::build(std::size_t num_layers) const {
  if (kind == "mpl") return PromptSchedule::mpl(add, remove, depth, num_layers);
  if (kind == "deep_vpt") return PromptSchedule::deep_vpt(prompts, num_layers);
  if (kind == "shallow") return PromptSchedule::shallow(prompts, num_layers);
  if (kind == "none") return PromptSchedule::none(num_layers);
  if (kind == "explicit") {
    if (entries.size() != num_layers) {
      throw ScheduleError("explicit schedule lists " +
                          std::to_string(entries.size()) + " layers, expected " +
                          std::to_string(num_layers));
    }
    return PromptSchedule::build(entries, depth);
  }
  throw ConfigError("unknown schedule kind '" + kind + "'");
}

FewShotDataset DataSource::load(const std::filesystem::path& base_dir) const {
  if (!path) return make_synthetic_dataset(synthetic);
  std::filesystem::path p(*path);
  if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
  return read_dataset(p);
}

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  build_schedule();
  if (seeds.empty()) throw ConfigError("config field 'seeds': at least one seed required");
  if (protocol == Protocol::cross_dataset) {
    if (eval_data.empty()) {
      throw ConfigError("config field 'data.eval': cross_dataset needs at least one dataset");
    }
  } else if (!eval_data.empty()) {
    throw ConfigError("config field 'data.eval': only used by cross_dataset");
  }
  if (gradcheck.classes < 2) {
    throw ConfigError("config field 'gradcheck.classes': must be >= 2");
  }
  if (gradcheck.samples == 0) {
    throw ConfigError("config field 'gradcheck.samples': must be >= 1");
  }
  if (!(gradcheck.eps > 0.0)) throw ConfigError("config field 'gradcheck.eps': must be > 0");
}

PromptSchedule ExperimentConfig::build_schedule() const {
  return schedule.build(model.vision.num_layers);
}

ExperimentConfig parse_config(std::string_view text,
                              const std::filesystem::path& base_dir) {
  const Json doc = parse_text(text);
  Reader r(doc, "");
  ExperimentConfig c;
  c.base_dir = base_dir;
  if (r.has("model")) read_model(Reader(r.raw("model"), "model"), c.model);
  if (r.has("schedule")) c.schedule = read_schedule(Reader(r.raw("schedule"), "schedule"));
  if (r.has("train")) read_train(Reader(r.raw("train"), "train"), c.train);
  if (r.has("protocol")) {
    std::string p;
    r.read("protocol", p);
    if (p == "plain") {
      c.protocol = Protocol::plain;
    } else if (p == "base_to_new") {
      c.protocol = Protocol::base_to_new;
    } else if (p == "cross_dataset") {
      c.protocol = Protocol::cross_dataset;
    } else {
      Reader::fail("protocol", "unknown protocol '" + p +
                                   "' (expected plain, base_to_new or cross_dataset)");
    }
  }
  if (r.has("data")) {
    Reader d(r.raw("data"), "data");
    if (d.has("train")) c.train_data = read_source(Reader(d.raw("train"), "data.train"), "train");
    if (d.has("eval")) {
      const Json& list = d.raw("eval");
      if (!list.is_array()) Reader::fail("data.eval", "expected an array");
      for (std::size_t i = 0; i < list.size(); ++i) {
        const std::string path = "data.eval[" + std::to_string(i) + "]";
        c.eval_data.push_back(
            read_source(Reader(list[i], path), "eval_" + std::to_string(i)));
      }
    }
    d.finish();
  }
  r.read("seeds", c.seeds);
  r.read("output", c.output);
  if (r.has("gradcheck")) {
    Reader g(r.raw("gradcheck"), "gradcheck");
    g.read("classes", c.gradcheck.classes);
    g.read("samples", c.gradcheck.samples);
    g.read("eps", c.gradcheck.eps);
    g.read("tolerance", c.gradcheck.tolerance);
    g.read("max_parameters", c.gradcheck.max_parameters);
    g.finish();
  }
  r.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& file) {
  return parse_config(read_file(file), file.parent_path());
}

Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["model"] = model_json(c.model);
  j["schedule"] = schedule_spec_to_json(c.schedule);
  j["train"] = train_json(c.train);
  j["protocol"] = std::string(protocol_name(c.protocol));
  Json data;
  data["train"] = source_json(c.train_data);
  if (!c.eval_data.empty()) {
    data["eval"] = Json::array();
    for (const auto& e : c.eval_data) data["eval"].push_back(source_json(e));
  }
  j["data"] = data;
  j["seeds"] = c.seeds;
  j["output"] = c.output;
  Json g;
  g["classes"] = c.gradcheck.classes;
  g["samples"] = c.gradcheck.samples;
  g["eps"] = c.gradcheck.eps;
  g["tolerance"] = c.gradcheck.tolerance;
  g["max_parameters"] = c.gradcheck.max_parameters;
  j["gradcheck"] = g;
  return j;
}

ScheduleSpec parse_schedule_spec(std::string_view text) {
  return read_schedule(Reader(parse_text(text), "schedule"));
}

ScheduleSpec load_schedule_spec(const std::filesystem::path& file) {
  return parse_schedule_spec(read_file(file));
}

Json schedule_spec_to_json(const ScheduleSpec& s) {
  Json j;
  j["kind"] = s.kind;
  if (s.kind == "mpl") {
    j["add"] = s.add;
    j["remove"] = s.remove;
    j["depth"] = s.depth;
  } else if (s.kind == "deep_vpt" || s.kind == "shallow") {
    j["prompts"] = s.prompts;
  } else if (s.kind == "explicit") {
    j["depth"] = s.depth;
    j["entries"] = Json::array();
    for (const auto& e : s.entries) {
      j["entries"].push_back(
          Json{{"add", e.add}, {"remove", e.remove}, {"carry", e.carry}});
    }
  }
  return j;
}

const Metrics& SeedRun::at(std::string_view name) const {
  for (const auto& [n, m] : metrics) {
    if (n == name) return m;
  }
  throw ContractError("no metrics named '" + std::string(name) + "'");
}

Summary summarize(std::span<const double> values) {
  Summary s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

Summary Report::accuracy(std::string_view metric) const {
  std::vector<double> v;
  for (const auto& run : runs) v.push_back(run.at(metric).accuracy);
  return summarize(v);
}

Report run_experiment(const ExperimentConfig& config) {
  const auto start = Clock::now();
  config.validate();
  const PromptSchedule schedule = config.build_schedule();

  Report report;
  report.config = config;
  report.profile = context_length_profile(
      schedule, config.model.vision.num_patches(), config.model.vision.width,
      config.model.vision.mlp_ratio);

  const FewShotDataset train_ds = config.train_data.load(config.base_dir);
  std::vector<FewShotDataset> eval_sets;
  for (const auto& e : config.eval_data) eval_sets.push_back(e.load(config.base_dir));

  for (std::uint64_t seed : config.seeds) {
    const auto seed_start = Clock::now();
    PromptedClip model = PromptedClip::create(config.model, schedule, seed);
    report.trainable_parameters = model.trainable_count();
    TrainConfig tc = config.train;
    tc.seed = seed;

    SeedRun run;
    run.seed = seed;
    switch (config.protocol) {
      case Protocol::plain: {
        const FewShotSplit split = split_few_shot(train_ds, tc.shots, seed);
        run.metrics.emplace_back("untrained",
                                 evaluate(model, split.holdout, tc.batch_size_eval));
        PlainResult r = plain_protocol(model, train_ds, tc);
        run.metrics.emplace_back("train", std::move(r.train));
        run.metrics.emplace_back("heldout", std::move(r.heldout));
        break;
      }
      case Protocol::base_to_new: {
        BaseToNewResult r = base_to_new_protocol(model, train_ds, tc);
        run.metrics.emplace_back("train", std::move(r.train));
        run.metrics.emplace_back("base", std::move(r.base));
        run.metrics.emplace_back("new", std::move(r.novel));
        break;
      }
      case Protocol::cross_dataset: {
        CrossDatasetResult r = cross_dataset_protocol(model, train_ds, eval_sets, tc);
        run.metrics.emplace_back("train", std::move(r.train));
        for (std::size_t i = 0; i < r.evals.size(); ++i) {
          run.metrics.emplace_back(config.eval_data[i].name, std::move(r.evals[i]));
        }
        break;
      }
    }
    run.wall_time_seconds = seconds_since(seed_start);
    report.runs.push_back(std::move(run));
  }
  report.wall_time_seconds = seconds_since(start);
  report.generated_at = utc_now();
  return report;
}

Json report_to_json(const Report& report) {
  Json j;
  j["version"] = std::string(kVersion);
  j["versions"] = Json{{"mpl", std::string(kVersion)},
                       {"json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                       {"cxx", __VERSION__}};
  j["generated_at"] = report.generated_at;
  j["wall_time_seconds"] = report.wall_time_seconds;
  j["config"] = config_to_json(report.config);
  j["trainable_parameters"] = report.trainable_parameters;
  j["profile"] = profile_to_json(report.config.build_schedule(), report.profile);

  Json runs = Json::array();
  for (const auto& run : report.runs) {
    Json r;
    r["seed"] = run.seed;
    r["wall_time_seconds"] = run.wall_time_seconds;
    Json m;
    for (const auto& [name, metrics] : run.metrics) m[name] = metrics_json(metrics);
    r["metrics"] = m;
    runs.push_back(r);
  }
  j["runs"] = runs;

  Json summary;
  if (!report.runs.empty()) {
    for (const auto& [name, metrics] : report.runs.front().metrics) {
      std::vector<double> values;
      for (const auto& run : report.runs) values.push_back(run.at(name).accuracy);
      const Summary s = summarize(values);
      summary[name] = Json{{"accuracy_mean", s.mean},
                           {"accuracy_std", s.std},
                           {"accuracy", values}};
    }
  }
  j["summary"] = summary;
  return j;
}

Json strip_timestamps(Json report) {
  if (report.is_object()) {
    report.erase("generated_at");
    report.erase("wall_time_seconds");
    for (auto& [key, value] : report.items()) value = strip_timestamps(value);
  } else if (report.is_array()) {
    for (auto& value : report) value = strip_timestamps(value);
  }
  return report;
}

GradCheckReport run_gradcheck(const ExperimentConfig& config) {
  const auto start = Clock::now();
  config.validate();
  const PromptSchedule schedule = config.build_schedule();
  PromptedClip model =
      PromptedClip::create(config.model, schedule, config.seeds.front());

  GradCheckReport out;
  std::vector<Tensor> params;
  for (const auto& p : model.trainable_parameters()) {
    if (p.tensor.numel() == 0) continue;
    out.names.push_back(p.name);
    params.push_back(p.tensor);
    out.parameters += p.tensor.numel();
  }
  if (params.empty()) throw ContractError("trainable set empty");
  if (out.parameters > config.gradcheck.max_parameters) {
    throw ConfigError(
        "gradcheck refuses " + std::to_string(out.parameters) +
        " trainable parameters (limit " +
        std::to_string(config.gradcheck.max_parameters) +
        "); shrink the schedule depth, prompt counts or widths");
  }

  const FewShotDataset full = config.train_data.load(config.base_dir);
  if (full.num_classes() < config.gradcheck.classes) {
    throw DataError("gradcheck needs " + std::to_string(config.gradcheck.classes) +
                    " classes, dataset has " + std::to_string(full.num_classes()));
  }
  std::vector<std::size_t> classes(config.gradcheck.classes);
  std::iota(classes.begin(), classes.end(), std::size_t{0});
  const FewShotDataset ds = subset_classes(full, classes, "all");

  // Round-robin over classes, first unused sample of each.
  std::vector<std::size_t> picked, next(ds.num_classes(), 0);
  for (std::size_t k = 0; picked.size() < config.gradcheck.samples; ++k) {
    const std::size_t cls = k % ds.num_classes();
    std::size_t i = next[cls];
    while (i < ds.size() && ds.labels[i] != cls) ++i;
    if (i == ds.size()) {
      if (k > config.gradcheck.samples * ds.num_classes()) {
        throw DataError("not enough samples for the gradcheck batch");
      }
      continue;
    }
    picked.push_back(i);
    next[cls] = i + 1;
  }

  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  for (std::size_t i : picked) {
    images.push_back(ds.image(i));
    labels.push_back(ds.labels[i]);
  }
  const double tau = model.projection().temperature;
  const LossFn loss = [&] {
    const Tensor w = encode_texts(model, ds.class_names);
    std::vector<Tensor> rows;
    for (const auto& img : images) rows.push_back(encode_image(model, img));
    return cross_entropy_loss(predict_probs(concat_rows(rows), w, tau), labels);
  };
  out.result = finite_diff_check(loss, params, config.gradcheck.eps);
  out.passed = out.result.max_rel_error < config.gradcheck.tolerance;
  out.wall_time_seconds = seconds_since(start);
  return out;
}

Json profile_to_json(const PromptSchedule& schedule,
                     const ContextProfile& profile) {
  Json layers = Json::array();
  for (std::size_t i = 0; i < profile.lengths.size(); ++i) {
    const ScheduleEntry& e = schedule.entry(i);
    layers.push_back(Json{{"layer", i + 1},
                          {"add", e.add},
                          {"remove", e.remove},
                          {"carry", e.carry},
                          {"carried_in", profile.carried_in[i]},
                          {"length", profile.lengths[i]},
                          {"cost", profile.layer_cost[i]}});
  }
  Json j;
  j["depth"] = schedule.depth();
  j["layers"] = layers;
  j["quadratic_cost"] = profile.quadratic_cost;
  j["linear_cost"] = profile.linear_cost;
  j["total_cost"] = profile.total_cost;
  return j;
}

std::string format_profile(const PromptSchedule& schedule,
                           const ContextProfile& profile) {
  std::ostringstream os;
  os << std::setw(5) << "layer" << std::setw(5) << "add" << std::setw(8)
     << "remove" << std::setw(7) << "carry" << std::setw(9) << "carried"
     << std::setw(8) << "length" << std::setw(16) << "cost" << '\n';
  for (std::size_t i = 0; i < profile.lengths.size(); ++i) {
    const ScheduleEntry& e = schedule.entry(i);
    os << std::setw(5) << i + 1 << std::setw(5) << e.add << std::setw(8)
       << e.remove << std::setw(7) << (e.carry ? "yes" : "no") << std::setw(9)
       << profile.carried_in[i] << std::setw(8) << profile.lengths[i]
       << std::setw(16) << std::fixed << std::setprecision(0)
       << profile.layer_cost[i] << '\n';
  }
  os << "total cost " << std::fixed << std::setprecision(0) << profile.total_cost
     << " (attention " << profile.quadratic_cost << ", projections "
     << profile.linear_cost << ")\n";
  return os.str();
}

void write_json(const Json& doc, const std::filesystem::path& file) {
  if (file.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(file.parent_path(), ec);
    if (ec) throw IoError("cannot create " + file.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + file.string());
}

}  // namespace mpl
