#include "tagforge/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "tagforge/corpus.hpp"
#include "tagforge/descriptor_io.hpp"
#include "tagforge/suggest.hpp"
#include "tagforge/survey.hpp"
#include "toml.hpp"

namespace fs = std::filesystem;

namespace tagforge {

namespace {

std::string where(const std::string& source, const toml::node& node) {
  return source + ":" + std::to_string(node.source().begin.line);
}

// Reads typed keys out of one TOML table and rejects any key nobody asked for.
class Section {
 public:
  Section(const toml::table* table, std::string name, std::string source)
      : table_(table), name_(std::move(name)), source_(std::move(source)) {}

  bool present() const { return table_ != nullptr; }
  void allow(std::string_view key) { seen_.emplace_back(key); }

  template <typename T>
  void read(std::string_view key, T& out) {
    seen_.emplace_back(key);
    if (!table_) return;
    const toml::node* node = table_->get(key);
    if (!node) return;
    const std::string label = qualified(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!node->is_boolean()) throw DataError(where(source_, *node) + ": " + label + " must be a boolean");
      out = *node->value<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!node->is_integer()) throw DataError(where(source_, *node) + ": " + label + " must be an integer");
      const std::int64_t v = *node->value<std::int64_t>();
      if (std::is_unsigned_v<T> && v < 0) throw DataError(where(source_, *node) + ": " + label + " must be >= 0");
      out = static_cast<T>(v);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!node->is_number()) throw DataError(where(source_, *node) + ": " + label + " must be a number");
      out = *node->value<double>();
    } else {
      if (!node->is_string()) throw DataError(where(source_, *node) + ": " + label + " must be a string");
      out = *node->value<std::string>();
    }
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [key, node] : *table_) {
      if (std::find(seen_.begin(), seen_.end(), key.str()) == seen_.end()) {
        throw DataError(where(source_, node) + ": unknown key '" + qualified(key.str()) + "'");
      }
    }
  }

 private:
  std::string qualified(std::string_view key) const {
    return name_.empty() ? std::string(key) : name_ + "." + std::string(key);
  }

  const toml::table* table_;
  std::string name_;
  std::string source_;
  std::vector<std::string> seen_;
};

void apply_override(toml::table& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw InvalidArgument("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  toml::table parsed;
  try {
    parsed = toml::parse("v = " + value);
  } catch (const toml::parse_error&) {
    parsed = toml::table{{"v", value}};  // bare words are taken as strings
  }
  toml::table* target = &root;
  std::size_t start = 0;
  for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1) {
    const std::string part = key.substr(start, dot - start);
    auto* sub = (*target)[part].as_table();
    if (!sub) {
      target->insert_or_assign(part, toml::table{});
      sub = (*target)[part].as_table();
    }
    target = sub;
  }
  target->insert_or_assign(key.substr(start), *parsed.get("v"));
}

FisherNorm read_norm(Section& s, FisherNorm fallback) {
  std::string name = to_string(fallback);
  s.read("normalize", name);
  try {
    return parse_fisher_norm(name);
  } catch (const InvalidArgument& e) {
    throw DataError(std::string("fv.normalize: ") + e.what());
  }
}

Optimizer read_optimizer(Section& s, Optimizer fallback) {
  std::string name = fallback == Optimizer::full_batch_gd_momentum ? "full_batch_gd_momentum" : "minibatch_sgd";
  s.read("optimizer", name);
  if (name == "full_batch_gd_momentum") return Optimizer::full_batch_gd_momentum;
  if (name == "minibatch_sgd") return Optimizer::minibatch_sgd;
  throw DataError("embed.optimizer: unknown optimizer '" + name + "'");
}

GmmInit read_init(Section& s, GmmInit fallback) {
  std::string name = fallback == GmmInit::kmeans_pp ? "kmeans_pp" : "random_points";
  s.read("init", name);
  if (name == "kmeans_pp") return GmmInit::kmeans_pp;
  if (name == "random_points") return GmmInit::random_points;
  throw DataError("gmm.init: unknown initialization '" + name + "'");
}

// Stage parameter fingerprint: "key=value;" pairs in a fixed order.
class Params {
 public:
  Params& add(const std::string& key, const std::string& v) {
    text_ += key + "=" + v + ";";
    return *this;
  }
  Params& add(const std::string& key, double v) { return add(key, format_double(v)); }
  Params& add(const std::string& key, std::uint64_t v) { return add(key, std::to_string(v)); }
  Params& add(const std::string& key, int v) { return add(key, std::to_string(v)); }
  const std::string& str() const { return text_; }

 private:
  std::string text_;
};

struct Stage {
  std::string name;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string params;
  std::function<void()> run;
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::map<std::string, FisherVector> fisher_for(const std::string& dir) { return read_fisher_dir(dir); }

std::vector<TrainPair> make_pairs(const std::vector<std::pair<std::string, std::string>>& labels,
                                  const std::map<std::string, FisherVector>& fvs, const TagVectors& tv,
                                  const std::string& fv_dir) {
  std::vector<TrainPair> pairs;
  for (const auto& [video, cls] : labels) {
    const auto it = fvs.find(video);
    if (it == fvs.end()) throw DataError(fv_dir + ": no Fisher vector for video '" + video + "'");
    if (!tv.index_of(cls)) throw DataError("class stem '" + cls + "' is not in the tag vocabulary");
    const auto target = tv.vector(cls);
    pairs.push_back({it->second.values, {target.begin(), target.end()}, cls});
  }
  return pairs;
}

std::map<std::string, std::vector<double>> class_vectors(const std::vector<TrainPair>& pairs) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& p : pairs) out.emplace(p.class_stem, p.target);
  return out;
}

}  // namespace

PipelineConfig parse_pipeline_config(const std::string& text, const std::string& source_name,
                                     const std::vector<std::string>& overrides) {
  toml::table root;
  try {
    root = toml::parse(text, source_name);
  } catch (const toml::parse_error& e) {
    throw DataError(source_name + ":" + std::to_string(e.source().begin.line) + ": " + std::string(e.description()));
  }
  for (const auto& o : overrides) apply_override(root, o);

  static const std::vector<std::string> tables = {"synth", "inputs", "corpus", "t2v", "gmm",
                                                  "fv",    "split",  "embed",  "suggest", "survey"};
  PipelineConfig cfg;
  Section top(&root, "", source_name);
  top.read("seed", cfg.seed);
  top.read("threads", cfg.threads);
  top.read("workdir", cfg.workdir);
  for (const auto& t : tables) {
    const toml::node* node = root.get(t);
    if (node && !node->is_table()) throw DataError(where(source_name, *node) + ": '" + t + "' must be a table");
    top.allow(t);
  }
  auto section = [&](const char* name) { return Section(root[name].as_table(), name, source_name); };

  Section synth = section("synth");
  cfg.synth = synth.present();
  synth.read("classes", cfg.synth_descriptors.classes);
  synth.read("per_class", cfg.synth_descriptors.per_class);
  synth.read("descriptors_per_video", cfg.synth_descriptors.n);
  synth.read("descriptor_dim", cfg.synth_descriptors.d);
  synth.read("modes_per_class", cfg.synth_descriptors.modes_per_class);
  synth.read("shared_modes", cfg.synth_descriptors.shared_modes);
  synth.read("class_share", cfg.synth_descriptors.class_share);
  synth.read("spread", cfg.synth_descriptors.spread);
  synth.read("video_jitter", cfg.synth_descriptors.video_jitter);
  synth.read("tag_sentences", cfg.synth_tags.sentences);
  synth.read("words_per_group", cfg.synth_tags.words_per_group);
  synth.read("tags_per_sentence", cfg.synth_tags.tags_per_sentence);
  synth.read("noise_rate", cfg.synth_tags.noise_rate);
  synth.read("variant_rate", cfg.synth_tags.variant_rate);
  synth.finish();
  cfg.synth_tags.groups = cfg.synth_descriptors.classes;

  Section inputs = section("inputs");
  inputs.read("tags", cfg.tags_path);
  inputs.read("descriptors", cfg.descriptors_dir);
  inputs.read("labels", cfg.labels_path);
  inputs.finish();
  if (!cfg.synth && (cfg.tags_path.empty() || cfg.descriptors_dir.empty() || cfg.labels_path.empty())) {
    throw DataError(source_name + ": without a [synth] table, [inputs] needs tags, descriptors and labels");
  }

  Section corpus = section("corpus");
  corpus.read("min_count", cfg.min_count);
  corpus.finish();

  Section t2v = section("t2v");
  t2v.read("dim", cfg.t2v.dim);
  t2v.read("window", cfg.t2v.window);
  t2v.read("negatives", cfg.t2v.negatives);
  t2v.read("epochs", cfg.t2v.epochs);
  t2v.read("initial_lr", cfg.t2v.initial_lr);
  t2v.read("final_lr", cfg.t2v.final_lr);
  t2v.read("subsample", cfg.t2v.subsample_t);
  t2v.read("workers", cfg.t2v.workers);
  t2v.finish();

  Section gmm = section("gmm");
  gmm.read("k", cfg.gmm_k);
  gmm.read("max_iters", cfg.em.max_iters);
  gmm.read("tol", cfg.em.ll_rel_tol);
  gmm.read("variance_floor_scale", cfg.em.variance_floor_scale);
  cfg.em.init = read_init(gmm, cfg.em.init);
  gmm.finish();

  Section fv = section("fv");
  cfg.fv_norm = read_norm(fv, cfg.fv_norm);
  fv.finish();

  Section split = section("split");
  split.read("train_fraction", cfg.train_fraction);
  split.finish();

  Section embed = section("embed");
  embed.read("hidden", cfg.net.hidden);
  embed.read("max_iters", cfg.net.max_iters);
  embed.read("lr", cfg.net.lr);
  embed.read("momentum", cfg.net.momentum);
  embed.read("batch_size", cfg.net.batch_size);
  embed.read("weight_init_scale", cfg.net.weight_init_scale);
  embed.read("l2_reg", cfg.net.l2_reg);
  cfg.net.optimizer = read_optimizer(embed, cfg.net.optimizer);
  embed.finish();

  Section suggest = section("suggest");
  suggest.read("k", cfg.suggest_k);
  suggest.finish();

  Section survey = section("survey");
  survey.read("media_prefix", cfg.media_prefix);
  survey.finish();

  top.finish();

  if (cfg.train_fraction <= 0.0 || cfg.train_fraction >= 1.0) {
    throw DataError(source_name + ": split.train_fraction must be in (0, 1)");
  }
  if (cfg.threads < 1) throw DataError(source_name + ": threads must be >= 1");
  if (cfg.gmm_k < 1) throw DataError(source_name + ": gmm.k must be >= 1");
  if (cfg.suggest_k < 1) throw DataError(source_name + ": suggest.k must be >= 1");
  try {
    cfg.t2v.validate();
  } catch (const InvalidArgument& e) {
    throw DataError(source_name + ": " + e.what());
  }
  return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path, const std::vector<std::string>& overrides) {
  return parse_pipeline_config(read_file(path), path, overrides);
}

std::uint64_t content_hash(const std::string& path) {
  std::uint64_t h = fnv1a64("");
  auto mix = [&h](std::string_view bytes) {
    h = fnv1a64(bytes, h);
    h = fnv1a64(std::string_view("\0", 1), h);
  };
  if (fs::is_regular_file(path)) {
    mix(read_file(path));
    return h;
  }
  if (!fs::is_directory(path)) throw DataError(path + ": no such file or directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    mix(fs::relative(f, path).generic_string());
    mix(read_file(f.string()));
  }
  return h;
}

Split split_labels(const std::vector<std::pair<std::string, std::string>>& labels, double train_fraction,
                   std::uint64_t seed) {
  std::map<std::string, std::vector<std::string>> by_class;
  for (const auto& [video, cls] : labels) by_class[cls].push_back(video);
  Rng rng(seed);
  Split split;
  for (auto& [cls, videos] : by_class) {
    std::sort(videos.begin(), videos.end());
    rng.shuffle(videos);
    std::size_t n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(videos.size())));
    if (videos.size() >= 2) n_train = std::clamp<std::size_t>(n_train, 1, videos.size() - 1);
    for (std::size_t i = 0; i < videos.size(); ++i) {
      (i < n_train ? split.train : split.test).emplace_back(videos[i], cls);
    }
  }
  auto by_id = [](const auto& a, const auto& b) { return a.first < b.first; };
  std::sort(split.train.begin(), split.train.end(), by_id);
  std::sort(split.test.begin(), split.test.end(), by_id);
  return split;
}

PipelineResult run_pipeline(const PipelineConfig& cfg, bool force, std::ostream& log) {
  set_threads(cfg.threads);
  const fs::path work(cfg.workdir);
  fs::create_directories(work / ".stages");
  auto at = [&work](const std::string& rel) { return (work / rel).string(); };

  const std::string tags_path = cfg.synth ? at("synth/tags.jsonl") : cfg.tags_path;
  const std::string desc_dir = cfg.synth ? at("synth/descriptors") : cfg.descriptors_dir;
  const std::string labels_path = cfg.synth ? at("synth/labels.tsv") : cfg.labels_path;
  const std::string corpus_dir = at("corpus");
  const std::string t2v_path = at("tags.t2v");
  const std::string train_labels = at("split/train.tsv");
  const std::string test_labels = at("split/test.tsv");
  const std::string gmm_path = at("gmm.json");
  const std::string fv_dir = at("fv");
  const std::string net_path = at("net.json");
  const std::string metrics_path = at("metrics.json");
  const std::string store_dir = at("store");

  std::vector<Stage> stages;

  if (cfg.synth) {
    Params p;
    p.add("classes", std::uint64_t{cfg.synth_descriptors.classes})
        .add("per_class", std::uint64_t{cfg.synth_descriptors.per_class})
        .add("n", std::uint64_t{cfg.synth_descriptors.n})
        .add("d", std::uint64_t{cfg.synth_descriptors.d})
        .add("modes", std::uint64_t{cfg.synth_descriptors.modes_per_class})
        .add("shared", std::uint64_t{cfg.synth_descriptors.shared_modes})
        .add("share", cfg.synth_descriptors.class_share)
        .add("spread", cfg.synth_descriptors.spread)
        .add("jitter", cfg.synth_descriptors.video_jitter)
        .add("sentences", std::uint64_t{cfg.synth_tags.sentences})
        .add("words", std::uint64_t{cfg.synth_tags.words_per_group})
        .add("per_sentence", std::uint64_t{cfg.synth_tags.tags_per_sentence})
        .add("noise", cfg.synth_tags.noise_rate)
        .add("variants", cfg.synth_tags.variant_rate);
    stages.push_back({"synth", {}, {at("synth")}, p.str(), [&] {
                        TagSynthConfig tc = cfg.synth_tags;
                        tc.seed = derive_seed(cfg.seed, "synth.tags");
                        write_file_atomic(tags_path, records_to_jsonl(synth_tag_records(tc)));
                        DescriptorSynthConfig dc = cfg.synth_descriptors;
                        dc.seed = derive_seed(cfg.seed, "synth.descriptors");
                        const auto data = synth_descriptors(dc);
                        fs::create_directories(desc_dir);
                        for (const auto& ds : data.sets) write_descriptor_file(ds, desc_dir + "/" + ds.video_id + ".tfds");
                        write_file_atomic(labels_path, serialize_labels(data.labels));
                      }});
  }

  stages.push_back({"corpus", {tags_path}, {corpus_dir}, Params().add("min_count", cfg.min_count).str(), [&] {
                      const auto built = build_corpus(read_tag_records(tags_path), cfg.min_count);
                      save_corpus(built.corpus, corpus_dir);
                      log << "  sentences " << built.corpus.sentences.size() << ", trainable "
                          << built.corpus.trainable_count() << ", vocabulary " << built.corpus.vocab.size()
                          << ", malformed records " << built.diagnostics.malformed_records << "\n";
                    }});

  {
    Params p;
    p.add("dim", std::uint64_t{cfg.t2v.dim})
        .add("window", std::uint64_t{cfg.t2v.window})
        .add("negatives", std::uint64_t{cfg.t2v.negatives})
        .add("epochs", cfg.t2v.epochs)
        .add("lr0", cfg.t2v.initial_lr)
        .add("lr1", cfg.t2v.final_lr)
        .add("subsample", cfg.t2v.subsample_t)
        .add("workers", cfg.t2v.workers)
        .add("seed", derive_seed(cfg.seed, "t2v"));
    stages.push_back({"t2v", {corpus_dir}, {t2v_path}, p.str(), [&] {
                        T2VConfig tc = cfg.t2v;
                        tc.seed = derive_seed(cfg.seed, "t2v");
                        T2VTrainStats stats;
                        const auto tv = train_tag2vec(load_corpus(corpus_dir), tc, &stats);
                        save_vectors(tv, t2v_path);
                        log << "  " << tv.size() << " stems, dim " << tv.dim() << ", final epoch loss "
                            << format_double(stats.epoch_mean_loss.empty() ? 0.0 : stats.epoch_mean_loss.back()) << "\n";
                      }});
  }

  stages.push_back({"split",
                    {labels_path},
                    {at("split")},
                    Params().add("fraction", cfg.train_fraction).add("seed", derive_seed(cfg.seed, "split")).str(),
                    [&] {
                      const auto s = split_labels(read_labels(labels_path), cfg.train_fraction,
                                                  derive_seed(cfg.seed, "split"));
                      write_file_atomic(train_labels, serialize_labels(s.train));
                      write_file_atomic(test_labels, serialize_labels(s.test));
                      log << "  train " << s.train.size() << ", held-out " << s.test.size() << "\n";
                    }});

  {
    Params p;
    p.add("k", std::uint64_t{cfg.gmm_k})
        .add("iters", cfg.em.max_iters)
        .add("tol", cfg.em.ll_rel_tol)
        .add("floor", cfg.em.variance_floor_scale)
        .add("init", std::string(cfg.em.init == GmmInit::kmeans_pp ? "kmeans_pp" : "random_points"))
        .add("seed", derive_seed(cfg.seed, "gmm"));
    stages.push_back({"gmm", {desc_dir, train_labels}, {gmm_path}, p.str(), [&] {
                        std::vector<DescriptorSet> train;
                        for (const auto& [video, cls] : read_labels(train_labels)) {
                          train.push_back(read_descriptor_file(desc_dir + "/" + video + ".tfds"));
                        }
                        EmConfig ec = cfg.em;
                        ec.seed = derive_seed(cfg.seed, "gmm");
                        const auto fit = fit_gmm(pool_descriptors(train), cfg.gmm_k, ec);
                        save_gmm(fit.model, gmm_path);
                        log << "  " << fit.diagnostics.iterations << " EM iterations, log-likelihood "
                            << format_double(fit.diagnostics.loglik_history.back()) << ", reseeded "
                            << fit.diagnostics.reseeded_components << "\n";
                      }});
  }

  stages.push_back({"fv", {desc_dir, gmm_path}, {fv_dir}, Params().add("normalize", to_string(cfg.fv_norm)).str(), [&] {
                      const auto gmm = load_gmm(gmm_path);
                      std::vector<FisherVector> out;
                      std::size_t degenerate = 0;
                      for (const auto& ds : read_descriptor_dir(desc_dir)) {
                        out.push_back(encode_fisher(gmm, ds, cfg.fv_norm));
                        degenerate += out.back().degenerate ? 1 : 0;
                      }
                      fs::create_directories(fv_dir);
                      for (const auto& fv : out) write_fisher_file(fv, fv_dir + "/" + fv.video_id + ".fv");
                      log << "  " << out.size() << " Fisher vectors, F = " << (out.empty() ? 0 : out[0].values.size())
                          << ", degenerate " << degenerate << "\n";
                    }});

  {
    Params p;
    p.add("hidden", std::uint64_t{cfg.net.hidden})
        .add("iters", cfg.net.max_iters)
        .add("optimizer", std::string(cfg.net.optimizer == Optimizer::full_batch_gd_momentum ? "gd" : "sgd"))
        .add("lr", cfg.net.lr)
        .add("momentum", cfg.net.momentum)
        .add("batch", std::uint64_t{cfg.net.batch_size})
        .add("init", cfg.net.weight_init_scale)
        .add("l2", cfg.net.l2_reg)
        .add("seed", derive_seed(cfg.seed, "embed"));
    stages.push_back({"embed", {fv_dir, train_labels, t2v_path}, {net_path}, p.str(), [&] {
                        const auto tv = load_vectors(t2v_path);
                        const auto pairs = make_pairs(read_labels(train_labels), fisher_for(fv_dir), tv, fv_dir);
                        NetConfig nc = cfg.net;
                        nc.seed = derive_seed(cfg.seed, "embed");
                        const auto trained = train_embedding(pairs, nc);
                        save_net(trained.net, net_path);
                        log << "  best loss " << format_double(trained.trace.best_loss) << " at iteration "
                            << trained.trace.best_iteration << ", lr halvings " << trained.trace.lr_halvings << "\n";
                      }});
  }

  stages.push_back({"evaluate",
                    {fv_dir, train_labels, test_labels, t2v_path, net_path, corpus_dir},
                    {metrics_path, at("heldout_suggestions.tsv")},
                    Params().add("k", std::uint64_t{cfg.suggest_k}).str(),
                    [&] {
                      const auto tv = load_vectors(t2v_path);
                      const auto net = load_net(net_path);
                      const auto dm = load_destem(corpus_dir + "/destem.tsv");
                      const auto fvs = fisher_for(fv_dir);
                      const auto train = make_pairs(read_labels(train_labels), fvs, tv, fv_dir);
                      const auto test_labels_v = read_labels(test_labels);
                      const auto test = make_pairs(test_labels_v, fvs, tv, fv_dir);
                      auto classes = class_vectors(train);
                      for (const auto& [cls, v] : class_vectors(test)) classes.emplace(cls, v);

                      SuggestConfig sc;
                      sc.k = cfg.suggest_k;
                      std::size_t hits = 0;
                      std::string rows;
                      for (const auto& [video, cls] : test_labels_v) {
                        const auto suggestions = suggest_tags(fvs.at(video), net, tv, dm, sc);
                        const std::string want = destem(cls, dm);
                        bool hit = false;
                        for (const auto& s : suggestions) {
                          hit = hit || s.surface == want;
                          rows += video + '\t' + cls + '\t' + std::to_string(s.rank) + '\t' + s.surface + '\t' + s.stem +
                                  '\t' + format_double(s.distance) + '\n';
                        }
                        hits += hit ? 1 : 0;
                      }
                      nlohmann::ordered_json m;
                      m["train_accuracy"] = nearest_class_accuracy(net, train, classes);
                      m["heldout_accuracy"] = nearest_class_accuracy(net, test, classes);
                      m["heldout_hits"] = hits;
                      m["heldout_videos"] = test.size();
                      m["heldout_hit_rate"] =
                          test.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(test.size());
                      m["k"] = cfg.suggest_k;
                      write_file_atomic(at("heldout_suggestions.tsv"), rows);
                      write_file_atomic(metrics_path, m.dump(2) + "\n");
                    }});

  stages.push_back({"survey",
                    {fv_dir, test_labels, t2v_path, net_path, corpus_dir},
                    {store_dir},
                    Params().add("k", std::uint64_t{cfg.suggest_k}).add("media", cfg.media_prefix).str(),
                    [&] {
                      const auto tv = load_vectors(t2v_path);
                      const auto net = load_net(net_path);
                      const auto dm = load_destem(corpus_dir + "/destem.tsv");
                      const auto fvs = fisher_for(fv_dir);
                      SuggestConfig sc;
                      sc.k = cfg.suggest_k;
                      std::vector<StoreVideo> videos;
                      for (const auto& [video, cls] : read_labels(test_labels)) {
                        const auto it = fvs.find(video);
                        if (it == fvs.end()) throw DataError(fv_dir + ": no Fisher vector for video '" + video + "'");
                        videos.push_back({video, cfg.media_prefix + video + ".mp4", cls,
                                          suggest_tags(it->second, net, tv, dm, sc)});
                      }
                      write_survey_store(videos, cfg.suggest_k, store_dir);
                      log << "  " << videos.size() << " videos in survey store\n";
                    }});

  PipelineResult result;
  for (const auto& stage : stages) {
    std::uint64_t key = fnv1a64(stage.name);
    key = fnv1a64(stage.params, key);
    for (const auto& in : stage.inputs) {
      if (!fs::exists(in)) throw DataError(in + ": input of stage '" + stage.name + "' does not exist");
      key = fnv1a64(hex64(content_hash(in)), key);
    }
    const std::string stamp_path = at(".stages/" + stage.name + ".hash");
    const std::string stamp = hex64(key) + "\n";
    const bool outputs_present =
        std::all_of(stage.outputs.begin(), stage.outputs.end(), [](const std::string& p) { return fs::exists(p); });
    if (!force && outputs_present && fs::exists(stamp_path) && read_file(stamp_path) == stamp) {
      log << "[skip] " << stage.name << " (up to date)\n";
      result.stages_skipped.push_back(stage.name);
      continue;
    }
    for (const auto& out : stage.outputs) fs::remove_all(out);
    fs::remove(stamp_path);
    const auto t0 = std::chrono::steady_clock::now();
    log << "[run]  " << stage.name << "\n";
    stage.run();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_file_atomic(stamp_path, stamp);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", secs);
    log << "  done in " << buf << " s\n";
    result.stages_run.push_back(stage.name);
  }

  const auto m = nlohmann::json::parse(read_file(metrics_path));
  result.train_accuracy = m.at("train_accuracy").get<double>();
  result.heldout_accuracy = m.at("heldout_accuracy").get<double>();
  result.heldout_hit_rate = m.at("heldout_hit_rate").get<double>();
  result.heldout_videos = m.at("heldout_videos").get<std::size_t>();
  const auto hits = m.at("heldout_hits").get<std::size_t>();
  log << "train nearest-class accuracy: " << format_double(result.train_accuracy) << "\n";
  log << "held-out nearest-class accuracy: " << format_double(result.heldout_accuracy) << "\n";
  log << "held-out top-" << cfg.suggest_k << " hit-rate: " << format_double(result.heldout_hit_rate) << " (" << hits
      << "/" << result.heldout_videos << ")\n";
  return result;
}

}  // namespace tagforge
