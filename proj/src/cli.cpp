#include "tagforge/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "tagforge/corpus.hpp"
#include "tagforge/crossmodal.hpp"
#include "tagforge/descriptor_io.hpp"
#include "tagforge/evalstats.hpp"
#include "tagforge/gmm.hpp"
#include "tagforge/pipeline.hpp"
#include "tagforge/suggest.hpp"
#include "tagforge/survey.hpp"
#include "tagforge/synth.hpp"
#include "tagforge/tag2vec.hpp"

namespace fs = std::filesystem;

namespace tagforge {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string join_doubles(std::span<const double> v, char sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += format_double(v[i]);
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--vector: '" + item + "' is not a number");
    }
  }
  return out;
}

std::map<std::string, std::string> label_map(const std::string& path) {
  std::map<std::string, std::string> out;
  for (const auto& [video, cls] : read_labels(path)) out.emplace(video, cls);
  return out;
}

void write_output(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_file_atomic(path, text);
  }
}

std::vector<TrainPair> labeled_pairs(const std::string& fv_dir, const std::string& labels_path, const TagVectors& tv) {
  const auto fvs = read_fisher_dir(fv_dir);
  std::vector<TrainPair> pairs;
  for (const auto& [video, cls] : read_labels(labels_path)) {
    const auto it = fvs.find(video);
    if (it == fvs.end()) throw DataError(fv_dir + ": no Fisher vector for video '" + video + "' listed in " + labels_path);
    if (!tv.index_of(cls)) throw DataError(labels_path + ": class stem '" + cls + "' is not in the tag vocabulary");
    const auto target = tv.vector(cls);
    pairs.push_back({it->second.values, {target.begin(), target.end()}, cls});
  }
  if (pairs.empty()) throw DataError(labels_path + ": no labeled videos");
  return pairs;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"tagforge: hash-tag embeddings, video-to-tag embedding and tag suggestion"};
  app.fallthrough();
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  int thread_count = 1;
  bool force = false;
  auto* seed_opt = app.add_option("--seed", seed, "Global seed; each stage derives its own from it")->capture_default_str();
  auto* threads_opt =
      app.add_option("--threads", thread_count, "Worker threads for parallel kernels")->check(CLI::PositiveNumber);
  app.add_flag("--force", force, "Rerun pipeline stages even when up to date");

  // corpus
  auto* corpus = app.add_subcommand("corpus", "Tag corpus construction")->require_subcommand(1);
  auto* corpus_build = corpus->add_subcommand("build", "Normalize, stem and count tag records");
  std::string corpus_input, corpus_out;
  std::uint64_t min_count = 5;
  corpus_build->add_option("--input", corpus_input, "Line-delimited JSON tag records")->required();
  corpus_build->add_option("--out", corpus_out, "Output corpus directory")->required();
  corpus_build->add_option("--min-count", min_count, "Vocabulary count threshold")->capture_default_str()->check(
      CLI::PositiveNumber);

  // t2v
  auto* t2v = app.add_subcommand("t2v", "Tag2Vec training and queries")->require_subcommand(1);
  auto* t2v_train = t2v->add_subcommand("train", "Train skip-gram tag vectors");
  std::string t2v_corpus, t2v_out;
  T2VConfig t2v_cfg;
  bool save_context = false;
  t2v_train->add_option("--corpus", t2v_corpus, "Corpus directory")->required();
  t2v_train->add_option("--out", t2v_out, "Output vector file")->required();
  t2v_train->add_option("--dim", t2v_cfg.dim)->capture_default_str();
  t2v_train->add_option("--window", t2v_cfg.window)->capture_default_str();
  t2v_train->add_option("--negatives", t2v_cfg.negatives)->capture_default_str();
  t2v_train->add_option("--epochs", t2v_cfg.epochs)->capture_default_str();
  t2v_train->add_option("--lr", t2v_cfg.initial_lr, "Initial learning rate")->capture_default_str();
  t2v_train->add_option("--subsample", t2v_cfg.subsample_t, "Subsampling threshold, 0 disables")->capture_default_str();
  t2v_train->add_option("--workers", t2v_cfg.workers, "More than 1 is faster but not reproducible")
      ->capture_default_str();
  t2v_train->add_flag("--save-context", save_context, "Also write context vectors to <out>.ctx");

  auto* t2v_nn = t2v->add_subcommand("nn", "Nearest tags to a stem or a raw vector");
  std::string nn_model, nn_query, nn_vector, nn_metric = "l2";
  std::size_t nn_k = 30;
  std::vector<std::string> nn_exclude;
  t2v_nn->add_option("--model", nn_model, "Vector file")->required();
  t2v_nn->add_option("--query", nn_query, "Query stem");
  t2v_nn->add_option("--vector", nn_vector, "Query vector, comma-separated");
  t2v_nn->add_option("--k", nn_k)->capture_default_str()->check(CLI::PositiveNumber);
  t2v_nn->add_option("--metric", nn_metric)->capture_default_str()->check(CLI::IsMember({"l2", "cosine"}));
  t2v_nn->add_option("--exclude", nn_exclude, "Stems to leave out");

  auto* t2v_sim = t2v->add_subcommand("sim", "Cosine similarity of two stems");
  std::string sim_model, sim_a, sim_b;
  t2v_sim->add_option("--model", sim_model)->required();
  t2v_sim->add_option("a", sim_a)->required();
  t2v_sim->add_option("b", sim_b)->required();

  // gmm / fv
  auto* gmm = app.add_subcommand("gmm", "Gaussian mixture over descriptors")->require_subcommand(1);
  auto* gmm_fit_cmd = gmm->add_subcommand("fit", "Fit a diagonal GMM by EM");
  std::string gmm_desc, gmm_out, gmm_videos, gmm_init = "kmeans_pp";
  std::size_t gmm_k = 64;
  EmConfig em;
  gmm_fit_cmd->add_option("--descriptors", gmm_desc, "Directory of .tfds files")->required();
  gmm_fit_cmd->add_option("--out", gmm_out, "Output model (JSON)")->required();
  gmm_fit_cmd->add_option("--k", gmm_k, "Components")->capture_default_str()->check(CLI::PositiveNumber);
  gmm_fit_cmd->add_option("--max-iters", em.max_iters)->capture_default_str()->check(CLI::PositiveNumber);
  gmm_fit_cmd->add_option("--tol", em.ll_rel_tol, "Relative log-likelihood tolerance")->capture_default_str();
  gmm_fit_cmd->add_option("--init", gmm_init)->capture_default_str()->check(CLI::IsMember({"kmeans_pp", "random_points"}));
  gmm_fit_cmd->add_option("--videos", gmm_videos, "Labels TSV restricting which videos are pooled");

  auto* fv = app.add_subcommand("fv", "Fisher vectors")->require_subcommand(1);
  auto* fv_encode = fv->add_subcommand("encode", "Encode every descriptor set in a directory");
  std::string fv_gmm, fv_desc, fv_out, fv_norm = "ssqrt_l2";
  fv_encode->add_option("--gmm", fv_gmm)->required();
  fv_encode->add_option("--descriptors", fv_desc)->required();
  fv_encode->add_option("--out", fv_out, "Output directory of .fv files")->required();
  fv_encode->add_option("--normalize", fv_norm)
      ->capture_default_str()
      ->check(CLI::IsMember({"none", "ssqrt", "l2", "ssqrt_l2"}));

  // embed
  auto* embed = app.add_subcommand("embed", "Fisher-vector to tag-space network")->require_subcommand(1);
  auto* embed_train = embed->add_subcommand("train", "Train the embedding network");
  std::string et_fv, et_labels, et_t2v, et_out, et_optimizer = "full_batch_gd_momentum";
  NetConfig net_cfg;
  embed_train->add_option("--fv", et_fv, "Directory of .fv files")->required();
  embed_train->add_option("--labels", et_labels, "video_id TAB class_stem")->required();
  embed_train->add_option("--t2v", et_t2v, "Tag vector file")->required();
  embed_train->add_option("--out", et_out, "Output network (JSON)")->required();
  embed_train->add_option("--hidden", net_cfg.hidden)->capture_default_str()->check(CLI::PositiveNumber);
  embed_train->add_option("--max-iters", net_cfg.max_iters)->capture_default_str()->check(CLI::PositiveNumber);
  embed_train->add_option("--lr", net_cfg.lr)->capture_default_str();
  embed_train->add_option("--momentum", net_cfg.momentum)->capture_default_str();
  embed_train->add_option("--l2", net_cfg.l2_reg, "L2 weight penalty")->capture_default_str();
  embed_train->add_option("--init-scale", net_cfg.weight_init_scale)->capture_default_str();
  embed_train->add_option("--batch-size", net_cfg.batch_size, "Minibatch mode only")->capture_default_str();
  embed_train->add_option("--optimizer", et_optimizer)
      ->capture_default_str()
      ->check(CLI::IsMember({"full_batch_gd_momentum", "minibatch_sgd"}));

  auto* embed_project = embed->add_subcommand("project", "Project one Fisher vector into tag space");
  std::string ep_net, ep_fv;
  embed_project->add_option("--net", ep_net)->required();
  embed_project->add_option("--fv", ep_fv, "A single .fv file")->required();

  auto* embed_export = embed->add_subcommand("export-proj", "Export projections for external plotting");
  std::string ex_net, ex_fv, ex_labels, ex_out;
  embed_export->add_option("--net", ex_net)->required();
  embed_export->add_option("--fv", ex_fv, "Directory of .fv files")->required();
  embed_export->add_option("--labels", ex_labels)->required();
  embed_export->add_option("--out", ex_out, "TSV: video_id, class, comma-separated coordinates")->required();

  // suggest
  auto* suggest = app.add_subcommand("suggest", "Suggest hash-tags for one video");
  std::string sg_net, sg_t2v, sg_destem, sg_fv, sg_format = "tsv";
  SuggestConfig sg_cfg;
  std::vector<std::string> sg_exclude;
  bool sg_no_collapse = false;
  suggest->add_option("--net", sg_net)->required();
  suggest->add_option("--t2v", sg_t2v)->required();
  suggest->add_option("--destem", sg_destem, "destem.tsv from a corpus directory")->required();
  suggest->add_option("--fv", sg_fv, "A single .fv file")->required();
  suggest->add_option("--k", sg_cfg.k)->capture_default_str()->check(CLI::PositiveNumber);
  suggest->add_option("--format", sg_format)->capture_default_str()->check(CLI::IsMember({"tsv", "json"}));
  suggest->add_option("--exclude", sg_exclude, "Stems never suggested");
  suggest->add_flag("--no-collapse", sg_no_collapse, "Keep stems that share a surface form");

  // eval
  auto* eval = app.add_subcommand("eval", "Survey statistics")->require_subcommand(1);
  auto* eval_report = eval->add_subcommand("report", "Aggregate relevance marks per class");
  std::string er_marks, er_labels, er_out, er_json;
  std::size_t er_k = 15;
  eval_report->add_option("--marks", er_marks)->required();
  eval_report->add_option("--labels", er_labels)->required();
  eval_report->add_option("--k", er_k)->capture_default_str()->check(CLI::PositiveNumber);
  eval_report->add_option("--out", er_out, "TSV report; stdout when omitted");
  eval_report->add_option("--json", er_json, "Also write the JSON report here");

  // serve / survey
  auto* serve = app.add_subcommand("serve", "Run the survey service");
  std::string sv_store, sv_marks, sv_ui, sv_host = "127.0.0.1";
  int sv_port = 8080;
  serve->add_option("--store", sv_store)->required();
  serve->add_option("--marks", sv_marks, "Append-only marks log")->required();
  serve->add_option("--port", sv_port)->capture_default_str();
  serve->add_option("--host", sv_host)->capture_default_str();
  serve->add_option("--ui", sv_ui, "Directory with the annotator UI bundle, served at /");

  auto* survey = app.add_subcommand("survey", "Survey store")->require_subcommand(1);
  auto* survey_build = survey->add_subcommand("build", "Precompute suggestions for the surveyed videos");
  std::string sb_net, sb_t2v, sb_destem, sb_fv, sb_labels, sb_out, sb_media = "media/";
  std::size_t sb_k = 15;
  survey_build->add_option("--net", sb_net)->required();
  survey_build->add_option("--t2v", sb_t2v)->required();
  survey_build->add_option("--destem", sb_destem)->required();
  survey_build->add_option("--fv", sb_fv, "Directory of .fv files")->required();
  survey_build->add_option("--labels", sb_labels, "Videos to survey, with their classes")->required();
  survey_build->add_option("--out", sb_out)->required();
  survey_build->add_option("--k", sb_k)->capture_default_str()->check(CLI::PositiveNumber);
  survey_build->add_option("--media-prefix", sb_media)->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "Synthetic data")->require_subcommand(1);
  auto* synth_desc = synth->add_subcommand("descriptors", "Class-conditioned Gaussian descriptor sets");
  DescriptorSynthConfig sd;
  std::string sd_out, sd_labels;
  synth_desc->add_option("--classes", sd.classes)->capture_default_str()->check(CLI::PositiveNumber);
  synth_desc->add_option("--per-class", sd.per_class)->capture_default_str()->check(CLI::PositiveNumber);
  synth_desc->add_option("--n", sd.n, "Descriptors per video")->capture_default_str()->check(CLI::PositiveNumber);
  synth_desc->add_option("--d", sd.d, "Descriptor dimension")->capture_default_str()->check(CLI::PositiveNumber);
  synth_desc->add_option("--out", sd_out)->required();
  synth_desc->add_option("--labels", sd_labels, "Label manifest path (default <out>/labels.tsv)");

  auto* synth_tags = synth->add_subcommand("tags", "Grouped hash-tag records");
  TagSynthConfig st;
  std::string st_out;
  synth_tags->add_option("--groups", st.groups)->capture_default_str()->check(CLI::PositiveNumber);
  synth_tags->add_option("--words", st.words_per_group, "Words per group")->capture_default_str();
  synth_tags->add_option("--sentences", st.sentences)->capture_default_str();
  synth_tags->add_option("--per-sentence", st.tags_per_sentence)->capture_default_str();
  synth_tags->add_option("--noise", st.noise_rate, "Chance of an extra shared noise tag")->capture_default_str();
  synth_tags->add_option("--variants", st.variant_rate, "Chance of an inflected surface form")->capture_default_str();
  synth_tags->add_option("--out", st_out, "Output JSONL")->required();

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "End-to-end runs")->require_subcommand(1);
  auto* pipeline_run = pipeline->add_subcommand("run", "Run every stage from a TOML config");
  std::string pl_config, pl_workdir;
  std::vector<std::string> pl_set;
  pipeline_run->add_option("--config", pl_config)->required();
  pipeline_run->add_option("--workdir", pl_workdir, "Overrides the config's workdir");
  pipeline_run->add_option("--set", pl_set, "Override a config value, e.g. --set t2v.dim=50");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    set_threads(thread_count);

    if (corpus_build->parsed()) {
      const auto built = build_corpus(read_tag_records(corpus_input), min_count);
      save_corpus(built.corpus, corpus_out);
      const auto& d = built.diagnostics;
      out << "records " << d.records_read << "\tsentences " << built.corpus.sentences.size() << "\ttrainable "
          << built.corpus.trainable_count() << "\tvocabulary " << built.corpus.vocab.size() << "\tmalformed "
          << d.malformed_records << "\tempty " << d.empty_records << "\tdropped_tags " << d.dropped_tags << "\n";
    } else if (t2v_train->parsed()) {
      t2v_cfg.seed = derive_seed(seed, "t2v");
      t2v_cfg.validate();
      T2VTrainStats stats;
      const auto tv = train_tag2vec(load_corpus(t2v_corpus), t2v_cfg, &stats);
      save_vectors(tv, t2v_out, save_context);
      out << "stems " << tv.size() << "\tdim " << tv.dim() << "\tpairs " << stats.pairs << "\n";
      for (std::size_t e = 0; e < stats.epoch_mean_loss.size(); ++e) {
        out << "epoch " << e + 1 << "\tloss " << format_double(stats.epoch_mean_loss[e]) << "\n";
      }
    } else if (t2v_nn->parsed()) {
      if (nn_query.empty() == nn_vector.empty()) throw UsageError("t2v nn: give exactly one of --query or --vector");
      const auto tv = load_vectors(nn_model);
      const Query q = nn_query.empty() ? Query(parse_doubles(nn_vector)) : Query(nn_query);
      const std::set<std::string, std::less<>> exclude(nn_exclude.begin(), nn_exclude.end());
      for (const auto& n : nearest_tags(tv, q, nn_k, parse_metric(nn_metric), exclude)) {
        out << n.stem << '\t' << format_double(n.score) << '\n';
      }
    } else if (t2v_sim->parsed()) {
      out << format_double(similarity(load_vectors(sim_model), sim_a, sim_b)) << "\n";
    } else if (gmm_fit_cmd->parsed()) {
      std::vector<DescriptorSet> sets;
      if (gmm_videos.empty()) {
        sets = read_descriptor_dir(gmm_desc);
      } else {
        for (const auto& [video, cls] : read_labels(gmm_videos)) {
          sets.push_back(read_descriptor_file((fs::path(gmm_desc) / (video + ".tfds")).string()));
        }
      }
      if (sets.empty()) throw DataError(gmm_desc + ": no descriptor files");
      em.seed = derive_seed(seed, "gmm");
      em.init = gmm_init == "kmeans_pp" ? GmmInit::kmeans_pp : GmmInit::random_points;
      const auto fit = fit_gmm(pool_descriptors(sets), gmm_k, em);
      save_gmm(fit.model, gmm_out);
      out << "iterations " << fit.diagnostics.iterations << "\tconverged " << (fit.diagnostics.converged ? 1 : 0)
          << "\tloglik " << format_double(fit.diagnostics.loglik_history.back()) << "\treseeded "
          << fit.diagnostics.reseeded_components << "\n";
    } else if (fv_encode->parsed()) {
      const auto model = load_gmm(fv_gmm);
      const auto norm = parse_fisher_norm(fv_norm);
      std::vector<FisherVector> encoded;
      for (const auto& ds : read_descriptor_dir(fv_desc)) {
        encoded.push_back(encode_fisher(model, ds, norm));
        if (encoded.back().degenerate) err << "warning: " << ds.video_id << ": all-zero Fisher vector\n";
      }
      fs::create_directories(fv_out);
      for (const auto& v : encoded) write_fisher_file(v, (fs::path(fv_out) / (v.video_id + ".fv")).string());
      out << "encoded " << encoded.size() << "\n";
    } else if (embed_train->parsed()) {
      const auto tv = load_vectors(et_t2v);
      const auto pairs = labeled_pairs(et_fv, et_labels, tv);
      net_cfg.seed = derive_seed(seed, "embed");
      net_cfg.optimizer =
          et_optimizer == "minibatch_sgd" ? Optimizer::minibatch_sgd : Optimizer::full_batch_gd_momentum;
      const auto trained = train_embedding(pairs, net_cfg);
      save_net(trained.net, et_out);
      std::map<std::string, std::vector<double>> classes;
      for (const auto& p : pairs) classes.emplace(p.class_stem, p.target);
      out << "best_loss " << format_double(trained.trace.best_loss) << "\tbest_iteration "
          << trained.trace.best_iteration << "\ttrain_accuracy "
          << format_double(nearest_class_accuracy(trained.net, pairs, classes)) << "\n";
    } else if (embed_project->parsed()) {
      const auto p = project(load_net(ep_net), read_fisher_file(ep_fv).values);
      out << join_doubles(p, ' ') << "\n";
    } else if (embed_export->parsed()) {
      const auto net = load_net(ex_net);
      const auto fvs = read_fisher_dir(ex_fv);
      std::string text;
      for (const auto& [video, cls] : read_labels(ex_labels)) {
        const auto it = fvs.find(video);
        if (it == fvs.end()) throw DataError(ex_fv + ": no Fisher vector for video '" + video + "'");
        text += video + '\t' + cls + '\t' + join_doubles(project(net, it->second.values), ',') + '\n';
      }
      write_file_atomic(ex_out, text);
    } else if (suggest->parsed()) {
      sg_cfg.exclude_stems.insert(sg_exclude.begin(), sg_exclude.end());
      sg_cfg.collapse_to_surface = !sg_no_collapse;
      const auto result =
          suggest_tags(read_fisher_file(sg_fv), load_net(sg_net), load_vectors(sg_t2v), load_destem(sg_destem), sg_cfg);
      out << (sg_format == "json" ? suggestions_to_json(result) : suggestions_to_tsv(result));
    } else if (eval_report->parsed()) {
      const auto report = aggregate_relevance(read_marks(er_marks), label_map(er_labels), er_k);
      write_output(er_out, report_to_tsv(report), out);
      if (!er_json.empty()) write_file_atomic(er_json, report_to_json(report));
    } else if (serve->parsed()) {
      auto store = SurveyStore::open(sv_store, sv_marks);
      SurveyServer server(store, sv_ui);
      err << "serving " << store.size() << " videos on http://" << sv_host << ":" << sv_port << "/ ("
          << store.mark_count() << " marks replayed)\n";
      server.listen(sv_host, sv_port);
    } else if (survey_build->parsed()) {
      const auto net = load_net(sb_net);
      const auto tv = load_vectors(sb_t2v);
      const auto dm = load_destem(sb_destem);
      const auto fvs = read_fisher_dir(sb_fv);
      SuggestConfig cfg;
      cfg.k = sb_k;
      std::vector<StoreVideo> videos;
      for (const auto& [video, cls] : read_labels(sb_labels)) {
        const auto it = fvs.find(video);
        if (it == fvs.end()) throw DataError(sb_fv + ": no Fisher vector for video '" + video + "'");
        auto s = suggest_tags(it->second, net, tv, dm, cfg);
        if (s.size() != sb_k) {
          throw DataError(sb_t2v + ": only " + std::to_string(s.size()) + " distinct suggestions available, need " +
                          std::to_string(sb_k));
        }
        videos.push_back({video, sb_media + video + ".mp4", cls, std::move(s)});
      }
      write_survey_store(videos, sb_k, sb_out);
      out << "videos " << videos.size() << "\n";
    } else if (synth_desc->parsed()) {
      sd.seed = derive_seed(seed, "synth.descriptors");
      const auto data = synth_descriptors(sd);
      fs::create_directories(sd_out);
      for (const auto& ds : data.sets) write_descriptor_file(ds, (fs::path(sd_out) / (ds.video_id + ".tfds")).string());
      write_file_atomic(sd_labels.empty() ? (fs::path(sd_out) / "labels.tsv").string() : sd_labels,
                        serialize_labels(data.labels));
      out << "videos " << data.sets.size() << "\n";
    } else if (synth_tags->parsed()) {
      st.seed = derive_seed(seed, "synth.tags");
      const auto records = synth_tag_records(st);
      write_file_atomic(st_out, records_to_jsonl(records));
      out << "records " << records.size() << "\n";
    } else if (pipeline_run->parsed()) {
      auto cfg = load_pipeline_config(pl_config, pl_set);
      if (seed_opt->count() > 0) cfg.seed = seed;
      if (threads_opt->count() > 0) cfg.threads = thread_count;
      if (!pl_workdir.empty()) cfg.workdir = pl_workdir;
      run_pipeline(cfg, force, out);
    }
  } catch (const UsageError& e) {
    err << "tagforge: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "tagforge: error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace tagforge
