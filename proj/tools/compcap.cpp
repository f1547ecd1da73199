// Command-line front end: each subcommand wraps one pipeline stage.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "compcap/baselines.hpp"
#include "compcap/checkpoint.hpp"
#include "compcap/corpus.hpp"
#include "compcap/decoding.hpp"
#include "compcap/judge.hpp"
#include "compcap/metrics.hpp"
#include "compcap/sampler.hpp"
#include "compcap/synthetic.hpp"
#include "compcap/trainer.hpp"

namespace {

using namespace compcap;
namespace fs = std::filesystem;

std::uint64_t g_seed = 0;
CLI::App* g_app = nullptr;

// Resolved options of the run, written next to its outputs in a form that
// --config accepts.
void snapshot(const fs::path& dir, const std::string& name) {
  if (!dir.empty()) fs::create_directories(dir);
  std::ofstream out(dir / (name + ".config.toml"));
  if (!out) throw std::runtime_error("cannot write config snapshot in " + dir.string());
  out << "seed=" << g_seed << "\n\n[" << name << "]\n"
      << g_app->get_subcommand(name)->config_to_str(true, false);
}

fs::path parent_of(const fs::path& file) {
  return file.has_parent_path() ? file.parent_path() : fs::path(".");
}

// Output file path with its directory created.
const fs::path& output(const fs::path& file) {
  fs::create_directories(parent_of(file));
  return file;
}

// Synthetic image attributes: {image_id, class_id, size, color, beak, wings}.
void save_images(const fs::path& path, std::span<const SyntheticImage> images) {
  std::vector<Json> rows;
  for (const auto& im : images) {
    rows.push_back({{"image_id", im.image_id},
                    {"class_id", im.class_id.value},
                    {"size", kSizes[im.attributes.size]},
                    {"color", kColors[im.attributes.color]},
                    {"beak", kBeaks[im.attributes.beak]},
                    {"wings", kWings[im.attributes.wings]}});
  }
  write_jsonl(path, rows);
}

template <std::size_t N>
int value_index(const std::array<std::string_view, N>& names, const std::string& v, std::size_t line) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == v) return static_cast<int>(i);
  }
  throw ValidationError("unknown attribute value '" + v + "'", line);
}

std::map<std::string, BirdAttributes> load_images(const fs::path& path) {
  std::map<std::string, BirdAttributes> out;
  for_each_jsonl(path, [&](const Json& j, std::size_t line) {
    BirdAttributes a;
    a.size = value_index(kSizes, string_field(j, "size", line), line);
    a.color = value_index(kColors, string_field(j, "color", line), line);
    a.beak = value_index(kBeaks, string_field(j, "beak", line), line);
    a.wings = value_index(kWings, string_field(j, "wings", line), line);
    if (!out.emplace(id_field(j, "image_id", line), a).second) {
      throw ValidationError("duplicate image id", line);
    }
  });
  return out;
}

const BirdAttributes& attributes_of(const std::map<std::string, BirdAttributes>& images,
                                    const std::string& id) {
  auto it = images.find(id);
  if (it == images.end()) throw std::invalid_argument("image '" + id + "' missing from images file");
  return it->second;
}

struct Prediction {
  std::string pair_id;
  std::string text;
};

std::vector<Prediction> load_predictions(const fs::path& path) {
  std::vector<Prediction> out;
  for_each_jsonl(path, [&](const Json& j, std::size_t line) {
    out.push_back({id_field(j, "pair_id", line), string_field(j, "text", line)});
  });
  return out;
}

void save_predictions(const fs::path& path, std::span<const Prediction> preds) {
  std::vector<Json> rows;
  for (const auto& p : preds) rows.push_back({{"pair_id", p.pair_id}, {"text", p.text}});
  write_jsonl(path, rows);
}

Tokens tokens_of(const std::string& text) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return {};
  return preprocess(text);
}

// ---------------------------------------------------------------- world / synth

struct WorldOptions {
  WorldConfig config;
  void add(CLI::App* app) {
    app->add_option("--d", config.d, "feature grid side (full scale: 8x8 CNN map)")->capture_default_str();
    app->add_option("--f", config.f, "features per cell, at least 16 (full scale: CNN channels)")
        ->capture_default_str();
    app->add_option("--images-per-species", config.images_per_species)->capture_default_str();
    app->add_option("--noise", config.noise, "Gaussian noise on grid values")->capture_default_str();
    app->add_option("--unclear-fraction", config.unclear_fraction,
                    "fraction of images rated unclear by 2 of 5 raters")
        ->capture_default_str();
    app->add_option("--raters", config.raters, "clarity raters per image")->capture_default_str();
  }
};

void write_world(const SyntheticWorld& world, const fs::path& dir) {
  fs::create_directories(dir);
  world.taxonomy.save(dir / "taxonomy.jsonl");
  save_embeddings(dir / "embeddings.jsonl", world.embeddings);
  save_ratings(dir / "ratings.jsonl", world.ratings);
  save_feature_grids(dir / "grids.jsonl", world.grids);
  save_images(dir / "images.jsonl", world.images);
}

// ---------------------------------------------------------------- sampling

std::vector<ImagePair> pairs_of(std::span<const DatasetRecord> records) {
  std::vector<ImagePair> out;
  for (const auto& r : records) out.push_back(r.pair);
  return out;
}

std::vector<DatasetRecord> load_training_records(const std::optional<fs::path>& records,
                                                 const std::optional<fs::path>& pairs,
                                                 const std::optional<fs::path>& paragraphs) {
  if (records) return load_records(*records);
  if (pairs && paragraphs) return join_records(load_pairs(*pairs), load_paragraphs(*paragraphs));
  throw std::invalid_argument("give --records, or both --pairs and --paragraphs");
}

ModelConfig model_config(ModelConfig c, const std::string& joint, const std::string& comparative) {
  c.joint = JointEncodingSpec::parse(joint);
  if (comparative != "encoder" && comparative != "passthrough") {
    throw std::invalid_argument("--comparative must be encoder or passthrough");
  }
  c.comparative.mode =
      comparative == "encoder" ? ComparativeSpec::Mode::encoder : ComparativeSpec::Mode::passthrough;
  return c;
}

DecodeMode parse_mode(const std::string& mode) {
  if (mode == "greedy") return DecodeMode::greedy;
  if (mode == "beam") return DecodeMode::beam;
  if (mode == "sample") return DecodeMode::multinomial;
  throw std::invalid_argument("--mode must be greedy, beam or sample");
}

Json metric_row(const std::string& name, std::span<const EvalInstance> instances) {
  const MetricReport r = evaluate(instances);
  return Json{{"name", name}, {"bleu4", r.bleu4}, {"rougeL", r.rouge_l}, {"ciderD", r.cider_d}};
}

std::vector<EvalInstance> instances_for(std::span<const DatasetRecord> refs,
                                        const std::map<std::string, std::string>& texts,
                                        const std::string& source) {
  std::vector<EvalInstance> out;
  for (const auto& rec : refs) {
    auto it = texts.find(rec.pair.pair_id);
    if (it == texts.end()) {
      throw std::invalid_argument(source + " has no prediction for pair '" + rec.pair.pair_id + "'");
    }
    EvalInstance inst{rec.pair.pair_id, tokens_of(it->second), {}};
    for (const auto& p : rec.references) inst.references.push_back(p.tokens);
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Comparative captioning toolkit: pair sampling, corpus building, training, decoding, "
      "evaluation and judgment scoring.\nDefaults are desk scale; full-scale values are noted "
      "in each option's help where they differ."};
  g_app = &app;
  app.set_config("--config", "", "TOML/INI file of option values; command-line flags override it");
  app.add_option("--seed", g_seed, "global seed for every random stream")->capture_default_str();
  app.require_subcommand(1);
  app.fallthrough();

  // cost-model
  double cost_p = 2.0 / 3.0;
  std::string cost_strategy = "paired";
  auto* cost = app.add_subcommand("cost-model", "annotation cost multiplier when images are usable with probability p");
  cost->add_option("--p", cost_p, "probability an image is usable")->capture_default_str();
  cost->add_option("--strategy", cost_strategy, "paired or pivot_branch")
      ->check(CLI::IsMember({"paired", "pivot_branch"}))
      ->capture_default_str();

  // synth-world
  WorldOptions world_opts;
  fs::path world_dir = "world";
  auto* synth_world = app.add_subcommand(
      "synth-world", "write a synthetic taxonomy, embeddings, clarity ratings, grids and attributes");
  world_opts.add(synth_world);
  synth_world->add_option("--out-dir", world_dir)->capture_default_str();

  // synth
  WorldOptions synth_world_opts;
  SyntheticCorpusConfig synth_cfg;
  fs::path synth_dir = "synth";
  auto* synth = app.add_subcommand("synth", "synthetic world plus an annotated pair corpus");
  synth_world_opts.add(synth);
  synth->add_option("--pairs", synth_cfg.n_pairs, "pairs to generate")->capture_default_str();
  synth->add_option("--references", synth_cfg.references,
                    "paragraphs per pair (full scale: 5 annotators)")
      ->capture_default_str();
  synth->add_option("--out-dir", synth_dir)->capture_default_str();

  // sample
  fs::path s_taxonomy, s_embeddings, s_out = "pairs.jsonl";
  std::optional<fs::path> s_ratings;
  PivotSpec pivot_spec;
  std::size_t k_visual = 2;
  std::size_t k_taxonomic = 2;
  double s_threshold = 4.0 / 5.0;
  auto* sample = app.add_subcommand("sample", "pivot selection and visual/taxonomic branching");
  sample->add_option("--taxonomy", s_taxonomy)->required()->check(CLI::ExistingFile);
  sample->add_option("--embeddings", s_embeddings)->required()->check(CLI::ExistingFile);
  sample->add_option("--ratings", s_ratings, "clarity ratings; pivots must pass the gate")
      ->check(CLI::ExistingFile);
  sample->add_option("--threshold", s_threshold, "positive-rating fraction for a clear pivot")
      ->capture_default_str();
  sample->add_option("--pivots", pivot_spec.pivot_count, "pivot classes (full scale: 405)")
      ->capture_default_str();
  sample->add_option("--min-observations", pivot_spec.min_observations)->capture_default_str();
  sample->add_option("--review", pivot_spec.review_count, "images reviewed per candidate class")
      ->capture_default_str();
  sample->add_flag("--strict-lookahead", pivot_spec.strict_lookahead,
                   "skip classes that cannot fill every level budget");
  sample->add_option("--k-visual", k_visual, "visual branches per pivot (full scale: 2)")
      ->capture_default_str();
  sample->add_option("--k-taxonomic", k_taxonomic, "branches per taxonomic level (full scale: 2)")
      ->capture_default_str();
  sample->add_option("--out", s_out)->capture_default_str();

  // gate
  fs::path g_pairs, g_ratings, g_out = "gated.jsonl";
  double g_threshold = 4.0 / 5.0;
  auto* gate = app.add_subcommand("gate", "keep pairs whose images both pass the clarity gate");
  gate->add_option("--pairs", g_pairs)->required()->check(CLI::ExistingFile);
  gate->add_option("--ratings", g_ratings)->required()->check(CLI::ExistingFile);
  gate->add_option("--threshold", g_threshold, "positive-rating fraction (full scale: 4 of 5)")
      ->capture_default_str();
  gate->add_option("--out", g_out)->capture_default_str();

  // split
  fs::path sp_pairs, sp_dir = "splits";
  double sp_train = 0.8, sp_dev = 0.1;
  auto* split = app.add_subcommand("split", "split pairs by pivot class into train/dev/test");
  split->add_option("--pairs", sp_pairs)->required()->check(CLI::ExistingFile);
  split->add_option("--train", sp_train, "class fraction for train (full scale: 0.8)")->capture_default_str();
  split->add_option("--dev", sp_dev, "class fraction for dev (full scale: 0.1)")->capture_default_str();
  split->add_option("--out-dir", sp_dir)->capture_default_str();

  // annotate
  fs::path an_pairs, an_images, an_out = "paragraphs.jsonl";
  std::optional<fs::path> an_records;
  std::size_t an_raters = 5;
  auto* annotate = app.add_subcommand("annotate", "template paragraphs for synthetic image pairs");
  annotate->add_option("--pairs", an_pairs)->required()->check(CLI::ExistingFile);
  annotate->add_option("--images", an_images, "attributes file written by synth-world")
      ->required()
      ->check(CLI::ExistingFile);
  annotate->add_option("--raters", an_raters, "paragraphs per pair (full scale: 5)")->capture_default_str();
  annotate->add_option("--out", an_out)->capture_default_str();
  annotate->add_option("--records", an_records, "also write pairs joined with their paragraphs");

  // train
  std::optional<fs::path> t_records, t_pairs, t_paragraphs, t_dev, t_resume;
  fs::path t_grids, t_dir = "run";
  ModelConfig t_model;
  std::string t_joint = t_model.joint.to_string();
  std::string t_comparative = "encoder";
  TrainConfig t_cfg;
  std::uint64_t t_interval = 0;
  std::string t_clip_mode = "global_norm";
  std::uint64_t t_checkpoint_every = 0;
  std::size_t t_min_freq = 1;
  auto* train = app.add_subcommand("train", "fit the captioning model with Adagrad");
  train->add_option("--records", t_records, "joined records file")->check(CLI::ExistingFile);
  train->add_option("--pairs", t_pairs, "pairs file (with --paragraphs)")->check(CLI::ExistingFile);
  train->add_option("--paragraphs", t_paragraphs)->check(CLI::ExistingFile);
  train->add_option("--dev-records", t_dev, "records scored for dev loss at checkpoints")
      ->check(CLI::ExistingFile);
  train->add_option("--grids", t_grids, "feature-grid manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--out-dir", t_dir, "checkpoint, log and config snapshot")->capture_default_str();
  train->add_option("--resume", t_resume, "training checkpoint to continue from")
      ->check(CLI::ExistingFile);
  train->add_option("--hidden", t_model.hidden, "hidden width (full scale: 512)")->capture_default_str();
  train->add_option("--heads", t_model.heads, "attention heads (full scale: 8)")->capture_default_str();
  train->add_option("--encoder-layers", t_model.comparative.layers,
                    "comparative encoder layers (full scale: 6)")
      ->capture_default_str();
  train->add_option("--decoder-layers", t_model.decoder_layers, "decoder layers (full scale: 6)")
      ->capture_default_str();
  train->add_option("--ff-multiplier", t_model.ff_multiplier, "feed-forward width / hidden")
      ->capture_default_str();
  train->add_option("--joint", t_joint,
                    "joint encoding blocks from e1,e2,sub,add,max,mul (full scale: mul)")
      ->capture_default_str();
  train->add_option("--comparative", t_comparative, "encoder or passthrough")->capture_default_str();
  train->add_option("--lr", t_cfg.learning_rate, "Adagrad learning rate (full scale: 0.01)")
      ->capture_default_str();
  train->add_option("--decay", t_cfg.decay, "learning-rate decay factor (full scale: 0.9)")
      ->capture_default_str();
  train->add_option("--decay-interval", t_interval,
                    "steps between decays; 0 scales the full-scale 20k of 700k to --steps")
      ->capture_default_str();
  train->add_option("--clip", t_cfg.clip, "gradient clip magnitude (full scale: 5)")->capture_default_str();
  train->add_option("--clip-mode", t_clip_mode, "global_norm or value")
      ->check(CLI::IsMember({"global_norm", "value"}))
      ->capture_default_str();
  train->add_option("--batch", t_cfg.batch_size, "examples per step (full scale: 2048)")
      ->capture_default_str();
  train->add_option("--steps", t_cfg.steps, "total steps (full scale: 700k)")->capture_default_str();
  train->add_option("--checkpoint-every", t_checkpoint_every, "0 writes only the final checkpoint")
      ->capture_default_str();
  train->add_option("--min-frequency", t_min_freq, "vocabulary frequency cutoff")->capture_default_str();

  // generate
  fs::path ge_ckpt, ge_pairs, ge_grids, ge_out = "predictions.jsonl";
  std::string ge_mode = "beam";
  GenerationOptions ge_opts;
  auto* generate_cmd = app.add_subcommand("generate", "caption image pairs with a trained model");
  generate_cmd->add_option("--checkpoint", ge_ckpt)->required()->check(CLI::ExistingFile);
  generate_cmd->add_option("--pairs", ge_pairs, "pairs or records file")->required()->check(CLI::ExistingFile);
  generate_cmd->add_option("--grids", ge_grids)->required()->check(CLI::ExistingFile);
  generate_cmd->add_option("--mode", ge_mode, "greedy, beam or sample")->capture_default_str();
  generate_cmd->add_option("--beam", ge_opts.beam_width, "beam width")->capture_default_str();
  generate_cmd->add_option("--temperature", ge_opts.temperature, "sampling temperature")
      ->capture_default_str();
  generate_cmd->add_option("--max-length", ge_opts.max_length, "generated tokens including <eos>")
      ->capture_default_str();
  generate_cmd->add_option("--out", ge_out)->capture_default_str();

  // evaluate
  fs::path ev_refs, ev_out = "report.json";
  std::vector<std::string> ev_preds;
  std::optional<fs::path> ev_train, ev_grids;
  std::string ev_split = "dev";
  std::size_t ev_runs = 25;
  bool ev_per_instance = false;
  auto* evaluate_cmd =
      app.add_subcommand("evaluate", "BLEU-4, ROUGE-L and CIDEr-D for predictions and baselines");
  evaluate_cmd->add_option("--references", ev_refs, "records of the evaluated split")
      ->required()
      ->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--predictions", ev_preds, "NAME=PATH predictions file (repeatable)");
  evaluate_cmd->add_option("--train", ev_train, "training records; enables the baselines")
      ->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--grids", ev_grids, "grids for the nearest-neighbour baseline")
      ->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--split", ev_split, "split name in the report")->capture_default_str();
  evaluate_cmd->add_option("--human-runs", ev_runs, "one-vs-rest runs; 0 skips (full scale: 25)")
      ->capture_default_str();
  evaluate_cmd->add_flag("--per-instance", ev_per_instance, "include per-instance scores");
  evaluate_cmd->add_option("--out", ev_out)->capture_default_str();

  // judge-auto
  fs::path ja_preds, ja_pairs, ja_images, ja_out = "judgments.jsonl";
  std::size_t ja_raters = 3;
  auto* judge_auto = app.add_subcommand(
      "judge-auto", "judge synthetic predictions programmatically from image attributes");
  judge_auto->add_option("--predictions", ja_preds)->required()->check(CLI::ExistingFile);
  judge_auto->add_option("--pairs", ja_pairs)->required()->check(CLI::ExistingFile);
  judge_auto->add_option("--images", ja_images)->required()->check(CLI::ExistingFile);
  judge_auto->add_option("--raters", ja_raters)->capture_default_str();
  judge_auto->add_option("--out", ja_out)->capture_default_str();

  // judge-score
  fs::path js_judgments, js_pairs, js_out = "judge_report.json";
  std::string js_name = "model";
  std::size_t js_quorum = 2;
  auto* judge_score = app.add_subcommand("judge-score", "consensus and per-category judge scores");
  judge_score->add_option("--judgments", js_judgments)->required()->check(CLI::ExistingFile);
  judge_score->add_option("--pairs", js_pairs, "pairs or records file giving each item's category")
      ->required()
      ->check(CLI::ExistingFile);
  judge_score->add_option("--name", js_name, "row name in the report")->capture_default_str();
  judge_score->add_option("--quorum", js_quorum, "agreeing raters of 3 (full scale: 2)")->capture_default_str();
  judge_score->add_option("--out", js_out)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*cost) {
      const auto strategy =
          cost_strategy == "paired" ? SamplingStrategy::paired : SamplingStrategy::pivot_branch;
      std::printf("%.17g\n", annotation_cost(cost_p, strategy));
    } else if (*synth_world) {
      world_opts.config.seed = g_seed;
      write_world(make_world(world_opts.config), world_dir);
      snapshot(world_dir, "synth-world");
    } else if (*synth) {
      synth_cfg.world = synth_world_opts.config;
      synth_cfg.world.seed = g_seed;
      const SyntheticCorpus corpus = generate_synthetic_corpus(synth_cfg);
      write_world(corpus.world, synth_dir);
      save_records(synth_dir / "records.jsonl", corpus.records);
      save_pairs(synth_dir / "pairs.jsonl", pairs_of(corpus.records));
      std::vector<Paragraph> paragraphs;
      for (const auto& r : corpus.records) {
        paragraphs.insert(paragraphs.end(), r.references.begin(), r.references.end());
      }
      save_paragraphs(synth_dir / "paragraphs.jsonl", paragraphs);
      snapshot(synth_dir, "synth");
      std::printf("%zu pairs, %zu paragraphs -> %s\n", corpus.records.size(), paragraphs.size(),
                  synth_dir.string().c_str());
    } else if (*sample) {
      const Taxonomy taxonomy = Taxonomy::load(s_taxonomy);
      const auto embeddings = load_embeddings(s_embeddings);
      const QuantizedIndex index = QuantizedIndex::build(embeddings);
      BranchBudget budget;
      budget.visual = k_visual;
      budget.taxonomic.clear();
      for (int level = 1; level <= taxonomy.depth() + 1; ++level) budget.taxonomic[level] = k_taxonomic;
      ClarityPredicate is_clear;
      std::map<std::string, double> fractions;
      if (s_ratings) {
        fractions = positive_fractions(load_ratings(*s_ratings));
        is_clear = [&](const std::string& id) {
          auto it = fractions.find(id);
          return it != fractions.end() && it->second >= s_threshold;
        };
      }
      const SampleResult r =
          sample_pairs(taxonomy, observations_from(embeddings), index, pivot_spec, budget, g_seed, is_clear);
      save_pairs(output(s_out), r.pairs);
      snapshot(parent_of(s_out), "sample");
      std::printf("%zu pivots, %zu pairs\n", r.pivots.size(), r.pairs.size());
      for (const auto& [level, n] : r.shortfall) {
        if (n > 0) {
          std::printf("shortfall %s: %zu\n", level == 0 ? "visual" : ("level " + std::to_string(level)).c_str(), n);
        }
      }
    } else if (*gate) {
      const auto pairs = load_pairs(g_pairs);
      const GateResult r = apply_clarity_gate(pairs, load_ratings(g_ratings), g_threshold);
      save_pairs(output(g_out), r.kept);
      snapshot(parent_of(g_out), "gate");
      std::printf("kept %zu of %zu pairs (retention %.4f)\n", r.kept.size(), pairs.size(), r.retention);
    } else if (*split) {
      Rng rng(derive_seed(g_seed, "split"));
      const DatasetSplits s = split_dataset(load_pairs(sp_pairs), sp_train, sp_dev, rng);
      fs::create_directories(sp_dir);
      save_pairs(sp_dir / "train.jsonl", s.train);
      save_pairs(sp_dir / "dev.jsonl", s.dev);
      save_pairs(sp_dir / "test.jsonl", s.test);
      snapshot(sp_dir, "split");
      std::printf("classes %zu/%zu/%zu, pairs %zu/%zu/%zu\n", s.train_classes.size(), s.dev_classes.size(),
                  s.test_classes.size(), s.train.size(), s.dev.size(), s.test.size());
    } else if (*annotate) {
      const auto images = load_images(an_images);
      const auto pairs = load_pairs(an_pairs);
      std::vector<Paragraph> out;
      for (const auto& pair : pairs) {
        const std::string text =
            synthetic_caption(attributes_of(images, pair.i1), attributes_of(images, pair.i2));
        for (std::size_t r = 0; r < an_raters; ++r) {
          out.push_back(make_paragraph(pair.pair_id, "r" + std::to_string(r), text));
        }
      }
      save_paragraphs(output(an_out), out);
      if (an_records) save_records(output(*an_records), join_records(pairs, out));
      snapshot(parent_of(an_out), "annotate");
    } else if (*train) {
      const auto records = load_training_records(t_records, t_pairs, t_paragraphs);
      const GridTable grids = index_grids(load_feature_grids(t_grids));
      std::optional<Checkpoint> resume;
      if (t_resume) resume = load_checkpoint(*t_resume);
      std::vector<std::vector<std::string>> texts;
      for (const auto& r : records)
        for (const auto& p : r.references) texts.push_back(p.tokens);
      const Vocabulary vocab =
          resume ? Vocabulary(resume->vocabulary) : Vocabulary::build(texts, t_min_freq);
      const auto examples = make_examples(records, grids, vocab);
      std::vector<Example> dev;
      if (t_dev) dev = make_examples(load_records(*t_dev), grids, vocab);

      t_model.vocab_size = vocab.size();
      t_model.d = grids.empty() ? t_model.d : grids.begin()->second.d;
      t_model.f = grids.empty() ? t_model.f : grids.begin()->second.f;
      ModelConfig mc = resume ? resume->config : model_config(t_model, t_joint, t_comparative);
      t_cfg.seed = g_seed;
      t_cfg.decay_interval = t_interval > 0 ? t_interval : scaled_decay_interval(t_cfg.steps);
      t_cfg.clip_mode = t_clip_mode == "value" ? ClipMode::value : ClipMode::global_norm;
      t_cfg.validate();

      Model model(mc, g_seed);
      OptimizerState state;
      if (resume) state = restore_training(model, *resume);
      fs::create_directories(t_dir);
      snapshot(t_dir, "train");
      FitOptions fo;
      fo.log_path = t_dir / "train_log.jsonl";
      fo.checkpoint_path = t_dir / "model.ckpt";
      fo.checkpoint_every = t_checkpoint_every;
      fo.vocabulary = &vocab;
      fo.dev = dev;
      std::printf("%zu examples, vocabulary %zu, %zu parameters\n", examples.size(), vocab.size(),
                  model.params().scalar_count());
      const auto trace = fit(model, examples, t_cfg, state, fo);
      if (!trace.empty()) {
        std::printf("step %llu loss %.6f (%.1f s)\n", static_cast<unsigned long long>(trace.back().step),
                    trace.back().loss, trace.back().wall_ms / 1000.0);
      }
    } else if (*generate_cmd) {
      const Checkpoint ck = load_checkpoint(ge_ckpt);
      const Vocabulary vocab(ck.vocabulary);
      Model model = model_from_checkpoint(ck);
      const GridTable grids = index_grids(load_feature_grids(ge_grids));
      ge_opts.mode = parse_mode(ge_mode);
      std::vector<Prediction> preds;
      for (const auto& pair : load_pairs(ge_pairs)) {
        auto g1 = grids.find(pair.i1);
        auto g2 = grids.find(pair.i2);
        if (g1 == grids.end() || g2 == grids.end()) {
          throw std::invalid_argument("pair '" + pair.pair_id + "' has an image without a feature grid");
        }
        Rng rng(derive_seed(g_seed, "generate:" + pair.pair_id));
        const Hypothesis h = generate(model, g1->second, g2->second, ge_opts, rng);
        preds.push_back({pair.pair_id, vocab.detokenize(h.tokens)});
      }
      save_predictions(output(ge_out), preds);
      snapshot(parent_of(ge_out), "generate");
    } else if (*evaluate_cmd) {
      const auto refs = load_records(ev_refs);
      Json rows = Json::array();
      for (const std::string& spec : ev_preds) {
        const auto eq = spec.find('=');
        const std::string name = eq == std::string::npos ? fs::path(spec).stem().string() : spec.substr(0, eq);
        const fs::path path = eq == std::string::npos ? fs::path(spec) : fs::path(spec.substr(eq + 1));
        std::map<std::string, std::string> texts;
        for (const auto& p : load_predictions(path)) texts[p.pair_id] = p.text;
        const auto inst = instances_for(refs, texts, path.string());
        Json row = metric_row(name, inst);
        if (ev_per_instance) row["instances"] = evaluate(inst).to_json(true)["instances"];
        rows.push_back(row);
      }
      if (ev_train) {
        const auto train_records = load_records(*ev_train);
        std::map<std::string, std::string> freq, text_only, neighbor;
        const MostFrequentBaseline mf(train_records);
        const TextOnlyBaseline to(train_records, derive_seed(g_seed, "text-only"));
        std::optional<GridTable> grids;
        std::optional<NearestNeighborBaseline> nn;
        if (ev_grids) {
          grids = index_grids(load_feature_grids(*ev_grids));
          nn.emplace(train_records, *grids, derive_seed(g_seed, "nearest-neighbor"));
        }
        for (const auto& r : refs) {
          freq[r.pair.pair_id] = mf.text();
          text_only[r.pair.pair_id] = to.generate(r.pair.pair_id);
          if (nn) {
            neighbor[r.pair.pair_id] = nn->generate(r.pair.pair_id, grids->at(r.pair.i1), grids->at(r.pair.i2));
          }
        }
        rows.push_back(metric_row("most-frequent", instances_for(refs, freq, "most-frequent")));
        rows.push_back(metric_row("text-only", instances_for(refs, text_only, "text-only")));
        if (nn) rows.push_back(metric_row("nearest-neighbor", instances_for(refs, neighbor, "nearest-neighbor")));
      }
      Json report{{"split", ev_split}, {"columns", {"bleu4", "rougeL", "ciderD"}}, {"rows", rows}};
      if (ev_runs > 0) {
        std::vector<EvalInstance> inst;
        for (const auto& r : refs) {
          EvalInstance e{r.pair.pair_id, {}, {}};
          for (const auto& p : r.references) e.references.push_back(p.tokens);
          inst.push_back(std::move(e));
        }
        Json human{{"name", "human"}, {"runs", ev_runs}};
        for (Metric m : {Metric::bleu4, Metric::rouge_l, Metric::cider_d}) {
          const BaselineStats s = human_baseline(inst, m, ev_runs, g_seed);
          human[metric_name(m)] = {{"mean", s.mean}, {"stddev", s.stddev}};
        }
        report["human"] = human;
      }
      write_json(output(ev_out), report);
      snapshot(parent_of(ev_out), "evaluate");
      std::cout << report.dump(2) << '\n';
    } else if (*judge_auto) {
      const auto images = load_images(ja_images);
      std::map<std::string, std::string> texts;
      for (const auto& p : load_predictions(ja_preds)) texts[p.pair_id] = p.text;
      std::vector<Judgment> out;
      for (const auto& pair : load_pairs(ja_pairs)) {
        auto it = texts.find(pair.pair_id);
        if (it == texts.end()) continue;
        const Decision d =
            programmatic_decision(it->second, attributes_of(images, pair.i1), attributes_of(images, pair.i2));
        for (auto& j : programmatic_judgments(pair.pair_id, d, ja_raters)) out.push_back(std::move(j));
      }
      save_judgments(output(ja_out), out);
      snapshot(parent_of(ja_out), "judge-auto");
    } else if (*judge_score) {
      std::map<std::string, std::string> categories;
      for (const auto& p : load_pairs(js_pairs)) categories[p.pair_id] = category_of(p);
      const auto items = judge_items(load_judgments(js_judgments), categories, js_quorum);
      Json report{{"columns", Json::array()}, {"rows", {judge_report_row(js_name, items)}}};
      for (auto c : kJudgeCategories) report["columns"].push_back(std::string(c));
      write_json(output(js_out), report);
      snapshot(parent_of(js_out), "judge-score");
      std::cout << report.dump(2) << '\n';
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
