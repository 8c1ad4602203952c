#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ovml/config.hpp"
#include "ovml/gradcheck.hpp"
#include "ovml/metrics.hpp"
#include "ovml/pipeline.hpp"
#include "ovml/trainer.hpp"
#include "ovml/vocab_db.hpp"

#ifndef OVML_SOURCE_HASH
#define OVML_SOURCE_HASH "unknown"
#endif

namespace {

using namespace ovml;
namespace fs = std::filesystem;

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 0;

    RunConfig load() const {
        RunConfig cfg = config_path.empty() ? RunConfig::desk_preset()
                                            : load_run_config(config_path);
        cfg.data.seed = seed;
        cfg.train.seed = seed;
        cfg.model.init_seed = seed;
        return cfg;
    }
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "Run configuration JSON");
    cmd->add_option("--seed", args.seed, "Run seed");
    cmd->add_option("--out", args.out_dir, "Output directory");
}

DatasetManifest load_or_generate(const RunConfig& cfg, const std::string& data_dir) {
    if (!data_dir.empty()) return load_manifest(data_dir);
    return generate_synthetic_dataset(cfg.data);
}

std::vector<std::string> load_templates(const RunConfig& cfg) {
    if (cfg.templates_file.empty()) return default_prompt_templates();
    std::ifstream in(cfg.templates_file);
    if (!in) throw std::runtime_error("cannot open templates file: " + cfg.templates_file);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(line);
    if (out.empty()) throw std::runtime_error("templates file is empty: " + cfg.templates_file);
    return out;
}

std::unique_ptr<Model<float>> make_model(const RunConfig& cfg, const Tokenizer& tok) {
    ModelConfig mc = cfg.model;
    mc.prompt_templates = load_templates(cfg);
    return std::make_unique<Model<float>>(mc, tok);
}

int cmd_gen_data(const CommonArgs& common) {
    RunConfig cfg = common.load();
    auto manifest = generate_synthetic_dataset(cfg.data);
    save_manifest(manifest, common.out_dir);
    build_tokenizer(manifest).save((fs::path(common.out_dir) / "tokenizer.txt").string());
    write_run_record(common.out_dir, "gen-data", cfg, common.seed, OVML_SOURCE_HASH);
    std::cout << "wrote dataset with " << manifest.videos.size() << " videos, "
              << manifest.vocabulary.size() << " train labels to " << common.out_dir << "\n";
    return 0;
}

int cmd_train(const CommonArgs& common, const std::string& data_dir) {
    RunConfig cfg = common.load();
    auto manifest = load_or_generate(cfg, data_dir);
    Tokenizer tok = build_tokenizer(manifest);
    auto model = make_model(cfg, tok);

    fs::create_directories(common.out_dir);
    tok.save((fs::path(common.out_dir) / "tokenizer.txt").string());
    write_run_record(common.out_dir, "train", cfg, common.seed, OVML_SOURCE_HASH);

    auto result = train_loop(*model, manifest, cfg.train, common.out_dir, {"val"});
    if (result.nan_abort) {
        std::cerr << "aborted: non-finite loss at step " << result.abort_step
                  << "; last good checkpoint: "
                  << (result.last_good_checkpoint.empty() ? "(none)"
                                                          : result.last_good_checkpoint)
                  << "\n";
        return 1;
    }
    std::cout << "trained " << result.losses.size() << " steps; final loss "
              << (result.losses.empty() ? 0.0 : result.losses.back()) << "\n";
    for (const auto& rec : result.evals) {
        std::cout << "eval step " << rec.step;
        for (const auto& [k, v] : rec.aupr) std::cout << " aupr_" << k << "=" << v;
        for (const auto& [k, v] : rec.peak_f1) std::cout << " peak_f1_" << k << "=" << v;
        std::cout << "\n";
    }
    std::cout << "final checkpoint: " << result.final_checkpoint << "\n";
    return 0;
}

int cmd_expand_vocab(const CommonArgs& common, const std::string& db_path,
                     const std::string& labels_file, const std::string& checkpoint,
                     const std::string& data_dir) {
    RunConfig cfg = common.load();
    auto manifest = load_or_generate(cfg, data_dir);
    Tokenizer tok = build_tokenizer(manifest);
    auto model = make_model(cfg, tok);
    if (!checkpoint.empty()) model->load(checkpoint);

    std::vector<std::string> labels;
    {
        std::ifstream in(labels_file);
        if (!in) throw std::runtime_error("cannot open labels file: " + labels_file);
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) labels.push_back(line);
    }
    VocabularyDB db;
    if (fs::exists(db_path)) db = VocabularyDB::load(db_path);
    auto expanded = expand_vocabulary(db, labels, *model);
    expanded.save(db_path);
    write_run_record(common.out_dir, "expand-vocab", cfg, common.seed, OVML_SOURCE_HASH);
    std::cout << "vocabulary db now holds " << expanded.size() << " labels ("
              << (expanded.size() - db.size()) << " added)\n";
    return 0;
}

int cmd_infer(const CommonArgs& common, const std::string& db_path, const std::string& video_id,
              std::optional<double> threshold, const std::string& checkpoint,
              const std::string& data_dir) {
    RunConfig cfg = common.load();
    auto manifest = load_or_generate(cfg, data_dir);
    Tokenizer tok = build_tokenizer(manifest);
    auto model = make_model(cfg, tok);
    if (!checkpoint.empty()) model->load(checkpoint);

    auto db = VocabularyDB::load(db_path);
    auto res = infer(db, *model, manifest, video_id, threshold);
    write_run_record(common.out_dir, "infer", cfg, common.seed, OVML_SOURCE_HASH);
    for (std::size_t i = 0; i < res.labels.size(); ++i)
        std::cout << res.labels[i] << "\t" << res.scores[i] << "\n";
    if (threshold) {
        std::cout << "predicted:";
        for (const auto& l : res.predicted) std::cout << " [" << l << "]";
        std::cout << "\n";
    }
    return 0;
}

ScoredPairSet score_with_db(Model<float>& model, const DatasetManifest& manifest,
                            const std::vector<const VideoRecord*>& videos,
                            const VocabularyDB& db, const std::string& name) {
    ScoredPairSet set;
    set.dataset = name;
    for (const auto* v : videos) {
        auto res = infer_frames(db, model, video_frames<float>(manifest, *v), v->id);
        std::set<std::string> truth(v->labels.begin(), v->labels.end());
        for (std::size_t i = 0; i < res.labels.size(); ++i)
            set.records.push_back(
                {v->id, res.labels[i], res.scores[i], truth.count(res.labels[i]) ? 1 : 0});
    }
    return set;
}

int cmd_eval(const CommonArgs& common, const std::string& pairs_file,
             const std::string& checkpoint, const std::string& data_dir,
             const std::string& split, const std::string& db_path) {
    RunConfig cfg = common.load();
    std::vector<DatasetReport> reports;
    if (!pairs_file.empty()) {
        auto pairs = load_scored_pairs(pairs_file);
        reports.push_back(dataset_report(pairs));
    } else {
        auto manifest = load_or_generate(cfg, data_dir);
        Tokenizer tok = build_tokenizer(manifest);
        auto model = make_model(cfg, tok);
        if (!checkpoint.empty()) model->load(checkpoint);
        auto videos = manifest.split(split);
        if (videos.empty()) throw std::runtime_error("empty split: " + split);
        const auto& vocab =
            split == "test_open" ? manifest.open_vocabulary : manifest.vocabulary;
        ScoredPairSet pairs;
        if (!db_path.empty()) {
            auto db = VocabularyDB::load(db_path);
            pairs = score_with_db(*model, manifest, videos, db, split);
        } else {
            pairs = score_split(*model, manifest, videos, vocab, split);
        }
        fs::create_directories(common.out_dir);
        save_scored_pairs(pairs, (fs::path(common.out_dir) / (split + "_pairs.jsonl")).string());
        reports.push_back(dataset_report(pairs));
    }
    emit_report(reports, nullptr, common.out_dir);
    write_run_record(common.out_dir, "eval", cfg, common.seed, OVML_SOURCE_HASH);
    for (const auto& r : reports)
        std::cout << r.dataset << " aupr=" << r.aupr << " peak_f1=" << r.peak_f1
                  << " peak_threshold=" << r.peak_threshold << "\n";
    return 0;
}

int cmd_calibrate(const CommonArgs& common, const std::vector<std::string>& pairs_files,
                  const std::vector<std::string>& holdout_files) {
    if (pairs_files.empty()) throw std::runtime_error("calibrate needs at least one --pairs file");
    RunConfig cfg = common.load();
    std::vector<ScoredPairSet> val_sets;
    std::vector<DatasetReport> reports;
    for (const auto& f : pairs_files) {
        val_sets.push_back(load_scored_pairs(f));
        reports.push_back(dataset_report(val_sets.back()));
    }
    auto selection = select_threshold_maxmin(val_sets);
    std::cout << "selected threshold " << selection.threshold << " (worst validation F1 "
              << selection.worst_f1 << ")\n";
    for (const auto& f : holdout_files) {
        auto held = load_scored_pairs(f);
        reports.push_back(dataset_report(held));
        const double at = f1_at(held, selection.threshold);
        const double peak = peak_f1(held).f1;
        std::cout << held.dataset << " holdout f1_at_threshold=" << at << " peak_f1=" << peak
                  << " ratio=" << (peak > 0 ? at / peak : 0.0) << "\n";
    }
    emit_report(reports, &selection, common.out_dir);
    write_run_record(common.out_dir, "calibrate", cfg, common.seed, OVML_SOURCE_HASH);
    return 0;
}

int cmd_plot(const CommonArgs& common, const std::vector<std::string>& pairs_files,
             std::optional<double> threshold) {
    if (pairs_files.empty()) throw std::runtime_error("plot needs at least one --pairs file");
    std::vector<DatasetReport> reports;
    for (const auto& f : pairs_files) reports.push_back(dataset_report(load_scored_pairs(f)));
    ThresholdSelection sel;
    if (threshold) sel.threshold = *threshold;
    emit_report(reports, threshold ? &sel : nullptr, common.out_dir);
    write_run_record(common.out_dir, "plot", common.config_path.empty()
                                                 ? RunConfig::desk_preset()
                                                 : load_run_config(common.config_path),
                     common.seed, OVML_SOURCE_HASH);
    std::cout << "wrote " << (fs::path(common.out_dir) / "f1_curves.svg").string() << "\n";
    return 0;
}

int cmd_pipeline(const CommonArgs& common, const std::string& stage, const std::string& data_dir,
                 const std::string& captions_file, const std::string& concepts_file,
                 const std::string& vocab_file, const std::string& assignments_file,
                 const std::string& checkpoint) {
    RunConfig cfg = common.load();
    fs::create_directories(common.out_dir);
    write_run_record(common.out_dir, "pipeline " + stage, cfg, common.seed, OVML_SOURCE_HASH);

    Tokenizer tok;
    std::unique_ptr<Model<float>> model;
    auto make_embedder = [&](const DatasetManifest& manifest) -> std::unique_ptr<TextEmbedder> {
        tok = build_tokenizer(manifest);
        model = make_model(cfg, tok);
        if (!checkpoint.empty()) model->load(checkpoint);
        return std::make_unique<ClipTextEmbedder<float>>(model->text_encoder(), tok);
    };

    if (stage == "captions") {
        auto manifest = load_or_generate(cfg, data_dir);
        std::vector<CaptionRecord> captions;
        for (const auto* v : manifest.split("train"))
            captions.push_back(caption_synthetic_video(manifest, *v));
        stage_io::save_captions(captions, (fs::path(common.out_dir) / "captions.jsonl").string());
        std::cout << "wrote " << captions.size() << " caption records\n";
        return 0;
    }
    if (stage == "extract") {
        auto manifest = load_or_generate(cfg, data_dir);
        std::vector<std::pair<std::string, std::string>> table;
        for (const auto& c : manifest.concepts) table.push_back({c.train_name, c.train_name});
        StubKeywordCompleter extractor(table);
        std::vector<ConceptRecord> concepts;
        int warnings = 0;
        for (const auto& rec : stage_io::load_captions(captions_file))
            concepts.push_back(extract_concepts(rec, extractor, [&](const std::string& w) {
                ++warnings;
                std::cerr << "warning: " << w << "\n";
            }));
        stage_io::save_concepts(concepts, (fs::path(common.out_dir) / "concepts.jsonl").string());
        std::cout << "wrote " << concepts.size() << " concept records (" << warnings
                  << " warnings)\n";
        return 0;
    }
    if (stage == "dedup") {
        auto manifest = load_or_generate(cfg, data_dir);
        auto embedder = make_embedder(manifest);
        std::vector<std::string> all;
        std::map<std::string, long> freq;
        for (const auto& rec : stage_io::load_concepts(concepts_file))
            for (const auto& c : rec.concepts) {
                all.push_back(c);
                freq[c]++;
            }
        if (all.empty()) throw std::runtime_error("no concepts to deduplicate");
        auto [distinct, vectors] = embed_concepts(all, *embedder);
        const int k = cfg.pipeline.kmeans_k > 0
                          ? cfg.pipeline.kmeans_k
                          : std::max<int>(1, (static_cast<int>(distinct.size()) + 2) / 3);
        auto km = kmeans(vectors, std::min<int>(k, static_cast<int>(distinct.size())),
                         common.seed, cfg.pipeline.kmeans_max_iters);
        std::vector<VocabRecord> vocab;
        for (std::size_t i = 0; i < distinct.size(); ++i)
            vocab.push_back({distinct[i], freq[distinct[i]], km.assignment[i]});
        stage_io::save_vocab(vocab, (fs::path(common.out_dir) / "vocab.jsonl").string());
        auto map = dedup_vocabulary(distinct, freq, km.assignment);
        std::ofstream canon((fs::path(common.out_dir) / "canonical_vocab.txt").string(),
                            std::ios::trunc);
        for (const auto& l : map.vocabulary()) canon << l << '\n';
        std::cout << "clustered " << distinct.size() << " concepts into " << map.k
                  << " groups; canonical vocabulary " << map.vocabulary().size() << "\n";
        return 0;
    }
    if (stage == "assign") {
        auto manifest = load_or_generate(cfg, data_dir);
        auto embedder = make_embedder(manifest);
        auto vocab_records = stage_io::load_vocab(vocab_file);
        std::vector<std::string> distinct;
        std::map<std::string, long> freq;
        std::vector<int> assignment;
        for (const auto& r : vocab_records) {
            distinct.push_back(r.label);
            freq[r.label] = r.frequency;
            assignment.push_back(r.cluster);
        }
        auto map = dedup_vocabulary(distinct, freq, assignment);
        std::vector<AssignmentRecord> assigns;
        for (const auto& rec : stage_io::load_captions(captions_file))
            assigns.push_back(assign_labels(rec, map.vocabulary(), *embedder, cfg.pipeline.top_k,
                                            cfg.pipeline.min_sim));
        stage_io::save_assignments(assigns,
                                   (fs::path(common.out_dir) / "assignments.jsonl").string());
        std::cout << "wrote " << assigns.size() << " assignment records\n";
        return 0;
    }
    if (stage == "merge") {
        auto manifest = load_or_generate(cfg, data_dir);
        auto assigns = stage_io::load_assignments(assignments_file);
        auto merged = merge_manifests(manifest, assigns);
        save_manifest(merged, common.out_dir);
        build_tokenizer(merged).save((fs::path(common.out_dir) / "tokenizer.txt").string());
        std::cout << "merged manifest: vocabulary " << manifest.vocabulary.size() << " -> "
                  << merged.vocabulary.size() << "\n";
        return 0;
    }
    throw std::runtime_error("unknown pipeline stage: " + stage);
}

int cmd_gradcheck(const CommonArgs& common) {
    RunConfig cfg = common.load();
    SyntheticDatasetSpec dspec = cfg.data;
    dspec.train_videos = 2;
    dspec.val_videos = 1;
    dspec.test_closed_videos = 1;
    dspec.test_open_videos = 1;
    auto manifest = generate_synthetic_dataset(dspec);
    Tokenizer tok = build_tokenizer(manifest);
    ModelConfig mc = cfg.model;
    mc.prompt_templates = load_templates(cfg);
    mc.temporal.swa.mode = SwaMode::eval_mean;
    Model<double> model(mc, tok);

    const std::string label = manifest.vocabulary[0];
    auto frames = video_frames<double>(manifest, *manifest.split("train")[0]);

    bool all_pass = true;
    auto check = [&](const std::string& name, const std::string& param, auto&& build,
                     double tol) {
        auto loss_fn = [&]() {
            Tape<double> tape;
            return tape.value(build(tape)).at(0, 0);
        };
        auto grad_fn = [&]() {
            Tape<double> tape;
            tape.backward(build(tape));
        };
        model.store().zero_grads();
        auto res = finite_diff_grad_check<double>(
            model.store(), param, loss_fn, grad_fn, 1e-5,
            sample_coords(model.store().get(param).values.numel(), 6,
                          fnv1a64(param) ^ common.seed));
        const bool pass = res.max_rel_error < tol;
        all_pass = all_pass && pass;
        std::cout << "gradcheck " << name << "  max_rel_err=" << res.max_rel_error << "  "
                  << (pass ? "PASS" : "FAIL") << " (tol " << tol << ")\n";
    };

    auto label_loss = [&](Tape<double>& tape) {
        return tape.sum_squares(tape.cell(model.encode_label(tape, label), 0, 1));
    };
    auto video_loss = [&](Tape<double>& tape) {
        Rng rng(0);
        return tape.sum_squares(tape.cell(model.encode_video(tape, frames, false, rng), 0, 1));
    };
    check("prefix_through_encode_label", "label_enc.prefixes", label_loss, 1e-3);
    check("prompt_transformer_weight", "label_enc.pt.block0.attn.wq", label_loss, 1e-3);
    if (cfg.model.temporal.blocks > 0) {
        check("temporal_attention_weight", "temporal.block0.temporal.wq", video_loss, 1e-3);
        check("proj_spatial_weight", "temporal.block0.proj_spatial", video_loss, 1e-3);
    }

    {
        ParameterStore<double> store;
        auto block = TransformerBlockParams<double>::create(store, "blk",
                                                            AttentionSpec(2, 16, false), true,
                                                            common.seed + 1);
        Tensor<double> x = seeded_init<double>({5, 16}, common.seed + 2,
                                               InitScheme::normal_scaled);
        auto build = [&](Tape<double>& tape) {
            return tape.sum_squares(block.forward(tape, tape.constant(x)));
        };
        auto loss_fn = [&]() {
            Tape<double> tape;
            return tape.value(build(tape)).at(0, 0);
        };
        auto grad_fn = [&]() {
            Tape<double> tape;
            tape.backward(build(tape));
        };
        store.zero_grads();
        auto res = finite_diff_grad_check<double>(store, "blk.attn.wq", loss_fn, grad_fn, 1e-5,
                                                  sample_coords(16 * 16, 8, common.seed));
        const bool pass = res.max_rel_error < 1e-6;
        all_pass = all_pass && pass;
        std::cout << "gradcheck attention_block_composite  max_rel_err=" << res.max_rel_error
                  << "  " << (pass ? "PASS" : "FAIL") << " (tol 1e-6)\n";
    }
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"open-vocabulary multi-label video classification toolkit"};
    app.require_subcommand(1);

    CommonArgs common;
    std::string data_dir, db_path, labels_file, checkpoint, video_id, split = "test_closed";
    std::string pairs_file, stage;
    std::string captions_file, concepts_file, vocab_file, assignments_file;
    std::vector<std::string> pairs_files, holdout_files;
    double threshold_value = 0.0;

    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic video-label dataset");
    add_common(gen, common);

    auto* train = app.add_subcommand("train", "Train a model");
    add_common(train, common);
    train->add_option("--data", data_dir, "Dataset directory from gen-data");

    auto* expand = app.add_subcommand("expand-vocab", "Add labels to a vocabulary database");
    add_common(expand, common);
    expand->add_option("--db", db_path, "Vocabulary database path")->required();
    expand->add_option("--labels", labels_file, "Labels file, one per line")->required();
    expand->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
    expand->add_option("--data", data_dir, "Dataset directory (tokenizer source)");

    auto* inf = app.add_subcommand("infer", "Score one video against the vocabulary database");
    add_common(inf, common);
    inf->add_option("--db", db_path, "Vocabulary database path")->required();
    inf->add_option("--video", video_id, "Video id from the manifest")->required();
    auto* thr_opt = inf->add_option("--threshold", threshold_value, "Decision threshold");
    inf->add_option("--checkpoint", checkpoint, "Model checkpoint");
    inf->add_option("--data", data_dir, "Dataset directory");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint or a scored-pairs file");
    add_common(ev, common);
    ev->add_option("--pairs", pairs_file, "Scored pairs JSONL (skips model evaluation)");
    ev->add_option("--checkpoint", checkpoint, "Model checkpoint");
    ev->add_option("--data", data_dir, "Dataset directory");
    ev->add_option("--split", split, "Dataset split to evaluate");
    ev->add_option("--db", db_path, "Score against this vocabulary database");

    auto* cal = app.add_subcommand("calibrate", "Max-min threshold selection across datasets");
    add_common(cal, common);
    cal->add_option("--pairs", pairs_files, "Validation scored-pairs files")->required();
    cal->add_option("--holdout", holdout_files, "Held-out scored-pairs files");

    auto* plot = app.add_subcommand("plot", "Render F1-vs-threshold curves");
    add_common(plot, common);
    plot->add_option("--pairs", pairs_files, "Scored-pairs files")->required();
    auto* plot_thr = plot->add_option("--threshold", threshold_value, "Marked threshold");

    auto* pipe = app.add_subcommand("pipeline", "Synthetic label pipeline stages");
    add_common(pipe, common);
    pipe->add_option("stage", stage, "captions|extract|dedup|assign|merge")->required();
    pipe->add_option("--data", data_dir, "Dataset directory");
    pipe->add_option("--captions", captions_file, "Captions stage file");
    pipe->add_option("--concepts", concepts_file, "Concepts stage file");
    pipe->add_option("--vocab", vocab_file, "Vocabulary stage file");
    pipe->add_option("--assignments", assignments_file, "Assignments stage file");
    pipe->add_option("--checkpoint", checkpoint, "Model checkpoint for the text embedder");

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    add_common(gc, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << "\n";
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(common);
        if (train->parsed()) return cmd_train(common, data_dir);
        if (expand->parsed())
            return cmd_expand_vocab(common, db_path, labels_file, checkpoint, data_dir);
        if (inf->parsed())
            return cmd_infer(common, db_path, video_id,
                             thr_opt->count() ? std::optional<double>(threshold_value)
                                              : std::nullopt,
                             checkpoint, data_dir);
        if (ev->parsed())
            return cmd_eval(common, pairs_file, checkpoint, data_dir, split, db_path);
        if (cal->parsed()) return cmd_calibrate(common, pairs_files, holdout_files);
        if (plot->parsed())
            return cmd_plot(common, pairs_files,
                            plot_thr->count() ? std::optional<double>(threshold_value)
                                              : std::nullopt);
        if (pipe->parsed())
            return cmd_pipeline(common, stage, data_dir, captions_file, concepts_file,
                                vocab_file, assignments_file, checkpoint);
        if (gc->parsed()) return cmd_gradcheck(common);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
