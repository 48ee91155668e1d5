// Operator surface for the scene question answering stack: data generation,
// detection pre-training, instruction fine-tuning, evaluation, single-scene
// inference, attention export and the query-count sweep.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sceneqa/bench.hpp"
#include "sceneqa/data/dataset.hpp"
#include "sceneqa/data/scene_gen.hpp"
#include "sceneqa/metrics/metrics.hpp"
#include "sceneqa/model.hpp"
#include "sceneqa/train/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sceneqa;

namespace {

template <class T>
void read_field(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw DataError(std::string("config field '") + key + "': " + e.what());
    }
}

json parse_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
}

void apply_scene_gen_json(const json& j, SceneGenConfig& cfg) {
    read_field(j, "room_half_x", cfg.room_half_x);
    read_field(j, "room_half_y", cfg.room_half_y);
    read_field(j, "min_objects", cfg.min_objects);
    read_field(j, "max_objects", cfg.max_objects);
    read_field(j, "min_half_extent", cfg.min_half_extent);
    read_field(j, "max_half_extent", cfg.max_half_extent);
    read_field(j, "min_height", cfg.min_height);
    read_field(j, "max_height", cfg.max_height);
    read_field(j, "placement_margin", cfg.placement_margin);
    read_field(j, "place_retries", cfg.place_retries);
    read_field(j, "points_per_face", cfg.points_per_face);
    read_field(j, "floor_points", cfg.floor_points);
    read_field(j, "jitter", cfg.jitter);
    read_field(j, "categories", cfg.categories);
    read_field(j, "colors", cfg.color_names);
    read_field(j, "color_rgb", cfg.color_rgb);
    cfg.validate();
}

void apply_model_json(const json& j, ModelConfig& cfg) {
    if (j.contains("encoder")) {
        const json& e = j.at("encoder");
        read_field(e, "n_enc", cfg.encoder.n_enc);
        read_field(e, "n_queries", cfg.encoder.n_queries);
        read_field(e, "width", cfg.encoder.width);
        read_field(e, "enc_layers", cfg.encoder.enc_layers);
        read_field(e, "dec_layers", cfg.encoder.dec_layers);
        read_field(e, "heads", cfg.encoder.heads);
        read_field(e, "radius", cfg.encoder.radius);
        read_field(e, "max_neighbors", cfg.encoder.max_neighbors);
        read_field(e, "use_colors", cfg.encoder.use_colors);
    }
    if (j.contains("compressor")) {
        const json& c = j.at("compressor");
        read_field(c, "n_q", cfg.compressor.n_q);
        read_field(c, "blocks", cfg.compressor.blocks);
        read_field(c, "c_q", cfg.compressor.c_q);
        read_field(c, "c_t", cfg.compressor.c_t);
        read_field(c, "c", cfg.compressor.c);
        read_field(c, "c_lm", cfg.compressor.c_lm);
        read_field(c, "heads", cfg.compressor.heads);
        read_field(c, "query_fusion", cfg.compressor.query_fusion);
    }
    if (j.contains("lm")) {
        const json& l = j.at("lm");
        read_field(l, "c_lm", cfg.lm.c_lm);
        read_field(l, "layers", cfg.lm.layers);
        read_field(l, "heads", cfg.lm.heads);
        read_field(l, "max_len", cfg.lm.max_len);
        read_field(l, "max_positions", cfg.lm.max_positions);
    }
    read_field(j, "cloud_budget", cfg.cloud_budget);
}

json model_to_json(const ModelConfig& cfg) {
    return {{"encoder",
             {{"n_enc", cfg.encoder.n_enc},
              {"n_queries", cfg.encoder.n_queries},
              {"width", cfg.encoder.width},
              {"enc_layers", cfg.encoder.enc_layers},
              {"dec_layers", cfg.encoder.dec_layers},
              {"heads", cfg.encoder.heads},
              {"radius", cfg.encoder.radius},
              {"max_neighbors", cfg.encoder.max_neighbors},
              {"use_colors", cfg.encoder.use_colors}}},
            {"compressor",
             {{"n_q", cfg.compressor.n_q},
              {"blocks", cfg.compressor.blocks},
              {"c_q", cfg.compressor.c_q},
              {"c_t", cfg.compressor.c_t},
              {"c", cfg.compressor.c},
              {"c_lm", cfg.compressor.c_lm},
              {"heads", cfg.compressor.heads},
              {"query_fusion", cfg.compressor.query_fusion}}},
            {"lm",
             {{"vocab", cfg.lm.vocab},
              {"c_lm", cfg.lm.c_lm},
              {"layers", cfg.lm.layers},
              {"heads", cfg.lm.heads},
              {"max_len", cfg.lm.max_len},
              {"max_positions", cfg.lm.max_positions}}},
            {"cloud_budget", cfg.cloud_budget}};
}

std::string resolve_dataset_root(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("SCENEQA_DATA_ROOT"); env && *env) return env;
    throw ArgumentError("no dataset root: pass --dataset or set SCENEQA_DATA_ROOT");
}

Vocabulary corpus_vocabulary(const DatasetManifest& m) {
    Vocabulary v;
    for (const auto& s : m.samples)
        for (const auto& item : s.qa) {
            for (const auto& t : tokenize(item.instruction)) v.add(t);
            for (const auto& a : item.answers)
                for (const auto& t : tokenize(a)) v.add(t);
        }
    return v;
}

// Vocabulary resolution order: explicit flag, file beside the checkpoint (the
// one training saw), dataset root, else built from the manifest corpus.
Vocabulary resolve_vocab(const std::string& flag, const std::string& checkpoint,
                         const std::string& root, const DatasetManifest* manifest) {
    if (!flag.empty()) return Vocabulary::load(flag);
    if (!checkpoint.empty()) {
        fs::path beside = fs::path(checkpoint).parent_path() / "vocab.txt";
        if (fs::exists(beside)) return Vocabulary::load(beside.string());
    }
    if (!root.empty() && fs::exists(fs::path(root) / "vocab.txt"))
        return Vocabulary::load((fs::path(root) / "vocab.txt").string());
    if (manifest) return corpus_vocabulary(*manifest);
    throw DataError("no vocabulary available; generate data first or pass --vocab");
}

ModelConfig resolve_model_config(const std::string& preset, const std::string& config_flag,
                                 const std::string& checkpoint, int vocab_size) {
    ModelConfig cfg = preset == "desk" ? ModelConfig::desk(vocab_size)
                                       : ModelConfig::tiny(vocab_size);
    std::string path = config_flag;
    if (path.empty() && !checkpoint.empty()) {
        fs::path beside = fs::path(checkpoint).parent_path() / "model_config.json";
        if (fs::exists(beside)) path = beside.string();
    }
    if (!path.empty()) apply_model_json(parse_json_file(path), cfg);
    cfg.lm.vocab = vocab_size;
    cfg.validate();
    return cfg;
}

// Turn a manifest into QA training examples. Responses longer than the
// model's decoding budget are truncated (the count is reported so the
// operator can widen max_len instead if the loss matters).
int make_examples(const DatasetManifest& m, const std::string& root, const ModelConfig& cfg,
                  const Vocabulary& vocab, std::vector<QAExample>& out) {
    int truncated = 0;
    for (const auto& s : m.samples) {
        auto cloud = prepare_cloud(load_sample_cloud(root, s), cfg.encoder.n_enc,
                                   cfg.cloud_budget);
        for (const auto& item : s.qa) {
            QAExample ex;
            ex.cloud = cloud;
            ex.instruction = vocab.encode(item.instruction);
            ex.response = vocab.encode(item.answers.front());
            if (static_cast<int>(ex.response.size()) > cfg.lm.max_len - 1) {
                ex.response.resize(static_cast<std::size_t>(cfg.lm.max_len - 1));
                ++truncated;
            }
            ex.response.push_back(Vocabulary::EOS);
            out.push_back(std::move(ex));
        }
    }
    return truncated;
}

struct EvalSample {
    std::string id;
    std::string question;
    std::vector<std::string> refs;
    std::string tag;
    int scene = 0;  // index into the prepared-cloud list
};

struct EvalData {
    std::vector<PointCloud> clouds;  // prepared, one per scene
    std::vector<EvalSample> samples;
};

EvalData load_eval_data(const DatasetManifest& m, const std::string& root,
                        const ModelConfig& cfg, int limit) {
    EvalData out;
    for (const auto& s : m.samples) {
        bool cloud_loaded = false;
        for (std::size_t k = 0; k < s.qa.size(); ++k) {
            if (limit > 0 && static_cast<int>(out.samples.size()) >= limit) return out;
            if (!cloud_loaded) {
                out.clouds.push_back(prepare_cloud(load_sample_cloud(root, s),
                                                   cfg.encoder.n_enc, cfg.cloud_budget));
                cloud_loaded = true;
            }
            EvalSample e;
            e.id = s.scene_id + "#" + std::to_string(k);
            e.question = s.qa[k].instruction;
            e.refs = s.qa[k].answers;
            e.tag = s.qa[k].tag;
            e.scene = static_cast<int>(out.clouds.size()) - 1;
            out.samples.push_back(std::move(e));
        }
    }
    return out;
}

void print_metric_table(const std::string& label, const MetricReport& r) {
    std::printf("%-16s %7.2f %7.2f %7.2f %7.2f %7s %8.2f %8.2f %7.2f\n", label.c_str(), r.bleu1,
                r.bleu2, r.bleu3, r.bleu4, "n/a", r.rouge, r.cider_score / 10.0, r.em);
}

json report_to_json(const MetricReport& r) {
    return {{"bleu1", r.bleu1},     {"bleu2", r.bleu2},
            {"bleu3", r.bleu3},     {"bleu4", r.bleu4},
            {"meteor", nullptr},    {"rouge_l", r.rouge},
            {"cider", r.cider_score / 10.0}, {"em_at_1", r.em},
            {"empty_hypotheses", r.empty_warning}};
}

// ---- gen-data ----------------------------------------------------------

struct GenDataArgs {
    std::string out;
    std::string config;
    std::uint64_t seed = 42;
    int scenes = 32;
    int val_scenes = 8;
};

int cmd_gen_data(const GenDataArgs& a) {
    SceneGenConfig cfg;
    if (!a.config.empty()) apply_scene_gen_json(parse_json_file(a.config), cfg);
    cfg.validate();
    fs::create_directories(a.out);

    auto train = generate_dataset(a.seed, cfg, a.scenes, "train");
    save_manifest(train, a.out);
    int qa_total = 0;
    for (const auto& s : train.samples) qa_total += static_cast<int>(s.qa.size());

    if (a.val_scenes > 0) {
        auto val = generate_dataset(a.seed + 1, cfg, a.val_scenes, "val");
        save_manifest(val, a.out);
    }

    Vocabulary v;
    for (const auto& w : template_vocabulary(cfg)) v.add(w);
    v.save((fs::path(a.out) / "vocab.txt").string());

    std::printf("wrote %d train scenes (%d qa pairs), %d val scenes to %s\n", a.scenes, qa_total,
                a.val_scenes, a.out.c_str());
    std::printf("generator seed %llu, config hash %s, vocab %d tokens\n",
                static_cast<unsigned long long>(a.seed), train.config_hash.c_str(), v.size());
    for (const auto& w : train.warnings) std::printf("warning: %s\n", w.c_str());
    return 0;
}

// ---- train --------------------------------------------------------------

struct TrainArgs {
    std::string dataset;
    std::string out;
    std::string phase = "finetune";
    std::string preset = "tiny";
    std::string model_config;
    std::string split = "train";
    std::string init_checkpoint;
    std::uint64_t seed = 0;
    int epochs = -1;
    int batch = 8;
    double lr_max = -1.0;
    double lr_min = -1.0;
    int nq = 0;
    int detector_queries = 0;
    bool resume = false;
    bool no_fusion = false;
    bool freeze_lm = false;
    bool freeze_encoder = false;
    bool freeze_compressor = false;
    bool no_clip = false;
};

int cmd_train(const TrainArgs& a) {
    std::string root = resolve_dataset_root(a.dataset);
    auto manifest = load_manifest((fs::path(root) / (a.split + ".jsonl")).string());
    if (manifest.samples.empty()) throw DataError("train: split '" + a.split + "' is empty");

    Vocabulary vocab = resolve_vocab("", "", root, &manifest);
    ModelConfig cfg = resolve_model_config(a.preset, a.model_config, "", vocab.size());
    if (a.nq > 0) cfg.compressor.n_q = a.nq;
    if (a.detector_queries > 0) cfg.encoder.n_queries = a.detector_queries;
    if (a.no_fusion) cfg.compressor.query_fusion = false;

    TrainPlan plan = a.phase == "pretrain" ? TrainPlan::pretrain() : TrainPlan::finetune();
    plan.seed = a.seed;
    plan.batch = a.batch;
    if (a.epochs > 0) plan.epochs = a.epochs;
    if (a.lr_max > 0) plan.lr_max = a.lr_max;
    if (a.lr_min > 0) plan.lr_min = a.lr_min;
    plan.query_fusion = cfg.compressor.query_fusion;
    plan.clip_gradients = !a.no_clip;
    if (a.phase == "pretrain") {
        // Detection pre-training touches only the perception stack; the rest
        // must come out bit-identical (decay would otherwise shrink it).
        plan.lm_frozen = true;
        plan.compressor_trainable = false;
    } else {
        plan.lm_frozen = a.freeze_lm;
        plan.compressor_trainable = !a.freeze_compressor;
    }
    plan.encoder_frozen = a.freeze_encoder;
    cfg.validate();
    plan.validate();

    ParamStore<double> ps;
    Rng rng(plan.seed == 0 ? 1 : plan.seed);
    add_model_params(ps, cfg, rng);
    if (!a.init_checkpoint.empty())
        load_checkpoint(a.init_checkpoint, ps, static_cast<AdamW<double>*>(nullptr));

    int dataset_size = 0;
    BatchLoss<double> loss_fn;
    std::vector<PreparedScene> det_scenes;
    std::vector<QAExample> examples;
    if (a.phase == "pretrain") {
        for (const auto& s : manifest.samples)
            det_scenes.push_back(prepare_scene(load_sample_cloud(root, s), s.boxes,
                                               cfg.encoder.n_enc, cfg.cloud_budget));
        dataset_size = static_cast<int>(det_scenes.size());
        loss_fn = [&](Tape<double>& tape, const std::vector<int>& batch) {
            std::vector<Tensor<double>> losses;
            for (int i : batch)
                losses.push_back(detection_scene_loss(tape, ps, cfg, det_scenes[std::size_t(i)]));
            return mean_all(concat_rows(losses));
        };
    } else {
        int truncated = make_examples(manifest, root, cfg, vocab, examples);
        if (truncated > 0)
            std::printf("warning: %d responses truncated to max response length %d\n", truncated,
                        cfg.lm.max_len);
        dataset_size = static_cast<int>(examples.size());
        loss_fn = [&](Tape<double>& tape, const std::vector<int>& batch) {
            return qa_batch_loss(tape, ps, cfg, examples, batch);
        };
    }

    fs::create_directories(a.out);
    std::ofstream log((fs::path(a.out) / "train.jsonl").string(),
                      a.resume ? std::ios::app : std::ios::trunc);
    TrainOptions opts;
    opts.checkpoint_dir = a.out;
    opts.resume = a.resume;
    opts.log_stream = &log;

    std::printf("%s: %d samples, %d epochs, batch %d, lr %g -> %g, fusion %s\n",
                plan.phase.c_str(), dataset_size, plan.epochs, plan.batch, plan.lr_max,
                plan.lr_min, plan.query_fusion ? "on" : "off");

    auto result = train(ps, plan, dataset_size, loss_fn, opts);

    json plan_json = {{"phase", plan.phase},       {"epochs", plan.epochs},
                      {"batch", plan.batch},       {"lr_max", plan.lr_max},
                      {"lr_min", plan.lr_min},     {"seed", plan.seed},
                      {"query_fusion", plan.query_fusion},
                      {"lm_frozen", plan.lm_frozen},
                      {"encoder_frozen", plan.encoder_frozen},
                      {"compressor_trainable", plan.compressor_trainable},
                      {"clip_gradients", plan.clip_gradients},
                      {"plan_hash", plan_hash(plan)}};
    std::ofstream((fs::path(a.out) / "plan.json").string()) << plan_json.dump(2) << "\n";
    std::ofstream((fs::path(a.out) / "model_config.json").string())
        << model_to_json(cfg).dump(2) << "\n";
    vocab.save((fs::path(a.out) / "vocab.txt").string());

    std::printf("done: %lld steps, final loss %.6f, checkpoint %s\n", result.steps,
                result.last_loss, result.last_checkpoint.c_str());
    for (const auto& w : result.warnings) std::printf("warning: %s\n", w.c_str());
    return 0;
}

// ---- eval ---------------------------------------------------------------

struct EvalArgs {
    std::string dataset;
    std::string checkpoint;
    std::string model_config;
    std::string vocab;
    std::string split = "val";
    std::string out;
    int beam = 0;
    int limit = 0;
};

int cmd_eval(const EvalArgs& a) {
    std::string root = resolve_dataset_root(a.dataset);
    auto manifest = load_manifest((fs::path(root) / (a.split + ".jsonl")).string());
    Vocabulary vocab = resolve_vocab(a.vocab, a.checkpoint, root, &manifest);
    ModelConfig cfg = resolve_model_config("tiny", a.model_config, a.checkpoint, vocab.size());

    ParamStore<double> ps;
    Rng rng(1);
    add_model_params(ps, cfg, rng);
    try {
        load_checkpoint(a.checkpoint, ps, static_cast<AdamW<double>*>(nullptr));
    } catch (const DataError& e) {
        throw DataError(std::string("checkpoint does not match the model config: ") + e.what());
    }

    auto data = load_eval_data(manifest, root, cfg, a.limit);
    if (data.samples.empty()) throw DataError("eval: no samples in split '" + a.split + "'");

    DecodeOptions dec;
    if (a.beam > 0) {
        dec.mode = DecodeMode::Beam;
        dec.beam_width = a.beam;
    }

    std::vector<EvalPair> pairs;
    std::vector<std::string> hyps;
    for (const auto& e : data.samples) {
        auto instruction = vocab.encode(e.question);
        std::vector<double> visual;
        {
            Tape<double> tape;
            auto fwd = scene_forward(tape, ps, cfg, data.clouds[std::size_t(e.scene)],
                                     instruction);
            visual = fwd.compressed.q_final.values();
        }
        auto ids = generate(ps, cfg.lm, cfg.compressor.n_q, visual, instruction, dec);
        hyps.push_back(vocab.decode(ids));
        pairs.push_back(EvalPair::make(e.id, hyps.back(), e.refs));
    }

    auto report = evaluate(pairs);
    std::string head = "split:" + a.split;
    std::printf("%-16s %7s %7s %7s %7s %7s %8s %8s %7s\n", head.c_str(), "BLEU-1", "BLEU-2",
                "BLEU-3", "BLEU-4", "METEOR", "ROUGE-L", "CIDEr", "EM@1");
    print_metric_table("overall", report);

    std::map<std::string, std::vector<EvalPair>> by_tag;
    for (std::size_t i = 0; i < pairs.size(); ++i)
        by_tag[data.samples[i].tag].push_back(pairs[i]);
    std::map<std::string, MetricReport> tag_reports;
    for (const auto& [tag, subset] : by_tag) {
        tag_reports[tag] = evaluate(subset);
        print_metric_table("tag:" + tag, tag_reports[tag]);
    }
    if (report.empty_warning) std::printf("warning: empty hypothesis or corpus encountered\n");

    if (!a.out.empty()) {
        fs::create_directories(a.out);
        json rep = report_to_json(report);
        rep["split"] = a.split;
        rep["samples"] = pairs.size();
        rep["beam"] = a.beam;
        for (const auto& [tag, r] : tag_reports) rep["tags"][tag] = report_to_json(r);
        std::ofstream((fs::path(a.out) / "eval_report.json").string()) << rep.dump(2) << "\n";
        std::ofstream lines((fs::path(a.out) / "eval_samples.jsonl").string());
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            json row = {{"id", data.samples[i].id},
                        {"question", data.samples[i].question},
                        {"hypothesis", hyps[i]},
                        {"references", data.samples[i].refs},
                        {"tag", data.samples[i].tag},
                        {"em_hit", report.per_sample[i].em_hit},
                        {"rouge_l", report.per_sample[i].rouge}};
            lines << row.dump() << "\n";
        }
    }
    return 0;
}

// ---- infer ----------------------------------------------------------------

struct InferArgs {
    std::string cloud;
    std::string question;
    std::string checkpoint;
    std::string model_config;
    std::string vocab;
    int beam = 0;
};

int cmd_infer(const InferArgs& a) {
    Vocabulary vocab = resolve_vocab(a.vocab, a.checkpoint, "", nullptr);
    ModelConfig cfg = resolve_model_config("tiny", a.model_config, a.checkpoint, vocab.size());
    ParamStore<double> ps;
    Rng rng(1);
    add_model_params(ps, cfg, rng);
    load_checkpoint(a.checkpoint, ps, static_cast<AdamW<double>*>(nullptr));

    DecodeOptions dec;
    if (a.beam > 0) {
        dec.mode = DecodeMode::Beam;
        dec.beam_width = a.beam;
    }
    auto res = infer<double>(ps, cfg, vocab, read_point_cloud(a.cloud), a.question, dec);
    std::printf("%s\n", res.answer.c_str());
    return 0;
}

// ---- export-attention -------------------------------------------------

struct ExportArgs {
    std::string dataset;
    std::string scene;
    std::string cloud;
    std::string question;
    std::string checkpoint;
    std::string model_config;
    std::string vocab;
    std::string out;
    int k = 10;
};

int cmd_export_attention(const ExportArgs& a) {
    Vocabulary vocab = resolve_vocab(a.vocab, a.checkpoint, a.dataset, nullptr);
    ModelConfig cfg = resolve_model_config("tiny", a.model_config, a.checkpoint, vocab.size());
    if (a.k < 1 || a.k > cfg.compressor.n_q)
        throw ArgumentError("export-attention: k must lie in [1, " +
                            std::to_string(cfg.compressor.n_q) + "]");

    PointCloud raw;
    if (!a.cloud.empty()) {
        raw = read_point_cloud(a.cloud);
    } else {
        std::string root = resolve_dataset_root(a.dataset);
        bool found = false;
        for (const char* split : {"train", "val", "ingested"}) {
            fs::path mp = fs::path(root) / (std::string(split) + ".jsonl");
            if (!fs::exists(mp)) continue;
            auto m = load_manifest(mp.string());
            for (const auto& s : m.samples)
                if (s.scene_id == a.scene) {
                    raw = load_sample_cloud(root, s);
                    found = true;
                    break;
                }
            if (found) break;
        }
        if (!found) throw DataError("export-attention: scene '" + a.scene + "' not found");
    }

    ParamStore<double> ps;
    Rng rng(1);
    add_model_params(ps, cfg, rng);
    load_checkpoint(a.checkpoint, ps, static_cast<AdamW<double>*>(nullptr));

    PointCloud prepared = prepare_cloud(raw, cfg.encoder.n_enc, cfg.cloud_budget);
    auto instruction = vocab.encode(a.question);
    EncodeTrace trace;
    AttentionCapture<double> capture;
    Tape<double> tape;
    auto fwd = scene_forward(tape, ps, cfg, prepared, instruction, &trace, &capture);

    // Compressor query rows are ranked by the objectness of the detector
    // query each row was fused from; the top-k rows are therefore rows 0..k-1
    // of the capture, carrying the k most confident objects.
    auto ranks = top_k_indices(fwd.spatial.p_obj.values(), cfg.compressor.n_q);
    const auto& p_obj = fwd.spatial.p_obj.values();
    const int n_points = static_cast<int>(prepared.size());
    const int n_enc = cfg.encoder.n_enc;
    const int n_det = cfg.encoder.n_queries;

    fs::create_directories(a.out);
    std::ofstream lines((fs::path(a.out) / "attention.jsonl").string());
    std::vector<double> composite(static_cast<std::size_t>(n_points), 0.0);

    for (int rank = 0; rank < a.k; ++rank) {
        std::vector<double> score(static_cast<std::size_t>(n_points), 0.0);
        for (int key = 0; key < capture.key_rows; ++key) {
            double w = capture.prob(rank, key);
            if (key < n_enc) {
                const auto& members = trace.members[std::size_t(key)];
                if (members.empty()) continue;
                double share = w / static_cast<double>(members.size());
                for (int p : members) score[std::size_t(p)] += share;
            } else {
                int d = key - n_enc;
                if (d >= n_det) continue;
                AxisAlignedBox box;
                for (int axis = 0; axis < 3; ++axis) {
                    box.center[std::size_t(axis)] = fwd.spatial.centers.at(d, axis);
                    box.half_extent[std::size_t(axis)] = fwd.spatial.half_extents.at(d, axis);
                }
                std::vector<int> inside;
                for (int p = 0; p < n_points; ++p)
                    if (box.contains(prepared.points[std::size_t(p)])) inside.push_back(p);
                if (inside.empty()) continue;
                double share = w / static_cast<double>(inside.size());
                for (int p : inside) score[std::size_t(p)] += share;
            }
        }
        double lo = *std::min_element(score.begin(), score.end());
        double hi = *std::max_element(score.begin(), score.end());
        double span = hi - lo;
        for (auto& v : score) v = span > 0 ? (v - lo) / span : 0.0;
        for (int p = 0; p < n_points; ++p)
            composite[std::size_t(p)] = std::max(composite[std::size_t(p)], score[std::size_t(p)]);

        PointCloud colored;
        colored.points = prepared.points;
        for (int p = 0; p < n_points; ++p)
            colored.colors.push_back({score[std::size_t(p)], 0.0, 0.0});
        char name[32];
        std::snprintf(name, sizeof name, "query_%02d.ply", rank);
        write_ply((fs::path(a.out) / name).string(), colored);

        json row = {{"rank", rank},
                    {"detector_query", ranks[std::size_t(rank)]},
                    {"objectness", p_obj[std::size_t(ranks[std::size_t(rank)])]},
                    {"file", name}};
        lines << row.dump() << "\n";
    }

    PointCloud comp;
    comp.points = prepared.points;
    for (int p = 0; p < n_points; ++p) comp.colors.push_back({composite[std::size_t(p)], 0.0, 0.0});
    write_ply((fs::path(a.out) / "composite.ply").string(), comp);
    std::printf("wrote %d query maps + composite (%d points each) to %s\n", a.k, n_points,
                a.out.c_str());
    return 0;
}

// ---- query-sweep --------------------------------------------------------

struct SweepArgs {
    std::string dataset;
    std::string out;
    std::string preset = "tiny";
    std::string model_config;
    std::vector<int> nq = {4, 32, 128};
    std::string split = "val";
    int detector_queries = 0;
    int epochs = 1;
    int batch = 8;
    int limit = 16;
    std::uint64_t seed = 0;
    bool no_fusion = false;
};

int cmd_query_sweep(const SweepArgs& a) {
    std::string root = resolve_dataset_root(a.dataset);
    auto train_manifest = load_manifest((fs::path(root) / "train.jsonl").string());
    auto eval_manifest = load_manifest((fs::path(root) / (a.split + ".jsonl")).string());
    Vocabulary vocab = resolve_vocab("", "", root, &train_manifest);

    // All plan-time validation happens before any training work starts.
    std::vector<ModelConfig> configs;
    for (int nq : a.nq) {
        ModelConfig cfg = resolve_model_config(a.preset, a.model_config, "", vocab.size());
        cfg.compressor.n_q = nq;
        if (a.detector_queries > 0) cfg.encoder.n_queries = a.detector_queries;
        if (a.no_fusion) cfg.compressor.query_fusion = false;
        int need = cfg.lm.max_positions;
        int want = nq + 24 + 1 + cfg.lm.max_len;
        if (want > need) cfg.lm.max_positions = want;
        cfg.validate();
        configs.push_back(cfg);
    }

    fs::create_directories(a.out);
    std::ofstream lines((fs::path(a.out) / "sweep.jsonl").string());
    std::printf("%6s %7s %8s %8s %7s %10s\n", "N_q", "BLEU-1", "ROUGE-L", "CIDEr", "EM@1",
                "tokens/s");

    double prev_tps = -1.0;
    bool monotone = true;
    for (std::size_t ci = 0; ci < configs.size(); ++ci) {
        const ModelConfig& cfg = configs[ci];
        ParamStore<double> ps;
        Rng rng(a.seed == 0 ? 1 : a.seed);
        add_model_params(ps, cfg, rng);

        std::vector<QAExample> examples;
        make_examples(train_manifest, root, cfg, vocab, examples);
        if (a.epochs > 0) {
            TrainPlan plan = TrainPlan::finetune();
            plan.epochs = a.epochs;
            plan.batch = a.batch;
            plan.seed = a.seed;
            plan.query_fusion = cfg.compressor.query_fusion;
            train<double>(ps, plan, static_cast<int>(examples.size()),
                          [&](Tape<double>& tape, const std::vector<int>& batch) {
                              return qa_batch_loss(tape, ps, cfg, examples, batch);
                          });
        }

        auto data = load_eval_data(eval_manifest, root, cfg, a.limit);
        std::vector<EvalPair> pairs;
        for (const auto& e : data.samples) {
            auto instruction = vocab.encode(e.question);
            std::vector<double> visual;
            {
                Tape<double> tape;
                auto fwd = scene_forward(tape, ps, cfg, data.clouds[std::size_t(e.scene)],
                                         instruction);
                visual = fwd.compressed.q_final.values();
            }
            auto ids = generate(ps, cfg.lm, cfg.compressor.n_q, visual, instruction);
            pairs.push_back(EvalPair::make(e.id, vocab.decode(ids), e.refs));
        }
        auto report = evaluate(pairs);

        std::vector<double> visual;
        {
            Tape<double> tape;
            auto instruction = vocab.encode(data.samples.front().question);
            auto fwd = scene_forward(tape, ps, cfg, data.clouds[0], instruction);
            visual = fwd.compressed.q_final.values();
        }
        auto tput = decode_throughput(ps, cfg, visual,
                                      vocab.encode(data.samples.front().question));

        std::printf("%6d %7.2f %8.2f %8.2f %7.2f %10.1f\n", cfg.compressor.n_q, report.bleu1,
                    report.rouge, report.cider_score / 10.0, report.em, tput.tokens_per_s);
        json row = report_to_json(report);
        row["n_q"] = cfg.compressor.n_q;
        row["tokens_per_s"] = tput.tokens_per_s;
        row["decode_tokens"] = tput.tokens;
        lines << row.dump() << "\n";

        if (prev_tps >= 0 && tput.tokens_per_s > prev_tps) monotone = false;
        prev_tps = tput.tokens_per_s;
    }
    std::printf("throughput trend: %s with increasing N_q\n",
                monotone ? "monotone decreasing" : "not monotone on this run");
    return 0;
}

// ---- token-stats / ingest ------------------------------------------------

int cmd_token_stats(const std::string& dataset, const std::string& split,
                    const std::string& out) {
    std::string root = resolve_dataset_root(dataset);
    auto manifest = load_manifest((fs::path(root) / (split + ".jsonl")).string());
    auto st = token_stats(manifest);
    std::printf("%d qa pairs in split '%s'\n", st.total, split.c_str());
    std::printf("questions under 16 tokens: %.1f%%\n", 100.0 * st.frac_questions_under_16);
    std::printf("answers over 7 tokens:     %.1f%%\n", 100.0 * st.frac_answers_over_7);
    std::printf("task tags:");
    for (const auto& [tag, n] : st.tag_counts) std::printf("  %s=%d", tag.c_str(), n);
    std::printf("\n");
    auto hist_line = [](const char* label, const std::vector<int>& hist) {
        std::printf("%s:", label);
        for (std::size_t i = 0; i < hist.size(); ++i)
            if (hist[i] > 0) std::printf(" %zu:%d", i, hist[i]);
        std::printf("\n");
    };
    hist_line("question length histogram", st.question_hist);
    hist_line("answer length histogram", st.answer_hist);
    if (!out.empty()) {
        fs::create_directories(fs::path(out).parent_path().empty() ? "." : fs::path(out).parent_path().string());
        std::ofstream os(out);
        json j = {{"total", st.total},
                  {"frac_questions_under_16", st.frac_questions_under_16},
                  {"frac_answers_over_7", st.frac_answers_over_7},
                  {"tag_counts", st.tag_counts},
                  {"question_hist", st.question_hist},
                  {"answer_hist", st.answer_hist}};
        os << j.dump() << "\n";
    }
    return 0;
}

struct IngestArgs {
    std::string questions;
    std::string annotations;
    std::string clouds;
    std::string out;
};

int cmd_ingest(const IngestArgs& a) {
    auto m = ingest_scanqa(a.questions, a.annotations, a.clouds);
    fs::create_directories(fs::path(a.out) / "clouds");
    for (auto& s : m.samples) {
        fs::path src = fs::path(a.clouds) / s.cloud_path;
        fs::path rel = fs::path("clouds") / s.cloud_path;
        fs::copy_file(src, fs::path(a.out) / rel, fs::copy_options::overwrite_existing);
        s.cloud_path = rel.string();
    }
    save_manifest(m, a.out);
    Vocabulary v = corpus_vocabulary(m);
    v.save((fs::path(a.out) / "vocab.txt").string());
    int qa = 0;
    for (const auto& s : m.samples) qa += static_cast<int>(s.qa.size());
    std::printf("ingested %zu scenes, %d qa pairs, vocab %d tokens\n", m.samples.size(), qa,
                v.size());
    for (const auto& w : m.warnings) std::printf("warning: %s\n", w.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale 3D scene question answering"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* cmd_gen = app.add_subcommand("gen-data", "Generate a synthetic scene/QA dataset");
    cmd_gen->add_option("--out", gen.out, "output dataset root")->required();
    cmd_gen->add_option("--seed", gen.seed, "generator seed");
    cmd_gen->add_option("--scenes", gen.scenes, "training scene count");
    cmd_gen->add_option("--val-scenes", gen.val_scenes, "validation scene count");
    cmd_gen->add_option("--config", gen.config, "scene generator config JSON");

    TrainArgs tr;
    auto* cmd_tr = app.add_subcommand("train", "Train a phase (pretrain or finetune)");
    cmd_tr->add_option("--dataset", tr.dataset, "dataset root (or SCENEQA_DATA_ROOT)");
    cmd_tr->add_option("--out", tr.out, "run directory for checkpoints and logs")->required();
    cmd_tr->add_option("--phase", tr.phase, "pretrain | finetune")
        ->check(CLI::IsMember({"pretrain", "finetune"}));
    cmd_tr->add_option("--preset", tr.preset, "model preset: tiny | desk")
        ->check(CLI::IsMember({"tiny", "desk"}));
    cmd_tr->add_option("--model-config", tr.model_config, "model config JSON overrides");
    cmd_tr->add_option("--split", tr.split, "manifest split to train on");
    cmd_tr->add_option("--init", tr.init_checkpoint, "warm-start parameters from a checkpoint");
    cmd_tr->add_option("--seed", tr.seed, "training seed");
    cmd_tr->add_option("--epochs", tr.epochs, "override epoch count");
    cmd_tr->add_option("--batch", tr.batch, "batch size");
    cmd_tr->add_option("--lr-max", tr.lr_max, "peak learning rate");
    cmd_tr->add_option("--lr-min", tr.lr_min, "final learning rate");
    cmd_tr->add_option("--nq", tr.nq, "compressed query count override");
    cmd_tr->add_option("--detector-queries", tr.detector_queries, "detector query count override");
    cmd_tr->add_flag("--resume", tr.resume, "resume from latest checkpoint in --out");
    cmd_tr->add_flag("--no-fusion", tr.no_fusion, "disable 3D query fusion");
    cmd_tr->add_flag("--freeze-lm", tr.freeze_lm, "keep language model weights fixed");
    cmd_tr->add_flag("--freeze-encoder", tr.freeze_encoder, "keep perception weights fixed");
    cmd_tr->add_flag("--freeze-compressor", tr.freeze_compressor, "keep compressor weights fixed");
    cmd_tr->add_flag("--no-clip", tr.no_clip, "disable gradient clipping");

    EvalArgs ev;
    auto* cmd_ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
    cmd_ev->add_option("--dataset", ev.dataset, "dataset root (or SCENEQA_DATA_ROOT)");
    cmd_ev->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
    cmd_ev->add_option("--model-config", ev.model_config, "model config JSON");
    cmd_ev->add_option("--vocab", ev.vocab, "vocabulary file");
    cmd_ev->add_option("--split", ev.split, "manifest split");
    cmd_ev->add_option("--out", ev.out, "directory for report files");
    cmd_ev->add_option("--beam", ev.beam, "beam width (0 = greedy)");
    cmd_ev->add_option("--limit", ev.limit, "cap evaluated qa pairs (0 = all)");

    InferArgs inf;
    auto* cmd_inf = app.add_subcommand("infer", "Answer one question about one point cloud");
    cmd_inf->add_option("--cloud", inf.cloud, "point cloud file (.ply or .xyz)")->required();
    cmd_inf->add_option("--question", inf.question, "instruction text")->required();
    cmd_inf->add_option("--checkpoint", inf.checkpoint, "checkpoint file")->required();
    cmd_inf->add_option("--model-config", inf.model_config, "model config JSON");
    cmd_inf->add_option("--vocab", inf.vocab, "vocabulary file");
    cmd_inf->add_option("--beam", inf.beam, "beam width (0 = greedy)");

    ExportArgs ex;
    auto* cmd_ex = app.add_subcommand("export-attention",
                                      "Project compressor attention back onto the points");
    cmd_ex->add_option("--dataset", ex.dataset, "dataset root (for --scene lookup)");
    cmd_ex->add_option("--scene", ex.scene, "scene id in the dataset");
    cmd_ex->add_option("--cloud", ex.cloud, "point cloud file (overrides --scene)");
    cmd_ex->add_option("--question", ex.question, "instruction text")->required();
    cmd_ex->add_option("--checkpoint", ex.checkpoint, "checkpoint file")->required();
    cmd_ex->add_option("--model-config", ex.model_config, "model config JSON");
    cmd_ex->add_option("--vocab", ex.vocab, "vocabulary file");
    cmd_ex->add_option("--out", ex.out, "output directory")->required();
    cmd_ex->add_option("--k", ex.k, "number of queries to export");

    SweepArgs sw;
    auto* cmd_sw = app.add_subcommand("query-sweep",
                                      "Train/evaluate across compressed query budgets");
    cmd_sw->add_option("--dataset", sw.dataset, "dataset root (or SCENEQA_DATA_ROOT)");
    cmd_sw->add_option("--out", sw.out, "output directory")->required();
    cmd_sw->add_option("--nq", sw.nq, "query budgets to sweep")->delimiter(',');
    cmd_sw->add_option("--preset", sw.preset, "model preset: tiny | desk")
        ->check(CLI::IsMember({"tiny", "desk"}));
    cmd_sw->add_option("--model-config", sw.model_config, "model config JSON overrides");
    cmd_sw->add_option("--split", sw.split, "evaluation split");
    cmd_sw->add_option("--detector-queries", sw.detector_queries,
                       "detector query count override");
    cmd_sw->add_option("--epochs", sw.epochs, "training epochs per budget (0 = none)");
    cmd_sw->add_option("--batch", sw.batch, "batch size");
    cmd_sw->add_option("--limit", sw.limit, "evaluated qa pairs per budget");
    cmd_sw->add_option("--seed", sw.seed, "seed");
    cmd_sw->add_flag("--no-fusion", sw.no_fusion, "disable 3D query fusion");

    std::string ts_dataset, ts_split = "train", ts_out;
    auto* cmd_ts = app.add_subcommand("token-stats", "Token-length and task-tag statistics");
    cmd_ts->add_option("--dataset", ts_dataset, "dataset root (or SCENEQA_DATA_ROOT)");
    cmd_ts->add_option("--split", ts_split, "manifest split");
    cmd_ts->add_option("--out", ts_out, "write the report as JSON to this file");

    IngestArgs ing;
    auto* cmd_ing = app.add_subcommand("ingest", "Ingest benchmark question/annotation files");
    cmd_ing->add_option("--questions", ing.questions, "questions JSON array")->required();
    cmd_ing->add_option("--annotations", ing.annotations, "annotations JSON array")->required();
    cmd_ing->add_option("--clouds", ing.clouds, "directory holding <scene_id>.ply files")
        ->required();
    cmd_ing->add_option("--out", ing.out, "output dataset root")->required();

    try {
        app.parse(argc, argv);
        if (cmd_gen->parsed()) return cmd_gen_data(gen);
        if (cmd_tr->parsed()) return cmd_train(tr);
        if (cmd_ev->parsed()) return cmd_eval(ev);
        if (cmd_inf->parsed()) return cmd_infer(inf);
        if (cmd_ex->parsed()) return cmd_export_attention(ex);
        if (cmd_sw->parsed()) return cmd_query_sweep(sw);
        if (cmd_ts->parsed()) return cmd_token_stats(ts_dataset, ts_split, ts_out);
        if (cmd_ing->parsed()) return cmd_ingest(ing);
        return 1;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const ArgumentError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const IndexError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
