#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sceneqa/data/scene_gen.hpp"
#include "sceneqa/geometry/ply_io.hpp"
#include "sceneqa/lm/vocab.hpp"

namespace sceneqa {

struct DatasetManifest {
    int version = 1;
    std::string split;
    std::uint64_t seed = 0;       // generator seed; 0 for ingested data
    std::string config_hash;      // hex digest of the generator config; empty for ingested
    std::string convention = kViewerConvention;
    std::vector<std::string> warnings;
    std::vector<SceneSample> samples;
};

// Digest of every field that influences generation, so a manifest can prove
// which config produced it and regeneration can be checked byte for byte.
inline std::string scene_gen_config_hash(const SceneGenConfig& cfg) {
    std::ostringstream os;
    os << cfg.room_half_x << '|' << cfg.room_half_y << '|' << cfg.min_objects << '|'
       << cfg.max_objects << '|' << cfg.min_half_extent << '|' << cfg.max_half_extent << '|'
       << cfg.min_height << '|' << cfg.max_height << '|' << cfg.placement_margin << '|'
       << cfg.place_retries << '|' << cfg.points_per_face << '|' << cfg.floor_points << '|'
       << cfg.jitter;
    for (const auto& c : cfg.categories) os << '|' << c;
    for (const auto& c : cfg.color_names) os << '|' << c;
    for (const auto& rgb : cfg.color_rgb) os << '|' << rgb[0] << ',' << rgb[1] << ',' << rgb[2];
    std::uint64_t h = 1469598103934665603ull;
    for (char ch : os.str()) {
        h ^= static_cast<unsigned char>(ch);
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline DatasetManifest generate_dataset(std::uint64_t seed, const SceneGenConfig& cfg, int count,
                                        const std::string& split) {
    cfg.validate();
    if (count < 1) throw ArgumentError("generate_dataset: count must be positive");
    DatasetManifest m;
    m.split = split;
    m.seed = seed;
    m.config_hash = scene_gen_config_hash(cfg);
    for (int i = 0; i < count; ++i) {
        // Per-scene substreams keep scenes independent of each other, so any
        // subset can be regenerated (or generated in parallel) identically.
        Rng stream = Rng::substream(seed, static_cast<std::uint64_t>(i));
        SceneSample s = generate_scene(stream.next_u64(), cfg);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%s_%05d", split.c_str(), i);
        s.scene_id = buf;
        s.cloud_path = "clouds/" + s.scene_id + ".ply";
        if (s.reduced_count)
            m.warnings.push_back(s.scene_id + ": object count reduced after placement retries");
        m.samples.push_back(std::move(s));
    }
    return m;
}

namespace detail {

inline nlohmann::json box_to_json(const AxisAlignedBox& b) {
    return {{"center", b.center},
            {"half_extent", b.half_extent},
            {"category", b.category},
            {"color", b.color}};
}

inline AxisAlignedBox box_from_json(const nlohmann::json& j) {
    AxisAlignedBox b;
    auto c = j.at("center"), h = j.at("half_extent");
    for (int a = 0; a < 3; ++a) {
        b.center[std::size_t(a)] = c.at(std::size_t(a)).get<double>();
        b.half_extent[std::size_t(a)] = h.at(std::size_t(a)).get<double>();
    }
    b.category = j.at("category").get<int>();
    b.color = j.at("color").get<int>();
    return b;
}

}  // namespace detail

// Line-delimited layout: a header record followed by one record per sample.
// The point data itself lives in separate cloud files next to the manifest.
inline std::string manifest_to_jsonl(const DatasetManifest& m) {
    std::ostringstream os;
    nlohmann::json head = {{"version", m.version},     {"split", m.split},
                           {"seed", m.seed},           {"config_hash", m.config_hash},
                           {"convention", m.convention}, {"warnings", m.warnings}};
    os << head.dump() << '\n';
    for (const auto& s : m.samples) {
        nlohmann::json boxes = nlohmann::json::array();
        for (const auto& b : s.boxes) boxes.push_back(detail::box_to_json(b));
        nlohmann::json qa = nlohmann::json::array();
        for (const auto& item : s.qa)
            qa.push_back({{"instruction", item.instruction},
                          {"answers", item.answers},
                          {"tag", item.tag}});
        nlohmann::json rec = {{"scene_id", s.scene_id},
                              {"cloud", s.cloud_path},
                              {"boxes", boxes},
                              {"qa", qa},
                              {"reduced_count", s.reduced_count}};
        os << rec.dump() << '\n';
    }
    return os.str();
}

inline DatasetManifest manifest_from_jsonl(std::istream& in, const std::string& source) {
    DatasetManifest m;
    std::string line;
    int line_no = 0;
    bool have_head = false;
    std::map<std::string, bool> seen_ids;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(source + ":" + std::to_string(line_no) + ": " + e.what());
        }
        try {
            if (!have_head) {
                m.version = j.at("version").get<int>();
                m.split = j.at("split").get<std::string>();
                m.seed = j.at("seed").get<std::uint64_t>();
                m.config_hash = j.at("config_hash").get<std::string>();
                m.convention = j.at("convention").get<std::string>();
                m.warnings = j.at("warnings").get<std::vector<std::string>>();
                have_head = true;
                continue;
            }
            SceneSample s;
            s.scene_id = j.at("scene_id").get<std::string>();
            s.cloud_path = j.at("cloud").get<std::string>();
            for (const auto& b : j.at("boxes")) s.boxes.push_back(detail::box_from_json(b));
            for (const auto& q : j.at("qa")) {
                QAItem item;
                item.instruction = q.at("instruction").get<std::string>();
                item.answers = q.at("answers").get<std::vector<std::string>>();
                item.tag = q.at("tag").get<std::string>();
                if (item.answers.empty())
                    throw DataError("qa record without answers");
                s.qa.push_back(std::move(item));
            }
            s.reduced_count = j.at("reduced_count").get<bool>();
            if (seen_ids.count(s.scene_id))
                throw DataError("duplicate scene id " + s.scene_id);
            seen_ids[s.scene_id] = true;
            m.samples.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(source + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError(source + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!have_head) throw DataError(source + ": manifest has no header record");
    return m;
}

// Writes <root>/<split>.jsonl plus one cloud file per sample that still holds
// point data. Returns the manifest path.
inline std::string save_manifest(const DatasetManifest& m, const std::string& root) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(root) / "clouds");
    fs::path manifest_path = fs::path(root) / (m.split + ".jsonl");
    {
        std::ofstream out(manifest_path, std::ios::binary);
        if (!out) throw DataError("save_manifest: cannot write " + manifest_path.string());
        out << manifest_to_jsonl(m);
    }
    for (const auto& s : m.samples)
        if (s.cloud.size() > 0) write_ply((fs::path(root) / s.cloud_path).string(), s.cloud);
    return manifest_path.string();
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_manifest: cannot open " + path);
    return manifest_from_jsonl(in, path);
}

inline PointCloud load_sample_cloud(const std::string& root, const SceneSample& s) {
    return read_point_cloud((std::filesystem::path(root) / s.cloud_path).string());
}

// Benchmark-style ingestion. Questions and annotations are JSON arrays joined
// on question_id:
//   questions:   [{"question_id": ..., "scene_id": ..., "question": ...}, ...]
//   annotations: [{"question_id": ..., "answers": [...]}, ...]
// Samples whose cloud file is missing under cloud_dir are skipped and listed.
inline DatasetManifest ingest_scanqa(const std::string& question_file,
                                     const std::string& annotation_file,
                                     const std::string& cloud_dir) {
    namespace fs = std::filesystem;
    auto parse_array = [](const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("ingest: cannot open " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw DataError("ingest: " + path + ": " + e.what());
        }
        if (!j.is_array()) throw DataError("ingest: " + path + ": expected a JSON array");
        return j;
    };

    nlohmann::json questions = parse_array(question_file);
    nlohmann::json annotations = parse_array(annotation_file);

    std::map<std::string, std::vector<std::string>> answers_by_id;
    int idx = 0;
    for (const auto& rec : annotations) {
        try {
            auto qid = rec.at("question_id").get<std::string>();
            answers_by_id[qid] = rec.at("answers").get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError("ingest: annotation record " + std::to_string(idx) + ": " + e.what());
        }
        ++idx;
    }

    DatasetManifest m;
    m.split = "ingested";
    std::map<std::string, std::size_t> scene_index;
    idx = 0;
    for (const auto& rec : questions) {
        std::string qid, scene_id, question;
        try {
            qid = rec.at("question_id").get<std::string>();
            scene_id = rec.at("scene_id").get<std::string>();
            question = rec.at("question").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError("ingest: question record " + std::to_string(idx) + ": " + e.what());
        }
        auto found = answers_by_id.find(qid);
        if (found == answers_by_id.end() || found->second.empty())
            throw DataError("ingest: question record " + std::to_string(idx) + ": no answers for " +
                            qid);

        std::string cloud = scene_id + ".ply";
        if (!fs::exists(fs::path(cloud_dir) / cloud)) {
            m.warnings.push_back("skipped " + qid + ": missing cloud " + cloud);
            ++idx;
            continue;
        }
        auto at = scene_index.find(scene_id);
        if (at == scene_index.end()) {
            SceneSample s;
            s.scene_id = scene_id;
            s.cloud_path = cloud;
            scene_index[scene_id] = m.samples.size();
            m.samples.push_back(std::move(s));
            at = scene_index.find(scene_id);
        }
        m.samples[at->second].qa.push_back({question, found->second, "qa"});
        ++idx;
    }
    if (m.samples.empty()) m.warnings.push_back("ingest produced zero samples");
    return m;
}

struct TokenStats {
    std::vector<int> question_hist;  // index = token count, including a 0 bin
    std::vector<int> answer_hist;    // primary answer only
    double frac_questions_under_16 = 0.0;
    double frac_answers_over_7 = 0.0;
    std::map<std::string, int> tag_counts;
    int total = 0;
};

inline TokenStats token_stats(const DatasetManifest& m) {
    TokenStats st;
    for (const auto& s : m.samples) {
        for (const auto& item : s.qa) {
            int q_len = static_cast<int>(tokenize(item.instruction).size());
            int a_len = static_cast<int>(tokenize(item.answers.front()).size());
            if (q_len >= static_cast<int>(st.question_hist.size()))
                st.question_hist.resize(std::size_t(q_len) + 1, 0);
            if (a_len >= static_cast<int>(st.answer_hist.size()))
                st.answer_hist.resize(std::size_t(a_len) + 1, 0);
            st.question_hist[std::size_t(q_len)]++;
            st.answer_hist[std::size_t(a_len)]++;
            if (q_len < 16) st.frac_questions_under_16 += 1.0;
            if (a_len > 7) st.frac_answers_over_7 += 1.0;
            st.tag_counts[item.tag]++;
            st.total++;
        }
    }
    if (st.total == 0) throw ArgumentError("token_stats: manifest has no qa records");
    st.frac_questions_under_16 /= st.total;
    st.frac_answers_over_7 /= st.total;
    return st;
}

// Every word the synthetic templates can emit, so a closed vocabulary can be
// built without scanning a concrete dataset.
inline std::vector<std::string> template_vocabulary(const SceneGenConfig& cfg) {
    std::vector<std::string> words = {"how",  "many",    "are",   "there",  "is",     "a",
                                      "in",   "the",     "room",  "what",   "color",  "corner",
                                      "of",   "where",   "relative", "to",  "describe", "scene",
                                      "with", "do",      "you",   "see",    "yes",    "no",
                                      "left", "right",   "front", "behind", "back",   "and",
                                      "?",    ","};
    for (int n = 0; n <= 10; ++n) words.push_back(number_word(n));
    for (const auto& c : cfg.categories) {
        words.push_back(c);
        words.push_back(plural(c));
    }
    for (const auto& c : cfg.color_names) words.push_back(c);
    return words;
}

}  // namespace sceneqa
