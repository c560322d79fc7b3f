#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "facediff/denoiser.hpp"
#include "facediff/types.hpp"

// JSON plumbing for the config surface: the AU→channel mapping, the label
// vocabulary, and the model config. The first two ship as versioned files
// under configs/ with builtin defaults that match those files (tested).

namespace facediff {

inline nlohmann::json load_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

inline void save_json_file(const nlohmann::json& j, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << j.dump(2) << "\n";
}

// --- AU mapping ------------------------------------------------------------

inline nlohmann::json au_map_to_json(const AUVocabulary& v) {
    nlohmann::json aus = nlohmann::json::array();
    for (const auto& e : v.entries) {
        nlohmann::json chans = nlohmann::json::array();
        for (int c : e.channels) chans.push_back(channel_names()[size_t(c)]);
        aus.push_back({{"id", e.id},
                       {"region", e.region == FaceRegion::kUpper ? "upper" : "lower"},
                       {"channels", chans}});
    }
    return nlohmann::json{{"version", 1}, {"aus", aus}};
}

inline AUVocabulary au_map_from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("version", 0) != 1)
        throw std::runtime_error("au map: expected object with version 1");
    AUVocabulary v;
    for (const auto& e : j.at("aus")) {
        std::string region = e.at("region").get<std::string>();
        if (region != "upper" && region != "lower")
            throw std::runtime_error("au map: face region must be upper|lower, got " + region);
        std::vector<std::string> chans;
        for (const auto& c : e.at("channels")) chans.push_back(c.get<std::string>());
        v.add(e.at("id").get<std::string>(),
              region == "upper" ? FaceRegion::kUpper : FaceRegion::kLower, chans);
    }
    return v;
}

inline AUVocabulary load_au_map(const std::string& path) {
    return au_map_from_json(load_json_file(path));
}

inline void save_au_map(const AUVocabulary& v, const std::string& path) {
    save_json_file(au_map_to_json(v), path);
}

// --- Label vocabulary -------------------------------------------------------

struct LabelConfig {
    std::vector<std::string> emotions;
    std::vector<std::string> styles;

    static LabelConfig builtin_default() {
        return {{"neutral", "happy", "sad", "angry"},
                {"newsreader", "storyteller", "calm", "excited"}};
    }

    int emotion_id(const std::string& name) const {
        for (size_t i = 0; i < emotions.size(); ++i)
            if (emotions[i] == name) return int(i);
        throw std::invalid_argument("unknown emotion: " + name);
    }

    int style_id(const std::string& name) const {
        for (size_t i = 0; i < styles.size(); ++i)
            if (styles[i] == name) return int(i);
        throw std::invalid_argument("unknown style: " + name);
    }

    bool operator==(const LabelConfig& o) const {
        return emotions == o.emotions && styles == o.styles;
    }
};

inline nlohmann::json labels_to_json(const LabelConfig& l) {
    return nlohmann::json{{"version", 1}, {"emotions", l.emotions}, {"styles", l.styles}};
}

inline LabelConfig labels_from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("version", 0) != 1)
        throw std::runtime_error("labels: expected object with version 1");
    LabelConfig l;
    l.emotions = j.at("emotions").get<std::vector<std::string>>();
    l.styles = j.at("styles").get<std::vector<std::string>>();
    if (l.emotions.size() < 2) throw std::runtime_error("labels: need at least 2 emotions");
    if (l.styles.empty()) throw std::runtime_error("labels: need at least 1 style");
    return l;
}

inline LabelConfig load_labels(const std::string& path) {
    return labels_from_json(load_json_file(path));
}

inline void save_labels(const LabelConfig& l, const std::string& path) {
    save_json_file(labels_to_json(l), path);
}

// --- Model config ------------------------------------------------------------

inline nlohmann::json generator_config_to_json(const GeneratorConfig& c) {
    return nlohmann::json{{"version", 1},
                          {"profile", c.profile},
                          {"d", c.d},
                          {"d_model", c.d_model},
                          {"n_heads", c.n_heads},
                          {"n_blocks", c.n_blocks},
                          {"d_audio", c.d_audio},
                          {"d_cond", c.d_cond},
                          {"vocab_size", c.vocab_size},
                          {"half_width", c.half_width},
                          {"ffn_mult", c.ffn_mult},
                          {"t_hat", c.t_hat}};
}

inline GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("version", 0) != 1)
        throw std::runtime_error("model config: expected object with version 1");
    GeneratorConfig c;
    c.profile = j.value("profile", std::string("desk"));
    c.d = j.at("d").get<int64_t>();
    c.d_model = j.at("d_model").get<int64_t>();
    c.n_heads = j.at("n_heads").get<int64_t>();
    c.n_blocks = j.at("n_blocks").get<int64_t>();
    c.d_audio = j.at("d_audio").get<int64_t>();
    c.d_cond = j.at("d_cond").get<int64_t>();
    c.vocab_size = j.at("vocab_size").get<int64_t>();
    c.half_width = j.at("half_width").get<int64_t>();
    c.ffn_mult = j.at("ffn_mult").get<int64_t>();
    c.t_hat = j.at("t_hat").get<int64_t>();
    c.validate();
    return c;
}

}  // namespace facediff
