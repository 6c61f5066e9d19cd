#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "common.hpp"
#include "gridworld.hpp"
#include "semantic_grid.hpp"

#include <nlohmann/json.hpp>

namespace mainvla {

// Single id space shared by instruction words, action tokens, pooled class
// tokens and intention keywords. Fixed prefix: pad, a visual placeholder,
// the intention terminator, the six actions, then one token per semantic
// class. Words follow in first-seen order.
class Vocabulary {
public:
    static constexpr int pad_id = 0;
    static constexpr int vis_id = 1;
    static constexpr int end_id = 2;

    static Vocabulary build(const ClassHierarchy& hc) {
        Vocabulary v;
        v.add("<pad>");
        v.add("<vis>");
        v.add("<end>");
        for (int a = 0; a < n_actions; ++a) v.add(std::string("<act:") + action_name(a) + ">");
        for (int c = 0; c < hc.num_classes(); ++c) v.add("<cls:" + hc.names[c] + ">");
        v.n_classes_ = hc.num_classes();
        for (const auto& w : intention_keywords()) v.add_if_new(w);
        for (int t = 0; t < n_tasks; ++t)
            for (const auto& variant : instruction_templates(static_cast<Task>(t)))
                for (const auto& w : variant) v.add_if_new(w);
        return v;
    }

    static const std::vector<std::string>& intention_keywords() {
        static const std::vector<std::string> kws = {"waypoint", "item", "vehicle", "safezone", "enemy", "wall"};
        return kws;
    }

    // hindsight keyword pair the expert would give for a task
    static std::vector<std::string> intention_for(Task t) {
        switch (t) {
            case Task::reach_item: return {"waypoint", "item"};
            case Task::reach_vehicle: return {"waypoint", "vehicle"};
            case Task::reach_safezone: return {"waypoint", "safezone"};
            case Task::engage_enemy: return {"enemy", "wall"};
        }
        throw DataError("intention_for: bad task");
    }

    int id(const std::string& word) const {
        const auto it = index_.find(word);
        if (it == index_.end()) throw DataError("vocabulary: unknown word " + word);
        return it->second;
    }
    bool contains(const std::string& word) const { return index_.count(word) != 0; }
    const std::string& word(int id) const {
        if (id < 0 || id >= size()) throw DataError("vocabulary: id out of range");
        return words_[id];
    }
    int size() const { return static_cast<int>(words_.size()); }

    int action_token(int a) const {
        if (a < 0 || a >= n_actions) throw DataError("vocabulary: bad action");
        return 3 + a;
    }
    int action_from_token(int id) const {
        if (id < 3 || id >= 3 + n_actions) throw DataError("vocabulary: token is not an action");
        return id - 3;
    }
    int action_token_begin() const { return 3; }
    int class_token(std::uint8_t c) const {
        if (c >= n_classes_) throw DataError("vocabulary: bad class id");
        return 3 + n_actions + c;
    }

    std::uint64_t hash() const {
        std::uint64_t h = fnv1a("vocabulary");
        for (const auto& w : words_) h = fnv1a(w, h);
        return h;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["words"] = words_;
        j["n_classes"] = n_classes_;
        return j;
    }

    static Vocabulary from_json(const nlohmann::json& j) {
        Vocabulary v;
        if (!j.contains("words") || !j.contains("n_classes")) throw DataError("vocabulary: malformed json");
        for (const auto& w : j.at("words")) v.add(w.get<std::string>());
        v.n_classes_ = j.at("n_classes").get<int>();
        if (v.size() < 3 + n_actions + v.n_classes_) throw DataError("vocabulary: truncated word list");
        return v;
    }

private:
    void add(const std::string& w) {
        if (index_.count(w)) throw DataError("vocabulary: duplicate word " + w);
        index_[w] = static_cast<int>(words_.size());
        words_.push_back(w);
    }
    void add_if_new(const std::string& w) {
        if (!index_.count(w)) add(w);
    }

    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
    int n_classes_ = 0;
};

// intention token ids for a task: keywords then the terminator
inline std::vector<int> intention_token_ids(const Vocabulary& v, Task t) {
    std::vector<int> ids;
    for (const auto& w : Vocabulary::intention_for(t)) ids.push_back(v.id(w));
    ids.push_back(Vocabulary::end_id);
    return ids;
}

inline std::vector<int> instruction_token_ids(const Vocabulary& v, const std::vector<std::string>& words) {
    std::vector<int> ids;
    for (const auto& w : words) ids.push_back(v.id(w));
    return ids;
}

}  // namespace mainvla
