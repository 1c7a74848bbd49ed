#include "treesense/ensemble.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace treesense {

using json = nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

int parse_node(const json& j, std::vector<Node>& out, int depth) {
    if (depth > 256) throw Error("tree too deep");
    if (!j.is_object()) throw Error("node must be an object");
    const int idx = static_cast<int>(out.size());
    out.emplace_back();
    if (j.contains("leaf")) {
        if (!j["leaf"].is_number()) throw Error("leaf value must be a number");
        out[idx].value = j["leaf"].get<double>();
        return idx;
    }
    for (const char* key : {"feature", "threshold", "yes", "no"})
        if (!j.contains(key)) throw Error(std::string("internal node missing field '") + key + "'");
    if (!j["feature"].is_number_integer()) throw Error("feature must be an integer");
    if (!j["threshold"].is_number()) throw Error("threshold must be a number");
    const int f = j["feature"].get<int>();
    const double tau = j["threshold"].get<double>();
    if (f < 0) throw Error("negative feature id");
    if (!std::isfinite(tau)) throw Error("threshold must be finite");
    const int yes = parse_node(j["yes"], out, depth + 1);
    const int no = parse_node(j["no"], out, depth + 1);
    out[idx].feature = f;
    out[idx].threshold = tau;
    out[idx].yes = yes;
    out[idx].no = no;
    return idx;
}

json node_to_json(const Tree& t, int n) {
    const Node& node = t.nodes[n];
    if (node.is_leaf()) return json{{"leaf", node.value}};
    return json{{"feature", node.feature},
                {"threshold", node.threshold},
                {"yes", node_to_json(t, node.yes)},
                {"no", node_to_json(t, node.no)}};
}

void collect_leaves(const Tree& t, int n, std::vector<int>& out) {
    const Node& node = t.nodes[n];
    if (node.is_leaf()) {
        out.push_back(n);
        return;
    }
    collect_leaves(t, node.yes, out);
    collect_leaves(t, node.no, out);
}

int depth_of(const Tree& t, int n) {
    const Node& node = t.nodes[n];
    if (node.is_leaf()) return 0;
    return 1 + std::max(depth_of(t, node.yes), depth_of(t, node.no));
}

}  // namespace

std::vector<int> Tree::leaves() const {
    std::vector<int> out;
    if (!nodes.empty()) collect_leaves(*this, 0, out);
    return out;
}

int Tree::depth() const { return nodes.empty() ? 0 : depth_of(*this, 0); }

int Tree::leaf_for(std::span<const double> x) const {
    int n = 0;
    while (!nodes[n].is_leaf()) {
        const Node& node = nodes[n];
        n = x[node.feature] < node.threshold ? node.yes : node.no;
    }
    return n;
}

Ensemble::Ensemble(std::vector<Tree> trees, int num_features, int num_classes, double base_score,
                   std::vector<std::string> feature_names)
    : trees_(std::move(trees)),
      num_features_(num_features),
      num_classes_(num_classes),
      base_score_(base_score),
      feature_names_(std::move(feature_names)) {
    validate_and_index();
}

void Ensemble::validate_and_index() {
    if (num_features_ < 1) throw Error("num_features must be >= 1");
    if (num_classes_ < 2) throw Error("num_classes must be >= 2");
    if (!std::isfinite(base_score_)) throw Error("base_score must be finite");
    if (!feature_names_.empty() && static_cast<int>(feature_names_.size()) != num_features_)
        throw Error("feature_names length does not match num_features");
    leaf_refs_.clear();
    first_leaf_.clear();
    node_to_leaf_.clear();
    for (int t = 0; t < static_cast<int>(trees_.size()); ++t) {
        Tree& tree = trees_[t];
        if (tree.nodes.empty()) throw Error("tree " + std::to_string(t) + " has no nodes");
        if (tree.class_id < 0 || tree.class_id >= num_classes_)
            throw Error("tree " + std::to_string(t) + ": class_id out of range");
        if (num_classes_ == 2) tree.class_id = 1;
        for (const Node& n : tree.nodes) {
            if (n.is_leaf()) {
                if (!std::isfinite(n.value)) throw Error("leaf value must be finite");
                continue;
            }
            if (n.feature >= num_features_)
                throw Error("tree " + std::to_string(t) + ": guard on feature " + std::to_string(n.feature) +
                            " but num_features = " + std::to_string(num_features_));
            const int sz = static_cast<int>(tree.nodes.size());
            if (n.yes < 0 || n.yes >= sz || n.no < 0 || n.no >= sz) throw Error("dangling child index");
        }
        first_leaf_.push_back(static_cast<int>(leaf_refs_.size()));
        node_to_leaf_.emplace_back(tree.nodes.size(), -1);
        for (int n : tree.leaves()) {
            node_to_leaf_[t][n] = static_cast<int>(leaf_refs_.size());
            leaf_refs_.push_back({t, n});
        }
    }
}

int Ensemble::leaf_id(int tree, int node) const { return node_to_leaf_[tree][node]; }

std::optional<FeatureId> Ensemble::find_feature(std::string_view s) const {
    for (int f = 0; f < static_cast<int>(feature_names_.size()); ++f)
        if (feature_names_[f] == s) return f;
    int v = 0;
    const auto* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec == std::errc() && p == end && v >= 0 && v < num_features_) return v;
    if (s.size() > 1 && s[0] == 'f') {
        auto [p2, ec2] = std::from_chars(s.data() + 1, end, v);
        if (ec2 == std::errc() && p2 == end && v >= 0 && v < num_features_ && feature_names_.empty()) return v;
    }
    return std::nullopt;
}

std::string Ensemble::feature_label(FeatureId f) const {
    if (f >= 0 && f < static_cast<int>(feature_names_.size())) return feature_names_[f];
    return "f" + std::to_string(f);
}

Ensemble load_model(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& ex) {
        throw Error(std::string("malformed model JSON: ") + ex.what());
    }
    if (!doc.is_object()) throw Error("model document must be an object");
    for (const char* key : {"num_features", "num_classes", "trees"})
        if (!doc.contains(key)) throw Error(std::string("model missing field '") + key + "'");
    if (!doc["num_features"].is_number_integer() || !doc["num_classes"].is_number_integer())
        throw Error("num_features and num_classes must be integers");
    if (!doc["trees"].is_array()) throw Error("trees must be an array");
    const int num_features = doc["num_features"].get<int>();
    const int num_classes = doc["num_classes"].get<int>();
    double base = 0.0;
    if (doc.contains("base_score")) {
        if (!doc["base_score"].is_number()) throw Error("base_score must be a number");
        base = doc["base_score"].get<double>();
    }
    std::vector<std::string> names;
    if (doc.contains("feature_names") && !doc["feature_names"].is_null()) {
        if (!doc["feature_names"].is_array()) throw Error("feature_names must be an array");
        for (const auto& n : doc["feature_names"]) {
            if (!n.is_string()) throw Error("feature_names entries must be strings");
            names.push_back(n.get<std::string>());
        }
    }
    std::vector<Tree> trees;
    for (const auto& jt : doc["trees"]) {
        if (!jt.is_object() || !jt.contains("root")) throw Error("tree missing field 'root'");
        Tree t;
        if (jt.contains("class_id")) {
            if (!jt["class_id"].is_number_integer()) throw Error("class_id must be an integer");
            t.class_id = jt["class_id"].get<int>();
        } else if (num_classes > 2) {
            throw Error("multiclass tree missing field 'class_id'");
        }
        parse_node(jt["root"], t.nodes, 0);
        trees.push_back(std::move(t));
    }
    return Ensemble(std::move(trees), num_features, num_classes, base, std::move(names));
}

Ensemble load_model_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open model file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return load_model(ss.str());
}

std::string dump_model(const Ensemble& e) {
    json doc;
    doc["num_features"] = e.num_features();
    doc["num_classes"] = e.num_classes();
    doc["base_score"] = e.base_score();
    if (!e.feature_names().empty()) doc["feature_names"] = e.feature_names();
    doc["trees"] = json::array();
    for (const Tree& t : e.trees())
        doc["trees"].push_back(json{{"class_id", t.class_id}, {"root", node_to_json(t, 0)}});
    return doc.dump(1);
}

void require_finite(std::span<const double> x, int num_features) {
    if (static_cast<int>(x.size()) != num_features)
        throw Error("input has " + std::to_string(x.size()) + " entries, expected " + std::to_string(num_features));
    for (double v : x)
        if (!std::isfinite(v)) throw Error("input contains NaN or infinity");
}

double raw_score(const Ensemble& e, std::span<const double> x, int c) {
    if (c < 0 || c >= e.num_classes()) throw Error("class id out of range");
    require_finite(x, e.num_features());
    if (e.is_binary()) {
        double s = e.base_score();
        for (const Tree& t : e.trees()) s += t.eval(x);
        return c == 1 ? s : -s;
    }
    double s = e.base_score();
    for (const Tree& t : e.trees())
        if (t.class_id == c) s += t.eval(x);
    return s;
}

std::vector<double> raw_scores(const Ensemble& e, std::span<const double> x) {
    std::vector<double> out(e.num_classes());
    for (int c = 0; c < e.num_classes(); ++c) out[c] = raw_score(e, x, c);
    return out;
}

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double ez = std::exp(z);
    return ez / (1.0 + ez);
}

std::vector<double> probs_from_raw(const Ensemble& e, std::span<const double> raw) {
    if (e.is_binary()) {
        const double p1 = sigmoid(raw[1]);
        return {1.0 - p1, p1};
    }
    const double mx = *std::max_element(raw.begin(), raw.end());
    std::vector<double> p(raw.size());
    double z = 0.0;
    for (size_t c = 0; c < raw.size(); ++c) z += (p[c] = std::exp(raw[c] - mx));
    for (double& v : p) v /= z;
    return p;
}

std::vector<double> predict_prob(const Ensemble& e, std::span<const double> x) {
    const auto raw = raw_scores(e, x);
    return probs_from_raw(e, raw);
}

GuardIndex::GuardIndex(const Ensemble& e) : thresholds_(e.num_features()) {
    for (const Tree& t : e.trees())
        for (const Node& n : t.nodes)
            if (!n.is_leaf()) thresholds_[n.feature].push_back(n.threshold);
    for (auto& th : thresholds_) {
        if (th.empty()) continue;
        std::sort(th.begin(), th.end());
        th.erase(std::unique(th.begin(), th.end()), th.end());
        th.insert(th.begin(), -kInf);
        th.push_back(kInf);
    }
    guard_pos_.resize(e.trees().size());
    for (size_t t = 0; t < e.trees().size(); ++t) {
        const auto& nodes = e.trees()[t].nodes;
        guard_pos_[t].assign(nodes.size(), -1);
        for (size_t n = 0; n < nodes.size(); ++n)
            if (!nodes[n].is_leaf()) guard_pos_[t][n] = position_of(nodes[n].feature, nodes[n].threshold);
    }
}

int GuardIndex::interval_of(FeatureId f, double v) const {
    const auto& th = thresholds_[f];
    if (th.empty()) return 0;
    // Largest k with th[k] <= v, clamped to the valid interval range.
    auto it = std::upper_bound(th.begin(), th.end(), v);
    int k = static_cast<int>(it - th.begin()) - 1;
    return std::clamp(k, 0, static_cast<int>(th.size()) - 2);
}

int GuardIndex::position_of(FeatureId f, double threshold) const {
    const auto& th = thresholds_[f];
    auto it = std::lower_bound(th.begin(), th.end(), threshold);
    if (it == th.end() || *it != threshold) return -1;
    return static_cast<int>(it - th.begin());
}

IntervalAssignment assignment_of(const GuardIndex& gi, std::span<const double> x) {
    IntervalAssignment a(gi.num_features(), kUnassigned);
    for (int f = 0; f < gi.num_features(); ++f)
        if (gi.guarded(f)) a[f] = gi.interval_of(f, x[f]);
    return a;
}

int leaf_for_assignment(const Tree& t, int tree_index, const GuardIndex& gi, const IntervalAssignment& a) {
    int n = 0;
    while (!t.nodes[n].is_leaf()) {
        const Node& node = t.nodes[n];
        // Interval k lies below threshold position j iff k < j.
        n = a[node.feature] < gi.guard_position(tree_index, n) ? node.yes : node.no;
    }
    return n;
}

std::vector<int> unaffected_leaves(const Ensemble& e, std::span<const FeatureId> F) {
    std::vector<char> in_f(e.num_features(), 0);
    for (FeatureId f : F) {
        if (f < 0 || f >= e.num_features()) throw Error("feature id out of range in F");
        in_f[f] = 1;
    }
    std::vector<int> out;
    for (int t = 0; t < static_cast<int>(e.trees().size()); ++t) {
        const Tree& tree = e.trees()[t];
        // (node, ancestry touches F)
        std::vector<std::pair<int, bool>> stack{{0, false}};
        while (!stack.empty()) {
            auto [n, hit] = stack.back();
            stack.pop_back();
            const Node& node = tree.nodes[n];
            if (node.is_leaf()) {
                if (!hit) out.push_back(e.leaf_id(t, n));
                continue;
            }
            const bool h = hit || in_f[node.feature];
            stack.push_back({node.no, h});
            stack.push_back({node.yes, h});
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

Input representative_input(const GuardIndex& gi, const IntervalAssignment& a, const DataHint* hint) {
    if (static_cast<int>(a.size()) != gi.num_features()) throw Error("assignment size mismatch");
    Input x(gi.num_features(), 0.0);
    for (int f = 0; f < gi.num_features(); ++f) {
        if (!gi.guarded(f)) {
            x[f] = hint ? hint->median[f] : 0.0;
            continue;
        }
        const int k = a[f];
        if (k < 0 || k >= gi.interval_count(f))
            throw Error("incomplete interval assignment for feature " + std::to_string(f));
        const double lo = gi.lower(f, k);
        const double hi = gi.upper(f, k);
        double v;
        if (std::isinf(lo) && std::isinf(hi)) {
            v = hint ? hint->median[f] : 0.0;
        } else if (std::isinf(lo)) {
            v = hi - 1.0;
            if (hint && hint->min[f] < hi) v = hint->min[f];
            if (!(v < hi)) v = std::nextafter(hi, -kInf);
        } else if (std::isinf(hi)) {
            v = lo;
            if (hint) v = std::max(lo, hint->max[f]);
        } else {
            v = lo + (hi - lo) / 2.0;
            if (!(v >= lo && v < hi)) v = lo;
        }
        x[f] = v;
    }
    return x;
}

}  // namespace treesense
