#ifndef HCRL_HIERARCHY_HPP
#define HCRL_HIERARCHY_HPP

#include "hcrl/common.hpp"
#include "hcrl/special.hpp"

#include <json.hpp>

#include <algorithm>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

// Dynamic tree of Gaussian mixture components under nested stick-breaking.
// Paths are identified with their terminal node: every node is the end of
// exactly one path from the root (full path iff the node is at the bottom
// level). Node ids are stable across structure edits; sibling order is the
// stick order and is preserved by PRUNE/MERGE re-indexing.

namespace hcrl {

/// Child-index form of a path: (1, zeta_2, ..., zeta_l), 1-based.
using PathId = std::vector<int>;

inline std::string path_to_string(const PathId &p) {
    std::ostringstream os;
    for (std::size_t i = 0; i < p.size(); ++i)
        os << (i ? "." : "") << p[i];
    return os.str();
}

struct TreeNode {
    int id = -1;
    int parent = -1; // node id, -1 for root
    int level = 1;   // root = 1
    Vec mu;
    Vec sigma2;
    double a = 1.0; // Beta variational parameters of the node's stick
    double b = 1.0;
    std::vector<int> children; // node ids in stick order

    double expect_log_v() const { return digamma(a) - digamma(a + b); }
    double expect_log_1mv() const { return digamma(b) - digamma(a + b); }
};

class Hierarchy {
  public:
    Hierarchy() = default;

    /// Single chain of depth L: root N(0, I_J), variance halved per level.
    static Hierarchy single_path(int depth, Eigen::Index latent_dim, double gamma) {
        require(depth >= 1, "Hierarchy: depth must be >= 1");
        Hierarchy h;
        h.depth_ = depth;
        int parent = -1;
        double var = 1.0;
        for (int l = 1; l <= depth; ++l) {
            TreeNode n;
            n.id = h.next_id_++;
            n.parent = parent;
            n.level = l;
            n.mu = Vec::Zero(latent_dim);
            n.sigma2 = Vec::Constant(latent_dim, var);
            n.a = 1.0;
            n.b = gamma;
            if (parent >= 0)
                h.node(parent).children.push_back(n.id);
            parent = n.id;
            h.nodes_.push_back(std::move(n));
            var *= 0.5;
        }
        return h;
    }

    int depth() const { return depth_; }
    int root_id() const { return nodes_.empty() ? -1 : nodes_.front().id; }
    std::size_t node_count() const { return nodes_.size(); }

    const TreeNode &node(int id) const { return nodes_[slot(id)]; }
    TreeNode &node(int id) { return nodes_[slot(id)]; }

    /// All node ids in depth-first stick order (deterministic).
    std::vector<int> all_ids() const {
        std::vector<int> out;
        dfs(root_id(), out);
        return out;
    }

    /// Terminal ids of full paths (level == depth), DFS order.
    std::vector<int> full_path_ids() const {
        std::vector<int> out;
        for (int id : all_ids())
            if (node(id).level == depth_)
                out.push_back(id);
        return out;
    }

    /// Terminal ids of inner paths (level < depth), DFS order.
    std::vector<int> inner_path_ids() const {
        std::vector<int> out;
        for (int id : all_ids())
            if (node(id).level < depth_)
                out.push_back(id);
        return out;
    }

    /// Node ids from the root down to `terminal` inclusive.
    std::vector<int> path_nodes(int terminal) const {
        std::vector<int> out;
        for (int id = terminal; id >= 0; id = node(id).parent)
            out.push_back(id);
        std::reverse(out.begin(), out.end());
        return out;
    }

    /// 1-based child-index form of the path ending at `terminal`.
    PathId path_id(int terminal) const {
        PathId p{1};
        auto chain = path_nodes(terminal);
        for (std::size_t i = 1; i < chain.size(); ++i)
            p.push_back(child_position(chain[i]) + 1);
        return p;
    }

    /// Terminal node id for a child-index path; throws on unknown paths.
    int resolve(const PathId &p) const {
        require(!p.empty() && p.front() == 1, "resolve: path must start at the root index 1");
        int id = root_id();
        for (std::size_t i = 1; i < p.size(); ++i) {
            const auto &ch = node(id).children;
            int k = p[i] - 1;
            if (k < 0 || k >= static_cast<int>(ch.size()))
                throw invalid_input("resolve: unknown path " + path_to_string(p));
            id = ch[k];
        }
        return id;
    }

    /// 0-based position of a node among its siblings.
    int child_position(int id) const {
        const TreeNode &n = node(id);
        if (n.parent < 0)
            return 0;
        const auto &ch = node(n.parent).children;
        auto it = std::find(ch.begin(), ch.end(), id);
        require(it != ch.end(), "child_position: orphaned node");
        return static_cast<int>(it - ch.begin());
    }

    int add_child(int parent_id, Vec mu, Vec sigma2, double a, double b) {
        TreeNode n;
        n.id = next_id_++;
        n.parent = parent_id;
        n.level = node(parent_id).level + 1;
        require(n.level <= depth_, "add_child: would exceed tree depth");
        n.mu = std::move(mu);
        n.sigma2 = std::move(sigma2);
        n.a = a;
        n.b = b;
        node(parent_id).children.push_back(n.id);
        nodes_.push_back(std::move(n));
        return nodes_.back().id;
    }

    /// Remove a leaf and recursively any ancestor left childless.
    void remove_leaf_chain(int leaf_id) {
        int id = leaf_id;
        while (id >= 0) {
            TreeNode &n = node(id);
            require(n.children.empty(), "remove_leaf_chain: node still has children");
            int parent = n.parent;
            require(parent >= 0, "remove_leaf_chain: refusing to remove the root");
            auto &ch = node(parent).children;
            ch.erase(std::find(ch.begin(), ch.end(), id));
            erase_node(id);
            if (!node(parent).children.empty())
                break;
            id = parent;
        }
    }

    /// Structural sanity: call after any mutation in tests.
    void validate() const {
        require(!nodes_.empty(), "validate: empty tree");
        require(node(root_id()).parent == -1, "validate: root has a parent");
        int roots = 0;
        for (const auto &n : nodes_) {
            if (n.parent < 0)
                ++roots;
            else {
                const auto &ch = node(n.parent).children;
                require(std::count(ch.begin(), ch.end(), n.id) == 1, "validate: broken child link");
                require(n.level == node(n.parent).level + 1, "validate: broken levels");
            }
            require(n.level >= 1 && n.level <= depth_, "validate: level out of range");
            if (n.children.empty())
                require(n.level == depth_, "validate: leaf above the bottom level");
            require((n.sigma2.array() > 0.0).all(), "validate: nonpositive node variance");
            require(n.a > 0.0 && n.b > 0.0, "validate: nonpositive Beta parameters");
        }
        require(roots == 1, "validate: expected exactly one root");
    }

    nlohmann::json to_json() const {
        nlohmann::json doc;
        doc["format"] = "hcrl-tree";
        doc["version"] = 1;
        doc["depth"] = depth_;
        doc["next_id"] = next_id_;
        nlohmann::json arr = nlohmann::json::array();
        for (int id : all_ids()) {
            const TreeNode &n = node(id);
            nlohmann::json jn;
            jn["id"] = n.id;
            jn["parent"] = n.parent;
            jn["level"] = n.level;
            jn["mu"] = std::vector<double>(n.mu.data(), n.mu.data() + n.mu.size());
            jn["sigma2"] = std::vector<double>(n.sigma2.data(), n.sigma2.data() + n.sigma2.size());
            jn["a"] = n.a;
            jn["b"] = n.b;
            jn["children"] = n.children;
            arr.push_back(std::move(jn));
        }
        doc["nodes"] = std::move(arr);
        return doc;
    }

    static Hierarchy from_json(const nlohmann::json &doc) {
        if (!doc.contains("format") || doc["format"] != "hcrl-tree")
            throw io_error("tree json: missing or wrong format tag");
        Hierarchy h;
        h.depth_ = doc.at("depth").get<int>();
        h.next_id_ = doc.at("next_id").get<int>();
        for (const auto &jn : doc.at("nodes")) {
            TreeNode n;
            n.id = jn.at("id").get<int>();
            n.parent = jn.at("parent").get<int>();
            n.level = jn.at("level").get<int>();
            auto mu = jn.at("mu").get<std::vector<double>>();
            auto s2 = jn.at("sigma2").get<std::vector<double>>();
            n.mu = Eigen::Map<Vec>(mu.data(), static_cast<Eigen::Index>(mu.size()));
            n.sigma2 = Eigen::Map<Vec>(s2.data(), static_cast<Eigen::Index>(s2.size()));
            n.a = jn.at("a").get<double>();
            n.b = jn.at("b").get<double>();
            n.children = jn.at("children").get<std::vector<int>>();
            h.nodes_.push_back(std::move(n));
        }
        h.validate();
        return h;
    }

    /// DOT rendering; one node per component, labeled with level and
    /// (when provided) accumulated posterior mass.
    std::string to_dot(const std::map<int, double> *mass = nullptr) const {
        std::ostringstream os;
        os << "digraph hierarchy {\n  node [shape=box];\n";
        for (int id : all_ids()) {
            const TreeNode &n = node(id);
            os << "  n" << id << " [label=\"" << path_to_string(path_id(id)) << "\\nlevel " << n.level;
            if (mass && mass->count(id))
                os << "\\nmass " << mass->at(id);
            os << "\"];\n";
        }
        for (int id : all_ids())
            for (int c : node(id).children)
                os << "  n" << id << " -> n" << c << ";\n";
        os << "}\n";
        return os.str();
    }

  private:
    std::size_t slot(int id) const {
        for (std::size_t i = 0; i < nodes_.size(); ++i)
            if (nodes_[i].id == id)
                return i;
        throw invalid_input("Hierarchy: unknown node id " + std::to_string(id));
    }

    void erase_node(int id) { nodes_.erase(nodes_.begin() + static_cast<long>(slot(id))); }

    void dfs(int id, std::vector<int> &out) const {
        if (id < 0)
            return;
        out.push_back(id);
        for (int c : node(id).children)
            dfs(c, out);
    }

    int depth_ = 0;
    int next_id_ = 0;
    std::vector<TreeNode> nodes_;
};

/// pi_i = v_i * prod_{j<i} (1 - v_j) for sibling stick draws v in [0,1].
inline Vec stick_weights(const Vec &v) {
    Vec pi(v.size());
    double rem = 1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        require(v[i] >= 0.0 && v[i] <= 1.0, "stick_weights: draws must lie in [0,1]");
        pi[i] = v[i] * rem;
        rem *= (1.0 - v[i]);
    }
    return pi;
}

/// E_q[log p(zeta | v)] for the path ending at `terminal`: the node's
/// E[log v] plus E[log(1-v)] of each elder sibling, summed over the
/// non-root nodes on the path. The root is selected with probability one.
inline double expected_log_path_prior(const Hierarchy &tree, int terminal) {
    double total = 0.0;
    auto chain = tree.path_nodes(terminal);
    for (std::size_t i = 1; i < chain.size(); ++i) {
        const TreeNode &n = tree.node(chain[i]);
        total += n.expect_log_v();
        const auto &sibs = tree.node(n.parent).children;
        for (int s : sibs) {
            if (s == chain[i])
                break;
            total += tree.node(s).expect_log_1mv();
        }
    }
    return total;
}

inline double expected_log_path_prior(const Hierarchy &tree, const PathId &zeta) {
    return expected_log_path_prior(tree, tree.resolve(zeta));
}

/// Per-path E_q[log p(zeta|v)] for every full path, keyed by terminal id.
inline std::map<int, double> full_path_log_priors(const Hierarchy &tree) {
    std::map<int, double> acc;
    acc[tree.root_id()] = 0.0;
    for (int id : tree.all_ids()) {
        if (id == tree.root_id())
            continue;
        const TreeNode &n = tree.node(id);
        double t = acc[n.parent] + n.expect_log_v();
        const auto &sibs = tree.node(n.parent).children;
        for (int s : sibs) {
            if (s == id)
                break;
            t += tree.node(s).expect_log_1mv();
        }
        acc[id] = t;
    }
    std::map<int, double> out;
    for (int id : tree.full_path_ids())
        out[id] = acc[id];
    return out;
}

/// Sum leaf masses up the tree; result covers every path terminal so that
/// an inner path's mass is the sum over its descendant full paths.
inline std::map<int, double> complete_path_mass(const Hierarchy &tree,
                                                const std::map<int, double> &leaf_mass) {
    std::map<int, double> mass;
    auto ids = tree.all_ids();
    for (auto it = ids.rbegin(); it != ids.rend(); ++it) { // children before parents in reverse DFS
        const TreeNode &n = tree.node(*it);
        if (n.children.empty()) {
            auto f = leaf_mass.find(*it);
            mass[*it] = f == leaf_mass.end() ? 0.0 : f->second;
        } else {
            double s = 0.0;
            for (int c : n.children)
                s += mass[c];
            mass[*it] = s;
        }
    }
    return mass;
}

/// GROW: sample one path proportional to accumulated posterior mass; if the
/// sample is an inner path, hang a fresh chain beneath its terminal node
/// down to the bottom level. New nodes specialize inside the parent region:
/// mu jittered by 0.1*parent sigma, variance halved, sticks at the prior.
inline bool grow(Hierarchy &tree, const std::map<int, double> &path_mass, double gamma, Rng &rng) {
    require(!path_mass.empty(), "grow: empty path mass");
    std::vector<int> terminals;
    std::vector<double> w;
    for (int id : tree.all_ids()) {
        auto it = path_mass.find(id);
        require(it != path_mass.end(), "grow: path mass missing terminal " + std::to_string(id));
        terminals.push_back(id);
        w.push_back(std::max(0.0, it->second));
    }
    Vec weights = Eigen::Map<Vec>(w.data(), static_cast<Eigen::Index>(w.size()));
    if (!(weights.sum() > 0.0))
        return false;
    int picked = terminals[rng.categorical(weights)];
    if (tree.node(picked).level >= tree.depth())
        return false; // full paths never grow
    int parent = picked;
    while (tree.node(parent).level < tree.depth()) {
        const TreeNode &p = tree.node(parent);
        Vec mu = p.mu + 0.1 * p.sigma2.cwiseSqrt().cwiseProduct(rng.normal_vec(p.mu.size()));
        Vec sigma2 = 0.5 * p.sigma2;
        parent = tree.add_child(parent, std::move(mu), std::move(sigma2), 1.0, gamma);
    }
    return true;
}

/// PRUNE: among full paths whose share of the total full-path mass falls
/// below delta, cut one uniformly at random (leaf chain removed). Never
/// removes the last remaining full path.
inline bool prune(Hierarchy &tree, const std::map<int, double> &path_mass, double delta, Rng &rng) {
    require(delta > 0.0 && delta < 1.0, "prune: delta must lie in (0,1)");
    auto fulls = tree.full_path_ids();
    if (fulls.size() < 2)
        return false;
    double total = 0.0;
    for (int id : fulls) {
        auto it = path_mass.find(id);
        require(it != path_mass.end(), "prune: path mass missing terminal " + std::to_string(id));
        total += std::max(0.0, it->second);
    }
    if (!(total > 0.0))
        return false;
    std::vector<int> minor;
    for (int id : fulls)
        if (std::max(0.0, path_mass.at(id)) / total < delta)
            minor.push_back(id);
    if (minor.empty())
        return false;
    int victim = minor[rng.index(minor.size())];
    tree.remove_leaf_chain(victim);
    return true;
}

/// Cosine similarity of assignment columns: J(i,j) = q_i.q_j / |q_i||q_j|.
inline double path_cosine(const Vec &qi, const Vec &qj) {
    double ni = qi.norm(), nj = qj.norm();
    if (!(ni > 0.0) || !(nj > 0.0))
        return 0.0;
    return qi.dot(qj) / (ni * nj);
}

/// MERGE: fuse the two most-similar full paths when their assignment-vector
/// cosine reaches the threshold. The lighter path's exclusive node chain is
/// averaged (mass-weighted) into the survivor's same-level nodes, then cut.
/// q_matrix columns follow tree.full_path_ids() order.
inline bool merge(Hierarchy &tree, const Mat &q_matrix, double threshold, Rng & /*rng*/) {
    auto fulls = tree.full_path_ids();
    if (fulls.size() < 2)
        return false;
    require(q_matrix.cols() == static_cast<Eigen::Index>(fulls.size()),
            "merge: q_matrix column count must match full path count");
    double best = -1.0;
    int bi = -1, bj = -1;
    for (Eigen::Index i = 0; i < q_matrix.cols(); ++i)
        for (Eigen::Index j = i + 1; j < q_matrix.cols(); ++j) {
            double c = path_cosine(q_matrix.col(i), q_matrix.col(j));
            if (c > best) {
                best = c;
                bi = static_cast<int>(i);
                bj = static_cast<int>(j);
            }
        }
    if (best < threshold)
        return false;

    double mass_i = q_matrix.col(bi).sum();
    double mass_j = q_matrix.col(bj).sum();
    int keep = fulls[bi], drop = fulls[bj];
    double keep_mass = mass_i, drop_mass = mass_j;
    if (mass_j > mass_i) {
        std::swap(keep, drop);
        std::swap(keep_mass, drop_mass);
    }

    // exclusive chain of the dropped path: suffix whose subtrees contain no
    // other full path
    auto keep_chain = tree.path_nodes(keep);
    auto drop_chain = tree.path_nodes(drop);
    std::size_t start = drop_chain.size();
    while (start > 0) {
        int cand = drop_chain[start - 1];
        bool exclusive = (start == drop_chain.size()) ? tree.node(cand).children.empty()
                                                      : (tree.node(cand).children.size() == 1);
        if (!exclusive)
            break;
        --start;
    }

    double denom = keep_mass + drop_mass;
    double wk = denom > 0.0 ? keep_mass / denom : 0.5;
    double wd = 1.0 - wk;
    for (std::size_t l = start; l < drop_chain.size(); ++l) {
        TreeNode &tgt = tree.node(keep_chain[l]);
        const TreeNode &src = tree.node(drop_chain[l]);
        tgt.mu = wk * tgt.mu + wd * src.mu;
        tgt.sigma2 = wk * tgt.sigma2 + wd * src.sigma2;
        tgt.a = wk * tgt.a + wd * src.a;
        tgt.b = wk * tgt.b + wd * src.b;
    }
    tree.remove_leaf_chain(drop);
    return true;
}

} // namespace hcrl

#endif
