#include "linattn/spec_tree.hpp"

#include <cctype>
#include <sstream>

#include "linattn/errors.hpp"

namespace linattn {

std::vector<size_t> validate_tree(const SpecTree& tree) {
    if (tree.nodes.empty()) throw structure_error("tree: must hold at least one node");
    std::vector<size_t> depth(tree.nodes.size());
    for (size_t i = 0; i < tree.nodes.size(); ++i) {
        const ptrdiff_t p = tree.nodes[i].parent;
        if (p != SpecTree::kRootParent &&
            (p < 0 || p >= static_cast<ptrdiff_t>(i)))
            throw structure_error("tree: node " + std::to_string(i) +
                                  " has parent " + std::to_string(p) +
                                  " (parents must precede their children)");
        depth[i] = p == SpecTree::kRootParent ? 1 : depth[static_cast<size_t>(p)] + 1;
    }
    return depth;
}

size_t tree_depth(const SpecTree& tree) {
    const std::vector<size_t> depth = validate_tree(tree);
    size_t mx = 0;
    for (size_t d : depth) mx = std::max(mx, d);
    return mx;
}

std::vector<std::vector<size_t>> tree_children(const SpecTree& tree) {
    validate_tree(tree);
    std::vector<std::vector<size_t>> out(tree.nodes.size() + 1);
    for (size_t i = 0; i < tree.nodes.size(); ++i) {
        const ptrdiff_t p = tree.nodes[i].parent;
        const size_t slot = p == SpecTree::kRootParent ? tree.nodes.size()
                                                       : static_cast<size_t>(p);
        out[slot].push_back(i);
    }
    return out;
}

BoolTensor tree_mask(const SpecTree& tree) {
    validate_tree(tree);
    const size_t m = tree.size();
    BoolTensor mask({m, m}, false);
    for (size_t i = 0; i < m; ++i) {
        // Inherit the ancestor row, then mark self. Parents precede
        // children, so row parent is already complete.
        const ptrdiff_t p = tree.nodes[i].parent;
        if (p != SpecTree::kRootParent)
            for (size_t j = 0; j < m; ++j)
                if (mask(static_cast<size_t>(p), j)) mask(i, j) = true;
        mask(i, i) = true;
    }
    return mask;
}

VerifyResult verify_greedy(const SpecTree& tree, const std::vector<size_t>& verifier_argmax,
                           size_t root_argmax) {
    validate_tree(tree);
    if (verifier_argmax.size() != tree.size())
        throw dim_error("verify_greedy: one argmax per node required");
    const std::vector<std::vector<size_t>> children = tree_children(tree);
    VerifyResult result;
    size_t current = tree.size();  // ROOT slot in the children table
    size_t want = root_argmax;
    for (;;) {
        size_t next = tree.size();
        for (size_t child : children[current]) {
            if (tree.nodes[child].token == want) {
                next = child;  // children are listed in index order: first hit wins
                break;
            }
        }
        if (next == tree.size()) break;
        result.accepted.push_back(next);
        want = verifier_argmax[next];
        current = next;
    }
    result.bonus_token = want;
    return result;
}

SpecTree draft_stub(const std::vector<size_t>& fan_out, Rng& rng, size_t vocab_size) {
    if (fan_out.empty()) throw config_error("draft_stub: fan_out must be nonempty");
    if (vocab_size == 0) throw config_error("draft_stub: vocab_size must be positive");
    for (size_t f : fan_out)
        if (f == 0) throw config_error("draft_stub: fan_out entries must be positive");
    SpecTree tree;
    std::vector<size_t> frontier;  // parents for the next level; empty = ROOT
    for (size_t level = 0; level < fan_out.size(); ++level) {
        std::vector<size_t> next;
        const size_t parents = level == 0 ? 1 : frontier.size();
        for (size_t p = 0; p < parents; ++p) {
            const ptrdiff_t parent_idx =
                level == 0 ? SpecTree::kRootParent : static_cast<ptrdiff_t>(frontier[p]);
            for (size_t c = 0; c < fan_out[level]; ++c) {
                tree.nodes.push_back({parent_idx, rng.uniform_int(vocab_size)});
                next.push_back(tree.nodes.size() - 1);
            }
        }
        frontier = std::move(next);
    }
    return tree;
}

TreeSpecConfig parse_tree_spec(const std::string& text) {
    TreeSpecConfig cfg;
    std::string body = text;
    const auto first = body.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) throw config_error("tree spec: empty");
    body = body.substr(first);
    constexpr const char* kPrefix = "parents:";
    if (body.rfind(kPrefix, 0) == 0) {
        cfg.explicit_parents = true;
        body = body.substr(std::string(kPrefix).size());
    }
    for (char& c : body)
        if (c == ',') c = ' ';
    std::istringstream in(body);
    long long v;
    while (in >> v) {
        if (cfg.explicit_parents) {
            if (v < -1) throw config_error("tree spec: parent index below -1");
            cfg.parents.push_back(static_cast<ptrdiff_t>(v));
        } else {
            if (v < 1) throw config_error("tree spec: fan-out entries must be >= 1");
            cfg.fan_out.push_back(static_cast<size_t>(v));
        }
    }
    if (!in.eof()) throw config_error("tree spec: unparsable token in '" + text + "'");
    if (cfg.explicit_parents ? cfg.parents.empty() : cfg.fan_out.empty())
        throw config_error("tree spec: no entries in '" + text + "'");
    return cfg;
}

SpecTree build_tree(const TreeSpecConfig& spec, Rng& rng, size_t vocab_size) {
    if (!spec.explicit_parents) return draft_stub(spec.fan_out, rng, vocab_size);
    if (vocab_size == 0) throw config_error("build_tree: vocab_size must be positive");
    SpecTree tree;
    tree.nodes.reserve(spec.parents.size());
    for (ptrdiff_t p : spec.parents) tree.nodes.push_back({p, rng.uniform_int(vocab_size)});
    validate_tree(tree);
    return tree;
}

}  // namespace linattn
