#include "cmswitch/graph.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "cmswitch/errors.hpp"

namespace cmswitch {
namespace {

[[noreturn]] void fail(const std::string& msg) { throw input_error("graph: " + msg); }

int64_t ceil_div_i64(int64_t a, int64_t b) { return (a + b - 1) / b; }

}  // namespace

const char* to_string(OpKind k) { return k == OpKind::MMM ? "MMM" : "MVM"; }

bool ComputationGraph::consume_in_place(int i, int j) const {
    const auto& list = nodes[i].consume_in_place;
    return std::find(list.begin(), list.end(), nodes[j].id) != list.end();
}

std::vector<int> ComputationGraph::consumers(int i) const { return out_[i]; }

std::vector<int> ComputationGraph::producers(int j) const { return in_[j]; }

int ComputationGraph::index_of(const std::string& id) const {
    for (size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].id == id) return int(i);
    return -1;
}

void ComputationGraph::rebuild_index() {
    edge_set_.clear();
    out_.assign(nodes.size(), {});
    in_.assign(nodes.size(), {});
    for (auto [i, j] : edges) {
        edge_set_.insert({i, j});
        out_[i].push_back(j);
        in_[j].push_back(i);
    }
    for (auto& v : out_) std::sort(v.begin(), v.end());
    for (auto& v : in_) std::sort(v.begin(), v.end());
}

std::string ComputationGraph::fingerprint() const {
    std::ostringstream s;
    for (const auto& n : nodes) {
        s << n.id << ',' << to_string(n.kind) << ',' << n.m << ',' << n.n << ',' << n.k << ','
          << n.weight_bits << ",[";
        for (const auto& c : n.consume_in_place) s << c << ';';
        s << "];";
    }
    s << '|';
    for (auto [i, j] : edges) s << i << '>' << j << ';';
    return to_hex16(fnv1a64(s.str()));
}

ComputationGraph parse_graph(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(std::string("JSON parse error: ") + e.what());
    }
    if (!j.is_object() || !j.contains("nodes") || !j["nodes"].is_array())
        fail("expected an object with a 'nodes' array");
    for (auto& [key, _] : j.items())
        if (key != "nodes" && key != "edges") fail("unknown top-level key '" + key + "'");

    ComputationGraph g;
    std::unordered_map<std::string, int> index;
    for (const auto& jn : j["nodes"]) {
        if (!jn.is_object()) fail("node entries must be objects");
        OperatorNode node;
        for (auto& [key, val] : jn.items()) {
            if (key == "id") {
                if (!val.is_string()) fail("'id' must be a string");
                node.id = val.get<std::string>();
            } else if (key == "kind") {
                if (!val.is_string()) fail("'kind' must be a string");
                std::string k = val.get<std::string>();
                if (k == "MMM") node.kind = OpKind::MMM;
                else if (k == "MVM") node.kind = OpKind::MVM;
                else fail("unsupported operator kind '" + k + "' (only MMM and MVM map to CIM arrays)");
            } else if (key == "M" || key == "N" || key == "K" || key == "weight_bits") {
                if (!val.is_number_integer()) fail("'" + key + "' must be an integer");
                int64_t v = val.get<int64_t>();
                if (key == "M") node.m = v;
                else if (key == "N") node.n = v;
                else if (key == "K") node.k = v;
                else node.weight_bits = v;
            } else if (key == "consume_in_place") {
                if (!val.is_array()) fail("'consume_in_place' must be an array of ids");
                for (const auto& e : val) {
                    if (!e.is_string()) fail("'consume_in_place' entries must be strings");
                    node.consume_in_place.push_back(e.get<std::string>());
                }
            } else {
                fail("unknown node key '" + key + "'");
            }
        }
        if (node.id.empty()) fail("every node needs a non-empty 'id'");
        if (node.m <= 0 || node.n <= 0 || node.k <= 0)
            fail("node '" + node.id + "': dimensions must be positive");
        if (node.weight_bits <= 0) fail("node '" + node.id + "': weight_bits must be positive");
        if (node.kind == OpKind::MVM && node.m != 1)
            fail("node '" + node.id + "': MVM requires M=1");
        if (index.count(node.id)) fail("duplicate node id '" + node.id + "'");
        index[node.id] = int(g.nodes.size());
        g.nodes.push_back(std::move(node));
    }
    if (g.nodes.empty()) fail("graph has no nodes");

    if (j.contains("edges")) {
        if (!j["edges"].is_array()) fail("'edges' must be an array");
        for (const auto& je : j["edges"]) {
            if (!je.is_array() || je.size() != 2 || !je[0].is_string() || !je[1].is_string())
                fail("each edge must be a [src_id, dst_id] pair");
            auto src = index.find(je[0].get<std::string>());
            auto dst = index.find(je[1].get<std::string>());
            if (src == index.end()) fail("edge references unknown node '" + je[0].get<std::string>() + "'");
            if (dst == index.end()) fail("edge references unknown node '" + je[1].get<std::string>() + "'");
            int i = src->second, k = dst->second;
            if (i == k) fail("self edge on node '" + je[0].get<std::string>() + "'");
            if (i > k)
                fail("edge (" + g.nodes[i].id + " -> " + g.nodes[k].id +
                     "): order violates dependency; nodes must be listed topologically");
            g.edges.emplace_back(i, k);
        }
    }
    std::sort(g.edges.begin(), g.edges.end());
    if (std::adjacent_find(g.edges.begin(), g.edges.end()) != g.edges.end())
        fail("duplicate edge");
    g.rebuild_index();

    for (size_t i = 0; i < g.nodes.size(); ++i) {
        for (const auto& dst : g.nodes[i].consume_in_place) {
            int t = g.index_of(dst);
            if (t < 0 || !g.has_edge(int(i), t))
                fail("node '" + g.nodes[i].id + "': consume_in_place target '" + dst +
                     "' is not one of its consumers");
        }
    }
    return g;
}

ComputationGraph load_graph(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw input_error("cannot open graph '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_graph(buf.str());
}

namespace {

// Greedy split of one operator: maximal chip-filling chunks first, remainder
// last. Splitting n first keeps the sub-operators' arithmetic intensity (= k)
// equal to the parent's; k is split only when a single row of k-tiles already
// exceeds the chip.
std::vector<OperatorNode> split_operator(const OperatorNode& op, const HardwareAbstraction& hw) {
    const int64_t h = hw.array_h, w = hw.array_w;
    std::vector<std::pair<int64_t, int64_t>> parts;  // (n, k) of each sub-operator
    int64_t tiles_k = ceil_div_i64(op.k, w);
    if (tiles_k <= hw.n_cim) {
        int64_t chunk_n = (hw.n_cim / tiles_k) * h;
        for (int64_t off = 0; off < op.n; off += chunk_n)
            parts.emplace_back(std::min(chunk_n, op.n - off), op.k);
    } else {
        int64_t chunk_k = hw.n_cim * w;
        for (int64_t noff = 0; noff < op.n; noff += h)
            for (int64_t koff = 0; koff < op.k; koff += chunk_k)
                parts.emplace_back(std::min(h, op.n - noff), std::min(chunk_k, op.k - koff));
    }
    std::vector<OperatorNode> subs;
    for (size_t idx = 0; idx < parts.size(); ++idx) {
        OperatorNode sub = op;
        sub.id = op.id + "#" + std::to_string(idx);
        sub.n = parts[idx].first;
        sub.k = parts[idx].second;
        subs.push_back(std::move(sub));
    }
    return subs;
}

}  // namespace

ComputationGraph partition_oversized(const ComputationGraph& g, const HardwareAbstraction& hw) {
    if (hw.n_cim < 1) throw infeasible_error("chip has no arrays");

    bool any = false;
    for (const auto& n : g.nodes)
        if (n.weight_tiles(hw) > hw.n_cim) any = true;
    if (!any) return g;

    std::set<std::string> used_ids;
    for (const auto& n : g.nodes) used_ids.insert(n.id);

    ComputationGraph out;
    // Sub-operator index ranges in the new node list, per original node.
    std::vector<std::pair<int, int>> span(g.nodes.size());
    for (size_t i = 0; i < g.nodes.size(); ++i) {
        const auto& node = g.nodes[i];
        int begin = int(out.nodes.size());
        if (node.weight_tiles(hw) <= hw.n_cim) {
            out.nodes.push_back(node);
        } else {
            auto subs = split_operator(node, hw);
            for (auto& sub : subs) {
                while (used_ids.count(sub.id)) sub.id += "+";
                used_ids.insert(sub.id);
                out.nodes.push_back(std::move(sub));
            }
            // accumulation order between consecutive sub-operators
            for (int p = begin; p + 1 < begin + int(subs.size()); ++p)
                out.edges.emplace_back(p, p + 1);
        }
        span[i] = {begin, int(out.nodes.size())};
    }

    // Flag lists are rebuilt from the rewired edges; inherited copies would
    // reference pre-split ids.
    for (auto& n : out.nodes) n.consume_in_place.clear();
    for (auto [i, j] : g.edges) {
        bool flagged = g.consume_in_place(i, j);
        for (int a = span[i].first; a < span[i].second; ++a)
            for (int b = span[j].first; b < span[j].second; ++b) {
                out.edges.emplace_back(a, b);
                if (flagged) out.nodes[a].consume_in_place.push_back(out.nodes[b].id);
            }
    }

    std::sort(out.edges.begin(), out.edges.end());
    out.edges.erase(std::unique(out.edges.begin(), out.edges.end()), out.edges.end());
    out.rebuild_index();
    return out;
}

}  // namespace cmswitch
