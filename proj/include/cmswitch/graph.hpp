#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cmswitch/hw.hpp"

namespace cmswitch {

enum class OpKind { MMM, MVM };

const char* to_string(OpKind k);

// One CIM-supportable operator. The weight matrix is n x k, the activation
// entering it is m x n, the result is m x k. For MVM, m == 1.
struct OperatorNode {
    std::string id;
    OpKind kind = OpKind::MMM;
    int64_t m = 0;
    int64_t n = 0;
    int64_t k = 0;
    int64_t weight_bits = 8;
    std::vector<std::string> consume_in_place;  // consumer ids exempt from write-back

    uint64_t total_ops() const { return uint64_t(m) * uint64_t(n) * uint64_t(k); }
    uint64_t input_volume() const { return uint64_t(m) * uint64_t(n); }
    uint64_t output_volume() const { return uint64_t(m) * uint64_t(k); }
    int64_t arithmetic_intensity() const { return k; }

    // Arrays needed to hold this operator's weights.
    int64_t weight_tiles(const HardwareAbstraction& hw) const {
        auto ceil_div = [](int64_t a, int64_t b) { return (a + b - 1) / b; };
        return ceil_div(n, hw.array_h) * ceil_div(k, hw.array_w);
    }
};

// Operator chain in topological order with dependency edges between indices.
struct ComputationGraph {
    std::vector<OperatorNode> nodes;
    std::vector<std::pair<int, int>> edges;  // (producer, consumer), producer < consumer

    bool has_edge(int i, int j) const { return edge_set_.count({i, j}) != 0; }
    bool consume_in_place(int i, int j) const;
    std::vector<int> consumers(int i) const;
    std::vector<int> producers(int j) const;
    int index_of(const std::string& id) const;  // -1 when absent

    void rebuild_index();  // call after mutating nodes/edges
    std::string fingerprint() const;

private:
    std::set<std::pair<int, int>> edge_set_;
    std::vector<std::vector<int>> out_;
    std::vector<std::vector<int>> in_;
};

ComputationGraph load_graph(const std::string& path);
ComputationGraph parse_graph(const std::string& text);

// Splits every operator whose weights exceed the chip into sub-operators that
// fit, greedily along n first, then k. Parent edges fan out to every
// sub-operator; consecutive sub-operators are chained for accumulation order.
ComputationGraph partition_oversized(const ComputationGraph& g, const HardwareAbstraction& hw);

}  // namespace cmswitch
