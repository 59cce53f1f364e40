#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cmswitch/allocator.hpp"
#include "cmswitch/graph.hpp"
#include "cmswitch/hw.hpp"

namespace cmswitch {

// Cost of entering a segment: write-back of live data, mode switches, weight
// rewrite. Every array the chip does not keep in compute mode counts as
// memory mode, so the cost depends only on the two adjacent plans.
struct TransitionCost {
    Cycles wb = 0;
    Cycles swc = 0;
    Cycles rw = 0;
    int64_t switch_m_to_c = 0;
    int64_t switch_c_to_m = 0;
    // (graph index, elements) written back to main memory, ascending by index.
    std::vector<std::pair<int, uint64_t>> writeback;

    Cycles total() const { return wb + swc + rw; }
};

// prev == nullptr models the boot state: all arrays in memory mode, nothing
// loaded. Otherwise prev must end right before next begins.
TransitionCost transition_cost(const AllocationPlan* prev, const AllocationPlan& next,
                               const ComputationGraph& g, const HardwareAbstraction& hw);

struct SegmentRecord {
    int first = 0;
    int last = 0;
    AllocationPlan plan;
    SegmentCost cost;
    TransitionCost incoming;
};

struct DpStats {
    uint64_t ranges_evaluated = 0;
    uint64_t ranges_pruned = 0;
    uint64_t solver_calls = 0;
    uint64_t memo_hits = 0;
};

struct SegmentationResult {
    std::vector<SegmentRecord> segments;
    Cycles total_cycles = 0;
    bool all_optimal = true;
    DpStats stats;
};

struct SegmentOptions {
    SolveOptions solve;
    bool baseline = false;
    // Re-place each chosen segment against its realized predecessor to cut
    // switch and write-back cost; stage latencies are placement-independent.
    bool refine = false;
};

// Optimal contiguous segmentation of the whole chain under the per-segment
// solver and the pairwise transition model.
SegmentationResult segment(const ComputationGraph& g, const HardwareAbstraction& hw,
                           const SegmentOptions& opts = {});

}  // namespace cmswitch
