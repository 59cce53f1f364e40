#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmswitch/graph.hpp"
#include "cmswitch/hw.hpp"

namespace cmswitch {

using Cycles = std::uint64_t;

// Per-operator array assignment inside one segment. Array ids are linear
// (row-major over the grid). A reused array appears in the producer's mem_out
// and the consumer's mem_in.
struct OpAllocation {
    std::vector<int64_t> compute;
    std::vector<int64_t> mem_in;
    std::vector<int64_t> mem_out;

    int64_t com() const { return int64_t(compute.size()); }
    int64_t mem() const { return int64_t(mem_in.size() + mem_out.size()); }
};

struct ReusePair {
    int producer = 0;  // positions relative to segment start
    int consumer = 0;
    int64_t array = 0;
};

struct AllocationPlan {
    int first_op = 0;  // inclusive graph indices
    int last_op = 0;
    std::vector<OpAllocation> ops;  // index 0 == first_op
    std::vector<ReusePair> reuse;

    int size() const { return int(ops.size()); }
    const OpAllocation& at(int graph_index) const { return ops[graph_index - first_op]; }
    std::vector<int64_t> compute_arrays() const;  // sorted, unique
    int64_t arrays_used() const;                  // distinct arrays of any role
    int64_t memory_array_count() const;           // distinct memory-mode arrays
};

struct SegmentCost {
    std::vector<Cycles> per_op;  // index 0 == plan.first_op
    Cycles intra = 0;            // max over per_op
};

struct SolveOptions {
    // Deterministic work budget for the reuse-credit search; stands in for a
    // wall-clock timeout so identical inputs give identical outputs.
    uint64_t state_budget = 20'000'000;
    bool baseline = false;  // force every array into compute mode semantics
};

struct SolveOutcome {
    bool feasible = false;
    bool optimal = true;  // false when the credit search hit its budget
    AllocationPlan plan;
    SegmentCost cost;
};

// Pipelined stage latency of one operator given its array counts; exact
// integer evaluation of the roofline-style rate model.
Cycles op_latency(const OperatorNode& op, int64_t com, int64_t mem, const HardwareAbstraction& hw);

// Arrays of output data that may overlap between a producer/consumer pair.
int64_t reuse_cap(const OperatorNode& producer, const OperatorNode& consumer,
                  const HardwareAbstraction& hw);

// Minimizes the max stage latency of ops [first..last] subject to the chip's
// array budget; exact over the per-op count space (compute count pinned to
// the weight-tile demand, memory counts and reuse pairings free).
SolveOutcome solve_segment(const ComputationGraph& g, int first, int last,
                           const HardwareAbstraction& hw, const SolveOptions& opts = {});

// All-compute reference allocation: no memory-mode arrays, inputs served at
// the main-memory rate only.
SolveOutcome static_baseline(const ComputationGraph& g, int first, int last,
                             const HardwareAbstraction& hw, const SolveOptions& opts = {});

// Checks a plan against the allocation constraints; empty result == valid.
std::vector<std::string> validate_plan(const AllocationPlan& plan, const ComputationGraph& g,
                                       const HardwareAbstraction& hw);

}  // namespace cmswitch
