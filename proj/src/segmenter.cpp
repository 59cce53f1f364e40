#include "cmswitch/segmenter.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "cmswitch/errors.hpp"

namespace cmswitch {
namespace {

Cycles ceil_div_u64(uint64_t a, uint64_t b) { return (a + b - 1) / b; }

std::set<int64_t> compute_set(const AllocationPlan& plan) {
    auto v = plan.compute_arrays();
    return {v.begin(), v.end()};
}

// Memory-input arrays of one op, as a set.
std::set<int64_t> mem_in_set(const AllocationPlan& plan, int graph_index) {
    const auto& v = plan.at(graph_index).mem_in;
    return {v.begin(), v.end()};
}

}  // namespace

TransitionCost transition_cost(const AllocationPlan* prev, const AllocationPlan& next,
                               const ComputationGraph& g, const HardwareAbstraction& hw) {
    if (prev && prev->last_op + 1 != next.first_op)
        throw internal_error("transition_cost: segments are not adjacent");

    TransitionCost t;
    std::set<int64_t> prev_compute = prev ? compute_set(*prev) : std::set<int64_t>{};
    std::set<int64_t> next_compute = compute_set(next);
    for (int64_t a : next_compute)
        if (!prev_compute.count(a)) ++t.switch_m_to_c;
    for (int64_t a : prev_compute)
        if (!next_compute.count(a)) ++t.switch_c_to_m;
    t.swc = Cycles(hw.switch_m_to_c_cycles) * Cycles(t.switch_m_to_c) +
            Cycles(hw.switch_c_to_m_cycles) * Cycles(t.switch_c_to_m);

    Cycles rw = 0;
    for (const auto& op : next.ops)
        rw = std::max(rw, Cycles(op.com()) * Cycles(hw.weight_write_cycles));
    t.rw = rw;

    if (prev) {
        uint64_t elems = 0;
        for (int u = prev->first_op; u <= prev->last_op; ++u) {
            std::vector<int> later;
            for (int v : g.consumers(u))
                if (v > prev->last_op && !g.consume_in_place(u, v)) later.push_back(v);
            if (later.empty()) continue;
            uint64_t out = g.nodes[u].output_volume();
            uint64_t wb_u = out;
            // A single consumer in the very next segment can read the data in
            // place from arrays that stay in memory mode across the cut.
            if (later.size() == 1 && later[0] <= next.last_op) {
                const auto& mout = prev->at(u).mem_out;
                auto min_v = mem_in_set(next, later[0]);
                int64_t colocated = 0;
                for (int64_t a : mout)
                    if (min_v.count(a)) ++colocated;
                uint64_t retained =
                    std::min<uint64_t>(out, uint64_t(colocated) * uint64_t(hw.array_size()));
                wb_u = out - retained;
            }
            if (wb_u > 0) {
                t.writeback.emplace_back(u, wb_u);
                elems += wb_u;
            }
        }
        if (elems > 0) t.wb = ceil_div_u64(elems, uint64_t(hw.main_data_per_cycle));
    }
    return t;
}

namespace {

std::string range_signature(const ComputationGraph& g, int first, int last, bool baseline) {
    std::ostringstream s;
    s << (baseline ? "b|" : "d|");
    for (int p = first; p <= last; ++p) {
        const auto& n = g.nodes[p];
        s << to_string(n.kind) << ',' << n.m << ',' << n.n << ',' << n.k << ';';
    }
    s << '|';
    for (auto [i, j] : g.edges)
        if (i >= first && j <= last) s << (i - first) << '>' << (j - first) << ';';
    return s.str();
}

struct RefineBudget {
    int64_t compute = 0;
    int64_t mem_in = 0;
    int64_t mem_out = 0;
};

// Re-place a plan against the realized previous segment: keep arrays in the
// mode they already have where possible, and land consumer input buffers on
// the producer's output buffers across the cut.
AllocationPlan refine_placement(const AllocationPlan& plan, const AllocationPlan& prev,
                                const ComputationGraph& g, const HardwareAbstraction& hw) {
    int count = plan.size();
    std::set<int64_t> prev_compute = compute_set(prev);

    // Pair structure and per-op extra counts of the original plan.
    std::map<std::pair<int, int>, int64_t> pair_count;
    std::vector<RefineBudget> extra(count);
    std::vector<int64_t> reuse_in(count, 0), reuse_out(count, 0);
    for (const auto& r : plan.reuse) {
        ++pair_count[{r.producer, r.consumer}];
        ++reuse_out[r.producer];
        ++reuse_in[r.consumer];
    }
    for (int p = 0; p < count; ++p) {
        extra[p].compute = plan.ops[p].com();
        extra[p].mem_in = int64_t(plan.ops[p].mem_in.size()) - reuse_in[p];
        extra[p].mem_out = int64_t(plan.ops[p].mem_out.size()) - reuse_out[p];
    }

    AllocationPlan out;
    out.first_op = plan.first_op;
    out.last_op = plan.last_op;
    out.ops.resize(count);

    std::set<int64_t> used;
    auto take = [&](int64_t a) {
        used.insert(a);
        return a;
    };
    // Lowest free array, preferring ones already in the wanted mode.
    auto alloc_pref = [&](bool want_compute) {
        for (int64_t a = 0; a < hw.n_cim; ++a)
            if (!used.count(a) && (prev_compute.count(a) != 0) == want_compute) return take(a);
        for (int64_t a = 0; a < hw.n_cim; ++a)
            if (!used.count(a)) return take(a);
        throw internal_error("refinement ran out of arrays");
    };

    // 1. cross-cut retention: consumer extras onto the producer's out buffers
    for (auto [i, j] : g.edges) {
        if (i < prev.first_op || i > prev.last_op) continue;
        if (j < plan.first_op || j > plan.last_op) continue;
        int rel = j - plan.first_op;
        for (int64_t a : prev.at(i).mem_out) {
            if (extra[rel].mem_in == 0) break;
            if (used.count(a)) continue;
            out.ops[rel].mem_in.push_back(take(a));
            --extra[rel].mem_in;
        }
    }
    // 2. intra-segment reuse pairs on mode-stable memory arrays
    std::vector<ReusePair> pairs;
    for (const auto& [key, n] : pair_count)
        for (int64_t t = 0; t < n; ++t) {
            int64_t a = alloc_pref(false);
            out.ops[key.first].mem_out.push_back(a);
            out.ops[key.second].mem_in.push_back(a);
            pairs.push_back({key.first, key.second, a});
        }
    out.reuse = std::move(pairs);
    // 3. compute arrays on arrays already in compute mode
    for (int p = 0; p < count; ++p)
        for (int64_t t = 0; t < extra[p].compute; ++t)
            out.ops[p].compute.push_back(alloc_pref(true));
    // 4. remaining plain memory buffers
    for (int p = 0; p < count; ++p) {
        for (int64_t t = 0; t < extra[p].mem_in; ++t) out.ops[p].mem_in.push_back(alloc_pref(false));
        for (int64_t t = 0; t < extra[p].mem_out; ++t)
            out.ops[p].mem_out.push_back(alloc_pref(false));
    }
    for (auto& op : out.ops) {
        std::sort(op.compute.begin(), op.compute.end());
        std::sort(op.mem_in.begin(), op.mem_in.end());
        std::sort(op.mem_out.begin(), op.mem_out.end());
    }
    return out;
}

}  // namespace

SegmentationResult segment(const ComputationGraph& g, const HardwareAbstraction& hw,
                           const SegmentOptions& opts) {
    const int m = int(g.nodes.size());
    if (m == 0) throw input_error("segment: empty graph");

    SegmentationResult result;

    // Memoized per-range solves; plans cached relative to the range start so
    // repeated blocks (same dims, same local edges) share one solve.
    std::map<std::string, SolveOutcome> memo;
    std::map<std::pair<int, int>, SolveOutcome> table;

    std::vector<int64_t> tile_prefix(m + 1, 0);
    for (int p = 0; p < m; ++p)
        tile_prefix[p + 1] = tile_prefix[p] + g.nodes[p].weight_tiles(hw);

    for (int i = 0; i < m; ++i) {
        for (int j = i; j < m; ++j) {
            if (tile_prefix[j + 1] - tile_prefix[i] > hw.n_cim) {
                result.stats.ranges_pruned += uint64_t(m - j);
                break;
            }
            ++result.stats.ranges_evaluated;
            std::string sig = range_signature(g, i, j, opts.baseline);
            auto hit = memo.find(sig);
            SolveOutcome outcome;
            if (hit != memo.end()) {
                ++result.stats.memo_hits;
                outcome = hit->second;
                outcome.plan.first_op += i;
                outcome.plan.last_op += i;
            } else {
                ++result.stats.solver_calls;
                outcome = opts.baseline ? static_baseline(g, i, j, hw, opts.solve)
                                        : solve_segment(g, i, j, hw, opts.solve);
                SolveOutcome rel = outcome;
                rel.plan.first_op -= i;
                rel.plan.last_op -= i;
                memo.emplace(std::move(sig), std::move(rel));
            }
            if (!outcome.feasible)
                throw internal_error("range passed the tile prefix check but failed to solve");
            if (!outcome.optimal) result.all_optimal = false;
            table.emplace(std::make_pair(i, j), std::move(outcome));
        }
    }

    const Cycles INF = ~Cycles(0);
    // best[i][j]: cheapest cover of 0..j whose last segment is exactly [i..j]
    std::vector<std::vector<Cycles>> best(m, std::vector<Cycles>(m, INF));
    std::vector<std::vector<int>> parent(m, std::vector<int>(m, -2));

    for (int j = 0; j < m; ++j) {
        for (int i = 0; i <= j; ++i) {
            auto it = table.find({i, j});
            if (it == table.end()) continue;
            const SolveOutcome& cur = it->second;
            if (i == 0) {
                TransitionCost boot = transition_cost(nullptr, cur.plan, g, hw);
                best[i][j] = boot.total() + cur.cost.intra;
                parent[i][j] = -1;
            } else {
                for (int k = 0; k <= i - 1; ++k) {
                    if (best[k][i - 1] == INF) continue;
                    auto pit = table.find({k, i - 1});
                    TransitionCost tr = transition_cost(&pit->second.plan, cur.plan, g, hw);
                    Cycles cand = best[k][i - 1] + tr.total() + cur.cost.intra;
                    if (cand < best[i][j]) {
                        best[i][j] = cand;
                        parent[i][j] = k;
                    }
                }
            }
        }
    }

    int arg = -1;
    Cycles best_total = INF;
    for (int i = 0; i < m; ++i) {
        if (best[i][m - 1] < best_total) {
            best_total = best[i][m - 1];
            arg = i;
        }
    }
    if (arg < 0) throw infeasible_error("no feasible segmentation covers the operator chain");

    std::vector<std::pair<int, int>> ranges;
    int j = m - 1, i = arg;
    while (true) {
        ranges.emplace_back(i, j);
        int k = parent[i][j];
        if (k == -1) break;
        j = i - 1;
        i = k;
    }
    std::reverse(ranges.begin(), ranges.end());

    // Realize the chosen chain; optionally re-place each plan against its
    // realized predecessor (counts and stage latencies never change).
    const AllocationPlan* prev = nullptr;
    for (auto [ri, rj] : ranges) {
        const SolveOutcome& solved = table.at({ri, rj});
        SegmentRecord rec;
        rec.first = ri;
        rec.last = rj;
        rec.plan = solved.plan;
        rec.cost = solved.cost;
        if (opts.refine && prev) {
            AllocationPlan candidate = refine_placement(rec.plan, *prev, g, hw);
            TransitionCost base = transition_cost(prev, rec.plan, g, hw);
            TransitionCost refined = transition_cost(prev, candidate, g, hw);
            if (refined.total() < base.total()) rec.plan = std::move(candidate);
        }
        rec.incoming = transition_cost(prev, rec.plan, g, hw);
        result.segments.push_back(std::move(rec));
        prev = &result.segments.back().plan;
    }
    Cycles total = 0;
    for (const auto& rec : result.segments) total += rec.incoming.total() + rec.cost.intra;
    result.total_cycles = total;
    if (!opts.refine && total != best_total)
        throw internal_error("realized segmentation cost diverged from the DP optimum");
    return result;
}

}  // namespace cmswitch
