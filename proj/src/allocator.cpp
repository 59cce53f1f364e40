#include "cmswitch/allocator.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <set>

#include "cmswitch/errors.hpp"

namespace cmswitch {
namespace {

using u128 = unsigned __int128;

Cycles ceil_div_u128(u128 a, u128 b) {
    u128 q = (a + b - 1) / b;
    return Cycles(q);
}

int64_t ceil_div_i64(int64_t a, int64_t b) { return (a + b - 1) / b; }

// Compute-side MAC rate as an exact fraction num/den. With ragged weight
// tiles an array holds n*k/tiles cells on average instead of a full h*w.
struct ComputeRate {
    u128 num = 0;
    u128 den = 1;
};

ComputeRate compute_rate(const OperatorNode& op, int64_t com, const HardwareAbstraction& hw) {
    bool ragged = (op.n % hw.array_h) != 0 || (op.k % hw.array_w) != 0;
    if (!ragged) return {u128(com) * u128(hw.op_per_cycle), 1};
    return {u128(com) * u128(op.n) * u128(op.k), u128(op.weight_tiles(hw))};
}

u128 memory_rate(const OperatorNode& op, int64_t mem, const HardwareAbstraction& hw) {
    return (u128(mem) * u128(hw.mem_data_per_cycle) + u128(hw.main_data_per_cycle)) *
           u128(op.arithmetic_intensity());
}

// Smallest memory-array count whose stage latency is <= target, or nullopt
// when even unlimited memory bandwidth cannot reach it (compute bound).
std::optional<int64_t> mem_need(const OperatorNode& op, int64_t com, Cycles target,
                                const HardwareAbstraction& hw) {
    u128 total = op.total_ops();
    ComputeRate c = compute_rate(op, com, hw);
    if (total * c.den > u128(target) * c.num) return std::nullopt;
    // (mem*D_cim + D_main) * AI * target >= total
    u128 ai_t = u128(op.arithmetic_intensity()) * u128(target);
    u128 base = u128(hw.main_data_per_cycle) * ai_t;
    if (base >= total) return 0;
    return int64_t(ceil_div_u128(total - base, u128(hw.mem_data_per_cycle) * ai_t));
}

// ---------------------------------------------------------------------------
// Reuse-credit search: maximize the number of producer-output / consumer-input
// array pairings, subject to each operator's memory budget and the per-edge
// data-volume cap. Unit of credit = one physical array saved.

struct CreditEdge {
    int i = 0;  // relative positions, i < j
    int j = 0;
    int64_t cap = 0;
};

struct CreditProblem {
    std::vector<int64_t> budget;
    std::vector<CreditEdge> edges;  // sorted by (i, j)
};

bool is_path_shape(const CreditProblem& p) {
    std::set<std::pair<int, int>> seen;
    for (const auto& e : p.edges) {
        if (e.j != e.i + 1) return false;
        if (!seen.insert({e.i, e.j}).second) return false;
    }
    return true;
}

// On a chain, taking the maximum on each edge left to right is optimal and
// yields the lexicographically largest maximal assignment.
std::vector<int64_t> greedy_credit(const CreditProblem& p, std::vector<int64_t> rem) {
    std::vector<int64_t> r(p.edges.size(), 0);
    for (size_t e = 0; e < p.edges.size(); ++e) {
        const auto& edge = p.edges[e];
        r[e] = std::min({edge.cap, rem[edge.i], rem[edge.j]});
        rem[edge.i] -= r[e];
        rem[edge.j] -= r[e];
    }
    return r;
}

int64_t credit_total(const std::vector<int64_t>& r) {
    int64_t t = 0;
    for (auto v : r) t += v;
    return t;
}

// Exact sweep DP for general edge sets. States hold the remaining budgets of
// operators that still have unprocessed edges.
class CreditDp {
public:
    CreditDp(const CreditProblem& p, uint64_t* budget_left) : p_(p), work_(budget_left) {}

    std::optional<int64_t> solve(const std::vector<int64_t>& start) {
        int n = int(start.size());
        std::vector<int> last_use(n, -1);
        std::vector<std::vector<int>> edges_into(n);
        for (size_t e = 0; e < p_.edges.size(); ++e) {
            const auto& edge = p_.edges[e];
            last_use[edge.i] = std::max(last_use[edge.i], edge.j);
            last_use[edge.j] = std::max(last_use[edge.j], edge.j);
            edges_into[edge.j].push_back(int(e));
        }
        for (auto& v : edges_into)
            std::sort(v.begin(), v.end(), [&](int a, int b) { return p_.edges[a].i < p_.edges[b].i; });

        std::vector<int> active;  // op positions with live budget in the state key
        std::map<std::vector<int64_t>, int64_t> states;
        states[{}] = 0;

        for (int pos = 0; pos < n; ++pos) {
            if (last_use[pos] >= 0) {
                active.push_back(pos);
                std::map<std::vector<int64_t>, int64_t> grown;
                for (auto& [key, credit] : states) {
                    auto k = key;
                    k.push_back(start[pos]);
                    grown.emplace(std::move(k), credit);
                }
                states.swap(grown);
            }
            for (int ei : edges_into[pos]) {
                const auto& edge = p_.edges[ei];
                int ai = slot(active, edge.i);
                int aj = slot(active, edge.j);
                std::map<std::vector<int64_t>, int64_t> next;
                for (auto& [key, credit] : states) {
                    int64_t top = std::min({edge.cap, key[ai], key[aj]});
                    for (int64_t r = top; r >= 0; --r) {
                        if (!charge()) return std::nullopt;
                        auto k = key;
                        k[ai] -= r;
                        k[aj] -= r;
                        auto [it, inserted] = next.emplace(std::move(k), credit + r);
                        if (!inserted && it->second < credit + r) it->second = credit + r;
                    }
                }
                states.swap(next);
            }
            // Drop operators with no edges past this position.
            std::vector<int> keep_slots;
            std::vector<int> still;
            for (size_t s = 0; s < active.size(); ++s) {
                if (last_use[active[s]] > pos) {
                    keep_slots.push_back(int(s));
                    still.push_back(active[s]);
                }
            }
            if (still.size() != active.size()) {
                std::map<std::vector<int64_t>, int64_t> shrunk;
                for (auto& [key, credit] : states) {
                    std::vector<int64_t> k;
                    k.reserve(keep_slots.size());
                    for (int s : keep_slots) k.push_back(key[s]);
                    auto [it, inserted] = shrunk.emplace(std::move(k), credit);
                    if (!inserted && it->second < credit) it->second = credit;
                }
                states.swap(shrunk);
                active.swap(still);
            }
        }
        int64_t best = 0;
        for (auto& [key, credit] : states) best = std::max(best, credit);
        return best;
    }

private:
    static int slot(const std::vector<int>& active, int op) {
        auto it = std::find(active.begin(), active.end(), op);
        return int(it - active.begin());
    }
    bool charge() {
        if (*work_ == 0) return false;
        --*work_;
        return true;
    }
    const CreditProblem& p_;
    uint64_t* work_;
};

struct CreditSolution {
    std::vector<int64_t> r;
    bool optimal = true;
};

int64_t max_credit_value(const CreditProblem& p, const std::vector<int64_t>& budgets,
                         uint64_t* work, bool* exact) {
    if (is_path_shape(p)) return credit_total(greedy_credit(p, budgets));
    CreditDp dp(p, work);
    auto v = dp.solve(budgets);
    if (v) return *v;
    *exact = false;
    CreditProblem q = p;  // greedy fallback on the same edge order
    return credit_total(greedy_credit(q, budgets));
}

// Recovers a concrete assignment achieving the maximum: fix each edge in
// canonical order to the largest value that keeps the remainder attainable.
CreditSolution assign_credit(const CreditProblem& p, uint64_t* work) {
    CreditSolution out;
    out.r.assign(p.edges.size(), 0);
    if (p.edges.empty()) return out;
    if (is_path_shape(p)) {
        out.r = greedy_credit(p, p.budget);
        return out;
    }
    bool exact = true;
    int64_t target = max_credit_value(p, p.budget, work, &exact);
    if (!exact) {
        out.r = greedy_credit(p, p.budget);
        out.optimal = false;
        return out;
    }
    std::vector<int64_t> rem = p.budget;
    int64_t assigned = 0;
    for (size_t e = 0; e < p.edges.size(); ++e) {
        const auto& edge = p.edges[e];
        CreditProblem rest;
        rest.budget = rem;
        rest.edges.assign(p.edges.begin() + e + 1, p.edges.end());
        int64_t top = std::min({edge.cap, rem[edge.i], rem[edge.j]});
        for (int64_t r = top; r >= 0; --r) {
            auto rb = rem;
            rb[edge.i] -= r;
            rb[edge.j] -= r;
            bool sub_exact = true;
            int64_t tail = max_credit_value(rest, rb, work, &sub_exact);
            if (!sub_exact) {
                out.r = greedy_credit(p, p.budget);
                out.optimal = false;
                return out;
            }
            if (assigned + r + tail == target) {
                out.r[e] = r;
                rem = rb;
                assigned += r;
                break;
            }
        }
    }
    if (assigned != target) throw internal_error("credit extraction lost the optimum");
    return out;
}

// ---------------------------------------------------------------------------

struct SegmentContext {
    const ComputationGraph& g;
    int first;
    int last;
    const HardwareAbstraction& hw;
    std::vector<int64_t> tiles;
    CreditProblem credit;  // budgets filled per probe
};

bool counts_feasible(SegmentContext& ctx, Cycles target, std::vector<int64_t>& needs,
                     uint64_t* work, bool* exact) {
    int count = ctx.last - ctx.first + 1;
    needs.assign(count, 0);
    int64_t used = 0;
    for (int p = 0; p < count; ++p) {
        const auto& op = ctx.g.nodes[ctx.first + p];
        auto need = mem_need(op, ctx.tiles[p], target, ctx.hw);
        if (!need) return false;
        needs[p] = *need;
        used += ctx.tiles[p] + needs[p];
    }
    if (used <= ctx.hw.n_cim) return true;  // no reuse needed
    int64_t credit = max_credit_value(ctx.credit, needs, work, exact);
    return used - credit <= ctx.hw.n_cim;
}

AllocationPlan place(const SegmentContext& ctx, const std::vector<int64_t>& needs,
                     const std::vector<int64_t>& reuse) {
    int count = ctx.last - ctx.first + 1;
    AllocationPlan plan;
    plan.first_op = ctx.first;
    plan.last_op = ctx.last;
    plan.ops.resize(count);

    std::vector<int64_t> in_r(count, 0), out_r(count, 0);
    for (size_t e = 0; e < ctx.credit.edges.size(); ++e) {
        out_r[ctx.credit.edges[e].i] += reuse[e];
        in_r[ctx.credit.edges[e].j] += reuse[e];
    }

    int64_t next_free = 0;
    auto alloc = [&]() {
        if (next_free >= ctx.hw.n_cim) throw internal_error("placement ran out of arrays");
        return next_free++;
    };

    // reuse pairs first, then compute, then plain memory (row-major ids)
    for (size_t e = 0; e < ctx.credit.edges.size(); ++e) {
        const auto& edge = ctx.credit.edges[e];
        for (int64_t t = 0; t < reuse[e]; ++t) {
            int64_t a = alloc();
            plan.ops[edge.i].mem_out.push_back(a);
            plan.ops[edge.j].mem_in.push_back(a);
            plan.reuse.push_back({edge.i, edge.j, a});
        }
    }
    for (int p = 0; p < count; ++p)
        for (int64_t t = 0; t < ctx.tiles[p]; ++t) plan.ops[p].compute.push_back(alloc());
    for (int p = 0; p < count; ++p) {
        const auto& op = ctx.g.nodes[ctx.first + p];
        int64_t extra = needs[p] - in_r[p] - out_r[p];
        // Keep enough output-buffer arrays to hold the result when a consumer
        // lies beyond the segment; those arrays can carry data across the cut.
        int64_t extra_out = 0;
        bool has_later_consumer = false;
        for (int c : ctx.g.consumers(ctx.first + p))
            if (c > ctx.last) has_later_consumer = true;
        if (has_later_consumer) {
            int64_t want = ceil_div_i64(int64_t(op.output_volume()), ctx.hw.array_size());
            extra_out = std::min(extra, std::max<int64_t>(0, want - out_r[p]));
        }
        int64_t extra_in = extra - extra_out;
        for (int64_t t = 0; t < extra_in; ++t) plan.ops[p].mem_in.push_back(alloc());
        for (int64_t t = 0; t < extra_out; ++t) plan.ops[p].mem_out.push_back(alloc());
    }
    for (auto& opalloc : plan.ops) {
        std::sort(opalloc.mem_in.begin(), opalloc.mem_in.end());
        std::sort(opalloc.mem_out.begin(), opalloc.mem_out.end());
    }
    return plan;
}

SolveOutcome solve_impl(const ComputationGraph& g, int first, int last,
                        const HardwareAbstraction& hw, const SolveOptions& opts) {
    if (first < 0 || last >= int(g.nodes.size()) || first > last)
        throw internal_error("solve_segment: bad range");

    SegmentContext ctx{g, first, last, hw, {}, {}};
    int count = last - first + 1;
    int64_t tile_sum = 0;
    for (int p = 0; p < count; ++p) {
        ctx.tiles.push_back(g.nodes[first + p].weight_tiles(hw));
        tile_sum += ctx.tiles[p];
    }
    SolveOutcome out;
    if (tile_sum > hw.n_cim) return out;  // infeasible: weights alone overflow the chip

    ctx.credit.budget.assign(count, 0);
    if (!opts.baseline) {
        for (auto [i, j] : g.edges)
            if (i >= first && j <= last)
                ctx.credit.edges.push_back(
                    {i - first, j - first, reuse_cap(g.nodes[i], g.nodes[j], hw)});
        std::sort(ctx.credit.edges.begin(), ctx.credit.edges.end(),
                  [](const CreditEdge& a, const CreditEdge& b) {
                      return std::tie(a.i, a.j) < std::tie(b.i, b.j);
                  });
    }

    uint64_t work = opts.state_budget;
    bool exact = true;
    std::vector<int64_t> needs(count, 0);
    Cycles best_t = 0;

    if (opts.baseline) {
        for (int p = 0; p < count; ++p)
            best_t = std::max(best_t, op_latency(g.nodes[first + p], ctx.tiles[p], 0, hw));
    } else {
        std::set<Cycles> cand;
        for (int p = 0; p < count; ++p) {
            const auto& op = g.nodes[first + p];
            u128 total = op.total_ops();
            ComputeRate c = compute_rate(op, ctx.tiles[p], hw);
            Cycles floor_lat = ceil_div_u128(total * c.den, c.num);
            auto plateau = mem_need(op, ctx.tiles[p], floor_lat, hw);
            int64_t cap = std::min<int64_t>(hw.n_cim, plateau ? *plateau : hw.n_cim);
            for (int64_t mem = 0; mem <= cap; ++mem)
                cand.insert(op_latency(op, ctx.tiles[p], mem, hw));
        }
        std::vector<Cycles> sorted(cand.begin(), cand.end());
        size_t lo = 0, hi = sorted.size() - 1;
        // max latency at mem=0 is always feasible once the tile sum fits
        while (lo < hi) {
            size_t mid = (lo + hi) / 2;
            std::vector<int64_t> probe;
            if (counts_feasible(ctx, sorted[mid], probe, &work, &exact))
                hi = mid;
            else
                lo = mid + 1;
        }
        best_t = sorted[lo];
        if (!counts_feasible(ctx, best_t, needs, &work, &exact))
            throw internal_error("latency search converged on an infeasible point");
    }

    CreditProblem assign_problem = ctx.credit;
    assign_problem.budget = needs;
    CreditSolution credit = assign_credit(assign_problem, &work);

    out.feasible = true;
    out.optimal = exact && credit.optimal;
    out.plan = place(ctx, needs, credit.r);
    out.cost.per_op.resize(count);
    for (int p = 0; p < count; ++p)
        out.cost.per_op[p] =
            op_latency(g.nodes[first + p], ctx.tiles[p], needs[p], hw);
    out.cost.intra = *std::max_element(out.cost.per_op.begin(), out.cost.per_op.end());
    if (!opts.baseline && out.optimal && out.cost.intra != best_t)
        throw internal_error("placed plan does not reproduce the searched latency");
    return out;
}

}  // namespace

std::vector<int64_t> AllocationPlan::compute_arrays() const {
    std::vector<int64_t> all;
    for (const auto& op : ops) all.insert(all.end(), op.compute.begin(), op.compute.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    return all;
}

int64_t AllocationPlan::arrays_used() const {
    std::set<int64_t> s;
    for (const auto& op : ops) {
        s.insert(op.compute.begin(), op.compute.end());
        s.insert(op.mem_in.begin(), op.mem_in.end());
        s.insert(op.mem_out.begin(), op.mem_out.end());
    }
    return int64_t(s.size());
}

int64_t AllocationPlan::memory_array_count() const {
    std::set<int64_t> s;
    for (const auto& op : ops) {
        s.insert(op.mem_in.begin(), op.mem_in.end());
        s.insert(op.mem_out.begin(), op.mem_out.end());
    }
    return int64_t(s.size());
}

Cycles op_latency(const OperatorNode& op, int64_t com, int64_t mem, const HardwareAbstraction& hw) {
    if (com < op.weight_tiles(hw))
        throw internal_error("op_latency: compute arrays below the weight-tile demand");
    if (mem < 0) throw internal_error("op_latency: negative memory count");
    u128 total = op.total_ops();
    ComputeRate c = compute_rate(op, com, hw);
    u128 m = memory_rate(op, mem, hw);
    if (c.num <= m * c.den) return ceil_div_u128(total * c.den, c.num);
    return ceil_div_u128(total, m);
}

int64_t reuse_cap(const OperatorNode& producer, const OperatorNode& consumer,
                  const HardwareAbstraction& hw) {
    uint64_t overlap = std::min(producer.output_volume(), consumer.input_volume());
    return ceil_div_i64(int64_t(overlap), hw.array_size());
}

SolveOutcome solve_segment(const ComputationGraph& g, int first, int last,
                           const HardwareAbstraction& hw, const SolveOptions& opts) {
    return solve_impl(g, first, last, hw, opts);
}

SolveOutcome static_baseline(const ComputationGraph& g, int first, int last,
                             const HardwareAbstraction& hw, const SolveOptions& opts) {
    SolveOptions b = opts;
    b.baseline = true;
    return solve_impl(g, first, last, hw, b);
}

std::vector<std::string> validate_plan(const AllocationPlan& plan, const ComputationGraph& g,
                                       const HardwareAbstraction& hw) {
    std::vector<std::string> bad;
    auto op_name = [&](int p) { return g.nodes[plan.first_op + p].id; };

    std::map<int64_t, char> array_mode;  // 'c' or 'm'
    std::map<std::pair<int64_t, int>, std::vector<char>> roles;  // (array, op) -> roles
    for (int p = 0; p < plan.size(); ++p) {
        const auto& a = plan.ops[p];
        for (auto id : a.compute) roles[{id, p}].push_back('c');
        for (auto id : a.mem_in) roles[{id, p}].push_back('i');
        for (auto id : a.mem_out) roles[{id, p}].push_back('o');
    }
    for (auto& [key, r] : roles) {
        auto [id, p] = key;
        if (id < 0 || id >= hw.n_cim)
            bad.push_back("array " + std::to_string(id) + " outside the grid");
        if (r.size() > 1)
            bad.push_back("op " + op_name(p) + ": array " + std::to_string(id) +
                          " holds more than one role");
        char mode = r[0] == 'c' ? 'c' : 'm';
        auto [it, inserted] = array_mode.emplace(id, mode);
        if (!inserted && it->second != mode)
            bad.push_back("array " + std::to_string(id) + " assigned both modes in one segment");
    }

    // cross-operator sharing: only producer-out / consumer-in pairs over edges
    std::map<int64_t, std::vector<std::pair<int, char>>> per_array;
    for (auto& [key, r] : roles) per_array[key.first].push_back({key.second, r[0]});
    for (auto& [id, users] : per_array) {
        if (users.size() < 2) continue;
        std::sort(users.begin(), users.end());
        for (size_t a = 0; a < users.size(); ++a)
            for (size_t b = a + 1; b < users.size(); ++b) {
                int pi = users[a].first, pj = users[b].first;
                bool ok = users[a].second == 'o' && users[b].second == 'i' &&
                          g.has_edge(plan.first_op + pi, plan.first_op + pj);
                if (!ok)
                    bad.push_back("array " + std::to_string(id) + " shared by " + op_name(pi) +
                                  " and " + op_name(pj) + " without a dependency reuse");
            }
    }

    for (int p = 0; p < plan.size(); ++p) {
        const auto& node = g.nodes[plan.first_op + p];
        if (plan.ops[p].com() < node.weight_tiles(hw))
            bad.push_back("op " + op_name(p) + ": weights not fully mapped");
    }

    // dependency reuse bound per edge
    for (int pi = 0; pi < plan.size(); ++pi)
        for (int pj = pi + 1; pj < plan.size(); ++pj) {
            int i = plan.first_op + pi, j = plan.first_op + pj;
            if (!g.has_edge(i, j)) continue;
            std::vector<int64_t> shared;
            std::set_intersection(plan.ops[pi].mem_out.begin(), plan.ops[pi].mem_out.end(),
                                  plan.ops[pj].mem_in.begin(), plan.ops[pj].mem_in.end(),
                                  std::back_inserter(shared));
            if (int64_t(shared.size()) > reuse_cap(g.nodes[i], g.nodes[j], hw))
                bad.push_back("edge " + g.nodes[i].id + "->" + g.nodes[j].id +
                              ": reuse exceeds the shared-data bound");
        }

    if (plan.arrays_used() > hw.n_cim) bad.push_back("plan exceeds the chip's array budget");
    return bad;
}

}  // namespace cmswitch
