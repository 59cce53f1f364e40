#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cmswitch {

// Dual-mode chip description consumed by the optimizer, the code generator and
// the simulator. Two tiers only: chip and array. Rates are per cycle,
// latencies in cycles, volumes in elements unless a field says bytes.
struct HardwareAbstraction {
    int64_t n_cim = 0;                 // number of dual-mode arrays
    int64_t grid_rows = 0;             // array coordinates are (x,y), row-major
    int64_t grid_cols = 0;
    int64_t array_h = 0;               // cell matrix rows of one array
    int64_t array_w = 0;               // cell matrix cols of one array
    int64_t op_per_cycle = 0;          // MACs/cycle of one compute-mode array
    int64_t mem_data_per_cycle = 0;    // elements/cycle of one memory-mode array
    int64_t main_data_per_cycle = 0;   // elements/cycle, main memory + original buffer
    int64_t extern_bw_bits = 0;
    int64_t internal_bw_bits = 0;
    int64_t element_bits = 8;
    int64_t buffer_bytes = 0;
    int64_t switch_m_to_c_cycles = 0;  // per-array mode switch latency
    int64_t switch_c_to_m_cycles = 0;
    int64_t weight_write_cycles = 0;   // cycles to fill one compute array's weights
    int64_t read_cycles = 0;           // memory-mode access overheads, recorded
    int64_t write_cycles = 0;          //   for backends; not part of the cost model
    std::string switch_method;         // opaque description of the switch mechanism

    // Defaults that were derived rather than read from the file.
    std::vector<std::string> provenance;

    int64_t array_size() const { return array_h * array_w; }
    int64_t array_index(int64_t x, int64_t y) const { return x * grid_cols + y; }
    std::pair<int64_t, int64_t> array_coord(int64_t idx) const {
        return {idx / grid_cols, idx % grid_cols};
    }

    // Stable hash of every semantic field; embedded in emitted programs.
    std::string fingerprint() const;
};

// Accepts TOML (flat key = value) or JSON; dispatches on the leading character.
HardwareAbstraction load_hw(const std::string& path);
HardwareAbstraction parse_hw(const std::string& text);

uint64_t fnv1a64(const std::string& s);
std::string to_hex16(uint64_t v);

}  // namespace cmswitch
