#include "cmswitch/hw.hpp"

#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <variant>

#include <nlohmann/json.hpp>

#include "cmswitch/errors.hpp"

namespace cmswitch {
namespace {

using ConfigValue = std::variant<int64_t, std::string, std::vector<int64_t>>;
using ConfigMap = std::map<std::string, ConfigValue>;

[[noreturn]] void fail(const std::string& msg) { throw input_error("hw config: " + msg); }

// Minimal TOML subset: `key = value` with integer, string, or integer-array
// values, `#` comments, blank lines. That covers the whole config schema.
ConfigMap parse_toml_subset(const std::string& text) {
    ConfigMap out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) fail("line " + std::to_string(lineno) + ": expected key = value");
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty() || val.empty()) fail("line " + std::to_string(lineno) + ": empty key or value");
        if (out.count(key)) fail("duplicate key '" + key + "'");
        if (val.front() == '"') {
            if (val.size() < 2 || val.back() != '"') fail("line " + std::to_string(lineno) + ": unterminated string");
            out.emplace(key, val.substr(1, val.size() - 2));
        } else if (val.front() == '[') {
            if (val.back() != ']') fail("line " + std::to_string(lineno) + ": unterminated array");
            std::vector<int64_t> items;
            std::istringstream av(val.substr(1, val.size() - 2));
            std::string item;
            while (std::getline(av, item, ',')) {
                item = trim(item);
                if (item.empty()) fail("line " + std::to_string(lineno) + ": empty array item");
                try {
                    items.push_back(std::stoll(item));
                } catch (const std::exception&) {
                    fail("line " + std::to_string(lineno) + ": bad integer '" + item + "'");
                }
            }
            out.emplace(key, std::move(items));
        } else {
            try {
                size_t pos = 0;
                int64_t v = std::stoll(val, &pos);
                if (pos != val.size()) fail("line " + std::to_string(lineno) + ": bad integer '" + val + "'");
                out.emplace(key, v);
            } catch (const input_error&) {
                throw;
            } catch (const std::exception&) {
                fail("line " + std::to_string(lineno) + ": bad integer '" + val + "'");
            }
        }
    }
    return out;
}

ConfigMap parse_config_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(std::string("JSON parse error: ") + e.what());
    }
    if (!j.is_object()) fail("top-level JSON value must be an object");
    ConfigMap out;
    for (auto& [key, val] : j.items()) {
        if (val.is_number_integer()) {
            out.emplace(key, val.get<int64_t>());
        } else if (val.is_string()) {
            out.emplace(key, val.get<std::string>());
        } else if (val.is_array()) {
            std::vector<int64_t> items;
            for (auto& e : val) {
                if (!e.is_number_integer()) fail("array key '" + key + "' must hold integers");
                items.push_back(e.get<int64_t>());
            }
            out.emplace(key, std::move(items));
        } else {
            fail("key '" + key + "' has an unsupported value type");
        }
    }
    return out;
}

class FieldReader {
public:
    explicit FieldReader(ConfigMap m) : map_(std::move(m)) {}

    int64_t require_int(const std::string& key) {
        auto it = map_.find(key);
        if (it == map_.end()) fail("missing required key '" + key + "'");
        return take_int(it);
    }
    bool optional_int(const std::string& key, int64_t& out) {
        auto it = map_.find(key);
        if (it == map_.end()) return false;
        out = take_int(it);
        return true;
    }
    bool optional_string(const std::string& key, std::string& out) {
        auto it = map_.find(key);
        if (it == map_.end()) return false;
        if (!std::holds_alternative<std::string>(it->second)) fail("key '" + key + "' must be a string");
        out = std::get<std::string>(it->second);
        map_.erase(it);
        return true;
    }
    std::vector<int64_t> require_array(const std::string& key, size_t n) {
        auto it = map_.find(key);
        if (it == map_.end()) fail("missing required key '" + key + "'");
        if (!std::holds_alternative<std::vector<int64_t>>(it->second))
            fail("key '" + key + "' must be an array");
        auto v = std::get<std::vector<int64_t>>(it->second);
        if (v.size() != n)
            fail("key '" + key + "' must have " + std::to_string(n) + " entries");
        map_.erase(it);
        return v;
    }
    void reject_unknown() const {
        if (!map_.empty()) fail("unknown key '" + map_.begin()->first + "'");
    }

private:
    int64_t take_int(ConfigMap::iterator it) {
        if (!std::holds_alternative<int64_t>(it->second))
            fail("key '" + it->first + "' must be an integer");
        int64_t v = std::get<int64_t>(it->second);
        map_.erase(it);
        return v;
    }
    ConfigMap map_;
};

void check_positive(const std::string& name, int64_t v) {
    if (v <= 0) fail("'" + name + "' must be positive, got " + std::to_string(v));
}

void check_non_negative(const std::string& name, int64_t v) {
    if (v < 0) fail("'" + name + "' must be non-negative, got " + std::to_string(v));
}

HardwareAbstraction from_config(ConfigMap map) {
    FieldReader r(std::move(map));
    HardwareAbstraction hw;
    hw.n_cim = r.require_int("n_cim");
    auto grid = r.require_array("grid", 2);
    hw.grid_rows = grid[0];
    hw.grid_cols = grid[1];
    hw.array_h = r.require_int("array_h");
    hw.array_w = r.require_int("array_w");
    hw.mem_data_per_cycle = r.require_int("mem_data_per_cycle");
    hw.extern_bw_bits = r.require_int("extern_bw_bits");
    hw.internal_bw_bits = r.require_int("internal_bw_bits");
    hw.buffer_bytes = r.require_int("buffer_bytes");
    hw.switch_m_to_c_cycles = r.require_int("switch_m_to_c_cycles");
    hw.switch_c_to_m_cycles = r.require_int("switch_c_to_m_cycles");
    hw.weight_write_cycles = r.require_int("weight_write_cycles");
    hw.read_cycles = r.require_int("read_cycles");
    hw.write_cycles = r.require_int("write_cycles");

    if (!r.optional_int("element_bits", hw.element_bits)) {
        hw.element_bits = 8;
        hw.provenance.push_back("element_bits defaulted to 8");
    }
    if (!r.optional_int("op_per_cycle", hw.op_per_cycle)) {
        hw.op_per_cycle = hw.array_h * hw.array_w;
        hw.provenance.push_back("op_per_cycle derived as array_h*array_w");
    }
    if (!r.optional_int("main_data_per_cycle", hw.main_data_per_cycle)) {
        if (hw.element_bits > 0)
            hw.main_data_per_cycle = (hw.extern_bw_bits + hw.internal_bw_bits) / hw.element_bits;
        hw.provenance.push_back("main_data_per_cycle derived as (extern_bw_bits+internal_bw_bits)/element_bits");
    }
    r.optional_string("switch_method", hw.switch_method);
    r.reject_unknown();

    check_positive("n_cim", hw.n_cim);
    check_positive("grid rows", hw.grid_rows);
    check_positive("grid cols", hw.grid_cols);
    if (hw.grid_rows * hw.grid_cols != hw.n_cim)
        fail("grid " + std::to_string(hw.grid_rows) + "x" + std::to_string(hw.grid_cols) +
             " does not cover n_cim=" + std::to_string(hw.n_cim));
    check_positive("array_h", hw.array_h);
    check_positive("array_w", hw.array_w);
    check_positive("op_per_cycle", hw.op_per_cycle);
    check_positive("mem_data_per_cycle", hw.mem_data_per_cycle);
    check_positive("main_data_per_cycle", hw.main_data_per_cycle);
    check_positive("extern_bw_bits", hw.extern_bw_bits);
    check_positive("internal_bw_bits", hw.internal_bw_bits);
    check_positive("buffer_bytes", hw.buffer_bytes);
    if (hw.element_bits != 8 && hw.element_bits != 16 && hw.element_bits != 32)
        fail("'element_bits' must be 8, 16 or 32");
    check_non_negative("switch_m_to_c_cycles", hw.switch_m_to_c_cycles);
    check_non_negative("switch_c_to_m_cycles", hw.switch_c_to_m_cycles);
    check_non_negative("weight_write_cycles", hw.weight_write_cycles);
    check_non_negative("read_cycles", hw.read_cycles);
    check_non_negative("write_cycles", hw.write_cycles);
    return hw;
}

}  // namespace

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string to_hex16(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

std::string HardwareAbstraction::fingerprint() const {
    std::ostringstream s;
    s << n_cim << ',' << grid_rows << ',' << grid_cols << ',' << array_h << ',' << array_w << ','
      << op_per_cycle << ',' << mem_data_per_cycle << ',' << main_data_per_cycle << ','
      << extern_bw_bits << ',' << internal_bw_bits << ',' << element_bits << ',' << buffer_bytes
      << ',' << switch_m_to_c_cycles << ',' << switch_c_to_m_cycles << ',' << weight_write_cycles
      << ',' << read_cycles << ',' << write_cycles << ',' << switch_method;
    return to_hex16(fnv1a64(s.str()));
}

HardwareAbstraction parse_hw(const std::string& text) {
    auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) throw input_error("hw config: empty file");
    if (text[first] == '{') return from_config(parse_config_json(text));
    return from_config(parse_toml_subset(text));
}

HardwareAbstraction load_hw(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw input_error("cannot open hw config '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_hw(buf.str());
}

}  // namespace cmswitch
