#include "dite/complexity.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "dite/autograd.hpp"

namespace dite {

using nlohmann::json;

namespace {

struct ScopeAgg {
    std::size_t first_index = 0;
    std::string kind;
    double kind_weight = -1;
    Shape out_shape{0, 0, 0, 0};
    std::int64_t params = 0;
    double macs = 0;
    double aux = 0;
};

std::string parent_scope(const std::string& name) {
    const auto pos = name.rfind('.');
    return pos == std::string::npos ? std::string() : name.substr(0, pos);
}

std::string prefix_at_depth(const std::string& scope, std::size_t depth) {
    std::size_t pos = 0;
    for (std::size_t d = 0; d < depth; ++d) {
        pos = scope.find('.', pos);
        if (pos == std::string::npos) return scope;
        ++pos;
    }
    return scope.substr(0, pos - 1);
}

}  // namespace

ComplexityReport analyze(Model<float>& model, int input_h, int input_w) {
    Tape<float> tp;
    const int x = tp.leaf(Tensor<float>(1, 3, input_h, input_w));
    model.forward_graph(tp, x);

    std::map<std::string, ScopeAgg> agg;
    std::vector<std::string> order;
    const auto touch = [&](const std::string& scope, std::size_t index) -> ScopeAgg& {
        auto it = agg.find(scope);
        if (it == agg.end()) {
            it = agg.emplace(scope, ScopeAgg{index, "", -1, {0, 0, 0, 0}, 0, 0, 0}).first;
            order.push_back(scope);
        }
        return it->second;
    };

    const auto& nodes = tp.nodes();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const auto& n = nodes[i];
        const std::string scope = tp.scope_name(n.scope);
        if (scope.empty()) continue;
        if (n.kind == "param" || n.kind == "buffer" || n.kind == "leaf") continue;
        ScopeAgg& a = touch(scope, i);
        a.macs += n.cost.macs;
        a.aux += n.cost.aux;
        a.out_shape = n.value.shape;
        const double weight = n.cost.macs > 0 ? n.cost.macs + 1e9 : n.cost.aux;
        if (weight > a.kind_weight) {
            a.kind_weight = weight;
            a.kind = n.kind;
        }
    }
    for (const auto& p : tp.params()) {
        if (!p.is_param) continue;
        const std::string scope = parent_scope(p.name);
        ScopeAgg& a = touch(scope.empty() ? p.name : scope, static_cast<std::size_t>(p.node));
        a.params += p.numel;
        if (a.kind.empty()) a.kind = "params";
    }

    std::sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
        return agg.at(a).first_index < agg.at(b).first_index;
    });

    ComplexityReport rep;
    rep.config_id = model.cfg.id();
    rep.input_h = input_h;
    rep.input_w = input_w;
    std::map<std::string, GroupTotal> group_map;
    std::vector<std::string> group_order;
    for (const std::string& scope : order) {
        const ScopeAgg& a = agg.at(scope);
        LayerNode node;
        node.name = scope;
        node.kind = a.kind;
        node.out_shape = a.out_shape;
        node.params = a.params;
        node.macs = a.macs;
        node.aux = a.aux;
        rep.nodes.push_back(node);
        rep.total_params += a.params;
        rep.mac_flops += a.macs;
        rep.aux_flops += a.aux;
        if (scope.rfind("head", 0) == 0) {
            rep.head_params += a.params;
            rep.head_mac_flops += a.macs;
        }
        for (std::size_t depth = 1; depth <= 2; ++depth) {
            const std::string prefix = prefix_at_depth(scope, depth);
            if (depth == 2 && prefix == prefix_at_depth(scope, 1)) break;
            auto it = group_map.find(prefix);
            if (it == group_map.end()) {
                it = group_map.emplace(prefix, GroupTotal{prefix, 0, 0, 0}).first;
                group_order.push_back(prefix);
            }
            it->second.params += a.params;
            it->second.macs += a.macs;
            it->second.aux += a.aux;
        }
    }
    for (const std::string& g : group_order) rep.groups.push_back(group_map.at(g));
    return rep;
}

namespace {

json shape_json(const Shape& s) { return json::array({s.n, s.c, s.h, s.w}); }

json nodes_json(const ComplexityReport& r) {
    json arr = json::array();
    for (const LayerNode& n : r.nodes) {
        arr.push_back({{"name", n.name},
                       {"kind", n.kind},
                       {"out_shape", shape_json(n.out_shape)},
                       {"params", n.params},
                       {"macs", n.macs},
                       {"aux", n.aux}});
    }
    return arr;
}

}  // namespace

std::string ComplexityReport::to_json() const {
    json j;
    j["config"] = config_id;
    j["input"] = {input_h, input_w};
    j["totals"] = {{"params", total_params},
                   {"params_m", params_m()},
                   {"mac_flops", mac_flops},
                   {"aux_flops", aux_flops},
                   {"table_flops", table_flops()},
                   {"table_mflops", table_mflops()},
                   {"head_params", head_params},
                   {"head_mac_flops", head_mac_flops}};
    json groups = json::array();
    for (const GroupTotal& g : this->groups) {
        groups.push_back(
            {{"name", g.name}, {"params", g.params}, {"macs", g.macs}, {"aux", g.aux}});
    }
    j["groups"] = groups;
    j["nodes"] = nodes_json(*this);
    return j.dump(2);
}

std::string ComplexityReport::to_csv() const {
    std::ostringstream ss;
    ss << "name,kind,out_n,out_c,out_h,out_w,params,macs,aux\n";
    for (const LayerNode& n : nodes) {
        ss << n.name << ',' << n.kind << ',' << n.out_shape.n << ',' << n.out_shape.c << ','
           << n.out_shape.h << ',' << n.out_shape.w << ',' << n.params << ',' << n.macs << ','
           << n.aux << '\n';
    }
    ss << "TOTAL,,,,,," << total_params << ',' << mac_flops << ',' << aux_flops << '\n';
    return ss.str();
}

std::string export_summary_json(Model<float>& model) {
    const ComplexityReport rep = analyze(model, model.cfg.input_h, model.cfg.input_w);
    json j;
    j["config"] = model.cfg.id();
    j["input"] = {model.cfg.input_h, model.cfg.input_w};
    json stages = json::array();
    for (const StageSpec& s : model.cfg.stages) {
        stages.push_back({{"modules", s.modules}, {"branches", s.branches}});
    }
    j["stages"] = stages;
    j["widths"] = model.cfg.widths;
    j["stem_width"] = model.cfg.stem_width;
    j["G"] = model.cfg.groups;
    j["N"] = model.cfg.kernels;
    j["keypoints"] = model.cfg.num_keypoints;
    j["total_params"] = rep.total_params;
    json layers = json::array();
    for (const LayerNode& n : rep.nodes) {
        layers.push_back({{"name", n.name},
                          {"kind", n.kind},
                          {"out_shape", shape_json(n.out_shape)},
                          {"params", n.params}});
    }
    j["layers"] = layers;
    j["layer_count"] = layers.size();
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

std::vector<std::vector<int>> sweep_default_g_rows() {
    return {{1, 1, 1, 1}, {1, 1, 2, 4}, {4, 2, 1, 1}, {4, 4, 4, 4}};
}

std::vector<std::vector<int>> sweep_default_n_cols() {
    return {{1, 1, 1, 1}, {4, 4, 2, 1}, {1, 2, 4, 4}, {4, 4, 4, 4}};
}

SweepResult sweep_hyperparams(const ModelConfig& base, const std::vector<std::vector<int>>& g_rows,
                              const std::vector<std::vector<int>>& n_cols, int input_h,
                              int input_w) {
    SweepResult res;
    res.input_h = input_h;
    res.input_w = input_w;
    res.cols = n_cols.size();
    for (const auto& g : g_rows) {
        for (const auto& n : n_cols) {
            SweepCell cell;
            cell.g = g;
            cell.n = n;
            try {
                ModelConfig cfg = base;
                cfg.groups.assign(g.begin(), g.end());
                cfg.kernels.assign(n.begin(), n.end());
                Model<float> m = Model<float>::build(cfg, 1);
                const ComplexityReport rep = analyze(m, input_h, input_w);
                cell.params = rep.total_params;
                cell.mac_flops = rep.mac_flops;
                cell.table_flops = rep.table_flops();
            } catch (const std::exception& e) {
                cell.error = e.what();
            }
            res.cells.push_back(std::move(cell));
        }
    }
    // params must not decrease when (G, N) grow componentwise
    const auto leq = [](const std::vector<int>& a, const std::vector<int>& b) {
        if (a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i] > b[i]) return false;
        }
        return true;
    };
    for (const SweepCell& a : res.cells) {
        if (!a.ok()) continue;
        for (const SweepCell& b : res.cells) {
            if (!b.ok()) continue;
            if (leq(a.g, b.g) && leq(a.n, b.n) && a.params > b.params) {
                res.params_monotone = false;
            }
        }
    }
    return res;
}

std::string SweepResult::to_json() const {
    json j;
    j["input"] = {input_h, input_w};
    j["cols"] = cols;
    j["params_monotone"] = params_monotone;
    json arr = json::array();
    for (const SweepCell& c : cells) {
        json cj;
        cj["G"] = c.g;
        cj["N"] = c.n;
        if (c.ok()) {
            cj["params"] = c.params;
            cj["params_m"] = static_cast<double>(c.params) / 1e6;
            cj["mac_flops"] = c.mac_flops;
            cj["table_gflops"] = c.table_flops / 1e9;
        } else {
            cj["error"] = c.error;
        }
        arr.push_back(cj);
    }
    j["cells"] = arr;
    return j.dump(2);
}

std::string SweepResult::to_csv() const {
    std::ostringstream ss;
    ss << "G,N,params,params_m,mac_flops,table_gflops,error\n";
    for (const SweepCell& c : cells) {
        const auto vec = [](const std::vector<int>& v) {
            std::string s;
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (i) s += ' ';
                s += std::to_string(v[i]);
            }
            return s;
        };
        ss << vec(c.g) << ',' << vec(c.n) << ',';
        if (c.ok()) {
            ss << c.params << ',' << static_cast<double>(c.params) / 1e6 << ',' << c.mac_flops
               << ',' << c.table_flops / 1e9 << ',';
        } else {
            ss << ",,,," << c.error;
        }
        ss << '\n';
    }
    return ss.str();
}

// ---------------------------------------------------------------------------
// expectations / verification
// ---------------------------------------------------------------------------

ModelConfig config_from_id(const std::string& config_id) {
    std::string rest = config_id;
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while ((pos = rest.find(':')) != std::string::npos) {
        parts.push_back(rest.substr(0, pos));
        rest = rest.substr(pos + 1);
    }
    parts.push_back(rest);
    ModelConfig cfg;
    if (parts[0] == "dite18") cfg = ModelConfig::dite18();
    else if (parts[0] == "dite30") cfg = ModelConfig::dite30();
    else throw TensorError("config id: unknown base '" + parts[0] + "'");
    const auto parse_vec = [](const std::string& s) {
        std::vector<int> v;
        std::stringstream ss(s);
        std::string tok;
        while (std::getline(ss, tok, ',')) v.push_back(std::stoi(tok));
        return v;
    };
    for (std::size_t i = 1; i < parts.size(); ++i) {
        if (parts[i].rfind("G=", 0) == 0) cfg.groups = parse_vec(parts[i].substr(2));
        else if (parts[i].rfind("N=", 0) == 0) cfg.kernels = parse_vec(parts[i].substr(2));
        else throw TensorError("config id: unknown modifier '" + parts[i] + "'");
    }
    cfg.validate();
    return cfg;
}

std::vector<Expectation> load_expectations(const std::string& csv_path) {
    std::ifstream f(csv_path);
    if (!f) throw TensorError("expectations: cannot open " + csv_path);
    std::vector<Expectation> out;
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (first && line.rfind("config_id", 0) == 0) {
            first = false;
            continue;  // header
        }
        first = false;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) fields.push_back(tok);
        if (fields.size() < 7) {
            throw TensorError("expectations: malformed row '" + line + "'");
        }
        Expectation e;
        e.config_id = fields[0];
        e.input_h = std::stoi(fields[1]);
        e.input_w = std::stoi(fields[2]);
        e.params_m = std::stod(fields[3]);
        e.mflops = std::stod(fields[4]);
        e.tol_params = std::stod(fields[5]);
        e.tol_flops = std::stod(fields[6]);
        out.push_back(std::move(e));
    }
    return out;
}

VerifyResult verify_against_expectations(const std::string& csv_path) {
    VerifyResult res;
    std::vector<Expectation> expectations;
    try {
        expectations = load_expectations(csv_path);
    } catch (const std::exception& e) {
        res.skipped.push_back(e.what());
        res.all_pass = false;
        return res;
    }
    // Models are rebuilt per config id; analysis is input-size dependent, so
    // one build serves every input row of the same id.
    std::map<std::string, Model<float>> cache;
    for (const Expectation& e : expectations) {
        VerifyEntry entry;
        entry.expected = e;
        try {
            auto it = cache.find(e.config_id);
            if (it == cache.end()) {
                it = cache.emplace(e.config_id, Model<float>::build(config_from_id(e.config_id), 1))
                         .first;
            }
            const ComplexityReport rep = analyze(it->second, e.input_h, e.input_w);
            entry.got_params_m = rep.params_m();
            entry.got_mflops = rep.table_mflops();
            entry.params_rel_err = std::fabs(entry.got_params_m - e.params_m) / e.params_m;
            entry.flops_rel_err = std::fabs(entry.got_mflops - e.mflops) / e.mflops;
            entry.pass = entry.params_rel_err <= e.tol_params && entry.flops_rel_err <= e.tol_flops;
            if (!entry.pass) {
                std::ostringstream note;
                note << "params " << entry.got_params_m << "M vs " << e.params_m << "M (rel "
                     << entry.params_rel_err << ", tol " << e.tol_params << "); flops "
                     << entry.got_mflops << " vs " << e.mflops << " MFLOPs (rel "
                     << entry.flops_rel_err << ", tol " << e.tol_flops << ")";
                entry.note = note.str();
                res.all_pass = false;
            }
            res.entries.push_back(std::move(entry));
        } catch (const std::exception& ex) {
            res.skipped.push_back(e.config_id + ": " + ex.what());
        }
    }
    return res;
}

std::string VerifyResult::to_json() const {
    json j;
    j["all_pass"] = all_pass;
    json arr = json::array();
    for (const VerifyEntry& e : entries) {
        arr.push_back({{"config", e.expected.config_id},
                       {"input", {e.expected.input_h, e.expected.input_w}},
                       {"expected_params_m", e.expected.params_m},
                       {"expected_mflops", e.expected.mflops},
                       {"got_params_m", e.got_params_m},
                       {"got_mflops", e.got_mflops},
                       {"params_rel_err", e.params_rel_err},
                       {"flops_rel_err", e.flops_rel_err},
                       {"tol_params", e.expected.tol_params},
                       {"tol_flops", e.expected.tol_flops},
                       {"pass", e.pass},
                       {"note", e.note}});
    }
    j["entries"] = arr;
    j["skipped"] = skipped;
    return j.dump(2);
}

}  // namespace dite
