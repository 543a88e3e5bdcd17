#include "dite/checks.hpp"

#include <json.hpp>

#include "dite/acm.hpp"
#include "dite/blocks.hpp"
#include "dite/dsc.hpp"
#include "dite/gradcheck.hpp"
#include "dite/network.hpp"

namespace dite {

using nlohmann::json;

namespace {

TensorD random_tensor(const Shape& s, SeededRng& rng) {
    TensorD t(s);
    for (auto& v : t.data) v = rng.next_normal();
    return t;
}

GradCheckCase run_case(const std::string& name, const std::function<int(TapeD&)>& fwd,
                       const std::vector<ParamRef<double>>& refs, double tol) {
    const FiniteDiffReport rep = finite_diff_check<double>(fwd, refs, 1e-5, tol);
    GradCheckCase c;
    c.name = name;
    c.worst_rel_err = rep.worst_rel;
    c.tol = tol;
    c.finite = rep.all_finite;
    c.pass = rep.pass();
    return c;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.variant = 0;
    cfg.stages = {{1, 1}, {1, 2}};
    cfg.widths = {4, 8};
    cfg.stem_width = 4;
    cfg.groups = {1, 1};
    cfg.kernels = {1, 2};
    cfg.input_h = 32;
    cfg.input_w = 32;
    cfg.num_keypoints = 2;
    return cfg;
}

}  // namespace

GradCheckSuite run_gradcheck_suite(std::uint64_t seed, double tol_ops, double tol_end_to_end) {
    GradCheckSuite suite;
    SeededRng rng(seed);

    {  // plain convolution, gradients w.r.t. input and kernel
        TensorD x = random_tensor({1, 2, 5, 5}, rng);
        TensorD w = random_tensor({3, 2, 3, 3}, rng);
        const ConvSpec spec{2, 3, 3, 3, 1, 1, 1};
        auto fwd = [&](TapeD& tp) {
            return tp.conv2d(tp.param("x", x), tp.param("w", w), spec);
        };
        suite.cases.push_back(run_case(
            "conv2d_1x2x5x5", fwd, {{"x", &x}, {"w", &w}}, tol_ops));
    }
    {  // DSC layer, 1x4x6x6, G=2, N=2
        DscLayer<double> dsc = DscLayer<double>::make(ScsSpec{4, 2}, 2, rng);
        TensorD x = random_tensor({1, 4, 6, 6}, rng);
        auto fwd = [&](TapeD& tp) { return dsc.forward(tp, tp.leaf(x)); };
        suite.cases.push_back(
            run_case("dsc_1x4x6x6_g2_n2", fwd, collect_param_refs<double>(dsc, ""), tol_ops));
    }
    {  // GCM, 1x4x6x6
        Gcm<double> gcm = Gcm<double>::make(4, 4, rng);
        TensorD x = random_tensor({1, 4, 6, 6}, rng);
        auto fwd = [&](TapeD& tp) { return gcm.forward(tp, tp.leaf(x)); };
        suite.cases.push_back(
            run_case("gcm_1x4x6x6", fwd, collect_param_refs<double>(gcm, ""), tol_ops));
    }
    {  // DCM over three branches
        DcmStageSpec spec;
        spec.channels = {2, 4, 8};
        spec.heights = {8, 4, 2};
        spec.widths = {8, 4, 2};
        Dcm<double> dcm = Dcm<double>::make(spec, 4, rng);
        TensorD x0 = random_tensor({1, 2, 8, 8}, rng);
        TensorD x1 = random_tensor({1, 4, 4, 4}, rng);
        TensorD x2 = random_tensor({1, 8, 2, 2}, rng);
        auto fwd = [&](TapeD& tp) {
            auto outs = dcm.forward(tp, {tp.leaf(x0), tp.leaf(x1), tp.leaf(x2)});
            int acc = outs[0];
            acc = tp.add(tp.sum_all(acc), tp.add(tp.sum_all(outs[1]), tp.sum_all(outs[2])));
            return acc;
        };
        suite.cases.push_back(
            run_case("dcm_3branch", fwd, collect_param_refs<double>(dcm, ""), tol_ops));
    }
    {  // DGC block, 1x4x8x8, stride 2
        DgcBlock<double> dgc = DgcBlock<double>::make(4, 4, 2, 4, true, true, rng);
        TensorD x = random_tensor({1, 4, 8, 8}, rng);
        auto fwd = [&](TapeD& tp) { return dgc.forward(tp, tp.leaf(x)); };
        suite.cases.push_back(
            run_case("dgc_1x4x8x8", fwd, collect_param_refs<double>(dgc, ""), tol_ops));
    }
    {  // tiny two-stage network end to end
        ModelD model = ModelD::build(tiny_config(), seed + 1);
        TensorD x = random_tensor({1, 3, 32, 32}, rng);
        auto fwd = [&](TapeD& tp) { return model.forward_graph(tp, tp.leaf(x)).heatmaps; };
        std::vector<ParamRef<double>> refs;
        model.visit([&](const std::string& name, TensorD& t, bool is_param) {
            if (is_param) refs.push_back(ParamRef<double>{name, &t});
        });
        suite.cases.push_back(run_case("end_to_end_2stage_w4", fwd, refs, tol_end_to_end));
    }

    for (const GradCheckCase& c : suite.cases) {
        if (!c.pass) suite.all_pass = false;
    }
    return suite;
}

std::string GradCheckSuite::to_json() const {
    json j;
    j["all_pass"] = all_pass;
    json arr = json::array();
    for (const GradCheckCase& c : cases) {
        arr.push_back({{"name", c.name},
                       {"worst_rel_err", c.worst_rel_err},
                       {"tol", c.tol},
                       {"finite", c.finite},
                       {"pass", c.pass}});
    }
    j["cases"] = arr;
    return j.dump(2);
}

}  // namespace dite
