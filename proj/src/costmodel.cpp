#include "supersal/costmodel.hpp"

namespace sal {
namespace {

int64_t conv_macs(int64_t out_hw, int64_t c_out, int64_t c_in_per_group, int64_t k) {
    return out_hw * c_out * c_in_per_group * k * k;
}

}  // namespace

CostReport cost_report(const ArchConfig& config, Resolution resolution, CostScope scope) {
    ArchConfig at_res = config;
    at_res.resolution = resolution;
    const NetworkPlan plan = plan_network(at_res);

    CostReport report;
    auto push = [&report](const std::string& name, int64_t params, int64_t flops) {
        report.breakdown.push_back({name, params, flops});
        report.params += params;
        report.flops += flops;
    };

    {
        const int64_t hw = plan.stem_h * plan.stem_w;
        const int64_t c = plan.stem_out;
        const int64_t params = c * 3 * 3 * 3 + 2 * c;
        const int64_t flops = 2 * conv_macs(hw, c, 3, 3) + hw * c /*bn*/ + hw * c /*act*/;
        push("stem", params, flops);
    }

    for (const MbLayerPlan& p : plan.layers) {
        const int64_t in_hw = p.in_h * p.in_w;
        const int64_t out_hw = p.out_h * p.out_w;
        int64_t params = 0, flops = 0;
        if (p.has_expand) {
            params += static_cast<int64_t>(p.hidden) * p.in_ch + 2 * p.hidden;
            flops += 2 * conv_macs(in_hw, p.hidden, p.in_ch, 1) + 2 * in_hw * p.hidden;
        }
        params += static_cast<int64_t>(p.hidden) * p.kernel * p.kernel + 2 * p.hidden;
        flops += 2 * conv_macs(out_hw, p.hidden, 1, p.kernel) + 2 * out_hw * p.hidden;
        if (p.se) {
            params += static_cast<int64_t>(p.se_mid) * p.hidden + p.se_mid +
                      static_cast<int64_t>(p.hidden) * p.se_mid + p.hidden;
            flops += out_hw * p.hidden;                       // pooling reads
            flops += 2 * conv_macs(1, p.se_mid, p.hidden, 1); // fc1
            flops += p.se_mid;                                // relu
            flops += 2 * conv_macs(1, p.hidden, p.se_mid, 1); // fc2
            flops += p.hidden;                                // sigmoid
            flops += out_hw * p.hidden;                       // channel scale
        }
        params += static_cast<int64_t>(p.out_ch) * p.hidden + 2 * p.out_ch;
        flops += 2 * conv_macs(out_hw, p.out_ch, p.hidden, 1) + out_hw * p.out_ch;
        if (p.residual) flops += out_hw * p.out_ch;
        push("mb" + std::to_string(p.block + 1) + ".l" + std::to_string(p.layer), params, flops);
    }

    {
        const int64_t hw = plan.head_h * plan.head_w;
        const int64_t params = static_cast<int64_t>(plan.head_out) * plan.head_in + 2 * plan.head_out;
        const int64_t flops = 2 * conv_macs(hw, plan.head_out, plan.head_in, 1) + 2 * hw * plan.head_out;
        push("head", params, flops);
    }

    if (scope == CostScope::Full) {
        for (const DecoderStagePlan& d : plan.decoder) {
            const int64_t out_hw = d.out_h * d.out_w;
            const int64_t params = static_cast<int64_t>(d.out_ch) * d.in_ch * 3 * 3 + d.out_ch;
            int64_t flops = 4 * out_hw * d.in_ch;  // four interpolation taps per element
            flops += 2 * conv_macs(out_hw, d.out_ch, d.in_ch, 3);
            flops += out_hw * d.out_ch;  // bias
            flops += out_hw * d.out_ch;  // relu
            if (d.skip_block >= 0) flops += out_hw * d.out_ch;
            push("dec" + std::to_string(d.index), params, flops);
        }
        const int64_t hw = plan.in_h * plan.in_w;
        const int64_t params = plan.out_in + 1;
        const int64_t flops = 2 * conv_macs(hw, 1, plan.out_in, 1) + hw /*bias*/ + hw /*sigmoid*/ +
                              2 * hw /*normalize*/;
        push("out", params, flops);
    }
    return report;
}

int64_t count_params(const ArchConfig& config, CostScope scope) {
    return cost_report(config, config.resolution, scope).params;
}

int64_t count_flops(const ArchConfig& config, Resolution resolution, CostScope scope) {
    return cost_report(config, resolution, scope).flops;
}

}  // namespace sal
