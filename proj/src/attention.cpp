#include "cft/attention.hpp"

#include <cmath>

namespace cft {

AttentionBlockParams::AttentionBlockParams(ParamSet& params, const std::string& name, int64_t query_width,
                                           int64_t kv_width, int64_t value_width, int64_t inner_dim, bool self_mode,
                                           Rng& rng)
    : norm_q(params, name + ".norm_q", query_width),
      norm_ffn(params, name + ".norm_ffn", query_width),
      proj_q(params, name + ".proj_q", query_width, inner_dim, rng),
      proj_k(params, name + ".proj_k", kv_width, inner_dim, rng),
      proj_v(params, name + ".proj_v", value_width, inner_dim, rng),
      proj_o(params, name + ".proj_o", inner_dim, query_width, rng),
      ffn(params, name + ".ffn", query_width, query_width, rng),
      self_mode(self_mode) {
    if (!self_mode) norm_kv = LayerNorm(params, name + ".norm_kv", kv_width);
}

namespace {

struct ProjectedTokens {
    Tensor q;  // [n_q x inner], pre-scaled by 1/sqrt(head_dim)
    Tensor k;  // [n_k x inner]
    Tensor v;  // [n_k x inner]
};

ProjectedTokens project_tokens(const AttentionBlockParams& blk, const AttentionStack& stack, const Tensor& stream,
                               const Tensor& kv_source, int64_t value_width) {
    Tensor xq = blk.norm_q(stream);
    Tensor kvn = blk.self_mode ? xq : blk.norm_kv(kv_source);
    ProjectedTokens out;
    out.q = scale(blk.proj_q(xq), 1.0 / std::sqrt(static_cast<double>(stack.head_dim)));
    out.k = blk.proj_k(kvn);
    out.v = blk.proj_v(slice(kvn, 1, 0, value_width));
    return out;
}

Tensor finish_block(const AttentionBlockParams& blk, const Tensor& stream, const Tensor& attended) {
    Tensor x = add(stream, blk.proj_o(attended));
    return add(x, blk.ffn(blk.norm_ffn(x)));
}

void capture_mean_heads(AttnCapture* capture, const std::vector<Tensor>& head_attn, int layer, int window,
                        const std::vector<int64_t>& cells, const std::vector<int>& group, int64_t n_real) {
    if (!capture) return;
    CapturedAttention cap;
    cap.layer = layer;
    cap.window = window;
    cap.query_cells = cells;
    cap.group = group;
    cap.n_query = n_real;
    cap.n_key = head_attn[0].dim(1);
    cap.weights.assign(static_cast<size_t>(n_real * cap.n_key), 0.0);
    for (const Tensor& a : head_attn) {
        const auto& av = a.values();
        for (int64_t i = 0; i < n_real * cap.n_key; ++i)
            cap.weights[static_cast<size_t>(i)] += av[static_cast<size_t>(i)] / static_cast<double>(head_attn.size());
    }
    capture->push_back(std::move(cap));
}

}  // namespace

Tensor partitioned_attention_layer(const AttentionBlockParams& blk, const AttentionStack& stack, const Tensor& stream,
                                   const Tensor& kv_source, int64_t value_width,
                                   const std::vector<std::vector<int64_t>>& query_rows,
                                   const std::vector<std::vector<int64_t>>& key_rows, PadMode pad_mode, int64_t pad_to,
                                   const Tensor* pad_row, const std::string& score_label,
                                   const std::string& value_label, int layer_index, AttnCapture* capture) {
    if (query_rows.size() != key_rows.size())
        throw TensorError("partitioned_attention_layer: partition list mismatch");
    ProjectedTokens proj = project_tokens(blk, stack, stream, kv_source, value_width);
    const int64_t hd = stack.head_dim;

    Tensor zero_pad;
    if (pad_mode == PadMode::kPadded && pad_row == nullptr) {
        zero_pad = Tensor::zeros({1, stack.inner_dim()});
        pad_row = &zero_pad;
    }

    std::vector<Tensor> part_outputs;
    std::vector<int64_t> out_rows;
    for (size_t p = 0; p < query_rows.size(); ++p) {
        const auto& qr = query_rows[p];
        const auto& kr = key_rows[p];
        const int64_t n_real = static_cast<int64_t>(qr.size());
        Tensor q = gather_rows(proj.q, qr);
        if (pad_mode == PadMode::kPadded && n_real < pad_to)
            q = concat({q, repeat_rows(*pad_row, pad_to - n_real)}, 0);
        Tensor k = gather_rows(proj.k, kr);
        Tensor v = gather_rows(proj.v, kr);
        std::vector<Tensor> head_out;
        std::vector<Tensor> head_attn;
        for (int h = 0; h < stack.heads; ++h) {
            Tensor qh = slice(q, 1, h * hd, hd);
            Tensor kh = slice(k, 1, h * hd, hd);
            Tensor vh = slice(v, 1, h * hd, hd);
            Tensor scores;
            {
                LabelGuard label(score_label);
                scores = matmul_nt(qh, kh);
            }
            Tensor attn = softmax(scores, 1);
            if (capture) head_attn.push_back(attn);
            Tensor oh;
            {
                LabelGuard label(value_label);
                oh = matmul(attn, vh);
            }
            head_out.push_back(oh);
        }
        Tensor out = concat(head_out, 1);
        if (out.dim(0) > n_real) out = slice(out, 0, 0, n_real);  // drop padded query rows
        capture_mean_heads(capture, head_attn, layer_index, static_cast<int>(p), qr,
                           {}, n_real);
        part_outputs.push_back(out);
        out_rows.insert(out_rows.end(), qr.begin(), qr.end());
    }
    Tensor attended = part_outputs.size() == 1 ? part_outputs[0] : concat(part_outputs, 0);
    attended = scatter_rows(attended, out_rows, stream.dim(0));
    return finish_block(blk, stream, attended);
}

Tensor masked_global_attention_layer(const AttentionBlockParams& blk, const AttentionStack& stack,
                                     const Tensor& stream, const Tensor& kv_source, int64_t value_width,
                                     const std::vector<uint8_t>& allow, const std::string& score_label,
                                     const std::string& value_label) {
    ProjectedTokens proj = project_tokens(blk, stack, stream, kv_source, value_width);
    const int64_t hd = stack.head_dim;
    const int64_t n_q = proj.q.dim(0), n_k = proj.k.dim(0);
    if (static_cast<int64_t>(allow.size()) != n_q * n_k)
        throw TensorError("masked_global_attention_layer: mask size mismatch");
    std::vector<Tensor> head_out;
    for (int h = 0; h < stack.heads; ++h) {
        Tensor qh = slice(proj.q, 1, h * hd, hd);
        Tensor kh = slice(proj.k, 1, h * hd, hd);
        Tensor vh = slice(proj.v, 1, h * hd, hd);
        Tensor scores;
        {
            LabelGuard label(score_label);
            scores = matmul_nt(qh, kh);
        }
        Tensor attn = masked_softmax(scores, allow, 1);
        Tensor oh;
        {
            LabelGuard label(value_label);
            oh = matmul(attn, vh);
        }
        head_out.push_back(oh);
    }
    return finish_block(blk, stream, concat(head_out, 1));
}

VaParams::VaParams(ParamSet& params, const std::string& name, const AttentionStack& stack_in, int64_t image_width_in,
                   int64_t image_value_width_in, int64_t bev_width_in, int64_t bev_content_in, Rng& rng)
    : stack(stack_in), image_width(image_width_in), image_value_width(image_value_width_in), bev_width(bev_width_in),
      bev_content(bev_content_in) {
    stack.validate();
    if (bev_content > bev_width) throw TensorError("VaParams: content slice exceeds token width");
    for (int i = 0; i < stack.n_self; ++i)
        self_blocks.emplace_back(params, name + ".self." + std::to_string(i), image_width, image_width,
                                 image_value_width, stack.inner_dim(), /*self_mode=*/true, rng);
    for (int i = 0; i < stack.n_cross; ++i)
        cross_blocks.emplace_back(params, name + ".cross." + std::to_string(i), bev_width, image_width,
                                  image_value_width, stack.inner_dim(), /*self_mode=*/false, rng);
}

namespace {

std::vector<std::vector<int64_t>> per_view_rows(int64_t views, int64_t pixels_per_view) {
    std::vector<std::vector<int64_t>> rows(static_cast<size_t>(views));
    for (int64_t v = 0; v < views; ++v) {
        rows[static_cast<size_t>(v)].reserve(static_cast<size_t>(pixels_per_view));
        for (int64_t i = 0; i < pixels_per_view; ++i)
            rows[static_cast<size_t>(v)].push_back(v * pixels_per_view + i);
    }
    return rows;
}

std::vector<std::vector<int64_t>> group_key_rows(const WindowScheme& scheme, int64_t pixels_per_view) {
    std::vector<std::vector<int64_t>> rows(scheme.groups.size());
    for (size_t w = 0; w < scheme.groups.size(); ++w) {
        for (int v : scheme.groups[w])
            for (int64_t i = 0; i < pixels_per_view; ++i) rows[w].push_back(v * pixels_per_view + i);
    }
    return rows;
}

}  // namespace

Tensor self_attention_per_view(const VaParams& va, const Tensor& image_tokens, int64_t views, int64_t pixels_per_view,
                               AttnCapture* capture) {
    if (image_tokens.dim(0) != views * pixels_per_view)
        throw TensorError("self_attention_per_view: token count does not match views * pixels");
    auto rows = per_view_rows(views, pixels_per_view);
    Tensor x = image_tokens;
    for (size_t i = 0; i < va.self_blocks.size(); ++i)
        x = partitioned_attention_layer(va.self_blocks[i], va.stack, x, x, va.image_value_width, rows, rows,
                                        PadMode::kExact, 0, nullptr, "self_score", "self_value", static_cast<int>(i),
                                        capture);
    return x;
}

CrossAttentionResult cross_attention(const VaParams& va, const Tensor& bev_tokens, const Tensor& image_tokens,
                                     const WindowScheme& scheme, int64_t pixels_per_view, PadMode pad_mode,
                                     const Tensor* pad_row, AttnCapture* capture) {
    if (bev_tokens.dim(0) != scheme.grid_h * scheme.grid_w)
        throw TensorError("cross_attention: BEV token count does not match scheme grid");
    auto key_rows = group_key_rows(scheme, pixels_per_view);
    Tensor x = bev_tokens;
    for (size_t i = 0; i < va.cross_blocks.size(); ++i)
        x = partitioned_attention_layer(va.cross_blocks[i], va.stack, x, image_tokens, va.image_value_width,
                                        scheme.window_cells, key_rows, pad_mode, scheme.pad_to, pad_row, "cross_score",
                                        "cross_value", static_cast<int>(i), capture);
    return {x, slice(x, 1, 0, va.bev_content)};
}

Tensor self_attention_masked_global(const VaParams& va, const Tensor& image_tokens, int64_t views,
                                    int64_t pixels_per_view) {
    const int64_t n = views * pixels_per_view;
    std::vector<uint8_t> allow(static_cast<size_t>(n * n), 0);
    for (int64_t q = 0; q < n; ++q) {
        const int64_t v = q / pixels_per_view;
        for (int64_t k = v * pixels_per_view; k < (v + 1) * pixels_per_view; ++k)
            allow[static_cast<size_t>(q * n + k)] = 1;
    }
    Tensor x = image_tokens;
    for (const auto& blk : va.self_blocks)
        x = masked_global_attention_layer(blk, va.stack, x, x, va.image_value_width, allow, "self_score",
                                          "self_value");
    return x;
}

std::vector<uint8_t> scheme_allow_mask(const WindowScheme& scheme, int64_t pixels_per_view) {
    const int64_t cells = scheme.grid_h * scheme.grid_w;
    const int64_t n_k = scheme.views * pixels_per_view;
    std::vector<uint8_t> allow(static_cast<size_t>(cells * n_k), 0);
    for (int64_t c = 0; c < cells; ++c) {
        const auto& group = scheme.groups[static_cast<size_t>(scheme.assignment[static_cast<size_t>(c)])];
        for (int v : group)
            for (int64_t i = 0; i < pixels_per_view; ++i)
                allow[static_cast<size_t>(c * n_k + v * pixels_per_view + i)] = 1;
    }
    return allow;
}

CrossAttentionResult cross_attention_masked_global(const VaParams& va, const Tensor& bev_tokens,
                                                   const Tensor& image_tokens, const WindowScheme& scheme,
                                                   int64_t pixels_per_view) {
    auto allow = scheme_allow_mask(scheme, pixels_per_view);
    Tensor x = bev_tokens;
    for (const auto& blk : va.cross_blocks)
        x = masked_global_attention_layer(blk, va.stack, x, image_tokens, va.image_value_width, allow, "cross_score",
                                          "cross_value");
    return {x, slice(x, 1, 0, va.bev_content)};
}

}  // namespace cft
