#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cft/nn.hpp"
#include "cft/tensor.hpp"
#include "cft/windows.hpp"

namespace cft {

struct AttentionStack {
    int n_self = 1;
    int n_cross = 2;
    int heads = 4;
    int head_dim = 8;

    void validate() const {
        if (n_self < 0) throw TensorError("AttentionStack: n_self must be >= 0");
        if (n_cross < 1) throw TensorError("AttentionStack: n_cross must be >= 1");
        if (heads <= 0 || head_dim <= 0) throw TensorError("AttentionStack: heads and head_dim must be positive");
    }
    int64_t inner_dim() const { return static_cast<int64_t>(heads) * head_dim; }
};

// How windows of unequal size are processed: at their exact gathered size, or
// zero padded to the scheme's pad_to for batch-style operation. Outputs are
// identical; padded runs do extra masked work.
enum class PadMode { kExact, kPadded };

// Pre-norm residual block: norm -> attention -> add, norm -> ffn -> add.
// Queries and keys are projected from the full token channels, values only
// from the content slice.
struct AttentionBlockParams {
    LayerNorm norm_q, norm_kv, norm_ffn;
    Linear proj_q, proj_k, proj_v, proj_o;
    Ffn ffn;
    bool self_mode = false;

    AttentionBlockParams() = default;
    AttentionBlockParams(ParamSet& params, const std::string& name, int64_t query_width, int64_t kv_width,
                         int64_t value_width, int64_t inner_dim, bool self_mode, Rng& rng);
};

struct CapturedAttention {
    int layer = 0;
    int window = 0;
    std::vector<int64_t> query_cells;
    std::vector<int> group;
    int64_t n_query = 0;
    int64_t n_key = 0;
    std::vector<double> weights;  // head-averaged [n_query x n_key]
};
using AttnCapture = std::vector<CapturedAttention>;

// One attention layer over row partitions of (stream, kv_source): partition p
// lets stream rows query_rows[p] attend to kv rows key_rows[p]. Score and
// value mul-adds are registered under the given labels.
Tensor partitioned_attention_layer(const AttentionBlockParams& blk, const AttentionStack& stack, const Tensor& stream,
                                   const Tensor& kv_source, int64_t value_width,
                                   const std::vector<std::vector<int64_t>>& query_rows,
                                   const std::vector<std::vector<int64_t>>& key_rows, PadMode pad_mode, int64_t pad_to,
                                   const Tensor* pad_row, const std::string& score_label,
                                   const std::string& value_label, int layer_index, AttnCapture* capture);

// Reference path: one dense attention over all rows with an allow mask
// (1 = may attend); excluded pairs get exactly zero weight and gradient.
Tensor masked_global_attention_layer(const AttentionBlockParams& blk, const AttentionStack& stack,
                                     const Tensor& stream, const Tensor& kv_source, int64_t value_width,
                                     const std::vector<uint8_t>& allow, const std::string& score_label,
                                     const std::string& value_label);

// View-aware attention parameters: n_self image self-attention blocks plus
// n_cross BEV-to-image cross-attention blocks.
struct VaParams {
    AttentionStack stack;
    int64_t image_width = 0;
    int64_t image_value_width = 0;
    int64_t bev_width = 0;
    int64_t bev_content = 0;  // width of the output BEV representation
    std::vector<AttentionBlockParams> self_blocks;
    std::vector<AttentionBlockParams> cross_blocks;

    VaParams() = default;
    VaParams(ParamSet& params, const std::string& name, const AttentionStack& stack, int64_t image_width,
             int64_t image_value_width, int64_t bev_width, int64_t bev_content, Rng& rng);
};

// Self-attention restricted within each view: tokens of view v attend only the
// H_s*W_s pixels of view v.
Tensor self_attention_per_view(const VaParams& va, const Tensor& image_tokens, int64_t views,
                               int64_t pixels_per_view, AttnCapture* capture = nullptr);

struct CrossAttentionResult {
    Tensor stream;        // full-width BEV tokens after the stack
    Tensor bev_features;  // content slice, [cells x bev_content]
};

// Windowed cross-attention: window w's cells query the concatenated tokens of
// its view group. pad_row supplies the zero rows in padded mode so tests can
// track their gradient.
CrossAttentionResult cross_attention(const VaParams& va, const Tensor& bev_tokens, const Tensor& image_tokens,
                                     const WindowScheme& scheme, int64_t pixels_per_view,
                                     PadMode pad_mode = PadMode::kExact, const Tensor* pad_row = nullptr,
                                     AttnCapture* capture = nullptr);

// Equivalence references sharing the same parameters.
Tensor self_attention_masked_global(const VaParams& va, const Tensor& image_tokens, int64_t views,
                                    int64_t pixels_per_view);
CrossAttentionResult cross_attention_masked_global(const VaParams& va, const Tensor& bev_tokens,
                                                   const Tensor& image_tokens, const WindowScheme& scheme,
                                                   int64_t pixels_per_view);

// allow[q * n_k + k] = 1 iff key token k's view belongs to the group of the
// window containing BEV cell q.
std::vector<uint8_t> scheme_allow_mask(const WindowScheme& scheme, int64_t pixels_per_view);

}  // namespace cft
