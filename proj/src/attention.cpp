#include "sedsr/attention.hpp"

#include <cmath>

namespace sedsr {
namespace {

// Upper bound on score-matrix elements held at once per chunk.
constexpr int64_t kScoreBudget = int64_t{1} << 24;

void check_qkv(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v,
               int64_t num_heads) {
    detail::require_rank(q, 3, "attention q");
    detail::require_rank(k, 3, "attention k");
    detail::require_rank(v, 3, "attention v");
    if (num_heads <= 0) throw ContractError("attention: num_heads must be positive");
    if (q.size(0) != k.size(0) || k.size(0) != v.size(0))
        throw ContractError("attention: batch sizes differ");
    if (k.size(1) != v.size(1)) throw ContractError("attention: key and value token counts differ");
    if (q.size(2) != k.size(2) || k.size(2) != v.size(2))
        throw ContractError("attention: embedding widths differ " + detail::shape_str(q) + " " +
                            detail::shape_str(k) + " " + detail::shape_str(v));
    if (q.size(2) % num_heads != 0)
        throw ContractError("attention: embed dim " + std::to_string(q.size(2)) +
                            " not divisible by heads " + std::to_string(num_heads));
}

bool low_precision(const torch::Tensor& t) {
    return t.scalar_type() == torch::kHalf || t.scalar_type() == torch::kBFloat16;
}

// B x N x d -> B x h x N x d_k
torch::Tensor split_heads(const torch::Tensor& t, int64_t heads) {
    return t.view({t.size(0), t.size(1), heads, t.size(2) / heads}).transpose(1, 2);
}

} // namespace

torch::Tensor attention_weights(const torch::Tensor& q, const torch::Tensor& k, int64_t num_heads) {
    check_qkv(q, k, k, num_heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.size(2) / num_heads));
    auto qh = split_heads(q, num_heads);
    auto kh = split_heads(k, num_heads);
    return torch::softmax(torch::matmul(qh, kh.transpose(-2, -1)) * scale, -1);
}

torch::Tensor multi_head_attention(const torch::Tensor& q_in, const torch::Tensor& k_in,
                                   const torch::Tensor& v_in, int64_t num_heads) {
    check_qkv(q_in, k_in, v_in, num_heads);
    const auto out_type = q_in.scalar_type();
    auto q = low_precision(q_in) ? q_in.to(torch::kFloat) : q_in;
    auto k = low_precision(k_in) ? k_in.to(torch::kFloat) : k_in;
    auto v = low_precision(v_in) ? v_in.to(torch::kFloat) : v_in;

    const int64_t b = q.size(0), nq = q.size(1), nkv = k.size(1), d = q.size(2);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d / num_heads));
    auto qh = split_heads(q.contiguous(), num_heads);
    auto kt = split_heads(k.contiguous(), num_heads).transpose(-2, -1);
    auto vh = split_heads(v.contiguous(), num_heads);

    const int64_t per_row = std::max<int64_t>(1, b * num_heads * nkv);
    const int64_t chunk = std::max<int64_t>(1, kScoreBudget / per_row);
    std::vector<torch::Tensor> parts;
    for (int64_t start = 0; start < nq; start += chunk) {
        const int64_t len = std::min(chunk, nq - start);
        auto qc = qh.narrow(2, start, len);
        auto w = torch::softmax(torch::matmul(qc, kt) * scale, -1);
        parts.push_back(torch::matmul(w, vh));
    }
    auto out = parts.size() == 1 ? parts.front() : torch::cat(parts, 2);
    out = out.transpose(1, 2).reshape({b, nq, d});
    return out.scalar_type() == out_type ? out : out.to(out_type);
}

torch::Tensor tokenize(const torch::Tensor& map) {
    detail::require_rank(map, 4, "tokenize");
    return map.flatten(2).transpose(1, 2);
}

torch::Tensor untokenize(const torch::Tensor& tokens, int64_t h, int64_t w) {
    detail::require_rank(tokens, 3, "untokenize");
    if (tokens.size(1) != h * w) throw ContractError("untokenize: token count does not match h*w");
    return tokens.transpose(1, 2).reshape({tokens.size(0), tokens.size(2), h, w});
}

torch::Tensor align_semantics(const torch::Tensor& map, int64_t h, int64_t w) {
    detail::require_rank(map, 4, "align_semantics");
    if (h < 1 || w < 1) throw ContractError("align_semantics: target sides must be >= 1");
    if (map.size(2) == h && map.size(3) == w) return map;
    namespace F = torch::nn::functional;
    return F::interpolate(map, F::InterpolateFuncOptions()
                                   .size(std::vector<int64_t>{h, w})
                                   .mode(torch::kBilinear)
                                   .align_corners(false));
}

SemanticMap align_semantics(const SemanticMap& map, int64_t h, int64_t w) {
    return SemanticMap{align_semantics(map.data, h, w), map.layer_index, map.source_id};
}

} // namespace sedsr
