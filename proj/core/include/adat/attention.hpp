#pragma once

#include <cstddef>
#include <vector>

#include "adat/tensor.hpp"

namespace adat {

// Attended key positions for one query position under the logarithmic
// sparsity pattern: {p - 2^e : e = floor(log2 p) .. 0} plus p itself.
struct IndexSet {
  std::size_t position = 0;
  std::vector<int> attended;  // sorted ascending, unique, all <= position
};

struct AttentionParams {
  Tensor w_q;  // [d_model x d_model]
  Tensor w_k;
  Tensor w_v;
  int heads = 1;
  int stack_depth = 1;  // number of repeated sparse-attention applications
};

struct GateParams {
  Tensor w;  // [d_model x 2]
  Tensor b;  // [2]
};

IndexSet lssa_indices(std::size_t position, std::size_t length);

// Index sets for every position in [0, length).
std::vector<std::vector<int>> lssa_index_sets(std::size_t length);

// Sparse self-attention over [m2 x d_model]: Q/K/V projections, per-head
// restricted softmax over each position's index set, weights applied to V,
// heads re-concatenated. Logits are scaled by 1/sqrt(d_model/2). With
// stack_depth > 1 the layer is applied repeatedly so the receptive field
// grows.
Tensor lssa_attend(const Tensor& x, const AttentionParams& params);

// Standard multi-head scaled-dot attention (per-head scale sqrt(d_h)).
// causal masks key positions beyond the query position and requires equal
// query/key lengths.
Tensor canonical_mha(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                     const AttentionParams& params, bool causal);

// Mean over the sequence axis, one value per channel: [m2 x d] -> [1 x d].
Tensor gap(const Tensor& v);

// Per-position convex mix g * lssa + (1 - g) * gap_broadcast where
// [g, 1-g] = softmax(lssa_row * W + b).
Tensor adaptive_gate(const Tensor& lssa_out, const Tensor& gap_out, const GateParams& gate);

}  // namespace adat
