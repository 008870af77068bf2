#include "adat/attention.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace adat {

IndexSet lssa_indices(std::size_t position, std::size_t length) {
  if (position >= length)
    throw std::invalid_argument("lssa_indices: position " + std::to_string(position) +
                                " not below length " + std::to_string(length));
  IndexSet set;
  set.position = position;
  if (position == 0) {
    set.attended = {0};
    return set;
  }
  // Offsets 2^e for e = floor(log2 p) down to 0; 2^floor(log2 p) <= p keeps
  // every index non-negative, and the resulting positions are strictly
  // increasing, so no deduplication is needed.
  int top = 0;
  while ((static_cast<std::size_t>(1) << (top + 1)) <= position) ++top;
  for (int e = top; e >= 0; --e)
    set.attended.push_back(static_cast<int>(position - (static_cast<std::size_t>(1) << e)));
  set.attended.push_back(static_cast<int>(position));
  return set;
}

std::vector<std::vector<int>> lssa_index_sets(std::size_t length) {
  std::vector<std::vector<int>> sets;
  sets.reserve(length);
  for (std::size_t p = 0; p < length; ++p) sets.push_back(lssa_indices(p, length).attended);
  return sets;
}

Tensor lssa_attend(const Tensor& x, const AttentionParams& params) {
  const std::size_t m = x.shape().at(0);
  if (m == 0) throw std::invalid_argument("lssa_attend: empty sequence");
  const std::size_t d = x.shape().at(1);
  if (params.stack_depth < 1)
    throw std::invalid_argument("lssa_attend: stack_depth must be at least 1");
  const double scale = std::sqrt(static_cast<double>(d) / 2.0);
  AttendMask mask = AttendMask::rows(lssa_index_sets(m));
  Tensor out = x;
  for (int layer = 0; layer < params.stack_depth; ++layer) {
    Tensor q = matmul(out, params.w_q);
    Tensor k = matmul(out, params.w_k);
    Tensor v = matmul(out, params.w_v);
    out = attend(q, k, v, params.heads, scale, mask);
  }
  return out;
}

Tensor canonical_mha(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                     const AttentionParams& params, bool causal) {
  const std::size_t d = q_in.shape().at(1);
  if (causal && q_in.shape().at(0) != k_in.shape().at(0))
    throw std::invalid_argument("canonical_mha: causal mask requires equal lengths, got " +
                                std::to_string(q_in.shape().at(0)) + " and " +
                                std::to_string(k_in.shape().at(0)));
  const std::size_t dh = d / static_cast<std::size_t>(params.heads);
  const double scale = std::sqrt(static_cast<double>(dh));
  Tensor q = matmul(q_in, params.w_q);
  Tensor k = matmul(k_in, params.w_k);
  Tensor v = matmul(v_in, params.w_v);
  return attend(q, k, v, params.heads, scale,
                causal ? AttendMask::causal() : AttendMask::dense());
}

Tensor gap(const Tensor& v) {
  if (v.shape().at(0) == 0) throw std::invalid_argument("gap: empty input");
  return mean_axis0(v);
}

Tensor adaptive_gate(const Tensor& lssa_out, const Tensor& gap_out, const GateParams& gate) {
  if (lssa_out.shape() != gap_out.shape())
    throw std::invalid_argument("adaptive_gate: operand shapes differ, " +
                                shape_str(lssa_out.shape()) + " vs " +
                                shape_str(gap_out.shape()));
  Tensor logits = add_rowwise(matmul(lssa_out, gate.w), gate.b);  // [m x 2]
  Tensor probs = softmax(logits, 1);
  Tensor g = slice_cols(probs, 0, 1);       // [m x 1]
  Tensor one_minus_g = slice_cols(probs, 1, 2);
  return add(mul_colvec(lssa_out, g), mul_colvec(gap_out, one_minus_g));
}

}  // namespace adat
