#ifndef LIGHTSAE_ANALYSIS_HPP_
#define LIGHTSAE_ANALYSIS_HPP_

#include "lightsae/embedding.hpp"
#include "lightsae/error.hpp"
#include "lightsae/svd.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace lightsae {

// Spectrum and cumulative energy ratios E_k = sum_{j<=k} s_j^2 / sum_j s_j^2.
struct EnergyCurve {
  std::vector<double> singular_values;
  std::vector<double> cumulative;
};

// Singular values below this fraction of the largest are treated as zero.
inline constexpr double kRelativeRankFloor = 1e-12;

template<typename Derived>
EnergyCurve cumulative_energy(const Eigen::MatrixBase<Derived>& w)
{
  EnergyCurve curve;
  curve.singular_values = svd_values(w.template cast<double>());
  const double top = curve.singular_values.front();
  if (!(top > 0.0))
    throw ContractError("cumulative_energy: all-zero matrix " + shape_string(w.rows(), w.cols()));
  for (double& s : curve.singular_values)
    if (s < kRelativeRankFloor * top)
      s = 0.0;
  double total = 0.0;
  for (double s : curve.singular_values)
    total += s * s;
  double running = 0.0;
  for (double s : curve.singular_values) {
    running += s * s;
    curve.cumulative.push_back(running / total);
  }
  curve.cumulative.back() = 1.0;
  return curve;
}

// Smallest k (1-based) with E_k >= threshold.
int effective_rank(const EnergyCurve& curve, double threshold);

// Pointwise mean of several curves of equal length.
std::vector<double> average_energy(std::span<const EnergyCurve> curves);

// Pairwise cosine similarity of vectorised matrices.
Dense cosine_similarity_matrix(std::span<const Dense> weights);

// Mean similarity over pairs p < q, split by whether labels agree.
struct GroupContrast {
  double within = 0.0;
  double cross = 0.0;
  double gap() const { return within - cross; }
};
GroupContrast group_contrast(const Dense& similarity, std::span<const int> labels);

// N x K softmaxed gates.
Dense gate_table(const EmbeddingParams& params, const EmbeddingSpec& spec);
// Writes `channel,g_1,...,g_K`.
void export_gates(const EmbeddingParams& params, const EmbeddingSpec& spec, const std::filesystem::path& path);
Dense read_gates(const std::filesystem::path& path);

// K x K similarity of the pool's left factors (or full components).
Dense pool_similarity(const EmbeddingParams& params, const EmbeddingSpec& spec);

// Writes `k,E_k` rows.
void write_energy_csv(const std::vector<double>& cumulative, const std::filesystem::path& path);

}  // namespace lightsae

#endif  // LIGHTSAE_ANALYSIS_HPP_
