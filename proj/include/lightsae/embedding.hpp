#ifndef LIGHTSAE_EMBEDDING_HPP_
#define LIGHTSAE_EMBEDDING_HPP_

#include "lightsae/matrix.hpp"
#include "lightsae/serialize.hpp"
#include "lightsae/tape.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lightsae {

// The nine embedding formulations. "Ind" variants have no shared base; the
// SAE family adds a per-channel auxiliary weight to the shared base.
enum class Variant {
  Shared,
  IndFull,
  IndLR,
  IndPool,
  LightSAEInd,
  SAEFull,
  SAELR,
  SAEPool,
  LightSAE,
};

inline constexpr Variant kAllVariants[] = {Variant::Shared,  Variant::IndFull, Variant::IndLR,
                                           Variant::IndPool, Variant::LightSAEInd, Variant::SAEFull,
                                           Variant::SAELR,   Variant::SAEPool, Variant::LightSAE};

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);  // throws ConfigError

enum class Framework { Shared, Ind, SAE };
Framework framework_of(Variant v);
std::string_view framework_name(Framework f);

bool has_shared_base(Variant v);   // Shared and SAE family
bool uses_pool(Variant v);         // gated component pool
bool uses_low_rank(Variant v);     // L x r times r x out factors

// Configuration of one per-channel linear map in_dim -> out_dim. For the
// input embedding in_dim is the lookback L and out_dim is d_model; the same
// machinery is reused for the projection head (d_model -> H).
struct EmbeddingSpec {
  Variant variant = Variant::Shared;
  Eigen::Index channels = 1;
  Eigen::Index in_dim = 1;
  Eigen::Index out_dim = 1;
  Eigen::Index rank = 1;
  Eigen::Index pool_size = 1;
  bool use_aux_bias = true;

  // Throws ConfigError on an invalid combination. Returns warnings (K > N).
  std::vector<std::string> validate() const;

  bool operator==(const EmbeddingSpec&) const = default;
};

Json spec_to_json(const EmbeddingSpec& spec);
EmbeddingSpec spec_from_json(const Json& j);

// Exactly the matrices a variant needs; empty members are absent.
struct EmbeddingParams {
  std::optional<Matrix> shared_weight;   // in x out
  Matrix shared_bias;                    // 1 x out
  std::vector<Matrix> channel_weights;   // full per-channel W_i / W_ci
  std::vector<Matrix> channel_left;      // in x r
  std::vector<Matrix> channel_right;     // r x out
  std::vector<Matrix> pool_weights;      // full pool components, in x out
  std::vector<Matrix> pool_left;         // in x r
  std::optional<Matrix> pool_right;      // r x out
  std::optional<Matrix> gate_logits;     // channels x K
  std::optional<Matrix> aux_bias;        // channels x out

  // Stable name -> matrix listing, used by the optimizer and checkpoints.
  std::vector<std::pair<std::string, Matrix*>> named();
  std::vector<std::pair<std::string, const Matrix*>> named() const;

  // Throws VariantError if the present fields disagree with the spec.
  void check(const EmbeddingSpec& spec) const;
};

// Uniform(+-1/sqrt(in_dim)) for full and left factors, zeros for right
// factors, gate logits and biases. The shared weight is drawn first so every
// SAE-family variant starts from the same W_sh as the Shared variant.
EmbeddingParams init_params(const EmbeddingSpec& spec, std::uint64_t seed);

// Softmax of gate_logits row i.
Dense gates(const EmbeddingParams& params, const EmbeddingSpec& spec, Eigen::Index i);

// Channel i's auxiliary weight (for Ind variants, the whole channel weight).
Dense compose_aux_weight(const EmbeddingParams& params, const EmbeddingSpec& spec, Eigen::Index i);

// X is channels x in_dim, one window per row. Evaluated through the tape.
Dense embed(EmbeddingParams& params, const EmbeddingSpec& spec, const Dense& x);

struct MergedEmbedding {
  std::vector<Dense> weights;  // one in x out matrix per channel
  std::vector<Dense> biases;   // one 1 x out row per channel
};

MergedEmbedding merge_weights(const EmbeddingParams& params, const EmbeddingSpec& spec);
// One product per channel: row i = x_i * W_i^final + b_i^final.
Dense merged_forward(const MergedEmbedding& merged, const Dense& x);

// Trainable parameters of the variant, biases included.
std::int64_t param_count(const EmbeddingSpec& spec);

// Binds a parameter set to a tape and builds the differentiable forward.
class EmbeddingGraph {
 public:
  EmbeddingGraph(Tape& tape, EmbeddingParams& params, const EmbeddingSpec& spec);

  // Softmax gates for all channels (channels x K). Pool variants only.
  Var gate_matrix();
  // W_base + W_aux,i as a tape value.
  Var channel_weight(Eigen::Index i);
  // x holds channels * block rows, channel-major.
  Var forward(Var x, Eigen::Index block);
  // Rows of channel i only.
  Var forward_channel(Eigen::Index i, Var x_rows);

 private:
  Var shared_weight();
  Var shared_bias();
  Var aux_bias();

  Tape& tape_;
  EmbeddingParams& params_;
  EmbeddingSpec spec_;
  std::optional<Var> shared_weight_, shared_bias_, aux_bias_, gates_, pool_right_;
  std::vector<Var> pool_;
  std::vector<std::optional<Var>> channel_weight_;
};

Json params_to_json(const EmbeddingParams& params, const EmbeddingSpec& spec);
// Returns the spec stored in the envelope together with the matrices.
std::pair<EmbeddingSpec, EmbeddingParams> params_from_json(const Json& j);

}  // namespace lightsae

#endif  // LIGHTSAE_EMBEDDING_HPP_
