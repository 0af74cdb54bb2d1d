#include "lightsae/analysis.hpp"

#include "lightsae/serialize.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

namespace lightsae {

int effective_rank(const EnergyCurve& curve, double threshold)
{
  if (!(threshold > 0.0 && threshold <= 1.0))
    throw ContractError("effective_rank: threshold " + format_double(threshold) + " outside (0, 1]");
  if (curve.cumulative.empty())
    throw ContractError("effective_rank: empty energy curve");
  for (std::size_t k = 0; k < curve.cumulative.size(); ++k)
    if (curve.cumulative[k] >= threshold)
      return static_cast<int>(k + 1);
  return static_cast<int>(curve.cumulative.size());
}

std::vector<double> average_energy(std::span<const EnergyCurve> curves)
{
  if (curves.empty())
    throw ContractError("average_energy: no curves");
  std::vector<double> avg(curves.front().cumulative.size(), 0.0);
  for (const auto& c : curves) {
    if (c.cumulative.size() != avg.size())
      throw DimensionError("average_energy: curves of different length");
    for (std::size_t k = 0; k < avg.size(); ++k)
      avg[k] += c.cumulative[k];
  }
  for (double& v : avg)
    v /= static_cast<double>(curves.size());
  return avg;
}

Dense cosine_similarity_matrix(std::span<const Dense> weights)
{
  if (weights.size() < 2)
    throw ContractError("cosine_similarity_matrix: need at least 2 matrices, got " + std::to_string(weights.size()));
  const auto m = static_cast<Eigen::Index>(weights.size());
  std::vector<double> norms;
  for (std::size_t p = 0; p < weights.size(); ++p) {
    if (weights[p].rows() != weights[0].rows() || weights[p].cols() != weights[0].cols())
      throw ContractError("cosine_similarity_matrix: matrix " + std::to_string(p) + " is " + shape_string(weights[p]) +
                          ", expected " + shape_string(weights[0]));
    norms.push_back(weights[p].norm());
    if (!(norms.back() > 0.0))
      throw ContractError("cosine_similarity_matrix: matrix " + std::to_string(p) + " is all zero");
  }
  Dense sim(m, m);
  for (Eigen::Index p = 0; p < m; ++p) {
    sim(p, p) = 1.0;
    for (Eigen::Index q = p + 1; q < m; ++q) {
      const Dense& a = weights[static_cast<std::size_t>(p)];
      const Dense& b = weights[static_cast<std::size_t>(q)];
      const double s = a.cwiseProduct(b).sum() / (norms[static_cast<std::size_t>(p)] * norms[static_cast<std::size_t>(q)]);
      sim(p, q) = sim(q, p) = std::clamp(s, -1.0, 1.0);
    }
  }
  return sim;
}

GroupContrast group_contrast(const Dense& similarity, std::span<const int> labels)
{
  if (similarity.rows() != similarity.cols() || static_cast<std::size_t>(similarity.rows()) != labels.size())
    throw DimensionError("group_contrast: " + std::to_string(labels.size()) + " labels for " + shape_string(similarity));
  GroupContrast out;
  std::size_t n_within = 0, n_cross = 0;
  for (Eigen::Index p = 0; p < similarity.rows(); ++p)
    for (Eigen::Index q = p + 1; q < similarity.cols(); ++q) {
      if (labels[static_cast<std::size_t>(p)] == labels[static_cast<std::size_t>(q)]) {
        out.within += similarity(p, q);
        ++n_within;
      } else {
        out.cross += similarity(p, q);
        ++n_cross;
      }
    }
  if (n_within > 0)
    out.within /= static_cast<double>(n_within);
  if (n_cross > 0)
    out.cross /= static_cast<double>(n_cross);
  return out;
}

Dense gate_table(const EmbeddingParams& params, const EmbeddingSpec& spec)
{
  Dense table(spec.channels, spec.pool_size);
  for (Eigen::Index i = 0; i < spec.channels; ++i)
    table.row(i) = gates(params, spec, i);
  return table;
}

void export_gates(const EmbeddingParams& params, const EmbeddingSpec& spec, const std::filesystem::path& path)
{
  const Dense table = gate_table(params, spec);
  std::string text = "channel";
  for (Eigen::Index k = 0; k < table.cols(); ++k)
    text += ",g_" + std::to_string(k + 1);
  text += '\n';
  for (Eigen::Index i = 0; i < table.rows(); ++i) {
    text += std::to_string(i);
    for (Eigen::Index k = 0; k < table.cols(); ++k)
      text += "," + format_double(table(i, k));
    text += '\n';
  }
  write_text(path, text);
}

Dense read_gates(const std::filesystem::path& path)
{
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("channel", 0) != 0)
    throw ParseError(path.string() + ": missing 'channel,g_1,...' header");
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty())
      continue;
    std::vector<double> values;
    std::size_t start = line.find(',');
    while (start != std::string::npos) {
      const std::size_t end = line.find(',', start + 1);
      const std::string cell = line.substr(start + 1, end == std::string::npos ? std::string::npos : end - start - 1);
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc())
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad gate value '" + cell + "'");
      values.push_back(v);
      start = end;
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty())
    throw ParseError(path.string() + ": no gate rows");
  Dense out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows.front().size())
      throw ParseError(path.string() + ": ragged gate rows");
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return out;
}

Dense pool_similarity(const EmbeddingParams& params, const EmbeddingSpec& spec)
{
  if (!uses_pool(spec.variant))
    throw VariantError("pool_similarity: " + std::string(variant_name(spec.variant)) + " has no component pool");
  if (spec.pool_size < 2)
    throw ContractError("pool_similarity: need K >= 2, got " + std::to_string(spec.pool_size));
  const auto& components = params.pool_left.empty() ? params.pool_weights : params.pool_left;
  std::vector<Dense> values;
  for (const auto& m : components)
    values.push_back(m.data);
  return cosine_similarity_matrix(values);
}

void write_energy_csv(const std::vector<double>& cumulative, const std::filesystem::path& path)
{
  std::string text = "k,E_k\n";
  for (std::size_t k = 0; k < cumulative.size(); ++k)
    text += std::to_string(k + 1) + "," + format_double(cumulative[k]) + "\n";
  write_text(path, text);
}

}  // namespace lightsae
