#include "lightsae/serialize.hpp"

#include "lightsae/error.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

namespace lightsae {

std::string format_double(double v)
{
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw ParseError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out)
    throw ParseError("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ParseError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_matrix_csv(const Dense& m, const std::filesystem::path& path)
{
  std::string text;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c > 0)
        text += ',';
      text += format_double(m(r, c));
    }
    text += '\n';
  }
  write_text(path, text);
}

Dense read_matrix_csv(const std::filesystem::path& path)
{
  std::istringstream in(read_text(path));
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": blank line");
    std::vector<double> values;
    std::size_t start = 0;
    std::size_t col = 1;
    while (true) {
      const std::size_t end = line.find(',', start);
      const std::string cell = line.substr(start, end == std::string::npos ? std::string::npos : end - start);
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": column " + std::to_string(col) +
                         " is not a number: '" + cell + "'");
      values.push_back(v);
      if (end == std::string::npos)
        break;
      start = end + 1;
      ++col;
    }
    if (!rows.empty() && values.size() != rows.front().size())
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(rows.front().size()) + " columns, found " + std::to_string(values.size()));
    rows.push_back(std::move(values));
  }
  if (rows.empty())
    throw ParseError(path.string() + ": empty matrix file");
  Dense m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return m;
}

Json matrix_to_json(const Dense& m)
{
  Json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  j["data"] = std::vector<double>(m.data(), m.data() + m.size());
  return j;
}

Dense matrix_from_json(const Json& j)
{
  try {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size())
      throw ParseError("matrix envelope: " + std::to_string(data.size()) + " values for shape " +
                       shape_string(rows, cols));
    Dense m(rows, cols);
    std::copy(data.begin(), data.end(), m.data());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("matrix envelope: ") + e.what());
  }
}

}  // namespace lightsae
