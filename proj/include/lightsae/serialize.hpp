#ifndef LIGHTSAE_SERIALIZE_HPP_
#define LIGHTSAE_SERIALIZE_HPP_

#include "lightsae/matrix.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace lightsae {

using Json = nlohmann::json;

// CSV: one line per matrix row, comma separated, no header. Values are
// written with 17 significant digits so a reparse is exact.
void write_matrix_csv(const Dense& m, const std::filesystem::path& path);
Dense read_matrix_csv(const std::filesystem::path& path);

// {"rows": r, "cols": c, "data": [row-major values]}
Json matrix_to_json(const Dense& m);
Dense matrix_from_json(const Json& j);

std::string format_double(double v);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace lightsae

#endif  // LIGHTSAE_SERIALIZE_HPP_
