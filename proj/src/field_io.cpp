#include "odil/field_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "odil/error.hpp"

namespace odil {
namespace {

std::filesystem::path strip_ext(std::filesystem::path p) {
  const auto ext = p.extension();
  if (ext == ".json" || ext == ".raw") p.replace_extension();
  return p;
}

std::filesystem::path with_ext(const std::filesystem::path& base, const char* ext) {
  return std::filesystem::path(base.string() + ext);
}

}  // namespace

void save_field(const std::filesystem::path& base_in, const Field& field) {
  static_assert(std::endian::native == std::endian::little, "raw dumps assume little-endian");
  const auto base = strip_ext(base_in);
  if (!field.all_finite()) throw NonFiniteError("save_field: non-finite values in " + base.string());
  nlohmann::json meta;
  meta["dims"] = field.grid.dims();
  meta["lo"] = field.grid.lo();
  meta["hi"] = field.grid.hi();
  meta["centering"] = to_string(field.grid.centering());
  meta["dtype"] = "f64";
  {
    std::ofstream js(with_ext(base, ".json"));
    if (!js) throw Error("cannot write " + with_ext(base, ".json").string());
    js << meta.dump(2) << "\n";
  }
  std::ofstream raw(with_ext(base, ".raw"), std::ios::binary);
  if (!raw) throw Error("cannot write " + with_ext(base, ".raw").string());
  raw.write(reinterpret_cast<const char*>(field.values.data()),
            static_cast<std::streamsize>(field.values.size() * sizeof(double)));
}

Field load_field(const std::filesystem::path& base_in) {
  const auto base = strip_ext(base_in);
  std::ifstream js(with_ext(base, ".json"));
  if (!js) throw Error("cannot open field metadata " + with_ext(base, ".json").string());
  nlohmann::json meta;
  try {
    js >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed field metadata " + with_ext(base, ".json").string() + ": " + e.what());
  }
  if (meta.value("dtype", "f64") != "f64") throw Error("unsupported dtype in field metadata");
  Grid grid(meta.at("dims").get<std::vector<int>>(), meta.at("lo").get<std::vector<double>>(),
            meta.at("hi").get<std::vector<double>>(),
            centering_from_string(meta.at("centering").get<std::string>()));
  std::ifstream raw(with_ext(base, ".raw"), std::ios::binary | std::ios::ate);
  if (!raw) throw Error("cannot open field data " + with_ext(base, ".raw").string());
  const auto bytes = static_cast<std::size_t>(raw.tellg());
  if (bytes != static_cast<std::size_t>(grid.size()) * sizeof(double))
    throw Error("field data size mismatch in " + with_ext(base, ".raw").string());
  raw.seekg(0);
  std::vector<double> values(grid.size());
  raw.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  Field f(std::move(grid), std::move(values));
  if (!f.all_finite()) throw NonFiniteError("non-finite values in " + base.string());
  return f;
}

}  // namespace odil
