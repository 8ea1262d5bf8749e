#include "mdlab/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace mdlab {

void save_checkpoint(const std::string& path, const nlohmann::json& header,
                     const std::vector<double>& params) {
  nlohmann::json h = header;
  h["format"] = kCkptFormat;
  h["version"] = kCkptVersion;
  h["param_count"] = params.size();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << h.dump() << '\n';
  out.write(reinterpret_cast<const char*>(params.data()),
            static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!out) throw std::runtime_error("write failed: " + path);
}

nlohmann::json load_checkpoint(const std::string& path, const std::string& expected_section,
                               std::vector<double>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("truncated checkpoint: " + path);
  const auto h = nlohmann::json::parse(line);
  if (h.at("format").get<std::string>() != kCkptFormat)
    throw std::runtime_error("not an mdlab checkpoint: " + path);
  if (h.at("version").get<int>() != kCkptVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path);
  if (!expected_section.empty() && h.at("section").get<std::string>() != expected_section)
    throw std::runtime_error("checkpoint section mismatch in " + path + " (want " +
                             expected_section + ")");
  params.resize(h.at("param_count").get<std::size_t>());
  in.read(reinterpret_cast<char*>(params.data()),
          static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != params.size() * sizeof(double))
    throw std::runtime_error("truncated parameter block in " + path);
  return h;
}

}  // namespace mdlab
