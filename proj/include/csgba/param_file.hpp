#pragma once

// Versioned parameter files: the dataset header convention (JSON line +
// float32 payload + FNV-1a hash) holding one or more named networks and free
// metadata.

#include <map>
#include <string>
#include <vector>

#include "csgba/io.hpp"
#include "csgba/numeric.hpp"

namespace csgba {

inline constexpr const char* kParamFormat = "csgba-params";
inline constexpr int kParamVersion = 1;

struct NetworkBundle {
  json meta = json::object();
  std::map<std::string, MlpParams> networks;
};

inline void save_bundle(const NetworkBundle& b, const std::string& path) {
  json h;
  h["format"] = kParamFormat;
  h["version"] = kParamVersion;
  h["meta"] = b.meta;
  json nets = json::array();
  std::vector<float> payload;
  for (const auto& [name, p] : b.networks) {
    json layers = json::array();
    for (const auto& l : p.layers) {
      layers.push_back({{"in", l.in()}, {"out", l.out()}, {"activation", activation_name(l.activation)}});
      payload.insert(payload.end(), l.weight.data(), l.weight.data() + l.weight.size());
      payload.insert(payload.end(), l.bias.data(), l.bias.data() + l.bias.size());
    }
    nets.push_back({{"name", name}, {"layers", layers}});
  }
  h["networks"] = nets;
  write_artifact(path, std::move(h), payload);
}

inline NetworkBundle load_bundle(const std::string& path) {
  ArtifactFile f = read_artifact(path, kParamFormat, kParamVersion);
  NetworkBundle b;
  b.meta = f.header.value("meta", json::object());
  std::size_t offset = 0;
  for (const auto& net : f.header.at("networks")) {
    MlpParams p;
    for (const auto& lj : net.at("layers")) {
      DenseLayer l;
      const auto in = lj.at("in").get<Eigen::Index>();
      const auto out = lj.at("out").get<Eigen::Index>();
      l.activation = parse_activation(lj.at("activation").get<std::string>());
      const auto need = static_cast<std::size_t>(in * out + out);
      if (offset + need > f.payload.size()) throw TruncatedFile(path + ": parameter payload too short");
      l.weight.resize(out, in);
      std::copy_n(f.payload.data() + offset, in * out, l.weight.data());
      offset += static_cast<std::size_t>(in * out);
      l.bias.resize(out);
      std::copy_n(f.payload.data() + offset, out, l.bias.data());
      offset += static_cast<std::size_t>(out);
      p.layers.push_back(std::move(l));
    }
    b.networks.emplace(net.at("name").get<std::string>(), std::move(p));
  }
  if (offset != f.payload.size()) throw FormatError(path + ": trailing parameter payload");
  return b;
}

}  // namespace csgba
