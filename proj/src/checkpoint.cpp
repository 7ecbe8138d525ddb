// SPDX-License-Identifier: Apache-2.0
#include "unlearn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "unlearn/error.hpp"

namespace unlearn {
namespace {

constexpr int kFormatVersion = 1;

nlohmann::json config_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},   {"n_heads", c.n_heads},     {"d_model", c.d_model}, {"d_ff", c.d_ff},
          {"context_len", c.context_len}, {"vocab_size", c.vocab_size}, {"seed", c.seed}};
}

ModelConfig config_from(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.context_len = j.at("context_len").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
  const ParameterLayout lay(state.config);
  if (state.params.size() != lay.total()) throw ParameterError("parameter vector does not match model config");
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : lay.tensors()) tensors.push_back({{"name", t.name}, {"shape", t.shape}});
  nlohmann::json manifest = {{"format_version", kFormatVersion},
                             {"config", config_json(state.config)},
                             {"step", state.step},
                             {"dtype", "float32-le"},
                             {"param_count", lay.total()},
                             {"tensors", tensors}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << manifest.dump() << '\n';
  std::vector<std::uint32_t> words(state.params.size());
  for (std::size_t i = 0; i < words.size(); ++i) words[i] = to_little(std::bit_cast<std::uint32_t>(state.params[i]));
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (!out) throw FormatError("write failed for " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw FormatError(path.string() + ": missing manifest line");
  ModelState s;
  try {
    const auto manifest = nlohmann::json::parse(header);
    if (manifest.at("format_version").get<int>() != kFormatVersion) {
      throw FormatError(path.string() + ": unsupported checkpoint format_version");
    }
    s.config = config_from(manifest.at("config"));
    s.step = manifest.at("step").get<std::uint64_t>();
    s.config.validate();
    const ParameterLayout lay(s.config);
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != lay.tensors().size() || manifest.at("param_count").get<std::size_t>() != lay.total()) {
      throw FormatError(path.string() + ": manifest tensors do not match config");
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (tensors[i].at("name").get<std::string>() != lay.tensors()[i].name ||
          tensors[i].at("shape").get<std::vector<std::size_t>>() != lay.tensors()[i].shape) {
        throw FormatError(path.string() + ": tensor " + std::to_string(i) + " does not match config");
      }
    }
    std::vector<std::uint32_t> words(lay.total());
    in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
    if (in.gcount() != static_cast<std::streamsize>(words.size() * 4)) {
      throw FormatError(path.string() + ": truncated parameter data");
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes after parameters");
    s.params.resize(words.size());
    for (std::size_t i = 0; i < words.size(); ++i) s.params[i] = std::bit_cast<float>(to_little(words[i]));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad manifest: " + e.what());
  } catch (const ParameterError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return s;
}

}  // namespace unlearn
