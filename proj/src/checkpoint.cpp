#include "petnas/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "petnas/errors.hpp"

namespace petnas {

namespace {

constexpr char kMagic[4] = {'P', 'N', 'C', 'K'};

// The on-disk format is little-endian; this implementation targets
// little-endian hosts (checked at startup of save/load).
bool host_is_little_endian() {
  const uint16_t probe = 1;
  uint8_t byte;
  std::memcpy(&byte, &probe, 1);
  return byte == 1;
}

void require_le() {
  if (!host_is_little_endian())
    throw IoError("checkpoint io requires a little-endian host");
}

}  // namespace

void save_checkpoint(const FrozenParams& params, const std::string& path) {
  require_le();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);

  nlohmann::ordered_json header;
  header["config"] = {{"layers", params.cfg.layers},
                      {"hidden_dim", params.cfg.hidden_dim},
                      {"heads", params.cfg.heads},
                      {"ffn_dim", params.cfg.ffn_dim},
                      {"vocab_size", params.cfg.vocab_size},
                      {"max_seq_len", params.cfg.max_seq_len},
                      {"num_classes", params.cfg.num_classes}};
  header["tensors"] = nlohmann::ordered_json::array();
  uint64_t offset = 0;
  auto named = params.named_tensors();
  for (const auto& [name, t] : named) {
    header["tensors"].push_back(
        {{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += static_cast<uint64_t>(t.size()) * sizeof(double);
  }

  const std::string header_text = header.dump();
  const uint64_t header_len = header_text.size();
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const auto& [name, t] : named)
    out.write(reinterpret_cast<const char*>(t.values().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!out) throw IoError("write failed for checkpoint " + path);
}

FrozenParams load_checkpoint(const std::string& path) {
  require_le();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);

  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw InputError(path + ": not a petnas checkpoint");
  uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  if (!in || header_len > (1u << 26)) throw InputError(path + ": corrupt header length");
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw InputError(path + ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path + ": bad header: " + e.what());
  }

  TransformerConfig cfg;
  const auto& c = header.at("config");
  cfg.layers = c.at("layers").get<int>();
  cfg.hidden_dim = c.at("hidden_dim").get<int>();
  cfg.heads = c.at("heads").get<int>();
  cfg.ffn_dim = c.at("ffn_dim").get<int>();
  cfg.vocab_size = c.at("vocab_size").get<int>();
  cfg.max_seq_len = c.at("max_seq_len").get<int>();
  cfg.num_classes = c.at("num_classes").get<int>();

  // build the skeleton, then overwrite every tensor from the payload
  FrozenParams params = build_model(cfg, 0);
  auto named = params.named_tensors();
  if (header.at("tensors").size() != named.size())
    throw InputError(path + ": tensor count mismatch");

  size_t i = 0;
  for (auto& [name, t] : named) {
    const auto& entry = header.at("tensors").at(i++);
    if (entry.at("name").get<std::string>() != name)
      throw InputError(path + ": unexpected tensor \"" +
                       entry.at("name").get<std::string>() + "\", wanted \"" + name + "\"");
    const auto shape = entry.at("shape").get<std::vector<int>>();
    if (shape != t.shape())
      throw InputError(path + ": shape mismatch for " + name);
    in.read(reinterpret_cast<char*>(t.values().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw InputError(path + ": truncated payload at " + name);
  }
  return params;
}

}  // namespace petnas
