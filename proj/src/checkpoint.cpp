#include "fewshot/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "fewshot/volume.hpp"  // IoError family

namespace fewshot {

namespace {

void write_config(std::ostream& os, const FewShotConfig& cfg) {
  os << "config cond_channels " << cfg.cond_channels << "\n";
  os << "config seg_channels " << cfg.seg_channels << "\n";
  os << "config se_type " << se_type_name(cfg.se_type) << "\n";
  os << "config se_encoder " << int(cfg.se_positions.encoder) << "\n";
  os << "config se_bottleneck " << int(cfg.se_positions.bottleneck) << "\n";
  os << "config se_decoder " << int(cfg.se_positions.decoder) << "\n";
  os << "config skip_conditioner " << int(cfg.skip_conditioner) << "\n";
  os << "config skip_segmenter " << int(cfg.skip_segmenter) << "\n";
  os << "config depth " << cfg.depth << "\n";
}

}  // namespace

void save_checkpoint(const NetworkParams<float>& params,
                     const std::string& path) {
  auto& mut = const_cast<NetworkParams<float>&>(params);
  auto refs = trainable_arrays(mut);
  auto states = state_arrays(mut);
  refs.insert(refs.end(), states.begin(), states.end());

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_checkpoint: cannot open '" + path + "'");
  f << "FSCKPT 1\n";
  write_config(f, params.cfg);
  for (const auto& r : refs) f << "param " << r.name << " " << r.len << "\n";
  f << "DATA\n";
  for (const auto& r : refs)
    f.write(reinterpret_cast<const char*>(r.data),
            std::streamsize(r.len * sizeof(float)));
  if (!f) throw IoError("save_checkpoint: write failed for '" + path + "'");
}

NetworkParams<float> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_checkpoint: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(f, line) || line.rfind("FSCKPT ", 0) != 0)
    throw MalformedHeaderError("load_checkpoint: bad magic in '" + path + "'");
  if (line != "FSCKPT 1")
    throw UnsupportedVersionError("load_checkpoint: unsupported version '" +
                                  line + "'");
  FewShotConfig cfg;
  std::vector<std::pair<std::string, std::size_t>> sections;
  while (std::getline(f, line)) {
    if (line == "DATA") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "config") {
      std::string field, value;
      ls >> field >> value;
      if (field == "cond_channels") cfg.cond_channels = std::stoi(value);
      else if (field == "seg_channels") cfg.seg_channels = std::stoi(value);
      else if (field == "se_type") cfg.se_type = se_type_from_name(value);
      else if (field == "se_encoder") cfg.se_positions.encoder = value == "1";
      else if (field == "se_bottleneck") cfg.se_positions.bottleneck = value == "1";
      else if (field == "se_decoder") cfg.se_positions.decoder = value == "1";
      else if (field == "skip_conditioner") cfg.skip_conditioner = value == "1";
      else if (field == "skip_segmenter") cfg.skip_segmenter = value == "1";
      else if (field == "depth") cfg.depth = std::stoi(value);
      else
        throw MalformedHeaderError("load_checkpoint: unknown config field '" +
                                   field + "'");
    } else if (key == "param") {
      std::string name;
      std::size_t len = 0;
      ls >> name >> len;
      if (name.empty() || ls.fail())
        throw MalformedHeaderError("load_checkpoint: malformed param line '" +
                                   line + "'");
      sections.emplace_back(name, len);
    } else {
      throw MalformedHeaderError("load_checkpoint: unknown header key '" +
                                 key + "'");
    }
  }

  Rng dummy(0);
  NetworkParams<float> params = init_network_params<float>(cfg, dummy);
  auto refs = trainable_arrays(params);
  auto states = state_arrays(params);
  refs.insert(refs.end(), states.begin(), states.end());
  if (refs.size() != sections.size())
    throw MalformedHeaderError(
        "load_checkpoint: section count " + std::to_string(sections.size()) +
        " does not match config-derived layout (" +
        std::to_string(refs.size()) + ")");
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].name != sections[i].first || refs[i].len != sections[i].second)
      throw MalformedHeaderError("load_checkpoint: section '" +
                                 sections[i].first +
                                 "' does not match expected '" + refs[i].name +
                                 "'");
    f.read(reinterpret_cast<char*>(refs[i].data),
           std::streamsize(refs[i].len * sizeof(float)));
    if (std::size_t(f.gcount()) != refs[i].len * sizeof(float))
      throw TruncatedPayloadError("load_checkpoint: truncated payload at '" +
                                  refs[i].name + "'");
  }
  return params;
}

}  // namespace fewshot
