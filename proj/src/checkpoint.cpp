#include "callseq/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "callseq/errors.hpp"

namespace callseq {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'C', 'S', 'Q', 'M'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.write(buf, 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.write(buf, 8);
}

std::uint32_t read_u32(std::istream& in) {
  char buf[4];
  in.read(buf, 4);
  std::uint32_t v;
  std::memcpy(&v, buf, 4);
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  char buf[8];
  in.read(buf, 8);
  std::uint64_t v;
  std::memcpy(&v, buf, 8);
  return v;
}

json config_to_json(const ModelConfig& c) {
  json j;
  j["vocab_size"] = c.vocab_size;
  j["d"] = c.d;
  j["heads"] = c.heads;
  j["blocks"] = c.blocks;
  j["d_ff"] = c.d_ff;
  j["l_max"] = c.l_max;
  j["classes"] = c.classes;
  j["dropout_rate"] = c.dropout_rate;
  j["nonseq_input"] = c.nonseq_input;
  j["nonseq_hidden1"] = c.nonseq_hidden1;
  j["nonseq_hidden2"] = c.nonseq_hidden2;
  j["ln_eps"] = c.ln_eps;
  j["sequence_branch"] = c.sequence_branch;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.d = j.at("d").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.blocks = j.at("blocks").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.l_max = j.at("l_max").get<std::size_t>();
  c.classes = j.at("classes").get<std::size_t>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.nonseq_input = j.at("nonseq_input").get<std::size_t>();
  c.nonseq_hidden1 = j.at("nonseq_hidden1").get<std::size_t>();
  c.nonseq_hidden2 = j.at("nonseq_hidden2").get<std::size_t>();
  c.ln_eps = j.at("ln_eps").get<double>();
  c.sequence_branch = j.at("sequence_branch").get<bool>();
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  const std::string config_text = config_to_json(params.config).dump();
  write_u64(out, config_text.size());
  out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
  // tensor_refs needs a mutable object; serialization does not modify values.
  ModelParams& mutable_params = const_cast<ModelParams&>(params);
  auto refs = mutable_params.tensor_refs();
  write_u32(out, static_cast<std::uint32_t>(refs.size()));
  for (const auto& ref : refs) {
    write_u32(out, static_cast<std::uint32_t>(ref.name.size()));
    out.write(ref.name.data(), static_cast<std::streamsize>(ref.name.size()));
    write_u64(out, ref.rows);
    write_u64(out, ref.cols);
    out.write(reinterpret_cast<const char*>(ref.data),
              static_cast<std::streamsize>(ref.size() * sizeof(double)));
  }
  if (!out) throw ConfigError("write failed for checkpoint: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw ConfigError("checkpoint " + path + ": bad magic");
  }
  if (read_u32(in) != kVersion) throw ConfigError("checkpoint " + path + ": unsupported version");
  const std::uint64_t config_len = read_u64(in);
  std::string config_text(config_len, '\0');
  in.read(config_text.data(), static_cast<std::streamsize>(config_len));
  ModelConfig config;
  try {
    config = config_from_json(json::parse(config_text));
  } catch (const std::exception& e) {
    throw ConfigError("checkpoint " + path + ": bad config block: " + e.what());
  }
  ModelParams params = ModelParams::zeros(config);
  auto refs = params.tensor_refs();
  const std::uint32_t count = read_u32(in);
  if (count != refs.size()) throw ConfigError("checkpoint " + path + ": tensor count mismatch");
  for (auto& ref : refs) {
    const std::uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint64_t rows = read_u64(in);
    const std::uint64_t cols = read_u64(in);
    if (name != ref.name || rows != ref.rows || cols != ref.cols) {
      throw ConfigError("checkpoint " + path + ": tensor '" + name + "' does not match layout");
    }
    in.read(reinterpret_cast<char*>(ref.data),
            static_cast<std::streamsize>(ref.size() * sizeof(double)));
    if (!in) throw ConfigError("checkpoint " + path + ": truncated tensor payload");
  }
  return params;
}

}  // namespace callseq
