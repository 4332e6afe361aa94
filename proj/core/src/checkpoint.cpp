#include "tarec/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tarec/error.hpp"

namespace tarec {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

json config_json(const ModelConfig& c) {
  return {{"num_items", c.num_items},         {"dim", c.dim},
          {"seq_len", c.seq_len},             {"encoder_layers", c.encoder_layers},
          {"encoder_heads", c.encoder_heads}, {"ff_mult", c.ff_mult},
          {"denoiser_layers", c.denoiser_layers}, {"denoiser_hidden_mult", c.denoiser_hidden_mult}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.num_items = j.at("num_items").get<int>();
  c.dim = j.at("dim").get<int>();
  c.seq_len = j.at("seq_len").get<int>();
  c.encoder_layers = j.at("encoder_layers").get<int>();
  c.encoder_heads = j.at("encoder_heads").get<int>();
  c.ff_mult = j.at("ff_mult").get<int>();
  c.denoiser_layers = j.at("denoiser_layers").get<int>();
  c.denoiser_hidden_mult = j.at("denoiser_hidden_mult").get<int>();
  return c;
}

}  // namespace

const NamedTensor* CheckpointData::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void write_checkpoint(const fs::path& path, Model& model, int steps, const std::string& stage) {
  json manifest;
  manifest["format"] = "TAREC1";
  manifest["stage"] = stage;
  manifest["V"] = model.config.num_items;
  manifest["d"] = model.config.dim;
  manifest["L"] = model.config.seq_len;
  manifest["T"] = steps;
  manifest["model"] = config_json(model.config);
  json shapes = json::array();
  for (Parameter* p : model.parameters()) {
    shapes.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  }
  manifest["tensors"] = shapes;
  const std::string text = manifest.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (Parameter* p : model.parameters()) {
    for (double v : p->value.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw CheckpointError("short write on " + path.string());
}

CheckpointData read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < sizeof kCheckpointMagic + 8 ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw CheckpointError(path.string() + ": bad magic bytes");
  }
  std::size_t off = sizeof kCheckpointMagic;
  const std::uint64_t len = get_u64(p + off);
  off += 8;
  if (len > bytes.size() - off) throw CheckpointError(path.string() + ": truncated manifest");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(off, len));
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": unreadable manifest: " + e.what());
  }
  off += len;

  CheckpointData data;
  try {
    data.config = config_from(manifest.at("model"));
    data.steps = manifest.at("T").get<int>();
    data.stage = manifest.value("stage", "");
    for (const auto& t : manifest.at("tensors")) {
      NamedTensor nt;
      nt.name = t.at("name").get<std::string>();
      const auto rows = t.at("rows").get<std::size_t>();
      const auto cols = t.at("cols").get<std::size_t>();
      if (rows * cols * 8 > bytes.size() - off) {
        throw CheckpointError(path.string() + ": truncated tensor " + nt.name);
      }
      nt.value = Matrix(rows, cols);
      for (std::size_t i = 0; i < rows * cols; ++i, off += 8) {
        nt.value[i] = std::bit_cast<double>(get_u64(p + off));
      }
      data.tensors.push_back(std::move(nt));
    }
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": malformed manifest: " + e.what());
  }
  if (off != bytes.size()) throw CheckpointError(path.string() + ": trailing bytes");
  return data;
}

void load_into(Model& model, const CheckpointData& data) {
  std::string problems;
  for (Parameter* p : model.parameters()) {
    const NamedTensor* t = data.find(p->name);
    if (t == nullptr) {
      problems += " " + p->name + "(missing)";
    } else if (!t->value.same_shape(p->value)) {
      problems += " " + p->name + "(" + std::to_string(t->value.rows()) + "x" +
                  std::to_string(t->value.cols()) + " != " + std::to_string(p->value.rows()) +
                  "x" + std::to_string(p->value.cols()) + ")";
    }
  }
  if (!problems.empty()) throw CheckpointError("checkpoint shape mismatch:" + problems);
  for (Parameter* p : model.parameters()) p->value = data.find(p->name)->value;
}

Model load_model(const fs::path& path, const ModelConfig* expected, int* steps) {
  CheckpointData data = read_checkpoint(path);
  Model model = Model::init(expected ? *expected : data.config, 0);
  load_into(model, data);
  if (steps) *steps = data.steps;
  return model;
}

}  // namespace tarec
