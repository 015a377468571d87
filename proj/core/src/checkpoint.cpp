#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>

#include "effops/error.hpp"
#include "effops/pipeline.hpp"
#include "json.hpp"

namespace effops {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

std::uint64_t fnv1a(const std::vector<char>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << v;
  return ss.str();
}

template <typename T>
void append_le(std::vector<char>& out, std::span<const T> values) {
  const std::size_t at = out.size();
  out.resize(at + values.size_bytes());
  std::memcpy(out.data() + at, values.data(), values.size_bytes());
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    for (std::size_t i = at; i < out.size(); i += sizeof(T)) std::reverse(out.begin() + i, out.begin() + i + sizeof(T));
  }
}

template <typename T>
void read_le(const std::vector<char>& blob, std::size_t offset, std::span<T> into) {
  std::vector<char> bytes(blob.begin() + static_cast<std::ptrdiff_t>(offset),
                          blob.begin() + static_cast<std::ptrdiff_t>(offset + into.size_bytes()));
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    for (std::size_t i = 0; i < bytes.size(); i += sizeof(T)) std::reverse(bytes.begin() + i, bytes.begin() + i + sizeof(T));
  }
  std::memcpy(into.data(), bytes.data(), into.size_bytes());
}

// Visits every tensor slot of a model in a fixed order.
struct Slots {
  std::function<void(const std::string&, Tensor&)> dense;
  std::function<void(const std::string&, Linear&)> linear;
};

void visit(TransformerModel& m, const Slots& s) {
  s.dense("token_embedding", m.token_embedding);
  s.dense("position_embedding", m.position_embedding);
  s.dense("emb_ln.gamma", m.emb_ln_gamma);
  s.dense("emb_ln.beta", m.emb_ln_beta);
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    auto& l = m.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    s.linear(p + "query", l.query);
    s.linear(p + "key", l.key);
    s.linear(p + "value", l.value);
    s.linear(p + "output", l.output);
    s.linear(p + "ff_in", l.ff_in);
    s.linear(p + "ff_out", l.ff_out);
    s.dense(p + "ln1.gamma", l.ln1_gamma);
    s.dense(p + "ln1.beta", l.ln1_beta);
    s.dense(p + "ln2.gamma", l.ln2_gamma);
    s.dense(p + "ln2.beta", l.ln2_beta);
  }
  s.linear("classifier", m.classifier);
  for (std::size_t i = 0; i < m.exits.size(); ++i) s.linear("exits." + std::to_string(i), m.exits[i]);
}

json config_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers}, {"d_model", c.d_model},       {"n_heads", c.n_heads},
          {"d_head", c.d_head},     {"d_ff", c.d_ff},             {"vocab_size", c.vocab_size},
          {"max_len", c.max_len},   {"n_classes", c.n_classes}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_head = j.at("d_head").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.n_classes = j.at("n_classes").get<int>();
  return c;
}

std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingPrerequisite("checkpoint: cannot read " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

void save_artifact(const ModelArtifact& artifact, const fs::path& dir) {
  TransformerModel model = artifact.model;  // shares storage; only read below
  std::vector<char> blob;
  json index = json::array();

  auto add_f32 = [&](const std::string& name, const Tensor& t) {
    const std::size_t offset = blob.size();
    append_le<float>(blob, t.data());
    index.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "f32"}, {"offset", offset},
                     {"nbytes", blob.size() - offset}});
  };
  Slots slots{
      [&](const std::string& name, Tensor& t) { add_f32(name, t); },
      [&](const std::string& name, Linear& lin) {
        if (lin.qweight) {
          const auto& q = *lin.qweight;
          const std::size_t offset = blob.size();
          append_le<std::int8_t>(blob, q.qdata);
          index.push_back({{"name", name + ".weight"}, {"shape", q.shape}, {"dtype", "i8"}, {"offset", offset},
                           {"nbytes", blob.size() - offset}, {"scale", q.scale}, {"zero_point", q.zero_point}});
        } else {
          add_f32(name + ".weight", lin.weight);
        }
        add_f32(name + ".bias", lin.bias);
      }};
  visit(model, slots);

  json layers = json::array();
  for (const auto& l : model.layers) layers.push_back({{"heads", l.heads}, {"ff", l.ff}});
  const auto& p = artifact.provenance;
  json manifest{{"format_version", kFormatVersion},
                {"config", config_json(model.config)},
                {"provenance", {{"pipeline", p.pipeline}, {"seed", p.seed}, {"task", p.task}, {"config", p.config}}},
                {"layers", layers},
                {"has_exits", model.has_exits()},
                {"quantized", model.quantized()},
                {"l_flag", artifact.l_flag},
                {"tensors", index},
                {"weights_bytes", blob.size()},
                {"weights_fnv1a", hex(fnv1a(blob))}};

  fs::create_directories(dir);
  {
    std::ofstream out(dir / "weights.bin", std::ios::binary | std::ios::trunc);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw FormatError("checkpoint: failed writing " + (dir / "weights.bin").string());
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) throw FormatError("checkpoint: failed writing " + (dir / "manifest.json").string());
}

ModelArtifact load_artifact(const fs::path& dir) {
  const std::vector<char> manifest_bytes = read_file(dir / "manifest.json");
  const std::vector<char> blob = read_file(dir / "weights.bin");
  ModelArtifact a;
  try {
    const json m = json::parse(manifest_bytes.begin(), manifest_bytes.end());
    if (m.at("format_version").get<int>() != kFormatVersion) {
      throw FormatError("checkpoint: unsupported format version " + m.at("format_version").dump());
    }
    if (m.at("weights_bytes").get<std::size_t>() != blob.size()) {
      throw FormatError("checkpoint: weights.bin has " + std::to_string(blob.size()) + " bytes, manifest expects " +
                        m.at("weights_bytes").dump());
    }
    if (m.at("weights_fnv1a").get<std::string>() != hex(fnv1a(blob))) {
      throw FormatError("checkpoint: weights.bin checksum mismatch");
    }
    const auto& prov = m.at("provenance");
    a.provenance = Provenance{prov.at("pipeline").get<std::string>(), prov.at("seed").get<std::uint64_t>(),
                              prov.at("task").get<std::string>(), prov.at("config").get<std::string>()};
    a.l_flag = m.at("l_flag").get<bool>();

    TransformerModel& model = a.model;
    model.config = config_from(m.at("config"));
    model.config.validate();
    for (const auto& l : m.at("layers")) {
      EncoderLayer layer;
      layer.heads = l.at("heads").get<int>();
      layer.ff = l.at("ff").get<int>();
      model.layers.push_back(std::move(layer));
    }
    if (m.at("has_exits").get<bool>()) model.exits.resize(model.layers.size() - 1);

    const auto& index = m.at("tensors");
    std::size_t next = 0;
    auto entry = [&](const std::string& name) -> const json& {
      if (next >= index.size()) throw FormatError("checkpoint: tensor index ends before " + name);
      const json& e = index.at(next++);
      if (e.at("name").get<std::string>() != name) {
        throw FormatError("checkpoint: expected tensor " + name + ", found " + e.at("name").get<std::string>());
      }
      const auto offset = e.at("offset").get<std::size_t>();
      const auto nbytes = e.at("nbytes").get<std::size_t>();
      if (offset > blob.size() || nbytes > blob.size() - offset) {
        throw FormatError("checkpoint: tensor " + name + " lies outside weights.bin");
      }
      return e;
    };
    auto read_f32 = [&](const json& e) {
      const Shape shape = e.at("shape").get<Shape>();
      if (e.at("dtype").get<std::string>() != "f32" || e.at("nbytes").get<std::size_t>() != shape_numel(shape) * 4) {
        throw FormatError("checkpoint: tensor " + e.at("name").get<std::string>() + " has inconsistent size or dtype");
      }
      Tensor t(shape);
      read_le<float>(blob, e.at("offset").get<std::size_t>(), t.data());
      return t.set_requires_grad(true);
    };
    Slots slots{
        [&](const std::string& name, Tensor& t) { t = read_f32(entry(name)); },
        [&](const std::string& name, Linear& lin) {
          const json& w = entry(name + ".weight");
          if (w.at("dtype").get<std::string>() == "i8") {
            QuantizedTensor q;
            q.shape = w.at("shape").get<Shape>();
            q.scale = w.at("scale").get<float>();
            q.zero_point = w.at("zero_point").get<std::int32_t>();
            q.qdata.resize(shape_numel(q.shape));
            if (w.at("nbytes").get<std::size_t>() != q.qdata.size()) {
              throw FormatError("checkpoint: tensor " + name + ".weight has inconsistent size");
            }
            read_le<std::int8_t>(blob, w.at("offset").get<std::size_t>(), q.qdata);
            lin.qweight = std::move(q);
          } else {
            lin.weight = read_f32(w);
          }
          lin.bias = read_f32(entry(name + ".bias"));
        }};
    visit(model, slots);
    if (next != index.size()) throw FormatError("checkpoint: unexpected extra tensors in index");
    const auto d = static_cast<std::size_t>(model.config.d_model);
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
      const auto& l = model.layers[i];
      const auto width = static_cast<std::size_t>(l.heads * model.config.d_head);
      const bool ok = l.query.out_features() == width && l.key.out_features() == width &&
                      l.value.out_features() == width && l.output.in_features() == width &&
                      l.output.out_features() == d && l.ff_in.out_features() == static_cast<std::size_t>(l.ff) &&
                      l.ff_out.in_features() == static_cast<std::size_t>(l.ff) && l.query.in_features() == d;
      if (!ok) throw FormatError("checkpoint: layer " + std::to_string(i + 1) + " shapes disagree with its widths");
    }
    if (model.quantized() != m.at("quantized").get<bool>()) {
      throw FormatError("checkpoint: quantized flag disagrees with stored tensors");
    }
  } catch (const json::exception& e) {
    throw FormatError("checkpoint " + dir.string() + ": corrupt manifest: " + e.what());
  }
  return a;
}

}  // namespace effops
