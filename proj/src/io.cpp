#include "surgicam/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace surgicam::io {

namespace {

static_assert(std::endian::native == std::endian::little,
              "container payloads are little-endian; add byte swapping for this host");

std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

fs::path blob_path_for(const fs::path& manifest_path, const json& manifest) {
  if (manifest.contains("blob")) {
    return manifest_path.parent_path() / manifest.at("blob").get<std::string>();
  }
  fs::path blob = manifest_path;
  blob.replace_extension(".bin");
  return blob;
}

struct Entry {
  std::string name;
  std::string dtype;
  Shape shape;
  std::size_t offset = 0;
  std::size_t length = 0;
};

Entry parse_entry(const json& j) {
  Entry e;
  try {
    e.name = j.at("name").get<std::string>();
    e.dtype = j.at("dtype").get<std::string>();
    e.shape = j.at("shape").get<Shape>();
    e.offset = j.at("byte_offset").get<std::size_t>();
    e.length = j.at("byte_length").get<std::size_t>();
  } catch (const json::exception& ex) {
    throw ContainerError(ContainerErrc::malformed_manifest, std::string("tensor entry: ") + ex.what());
  }
  if (e.dtype != "f32" && e.dtype != "u8") {
    throw ContainerError(ContainerErrc::malformed_manifest,
                         "tensor '" + e.name + "' has unsupported dtype '" + e.dtype + "'");
  }
  if (e.shape.empty() || std::find(e.shape.begin(), e.shape.end(), 0u) != e.shape.end()) {
    throw ContainerError(ContainerErrc::malformed_manifest,
                         "tensor '" + e.name + "' has invalid shape " + shape_to_string(e.shape));
  }
  const std::size_t elem = e.dtype == "f32" ? 4 : 1;
  if (e.length != elem * shape_numel(e.shape)) {
    throw ContainerError(ContainerErrc::length_mismatch,
                         "tensor '" + e.name + "' declares " + std::to_string(e.length) +
                             " bytes for shape " + shape_to_string(e.shape));
  }
  return e;
}

// Skips whitespace and '#' comments in a netpbm header.
void skip_header_space(const std::vector<char>& buf, std::size_t& pos) {
  while (pos < buf.size()) {
    if (buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
}

std::size_t read_header_int(const std::vector<char>& buf, std::size_t& pos, const fs::path& path) {
  skip_header_space(buf, pos);
  std::size_t value = 0;
  std::size_t digits = 0;
  while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
    value = value * 10 + static_cast<std::size_t>(buf[pos] - '0');
    ++pos;
    if (++digits > 9) throw FormatError("'" + path.string() + "': header value too large");
  }
  if (digits == 0) throw FormatError("'" + path.string() + "': malformed header");
  return value;
}

struct NetpbmHeader {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t data_offset = 0;
};

NetpbmHeader parse_netpbm(const std::vector<char>& buf, const char* magic, std::size_t channels,
                          const fs::path& path) {
  if (buf.size() < 2 || buf[0] != magic[0] || buf[1] != magic[1]) {
    throw FormatError("'" + path.string() + "': expected magic " + magic);
  }
  std::size_t pos = 2;
  NetpbmHeader h;
  h.width = read_header_int(buf, pos, path);
  h.height = read_header_int(buf, pos, path);
  const std::size_t maxval = read_header_int(buf, pos, path);
  if (h.width == 0 || h.height == 0) throw FormatError("'" + path.string() + "': zero size");
  if (maxval != 255) throw FormatError("'" + path.string() + "': maxval must be 255");
  if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos]))) {
    throw FormatError("'" + path.string() + "': malformed header");
  }
  h.data_offset = pos + 1;
  if (buf.size() - h.data_offset < h.width * h.height * channels) {
    throw FormatError("'" + path.string() + "': truncated pixel data");
  }
  return h;
}

std::string netpbm_header(const char* magic, std::size_t w, std::size_t h) {
  return std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
}

void write_netpbm(const fs::path& path, const char* magic, std::size_t w, std::size_t h,
                  const std::vector<std::uint8_t>& pixels) {
  const std::string header = netpbm_header(magic, w, h);
  std::vector<char> out(header.begin(), header.end());
  out.insert(out.end(), pixels.begin(), pixels.end());
  write_file(path, out.data(), out.size());
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  try {
    cfg.image_size = j.at("image_size").get<std::size_t>();
    cfg.patch_size = j.at("patch_size").get<std::size_t>();
    cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
    cfg.num_heads = j.at("num_heads").get<std::size_t>();
    cfg.num_layers = j.at("num_layers").get<std::size_t>();
    cfg.ffn_dim = j.at("ffn_dim").get<std::size_t>();
    cfg.proj_dim = j.at("proj_dim").get<std::size_t>();
    cfg.attn_scale = j.value("attn_scale", 0.0f);
  } catch (const json::exception& ex) {
    throw ContainerError(ContainerErrc::malformed_manifest,
                         std::string("model config: ") + ex.what());
  }
  return cfg;
}

json config_to_json(const ModelConfig& cfg) {
  return {{"image_size", cfg.image_size}, {"patch_size", cfg.patch_size},
          {"embed_dim", cfg.embed_dim},   {"num_heads", cfg.num_heads},
          {"num_layers", cfg.num_layers}, {"ffn_dim", cfg.ffn_dim},
          {"proj_dim", cfg.proj_dim},     {"attn_scale", cfg.attn_scale}};
}

json aggregate_to_json(const AggregateMetrics& a) {
  json j = json::object();
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put("mIoU", a.miou);
  put("mSC", a.msc);
  put("mFSR", a.mfsr);
  put("mAP", a.map);
  put("points_accuracy", a.points_accuracy);
  return j;
}

}  // namespace

const char* to_string(ContainerErrc code) {
  switch (code) {
    case ContainerErrc::io_failure: return "io_failure";
    case ContainerErrc::malformed_manifest: return "malformed_manifest";
    case ContainerErrc::version_mismatch: return "version_mismatch";
    case ContainerErrc::overlapping_tensors: return "overlapping_tensors";
    case ContainerErrc::truncated_blob: return "truncated_blob";
    case ContainerErrc::duplicate_name: return "duplicate_name";
    case ContainerErrc::length_mismatch: return "length_mismatch";
    case ContainerErrc::missing_tensor: return "missing_tensor";
  }
  return "unknown";
}

const Tensor& TensorSet::require(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw ContainerError(ContainerErrc::missing_tensor, "no f32 tensor named '" + name + "'");
  return *t;
}

const Tensor* TensorSet::find(const std::string& name) const {
  const auto it = f32.find(name);
  return it == f32.end() ? nullptr : &it->second;
}

TensorSet load_container(const fs::path& manifest_path) {
  json manifest;
  {
    std::ifstream in(manifest_path);
    if (!in) {
      throw ContainerError(ContainerErrc::io_failure,
                           "cannot open manifest '" + manifest_path.string() + "'");
    }
    try {
      manifest = json::parse(in);
    } catch (const json::exception& ex) {
      throw ContainerError(ContainerErrc::malformed_manifest,
                           "'" + manifest_path.string() + "': " + ex.what());
    }
  }
  if (!manifest.is_object() || !manifest.contains("format_version") ||
      !manifest.contains("tensors") || !manifest["tensors"].is_array()) {
    throw ContainerError(ContainerErrc::malformed_manifest,
                         "'" + manifest_path.string() + "' lacks format_version or tensors");
  }
  if (!manifest["format_version"].is_number_integer() ||
      manifest["format_version"].get<int>() != kContainerFormatVersion) {
    throw ContainerError(ContainerErrc::version_mismatch,
                         "'" + manifest_path.string() + "' has format_version " +
                             manifest["format_version"].dump() + ", expected " +
                             std::to_string(kContainerFormatVersion));
  }

  std::vector<Entry> entries;
  std::set<std::string> names;
  for (const auto& j : manifest["tensors"]) {
    Entry e = parse_entry(j);
    if (!names.insert(e.name).second) {
      throw ContainerError(ContainerErrc::duplicate_name, "tensor '" + e.name + "' appears twice");
    }
    entries.push_back(std::move(e));
  }

  std::vector<const Entry*> by_offset;
  for (const auto& e : entries) by_offset.push_back(&e);
  std::sort(by_offset.begin(), by_offset.end(),
            [](const Entry* a, const Entry* b) { return a->offset < b->offset; });
  for (std::size_t i = 1; i < by_offset.size(); ++i) {
    const Entry& prev = *by_offset[i - 1];
    if (prev.offset + prev.length > by_offset[i]->offset) {
      throw ContainerError(ContainerErrc::overlapping_tensors,
                           "tensors '" + prev.name + "' and '" + by_offset[i]->name + "' overlap");
    }
  }

  const fs::path blob_path = blob_path_for(manifest_path, manifest);
  std::vector<char> blob;
  try {
    blob = read_file(blob_path);
  } catch (const IoError& ex) {
    throw ContainerError(ContainerErrc::io_failure, ex.what());
  }

  TensorSet set;
  set.metadata = manifest.value("metadata", json::object());
  for (const auto& e : entries) {
    if (e.offset > blob.size() || blob.size() - e.offset < e.length) {
      throw ContainerError(ContainerErrc::truncated_blob,
                           "tensor '" + e.name + "' needs bytes [" + std::to_string(e.offset) +
                               ", " + std::to_string(e.offset + e.length) + ") but '" +
                               blob_path.string() + "' holds " + std::to_string(blob.size()));
    }
    if (e.dtype == "f32") {
      std::vector<float> data(shape_numel(e.shape));
      std::memcpy(data.data(), blob.data() + e.offset, e.length);
      set.f32.emplace(e.name, Tensor(e.shape, std::move(data)));
    } else {
      ByteTensor bt{e.shape, std::vector<std::uint8_t>(e.length)};
      std::memcpy(bt.data.data(), blob.data() + e.offset, e.length);
      set.u8.emplace(e.name, std::move(bt));
    }
  }
  return set;
}

void write_container(const fs::path& manifest_path, const TensorSet& set) {
  for (const auto& [name, t] : set.u8) {
    if (set.f32.count(name)) {
      throw ContainerError(ContainerErrc::duplicate_name, "tensor '" + name + "' appears twice");
    }
    if (t.data.size() != shape_numel(t.shape)) {
      throw ContainerError(ContainerErrc::length_mismatch, "byte tensor '" + name + "'");
    }
  }
  fs::path blob_path = manifest_path;
  blob_path.replace_extension(".bin");

  json tensors = json::array();
  std::vector<char> blob;
  for (const auto& [name, t] : set.f32) {
    const std::size_t bytes = t.numel() * sizeof(float);
    tensors.push_back({{"name", name}, {"dtype", "f32"}, {"shape", t.shape()},
                       {"byte_offset", blob.size()}, {"byte_length", bytes}});
    const auto* src = reinterpret_cast<const char*>(t.data().data());
    blob.insert(blob.end(), src, src + bytes);
  }
  for (const auto& [name, t] : set.u8) {
    tensors.push_back({{"name", name}, {"dtype", "u8"}, {"shape", t.shape},
                       {"byte_offset", blob.size()}, {"byte_length", t.data.size()}});
    blob.insert(blob.end(), t.data.begin(), t.data.end());
  }
  json manifest = {{"format_version", kContainerFormatVersion},
                   {"blob", blob_path.filename().string()},
                   {"metadata", set.metadata},
                   {"tensors", tensors}};
  write_file(blob_path, blob.data(), blob.size());
  write_json_file(manifest, manifest_path);
}

ModelBundle model_from_tensors(const TensorSet& set) {
  if (!set.metadata.contains("model")) {
    throw ContainerError(ContainerErrc::malformed_manifest, "metadata.model config missing");
  }
  ModelBundle m;
  m.config = config_from_json(set.metadata["model"]);
  m.config.validate();
  const std::size_t c = m.config.embed_dim;
  m.patch_embed = set.require("patch_embed.weight");
  m.patch_bias = set.find("patch_embed.bias") ? *set.find("patch_embed.bias") : Tensor({c}, 0.0f);
  m.class_token = set.require("class_token");
  m.pos_embed = set.require("pos_embed");
  if (set.find("pre_ln.gamma")) {
    m.pre_ln = LayerNormWeights{set.require("pre_ln.gamma"), set.require("pre_ln.beta")};
  }
  for (std::size_t i = 0; i < m.config.num_layers; ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    BlockWeights b;
    b.ln1 = {set.require(p + "ln1.gamma"), set.require(p + "ln1.beta")};
    b.ln2 = {set.require(p + "ln2.gamma"), set.require(p + "ln2.beta")};
    b.wq = set.require(p + "attn.wq");
    b.bq = set.require(p + "attn.bq");
    b.wk = set.require(p + "attn.wk");
    b.bk = set.require(p + "attn.bk");
    b.wv = set.require(p + "attn.wv");
    b.bv = set.require(p + "attn.bv");
    b.w_out = set.require(p + "attn.w_out");
    b.b_out = set.require(p + "attn.b_out");
    b.ffn_w1 = set.require(p + "ffn.w1");
    b.ffn_b1 = set.require(p + "ffn.b1");
    b.ffn_w2 = set.require(p + "ffn.w2");
    b.ffn_b2 = set.require(p + "ffn.b2");
    m.blocks.push_back(std::move(b));
  }
  m.final_ln = {set.require("final_ln.gamma"), set.require("final_ln.beta")};
  m.proj = set.require("proj");
  m.validate();
  return m;
}

TensorSet model_to_tensors(const ModelBundle& model) {
  TensorSet set;
  set.metadata["model"] = config_to_json(model.config);
  set.f32["patch_embed.weight"] = model.patch_embed;
  set.f32["patch_embed.bias"] = model.patch_bias;
  set.f32["class_token"] = model.class_token;
  set.f32["pos_embed"] = model.pos_embed;
  if (model.pre_ln) {
    set.f32["pre_ln.gamma"] = model.pre_ln->gamma;
    set.f32["pre_ln.beta"] = model.pre_ln->beta;
  }
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    const BlockWeights& b = model.blocks[i];
    set.f32[p + "ln1.gamma"] = b.ln1.gamma;
    set.f32[p + "ln1.beta"] = b.ln1.beta;
    set.f32[p + "ln2.gamma"] = b.ln2.gamma;
    set.f32[p + "ln2.beta"] = b.ln2.beta;
    set.f32[p + "attn.wq"] = b.wq;
    set.f32[p + "attn.bq"] = b.bq;
    set.f32[p + "attn.wk"] = b.wk;
    set.f32[p + "attn.bk"] = b.bk;
    set.f32[p + "attn.wv"] = b.wv;
    set.f32[p + "attn.bv"] = b.bv;
    set.f32[p + "attn.w_out"] = b.w_out;
    set.f32[p + "attn.b_out"] = b.b_out;
    set.f32[p + "ffn.w1"] = b.ffn_w1;
    set.f32[p + "ffn.b1"] = b.ffn_b1;
    set.f32[p + "ffn.w2"] = b.ffn_w2;
    set.f32[p + "ffn.b2"] = b.ffn_b2;
  }
  set.f32["final_ln.gamma"] = model.final_ln.gamma;
  set.f32["final_ln.beta"] = model.final_ln.beta;
  set.f32["proj"] = model.proj;
  return set;
}

ModelBundle load_model(const fs::path& manifest_path) {
  return model_from_tensors(load_container(manifest_path));
}

void save_model(const fs::path& manifest_path, const ModelBundle& model) {
  write_container(manifest_path, model_to_tensors(model));
}

TextFeatureSet text_features_from_tensors(const TensorSet& set) {
  TextFeatureSet texts;
  if (const Tensor* direct = set.find("text_features")) {
    texts.features = ops::l2_normalize(*direct, 1);
  } else if (const Tensor* per_template = set.find("text_features_per_template")) {
    if (per_template->rank() != 3) {
      throw ShapeError("text_features_per_template must be [N_t x T x D], got " +
                       shape_to_string(per_template->shape()));
    }
    const std::size_t nt = per_template->dim(0), t = per_template->dim(1), d = per_template->dim(2);
    const Tensor flat = per_template->reshaped({nt * t, d});
    texts.features = Tensor({nt, d});
    for (std::size_t c = 0; c < nt; ++c) {
      const Tensor e = prompt_ensemble(flat.slice_rows(c * t, (c + 1) * t));
      std::copy(e.data().begin(), e.data().end(), texts.features.row(c).begin());
    }
  } else {
    throw ContainerError(ContainerErrc::missing_tensor,
                         "expected 'text_features' or 'text_features_per_template'");
  }
  if (const Tensor* empty = set.find("empty_feature")) {
    texts.empty_feature = ops::l2_normalize(empty->reshaped({empty->numel()}), 0);
  }
  if (set.metadata.contains("labels")) {
    texts.labels = set.metadata["labels"].get<std::vector<std::string>>();
  } else {
    for (std::size_t i = 0; i < texts.features.dim(0); ++i) texts.labels.push_back(std::to_string(i));
  }
  texts.validate();
  return texts;
}

TextFeatureSet load_text_features(const fs::path& manifest_path) {
  return text_features_from_tensors(load_container(manifest_path));
}

void save_text_features(const fs::path& manifest_path, const TextFeatureSet& texts) {
  texts.validate();
  TensorSet set;
  set.f32["text_features"] = texts.features;
  if (texts.empty_feature) set.f32["empty_feature"] = *texts.empty_feature;
  set.metadata["labels"] = texts.labels;
  write_container(manifest_path, set);
}

Tensor read_image_ppm(const fs::path& path) {
  const std::vector<char> buf = read_file(path);
  const NetpbmHeader h = parse_netpbm(buf, "P6", 3, path);
  Tensor image({3, h.height, h.width});
  const auto* px = reinterpret_cast<const unsigned char*>(buf.data() + h.data_offset);
  for (std::size_t y = 0; y < h.height; ++y) {
    for (std::size_t x = 0; x < h.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        image.at(c, y, x) = static_cast<float>(px[(y * h.width + x) * 3 + c]) / 255.0f;
      }
    }
  }
  return image;
}

void write_image_ppm(const fs::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("write_image_ppm: expected [3 x H x W], got " + shape_to_string(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::vector<std::uint8_t> pixels(h * w * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) pixels[(y * w + x) * 3 + c] = heatmap_byte(image.at(c, y, x));
  write_netpbm(path, "P6", w, h, pixels);
}

PreprocessConfig load_preprocess_config(const fs::path& path) {
  const json doc = read_json_file(path);
  PreprocessConfig cfg;
  try {
    cfg.mean = doc.at("mean").get<std::array<float, 3>>();
    cfg.std = doc.at("std").get<std::array<float, 3>>();
  } catch (const json::exception& ex) {
    throw FormatError("'" + path.string() + "': " + ex.what());
  }
  for (float s : cfg.std) {
    if (!(s > 0.0f)) throw FormatError("'" + path.string() + "': std entries must be positive");
  }
  return cfg;
}

Tensor preprocess_image(const Tensor& image, const PreprocessConfig& cfg, std::size_t size) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("preprocess_image: expected [3 x H x W], got " + shape_to_string(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  Tensor out({3, size, size});
  for (std::size_t c = 0; c < 3; ++c) {
    Tensor channel({h, w});
    std::copy_n(image.data().begin() + static_cast<std::ptrdiff_t>(c * h * w), h * w,
                channel.data().begin());
    const Tensor resized = ops::bilinear_resize(channel, size, size);
    for (std::size_t i = 0; i < size * size; ++i) {
      out[c * size * size + i] = (resized[i] - cfg.mean[c]) / cfg.std[c];
    }
  }
  return out;
}

GrayImage read_pgm(const fs::path& path) {
  const std::vector<char> buf = read_file(path);
  const NetpbmHeader h = parse_netpbm(buf, "P5", 1, path);
  GrayImage img{h.height, h.width, {}};
  const auto* px = reinterpret_cast<const std::uint8_t*>(buf.data() + h.data_offset);
  img.pixels.assign(px, px + h.width * h.height);
  return img;
}

void write_pgm(const fs::path& path, const GrayImage& image) {
  if (image.pixels.size() != image.width * image.height || image.pixels.empty()) {
    throw ShapeError("write_pgm: pixel count does not match size");
  }
  write_netpbm(path, "P5", image.width, image.height, image.pixels);
}

GroundTruthMask read_mask_pgm(const fs::path& path, const std::string& class_label) {
  const GrayImage img = read_pgm(path);
  GroundTruthMask m{img.height, img.width, {}, class_label};
  m.mask.reserve(img.pixels.size());
  for (auto v : img.pixels) m.mask.push_back(v != 0 ? 1 : 0);
  return m;
}

LabelGrid read_label_pgm(const fs::path& path) {
  const GrayImage img = read_pgm(path);
  return {img.height, img.width, std::vector<std::int32_t>(img.pixels.begin(), img.pixels.end())};
}

void write_mask_pgm(const fs::path& path, const GroundTruthMask& mask) {
  GrayImage img{mask.height, mask.width, {}};
  for (auto v : mask.mask) img.pixels.push_back(v ? 255 : 0);
  write_pgm(path, img);
}

void write_label_pgm(const fs::path& path, const LabelGrid& labels) {
  GrayImage img{labels.height, labels.width, {}};
  for (auto v : labels.labels) {
    if (v < 0 || v > 255) throw std::out_of_range("label " + std::to_string(v) + " does not fit a byte");
    img.pixels.push_back(static_cast<std::uint8_t>(v));
  }
  write_pgm(path, img);
}

std::uint8_t heatmap_byte(float score) {
  const double v = std::floor(255.0 * std::clamp(static_cast<double>(score), 0.0, 1.0) + 0.5);
  return static_cast<std::uint8_t>(v);
}

void write_heatmap_pgm(const SimilarityMap& map, const fs::path& path) {
  GrayImage img{map.height(), map.width(), {}};
  img.pixels.reserve(map.scores.numel());
  for (float s : map.scores.data()) img.pixels.push_back(heatmap_byte(s));
  write_pgm(path, img);
}

SimilarityMap read_heatmap_pgm(const fs::path& path, const std::string& class_label) {
  const GrayImage img = read_pgm(path);
  SimilarityMap m;
  m.scores = Tensor({img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) m.scores[i] = img.pixels[i] / 255.0f;
  m.class_label = class_label;
  return m;
}

json points_to_json(const PointPromptSet& points) {
  auto encode = [](const std::vector<ScoredPoint>& pts) {
    json arr = json::array();
    for (const auto& p : pts) arr.push_back({{"x", p.x}, {"y", p.y}, {"score", p.score}});
    return arr;
  };
  return {{"threshold", points.threshold},
          {"foreground", encode(points.foreground)},
          {"background", encode(points.background)}};
}

PointPromptSet points_from_json(const json& doc) {
  PointPromptSet points;
  try {
    points.threshold = doc.at("threshold").get<float>();
    auto decode = [](const json& arr, std::vector<ScoredPoint>& out) {
      for (const auto& p : arr) {
        out.push_back({p.at("x").get<int>(), p.at("y").get<int>(), p.at("score").get<float>()});
      }
    };
    decode(doc.at("foreground"), points.foreground);
    decode(doc.at("background"), points.background);
  } catch (const json::exception& ex) {
    throw FormatError(std::string("point prompt document: ") + ex.what());
  }
  if (points.foreground.size() != points.background.size()) {
    throw FormatError("point prompt document: foreground and background counts differ");
  }
  return points;
}

void write_points_json(const PointPromptSet& points, const fs::path& path) {
  write_json_file(points_to_json(points), path);
}

PointPromptSet read_points_json(const fs::path& path) { return points_from_json(read_json_file(path)); }

json report_metrics_to_json(const EvalReport& report) {
  json per_class = json::object();
  for (const auto& [cls, m] : report.per_class) {
    per_class[cls] = {{"mIoU", m.miou}, {"mSC", m.msc}, {"sample_count", m.sample_count}};
  }
  return {{"per_class", per_class},
          {"aggregate", aggregate_to_json(report.aggregate)},
          {"excluded_degenerate", report.excluded_degenerate}};
}

json report_to_json(const ReportDocument& doc) {
  return {{"tool_version", doc.tool_version},
          {"model_tag", doc.model_tag},
          {"surgery",
           {{"enabled", doc.surgery.enabled},
            {"depth_d", doc.surgery.depth_d},
            {"tau", doc.surgery.tau},
            {"mode", doc.surgery.mode}}},
          {"metrics", doc.metrics},
          {"per_sample", doc.per_sample},
          {"flags", doc.flags}};
}

ReportDocument report_from_json(const json& j) {
  ReportDocument doc;
  try {
    doc.tool_version = j.at("tool_version").get<std::string>();
    doc.model_tag = j.at("model_tag").get<std::string>();
    const json& s = j.at("surgery");
    doc.surgery.enabled = s.at("enabled").get<bool>();
    doc.surgery.depth_d = s.at("depth_d").get<std::size_t>();
    doc.surgery.tau = s.at("tau").get<float>();
    doc.surgery.mode = s.at("mode").get<std::string>();
    doc.metrics = j.at("metrics");
    doc.per_sample = j.at("per_sample");
    doc.flags = j.value("flags", json::object());
  } catch (const json::exception& ex) {
    throw FormatError(std::string("report document: ") + ex.what());
  }
  return doc;
}

void write_report(const ReportDocument& doc, const fs::path& path) {
  write_json_file(report_to_json(doc), path);
}

ReportDocument read_report(const fs::path& path) { return report_from_json(read_json_file(path)); }

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& ex) {
    throw FormatError("'" + path.string() + "': " + ex.what());
  }
}

void write_json_file(const json& doc, const fs::path& path) {
  const std::string text = doc.dump(2) + "\n";
  write_file(path, text.data(), text.size());
}

}  // namespace surgicam::io
