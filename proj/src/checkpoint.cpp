#include "rldc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace rldc {

namespace {

constexpr char kMagic[4] = {'R', 'L', 'D', 'C'};
constexpr std::size_t kHeaderBytes = 4 + 1 + 4;

[[noreturn]] void fail(const std::string& what) {
  throw std::runtime_error("checkpoint: " + what);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace

nlohmann::json spec_to_json(const NetworkSpec& spec) {
  nlohmann::json convs = nlohmann::json::array();
  for (const ConvSpec& c : spec.conv_layers) {
    convs.push_back({{"in_channels", c.in_channels},
                     {"out_channels", c.out_channels},
                     {"kernel_h", c.kernel_h},
                     {"kernel_w", c.kernel_w},
                     {"stride", c.stride}});
  }
  return {{"input", {spec.input.frames, spec.input.height, spec.input.width}},
          {"conv_layers", convs},
          {"width", to_string(spec.width)},
          {"tail", to_string(spec.tail)},
          {"hidden", spec.hidden},
          {"actions", spec.actions}};
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  const auto input = j.at("input").get<std::vector<std::size_t>>();
  if (input.size() != 3) fail("spec input must have 3 extents");
  spec.input = {input[0], input[1], input[2]};
  for (const auto& c : j.at("conv_layers")) {
    spec.conv_layers.push_back({c.at("in_channels").get<std::size_t>(),
                                c.at("out_channels").get<std::size_t>(),
                                c.at("kernel_h").get<std::size_t>(),
                                c.at("kernel_w").get<std::size_t>(),
                                c.at("stride").get<std::size_t>()});
  }
  spec.width = parse_width(j.at("width").get<std::string>());
  spec.tail = parse_tail(j.at("tail").get<std::string>());
  spec.hidden = j.at("hidden").get<std::size_t>();
  spec.actions = j.at("actions").get<std::size_t>();
  spec.validate();
  return spec;
}

Checkpoint make_checkpoint(const Network& network, nlohmann::json metadata) {
  Checkpoint ckpt;
  ckpt.spec = network.spec();
  ckpt.metadata = std::move(metadata);
  for (const NamedConstParam& p : network.parameters()) {
    WeightBlob blob{p.name, p.tensor->shape(), {}};
    blob.values.reserve(p.tensor->size());
    for (double v : p.tensor->values()) blob.values.push_back(static_cast<float>(v));
    ckpt.blobs.push_back(std::move(blob));
  }
  return ckpt;
}

Network network_from(const Checkpoint& checkpoint) {
  Network net = Network::build(checkpoint.spec, 0);
  auto params = net.parameters();
  if (params.size() != checkpoint.blobs.size()) {
    fail("spec expects " + std::to_string(params.size()) + " blobs, file has " +
         std::to_string(checkpoint.blobs.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const WeightBlob& blob = checkpoint.blobs[i];
    Tensor& t = *params[i].tensor;
    if (blob.name != params[i].name) {
      fail("blob " + std::to_string(i) + " is '" + blob.name + "', expected '" + params[i].name +
           "'");
    }
    if (blob.shape != t.shape() || blob.values.size() != t.size()) {
      fail("blob '" + blob.name + "' has shape " + shape_string(blob.shape) +
           " but the spec requires " + shape_string(t.shape()));
    }
    std::copy(blob.values.begin(), blob.values.end(), t.values().begin());
  }
  return net;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  nlohmann::json table = nlohmann::json::array();
  std::size_t offset = 0;
  for (const WeightBlob& b : checkpoint.blobs) {
    table.push_back({{"name", b.name}, {"shape", b.shape}, {"offset", offset},
                     {"count", b.values.size()}});
    offset += b.values.size() * sizeof(float);
  }
  const nlohmann::json manifest = {{"spec", spec_to_json(checkpoint.spec)},
                                   {"blobs", table},
                                   {"metadata", checkpoint.metadata}};
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.push_back(checkpoint.version);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const WeightBlob& b : checkpoint.blobs) {
    for (float v : b.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) fail("file shorter than the header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail("bad magic bytes (not an RLDC file)");
  Checkpoint ckpt;
  ckpt.version = bytes[4];
  if (ckpt.version != kCheckpointVersion) {
    fail("unsupported version " + std::to_string(ckpt.version) + " (expected " +
         std::to_string(kCheckpointVersion) + ")");
  }
  const std::size_t manifest_len = get_u32(bytes.data() + 5);
  if (bytes.size() < kHeaderBytes + manifest_len) fail("truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + kHeaderBytes,
                                     bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderBytes + manifest_len));
    ckpt.spec = spec_from_json(manifest.at("spec"));
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("malformed manifest: ") + e.what());
  }
  ckpt.metadata = manifest.value("metadata", nlohmann::json::object());

  const std::uint8_t* blob_region = bytes.data() + kHeaderBytes + manifest_len;
  const std::size_t region_size = bytes.size() - kHeaderBytes - manifest_len;
  std::size_t expected_end = 0;
  for (const auto& entry : manifest.at("blobs")) {
    WeightBlob blob;
    blob.name = entry.at("name").get<std::string>();
    blob.shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto count = entry.at("count").get<std::size_t>();
    if (count != shape_numel(blob.shape)) {
      fail("blob '" + blob.name + "' count " + std::to_string(count) + " disagrees with shape " +
           shape_string(blob.shape));
    }
    if (offset % sizeof(float) != 0 || offset + count * sizeof(float) > region_size) {
      fail("blob '" + blob.name + "' extends past the end of the file (truncated)");
    }
    blob.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      blob.values[i] = std::bit_cast<float>(get_u32(blob_region + offset + i * sizeof(float)));
    }
    expected_end = std::max(expected_end, offset + count * sizeof(float));
    ckpt.blobs.push_back(std::move(blob));
  }
  if (expected_end != region_size) {
    fail("blob region has " + std::to_string(region_size) + " bytes, manifest describes " +
         std::to_string(expected_end));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(checkpoint);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void save(const Network& network, const std::filesystem::path& path, nlohmann::json metadata) {
  save_checkpoint(make_checkpoint(network, std::move(metadata)), path);
}

Network load(const std::filesystem::path& path) { return network_from(load_checkpoint(path)); }

}  // namespace rldc
