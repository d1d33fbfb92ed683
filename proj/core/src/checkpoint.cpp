#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "onas/supernet.hpp"

namespace onas {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

json head_to_json(const HeadSpec& h) {
  json j;
  j["task"] = task_name(h.task);
  j["num_classes"] = h.num_classes;
  if (h.task == TaskKind::Segmentation) {
    j["seg"] = {{"dilation_rates", h.seg.dilation_rates},
                {"fuse_channels", h.seg.fuse_channels},
                {"output_stride", h.seg.output_stride}};
  }
  return j;
}

HeadSpec head_from_json(const json& j) {
  HeadSpec h;
  const std::string task = j.at("task").get<std::string>();
  if (task == "classification") {
    h.task = TaskKind::Classification;
  } else if (task == "segmentation") {
    h.task = TaskKind::Segmentation;
  } else {
    throw ParseError("checkpoint manifest: unknown task '" + task + "'");
  }
  h.num_classes = j.at("num_classes").get<int>();
  if (h.task == TaskKind::Segmentation) {
    const auto& s = j.at("seg");
    h.seg.dilation_rates = s.at("dilation_rates").get<std::vector<int>>();
    h.seg.fuse_channels = s.at("fuse_channels").get<int>();
    h.seg.output_stride = s.at("output_stride").get<int>();
  }
  return h;
}

std::uint64_t fnv1a_bytes(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void save_checkpoint(WeightStore<float>& store, const std::string& dir) {
  fs::create_directories(dir);
  std::string blob;
  json tensors = json::array();
  for_each_named_tensor(store, [&](const std::string& name, Tensor<float>& t, TensorMeta) {
    tensors.push_back({{"name", name}, {"shape", t.shape}, {"offset", blob.size()}});
    const std::size_t bytes = static_cast<std::size_t>(t.size()) * sizeof(float);
    const std::size_t off = blob.size();
    blob.resize(off + bytes);
    std::memcpy(blob.data() + off, t.data.data(), bytes);
  });
  const std::string blob_hash = hex64(fnv1a_bytes(blob.data(), blob.size()));

  json m;
  m["format"] = "onas-checkpoint";
  m["version"] = kFormatVersion;
  m["space"] = json::parse(space_to_json(store.space));
  m["space_hash"] = hex64(space_hash(store.space));
  m["stage_tag"] = store.stage_tag;
  m["seed"] = store.seed;
  m["parent_hash"] = store.parent_hash;
  m["head"] = store.head ? head_to_json(*store.head) : json(nullptr);
  m["tensors"] = std::move(tensors);
  m["blob_bytes"] = blob.size();
  m["blob_hash"] = blob_hash;

  {
    std::ofstream out(fs::path(dir) / "weights.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + dir + "/weights.bin");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  }
  {
    std::ofstream out(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + dir + "/manifest.json");
    out << m.dump(2) << "\n";
  }
}

std::string checkpoint_blob_hash(const std::string& dir) {
  json m = json::parse(read_file(fs::path(dir) / "manifest.json"));
  return m.at("blob_hash").get<std::string>();
}

WeightStore<float> load_checkpoint(const std::string& dir,
                                   const SearchSpaceConfig* expected_space) {
  const fs::path root(dir);
  if (!fs::exists(root / "manifest.json"))
    throw CheckpointError("no checkpoint manifest in " + dir);
  json m;
  try {
    m = json::parse(read_file(root / "manifest.json"));
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint manifest: ") + e.what());
  }
  if (m.value("format", "") != "onas-checkpoint")
    throw CheckpointError("not a checkpoint manifest: " + dir);
  if (m.at("version").get<int>() != kFormatVersion)
    throw CheckpointVersionError("unsupported checkpoint version " +
                                 std::to_string(m.at("version").get<int>()));

  const SearchSpaceConfig space = space_from_json(m.at("space").dump());
  if (m.at("space_hash").get<std::string>() != hex64(space_hash(space)))
    throw CheckpointHashError("manifest space_hash does not match embedded space");
  if (expected_space && space_hash(*expected_space) != space_hash(space))
    throw CheckpointHashError("checkpoint search space differs from the configured space");

  WeightStore<float> store = make_store_skeleton<float>(space);
  store.stage_tag = m.at("stage_tag").get<std::string>();
  store.seed = m.at("seed").get<std::uint64_t>();
  if (!m.at("head").is_null()) attach_head(store, head_from_json(m.at("head")), 0);

  const std::string blob = read_file(root / "weights.bin");
  const std::size_t expect_bytes = m.at("blob_bytes").get<std::size_t>();
  if (blob.size() < expect_bytes)
    throw CheckpointTruncatedError("weights.bin is " + std::to_string(blob.size()) +
                                   " bytes, manifest expects " + std::to_string(expect_bytes));
  const std::string blob_hash = hex64(fnv1a_bytes(blob.data(), expect_bytes));
  if (blob_hash != m.at("blob_hash").get<std::string>())
    throw CheckpointHashError("weights.bin hash mismatch in " + dir);
  store.parent_hash = blob_hash;

  const auto& tensors = m.at("tensors");
  std::size_t ti = 0;
  for_each_named_tensor(store, [&](const std::string& name, Tensor<float>& t, TensorMeta) {
    if (ti >= tensors.size())
      throw CheckpointError("manifest tensor list too short at '" + name + "'");
    const auto& e = tensors[ti++];
    if (e.at("name").get<std::string>() != name)
      throw CheckpointError("tensor order mismatch: expected '" + name + "', manifest has '" +
                            e.at("name").get<std::string>() + "'");
    const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
    if (shape != t.shape)
      throw CheckpointError("tensor '" + name + "' shape mismatch");
    const std::size_t off = e.at("offset").get<std::size_t>();
    const std::size_t bytes = static_cast<std::size_t>(t.size()) * sizeof(float);
    if (off + bytes > expect_bytes)
      throw CheckpointTruncatedError("tensor '" + name + "' extends past blob end");
    std::memcpy(t.data.data(), blob.data() + off, bytes);
  });
  if (ti != tensors.size()) throw CheckpointError("manifest lists unexpected extra tensors");
  return store;
}

}  // namespace onas
