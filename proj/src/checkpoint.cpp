#include "hybridcast/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

#include <openssl/evp.h>

namespace hybridcast {

namespace {

constexpr char kMagic[8] = {'H', 'Y', 'C', 'K', 'P', 'T', '0', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::string git_blob_hash(const std::string& bytes) {
  const std::string prefix = "blob " + std::to_string(bytes.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  require(ctx != nullptr, "git_blob_hash: cannot allocate digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, prefix.data(), prefix.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &length) == 1;
  EVP_MD_CTX_free(ctx);
  require(ok, "git_blob_hash: SHA-1 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < length; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

std::string file_blob_hash(const std::string& path) { return git_blob_hash(read_file(path)); }

std::string config_hash(const nlohmann::json& config) { return git_blob_hash(config.dump()); }

std::string CheckpointInfo::config_hash() const {
  return hybridcast::config_hash(
      {{"model", model.to_json()}, {"train", train.to_json()}, {"loss", loss.to_json()}, {"seed", seed}});
}

void save_checkpoint(const std::string& path, const Model& model, const CheckpointInfo& info) {
  const ParamStore& store = model.store();
  nlohmann::json params = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& name : store.names()) {
    const Tensor& v = store.get(name).value();
    params.push_back({{"name", name}, {"shape", {v.rows(), v.cols()}}, {"offset", offset}, {"count", v.size()}});
    offset += static_cast<std::uint64_t>(v.size());
  }
  CheckpointInfo stored = info;
  stored.model = model.config();
  nlohmann::json header = {{"format", "HYCKPT01"},
                           {"model_config", stored.model.to_json()},
                           {"train_config", stored.train.to_json()},
                           {"loss_config", stored.loss.to_json()},
                           {"seed", stored.seed},
                           {"config_hash", stored.config_hash()},
                           {"extra", stored.extra},
                           {"params", params},
                           {"value_count", offset}};
  const std::string text = header.dump();
  const std::uint64_t header_length = text.size();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), "save_checkpoint: cannot open '" + path + "'");
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&header_length), sizeof(header_length));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& name : store.names()) {
    const Tensor& v = store.get(name).value();
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(sizeof(double) * v.size()));
  }
  require(static_cast<bool>(out), "save_checkpoint: write to '" + path + "' failed");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  const std::string bytes = read_file(path);
  const std::string where = "load_checkpoint('" + path + "'): ";
  require(bytes.size() >= 16 && std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) == 0, where + "not a HYCKPT01 file");
  std::uint64_t header_length = 0;
  std::memcpy(&header_length, bytes.data() + 8, sizeof(header_length));
  require(header_length <= bytes.size() - 16, where + "truncated header");

  LoadedCheckpoint out;
  try {
    out.header = nlohmann::json::parse(bytes.substr(16, header_length));
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation(where + "malformed header: " + e.what());
  }
  const nlohmann::json& h = out.header;
  out.info.model = ModelConfig::from_json(h.at("model_config"));
  out.info.train = TrainConfig::from_json(h.at("train_config"));
  out.info.loss = LossConfig::from_json(h.at("loss_config"));
  out.info.seed = h.at("seed").get<std::uint64_t>();
  out.info.extra = h.value("extra", nlohmann::json::object());
  require(h.at("config_hash").get<std::string>() == out.info.config_hash(), where + "config hash mismatch");

  const std::uint64_t count = h.at("value_count").get<std::uint64_t>();
  const std::size_t payload_start = 16 + header_length;
  require(bytes.size() - payload_start == count * sizeof(double), where + "payload size does not match the header");

  out.model = Model::create(out.info.model, out.info.seed);
  const auto& params = h.at("params");
  require(params.size() == out.model->store().names().size(), where + "parameter count differs from the architecture");
  std::map<std::string, Tensor> values;
  for (const auto& p : params) {
    const std::string name = p.at("name").get<std::string>();
    require(out.model->store().contains(name), where + "unknown parameter '" + name + "'");
    const Eigen::Index rows = p.at("shape").at(0).get<Eigen::Index>(), cols = p.at("shape").at(1).get<Eigen::Index>();
    const std::uint64_t offset = p.at("offset").get<std::uint64_t>();
    require(offset + static_cast<std::uint64_t>(rows * cols) <= count, where + "parameter '" + name + "' out of range");
    Tensor v(rows, cols);
    std::memcpy(v.data(), bytes.data() + payload_start + offset * sizeof(double), sizeof(double) * v.size());
    values.emplace(name, std::move(v));
  }
  out.model->store().restore(values);
  return out;
}

}  // namespace hybridcast
