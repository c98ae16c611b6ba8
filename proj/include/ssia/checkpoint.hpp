#pragma once

// Versioned checkpoint: magic "SSIA", u32 version, JSON header carrying the
// architecture config and a parameter manifest (name, shape, byte offset),
// then the concatenated little-endian float32 payload in manifest order.
// In-memory parameters are doubles; persistence narrows to float32.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssia/derain_net.hpp"
#include "ssia/image_io.hpp"

namespace ssia {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'S', 'S', 'I', 'A'};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline nlohmann::json config_to_json(const NetConfig& c) {
  return {{"channels", c.channels},
          {"stages", c.stages},
          {"use_sian", c.use_sian},
          {"use_lstm", c.use_lstm},
          {"sian_single_conv", c.sian_single_conv},
          {"share_sian_heads", c.share_sian_heads},
          {"lstm_pre_convs", c.lstm_pre_convs},
          {"sigma", c.sigma},
          {"sigma_prime", c.sigma_prime},
          {"k", c.k}};
}

inline NetConfig config_from_json(const nlohmann::json& j) {
  NetConfig c;
  c.channels = j.at("channels").get<int>();
  c.stages = j.at("stages").get<int>();
  c.use_sian = j.at("use_sian").get<bool>();
  c.use_lstm = j.at("use_lstm").get<bool>();
  c.sian_single_conv = j.at("sian_single_conv").get<bool>();
  c.share_sian_heads = j.at("share_sian_heads").get<bool>();
  c.lstm_pre_convs = j.at("lstm_pre_convs").get<bool>();
  c.sigma = j.at("sigma").get<double>();
  c.sigma_prime = j.at("sigma_prime").get<double>();
  c.k = j.at("k").get<double>();
  return c;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const NetworkParams& params,
                            const NetConfig& config) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params.tensors()) {
    const Shape s = t.shape();
    manifest.push_back({{"name", name},
                        {"shape", {s.b, s.c, s.h, s.w}},
                        {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.numel()) * 4;
  }
  const nlohmann::json header = {{"config", detail::config_to_json(config)},
                                 {"params", manifest}};
  const std::string header_str = header.dump();

  std::string blob;
  blob.append(kCheckpointMagic, 4);
  detail::put_u32(blob, kCheckpointVersion);
  detail::put_u32(blob, static_cast<std::uint32_t>(header_str.size()));
  blob += header_str;
  for (const auto& [name, t] : params.tensors())
    for (double v : t.values())
      detail::put_u32(blob, std::bit_cast<std::uint32_t>(static_cast<float>(v)));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write checkpoint " + path);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw io_error("short write to checkpoint " + path);
}

struct LoadedCheckpoint {
  NetConfig config;
  NetworkParams params;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open checkpoint " + path);
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (blob.size() < 12 ||
      std::memcmp(blob.data(), kCheckpointMagic, 4) != 0)
    throw io_error(path + " is not an SSIA checkpoint");
  const std::uint32_t version = detail::get_u32(blob.data() + 4);
  if (version != kCheckpointVersion)
    throw io_error(path + ": unsupported checkpoint version " +
                   std::to_string(version));
  const std::uint32_t header_len = detail::get_u32(blob.data() + 8);
  if (blob.size() < 12 + static_cast<std::size_t>(header_len))
    throw io_error(path + ": truncated checkpoint header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.begin() + 12,
                                   blob.begin() + 12 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw io_error(path + ": bad checkpoint header: " + e.what());
  }

  const std::size_t payload_start = 12 + header_len;
  const std::size_t payload_bytes = blob.size() - payload_start;

  LoadedCheckpoint result;
  result.config = detail::config_from_json(header.at("config"));

  std::map<std::string, Tensor> tensors;
  std::uint64_t expected = 0;
  for (const auto& entry : header.at("params")) {
    const std::string name = entry.at("name").get<std::string>();
    const auto& js = entry.at("shape");
    const Shape s{js.at(0).get<int>(), js.at(1).get<int>(), js.at(2).get<int>(),
                  js.at(3).get<int>()};
    const std::uint64_t off = entry.at("offset").get<std::uint64_t>();
    const std::uint64_t bytes = static_cast<std::uint64_t>(s.numel()) * 4;
    if (off + bytes > payload_bytes)
      throw io_error(path + ": parameter '" + name + "' exceeds payload");
    std::vector<double> values(static_cast<std::size_t>(s.numel()));
    const unsigned char* src = blob.data() + payload_start + off;
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] = static_cast<double>(
          std::bit_cast<float>(detail::get_u32(src + i * 4)));
    tensors.emplace(name,
                    Tensor::from_values(s, std::move(values), /*rg=*/true));
    expected += bytes;
  }
  if (expected != payload_bytes)
    throw io_error(path + ": payload size " + std::to_string(payload_bytes) +
                   " does not match manifest total " + std::to_string(expected));
  result.params = NetworkParams(std::move(tensors));
  return result;
}

}  // namespace ssia
