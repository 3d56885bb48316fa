#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace chatgate {

inline constexpr std::string_view kToolName = "chatgate";
inline constexpr std::string_view kToolVersion = "0.1.0";

// {tool, version, config_hash, seed}; embedded in every artifact header.
nlohmann::json artifact_meta(const nlohmann::json& config, std::uint64_t seed);
// 64-bit FNV-1a of the compact JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> data;

  std::size_t numel() const;
};

Tensor to_tensor(std::string name, const Eigen::MatrixXd& m);
Tensor to_tensor(std::string name, const Eigen::VectorXd& v);
Eigen::MatrixXd to_matrix(const Tensor& t);
Eigen::VectorXd to_vector(const Tensor& t);

// Layout: "CHGTBIN\0", u32 version, u64 header length, JSON header, then each
// tensor listed in header["tensors"] as little-endian float32, row-major.
struct Container {
  std::string kind;
  nlohmann::json header;  // kind-specific payload
  std::vector<Tensor> tensors;

  const Tensor& tensor(std::string_view name) const;
};

std::string serialize_container(const Container& c);
Container parse_container(std::string_view bytes);
void write_container(const Container& c, const std::filesystem::path& path);
Container read_container(const std::filesystem::path& path);

}  // namespace chatgate
