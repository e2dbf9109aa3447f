#include "netkernel/model_io.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace netkernel {

namespace {

using nlohmann::json;

constexpr const char* kModelFormat = "netkernel-model-v1";

json matrix_to_json(const Matrix& M) {
  json rows = json::array();
  for (int i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& rows, const char* what) {
  if (!rows.is_array() || rows.empty())
    throw std::invalid_argument(std::string(what) + ": expected a non-empty array");
  const size_t cols = rows[0].size();
  Matrix M(static_cast<int>(rows.size()), static_cast<int>(cols));
  for (size_t i = 0; i < rows.size(); ++i) {
    const json& row = rows[i];
    if (!row.is_array() || row.size() != cols)
      throw std::invalid_argument(std::string(what) + ": ragged rows");
    for (size_t j = 0; j < cols; ++j)
      M(static_cast<int>(i), static_cast<int>(j)) = row[j].get<double>();
  }
  return M;
}

json vector_to_json(const Vector& v) {
  json arr = json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Vector vector_from_json(const json& arr, const char* what) {
  if (!arr.is_array())
    throw std::invalid_argument(std::string(what) + ": expected an array");
  Vector v(static_cast<int>(arr.size()));
  for (size_t i = 0; i < arr.size(); ++i) v[static_cast<int>(i)] = arr[i].get<double>();
  return v;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace

std::string network_to_json(const Network& net) {
  validate(net);
  json j;
  j["format"] = kModelFormat;
  j["activation"] = to_string(net.activation);
  json layers = json::array();
  for (const Layer& lay : net.layers) {
    json jl;
    jl["W"] = matrix_to_json(lay.W);
    jl["b"] = vector_to_json(lay.b);
    layers.push_back(std::move(jl));
  }
  j["layers"] = std::move(layers);
  return j.dump(2) + "\n";
}

Network network_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("model JSON parse error: ") + e.what());
  }
  if (!j.is_object() || j.value("format", std::string()) != kModelFormat)
    throw std::invalid_argument("model JSON: missing or unknown format field");
  Network net;
  net.activation = activation_from_string(j.at("activation").get<std::string>());
  const json& layers = j.at("layers");
  if (!layers.is_array() || layers.empty())
    throw std::invalid_argument("model JSON: layers must be a non-empty array");
  for (const json& jl : layers) {
    Layer lay;
    lay.W = matrix_from_json(jl.at("W"), "model JSON W");
    lay.b = vector_from_json(jl.at("b"), "model JSON b");
    net.layers.push_back(std::move(lay));
  }
  validate(net);
  return net;
}

void save_network(const Network& net, const std::string& path) {
  write_file(path, network_to_json(net));
}

Network load_network(const std::string& path) {
  return network_from_json(read_file(path));
}

std::string dataset_to_json(const Dataset& data) {
  json j;
  j["X"] = matrix_to_json(data.X);
  j["y"] = vector_to_json(data.y);
  j["noise_sigma"] = data.noise_sigma;
  return j.dump(2) + "\n";
}

Dataset dataset_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("dataset JSON parse error: ") + e.what());
  }
  Dataset data;
  data.X = matrix_from_json(j.at("X"), "dataset X");
  data.y = vector_from_json(j.at("y"), "dataset y");
  data.noise_sigma = j.value("noise_sigma", 0.0);
  if (data.X.rows() != data.y.size())
    throw std::invalid_argument("dataset JSON: X and y row counts differ");
  return data;
}

void save_dataset(const Dataset& data, const std::string& path) {
  write_file(path, dataset_to_json(data));
}

Dataset load_dataset(const std::string& path) {
  return dataset_from_json(read_file(path));
}

}  // namespace netkernel
