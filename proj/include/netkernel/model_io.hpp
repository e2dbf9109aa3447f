#pragma once

#include <string>

#include "netkernel/network.hpp"

namespace netkernel {

// Model JSON ("netkernel-model-v1"): activation name plus per-layer row-major
// weight matrices and bias vectors. Doubles round-trip exactly.
std::string network_to_json(const Network& net);
Network network_from_json(const std::string& text);

void save_network(const Network& net, const std::string& path);
Network load_network(const std::string& path);

// Dataset JSON: inputs X (row per sample), targets y, optional noise_sigma.
std::string dataset_to_json(const Dataset& data);
Dataset dataset_from_json(const std::string& text);

void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace netkernel
