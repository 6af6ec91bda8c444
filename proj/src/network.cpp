#include "aseg/network.hpp"

#include <stdexcept>
#include <string>

namespace aseg {

NetworkSpec NetworkSpec::canonical(int num_classes) {
  if (num_classes < 2)
    throw std::invalid_argument("network: need at least 2 classes, got " +
                                std::to_string(num_classes));
  NetworkSpec spec;
  spec.num_classes = num_classes;
  const int dil[8] = {1, 1, 2, 4, 8, 16, 32, 1};
  for (int l = 0; l < 8; ++l) {
    LayerSpec ls;
    ls.kind = LayerKind::conv3x3;
    ls.in_channels = l == 0 ? 1 : 32;
    ls.out_channels = 32;
    ls.dilation = dil[l];
    ls.activation = Activation::relu;
    spec.layers.push_back(ls);
  }
  LayerSpec fc1;
  fc1.kind = LayerKind::conv1x1;
  fc1.in_channels = 32;
  fc1.out_channels = 32;
  fc1.batch_norm = true;
  fc1.dropout_before = true;
  fc1.activation = Activation::relu;
  spec.layers.push_back(fc1);

  LayerSpec fc2;
  fc2.kind = LayerKind::conv1x1;
  fc2.in_channels = 32;
  fc2.out_channels = num_classes;
  fc2.dropout_before = true;
  fc2.activation = Activation::softmax;
  spec.layers.push_back(fc2);
  return spec;
}

void NetworkSpec::validate() const {
  if (layers.empty()) throw std::invalid_argument("network spec: no layers");
  if (num_classes < 2) throw std::invalid_argument("network spec: need at least 2 classes");
  for (size_t l = 0; l < layers.size(); ++l) {
    const LayerSpec& ls = layers[l];
    if (ls.in_channels < 1 || ls.out_channels < 1 || ls.dilation < 1)
      throw std::invalid_argument("network spec: bad layer " + std::to_string(l));
    if (l > 0 && ls.in_channels != layers[l - 1].out_channels)
      throw std::invalid_argument("network spec: channel mismatch entering layer " +
                                  std::to_string(l));
  }
  if (layers.back().activation != Activation::softmax)
    throw std::invalid_argument("network spec: final layer must apply softmax");
  if (layers.back().out_channels != num_classes)
    throw std::invalid_argument("network spec: final layer must emit one channel per class");
}

std::pair<int, int> receptive_field(const NetworkSpec& spec) {
  int r = 1;
  for (const LayerSpec& ls : spec.layers) r += ls.dilation * (ls.kernel() - 1);
  return {r, r};
}

std::int64_t parameter_count(const NetworkSpec& spec) {
  std::int64_t n = 0;
  for (const LayerSpec& ls : spec.layers) {
    const std::int64_t k = ls.kernel();
    n += k * k * ls.in_channels * ls.out_channels + ls.out_channels;
    if (ls.batch_norm) n += 2 * ls.out_channels;
  }
  return n;
}

Network build_network(int num_classes, std::uint64_t seed) {
  return build_network_t<float>(NetworkSpec::canonical(num_classes), seed);
}

}  // namespace aseg
