#include <doctest.h>

#include <aseg/checkpoint.hpp>
#include <aseg/error.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

using aseg::Network;
using aseg::Rng;

namespace {

std::string temp_path(const char* name) {
  return std::string("/tmp/aseg_ckpt_test_") + name + ".bin";
}

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(f),
                                    std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

std::uint32_t rd32(const std::vector<unsigned char>& b, size_t off) {
  return static_cast<std::uint32_t>(b[off]) |
         static_cast<std::uint32_t>(b[off + 1]) << 8 |
         static_cast<std::uint32_t>(b[off + 2]) << 16 |
         static_cast<std::uint32_t>(b[off + 3]) << 24;
}

Network scrambled_network(int classes, std::uint64_t seed) {
  Network net = aseg::build_network(classes, seed);
  Rng rng(seed + 1000);
  for (auto& v : net.bn[8].running_mean.data) v = float(rng.uniform(-2, 2));
  for (auto& v : net.bn[8].running_var.data) v = float(rng.uniform(0.1, 3));
  net.meta.iteration = 4242;
  net.meta.best_val_dice = 0.8125f;
  return net;
}

}  // namespace

TEST_SUITE_BEGIN("checkpoint");

TEST_CASE("round trip preserves every tensor, the spec and the metadata") {
  const std::string path = temp_path("roundtrip");
  Network net = scrambled_network(4, 11);
  aseg::save_checkpoint(net, path);
  Network back = aseg::load_checkpoint(path);

  REQUIRE(back.spec.layers.size() == net.spec.layers.size());
  CHECK(back.spec.num_classes == 4);
  for (size_t l = 0; l < net.spec.layers.size(); ++l) {
    CAPTURE(l);
    CHECK(back.spec.layers[l].kind == net.spec.layers[l].kind);
    CHECK(back.spec.layers[l].in_channels == net.spec.layers[l].in_channels);
    CHECK(back.spec.layers[l].out_channels == net.spec.layers[l].out_channels);
    CHECK(back.spec.layers[l].dilation == net.spec.layers[l].dilation);
    CHECK(back.spec.layers[l].batch_norm == net.spec.layers[l].batch_norm);
    CHECK(back.spec.layers[l].dropout_before == net.spec.layers[l].dropout_before);
    CHECK(back.spec.layers[l].activation == net.spec.layers[l].activation);
    CHECK(back.conv[l].weights.data == net.conv[l].weights.data);  // bit exact
    CHECK(back.conv[l].bias.data == net.conv[l].bias.data);
    CHECK(back.conv[l].dilation == net.conv[l].dilation);
    if (net.spec.layers[l].batch_norm) {
      CHECK(back.bn[l].gamma.data == net.bn[l].gamma.data);
      CHECK(back.bn[l].beta.data == net.bn[l].beta.data);
      CHECK(back.bn[l].running_mean.data == net.bn[l].running_mean.data);
      CHECK(back.bn[l].running_var.data == net.bn[l].running_var.data);
    }
  }
  CHECK(back.meta.iteration == 4242);
  CHECK(back.meta.seed == 11);
  CHECK(back.meta.best_val_dice == 0.8125f);
  std::remove(path.c_str());
}

TEST_CASE("on-disk layout starts with magic, version and the layer table") {
  const std::string path = temp_path("layout");
  aseg::save_checkpoint(scrambled_network(3, 2), path);
  const std::vector<unsigned char> b = slurp(path);

  REQUIRE(b.size() > 32);
  CHECK(b[0] == 'A');
  CHECK(b[1] == 'D');
  CHECK(b[2] == 'C');
  CHECK(b[3] == 'N');
  CHECK(rd32(b, 4) == aseg::kCheckpointVersion);
  CHECK(rd32(b, 8) == 3);    // num_classes
  CHECK(rd32(b, 12) == 10);  // layer count

  // First layer record: 3x3 conv, 1 -> 32, dilation 1, no flags.
  size_t off = 16;
  CHECK(b[off] == 0);
  CHECK(rd32(b, off + 1) == 1);
  CHECK(rd32(b, off + 5) == 32);
  CHECK(rd32(b, off + 9) == 1);
  CHECK(b[off + 13] == 0);
  // Skips its weights (32*1*3*3) and bias (32) to the second record.
  off += 14 + (32 * 9 + 32) * 4;
  CHECK(b[off] == 0);
  CHECK(rd32(b, off + 1) == 32);
  CHECK(rd32(b, off + 5) == 32);
  CHECK(rd32(b, off + 9) == 1);
  CHECK(b[off + 13] == 0);

  // Walk the remaining dilations through the flag bytes of each record.
  const int dil[8] = {1, 1, 2, 4, 8, 16, 32, 1};
  off = 16;
  for (int l = 0; l < 8; ++l) {
    CHECK(b[off] == 0);  // conv3x3
    CHECK(rd32(b, off + 9) == static_cast<std::uint32_t>(dil[l]));
    CHECK(b[off + 13] == 0);  // relu, no bn, no dropout
    const std::uint32_t in = rd32(b, off + 1), out = rd32(b, off + 5);
    off += 14 + (out * in * 9 + out) * 4;
  }
  // fc1: 1x1, batch norm + dropout + relu -> flags 0b0011; four extra
  // per-channel f32 arrays follow the bias.
  CHECK(b[off] == 1);
  CHECK(b[off + 13] == 0x03);
  off += 14 + (32 * 32 + 32) * 4 + 4 * 32 * 4;
  // fc2: 1x1, dropout + softmax -> flags 0b0110.
  CHECK(b[off] == 1);
  CHECK(rd32(b, off + 5) == 3);
  CHECK(b[off + 13] == 0x06);
  off += 14 + (3 * 32 + 3) * 4;
  // Metadata tail: iteration u64, seed u64, dice f32, crc u32 then EOF.
  CHECK(b.size() == off + 8 + 8 + 4 + 4);
  std::remove(path.c_str());
}

TEST_CASE("single corrupted bytes anywhere are caught by the checksum") {
  const std::string path = temp_path("corrupt");
  aseg::save_checkpoint(scrambled_network(2, 7), path);
  const std::vector<unsigned char> good = slurp(path);
  // Probe the header, the layer table, deep tensor data and the metadata.
  for (const size_t off : {4ul, 17ul, 2000ul, good.size() / 2, good.size() - 6}) {
    CAPTURE(off);
    std::vector<unsigned char> bad = good;
    bad[off] ^= 0x40;
    spit(path, bad);
    CHECK_THROWS_AS(aseg::load_checkpoint(path), aseg::CorruptCheckpointError);
  }
  std::remove(path.c_str());
}

TEST_CASE("truncation and foreign files are rejected as corrupt") {
  const std::string path = temp_path("trunc");
  aseg::save_checkpoint(scrambled_network(2, 3), path);
  const std::vector<unsigned char> good = slurp(path);

  for (const size_t keep : {0ul, 3ul, 15ul, 200ul, good.size() - 1}) {
    CAPTURE(keep);
    spit(path, std::vector<unsigned char>(good.begin(), good.begin() + keep));
    CHECK_THROWS_AS(aseg::load_checkpoint(path), aseg::CorruptCheckpointError);
  }
  spit(path, {'M', 'H', 'D', '!', 0, 0, 0, 0, 9, 9, 9, 9});
  CHECK_THROWS_AS(aseg::load_checkpoint(path), aseg::CorruptCheckpointError);
  std::remove(path.c_str());
}

TEST_CASE("an unknown version is invalid, not corrupt") {
  const std::string path = temp_path("version");
  aseg::save_checkpoint(scrambled_network(2, 9), path);
  std::vector<unsigned char> b = slurp(path);
  b[4] = 2;  // bump version; checksum must be recomputed to stay "intact"
  // Recompute the trailing crc32 the same way the writer does.
  std::uint32_t crc = 0xffffffffu;
  for (size_t i = 0; i + 4 < b.size(); ++i) {
    crc ^= b[i];
    for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xedb88320u & (0u - (crc & 1u)));
  }
  crc ^= 0xffffffffu;
  b[b.size() - 4] = static_cast<unsigned char>(crc);
  b[b.size() - 3] = static_cast<unsigned char>(crc >> 8);
  b[b.size() - 2] = static_cast<unsigned char>(crc >> 16);
  b[b.size() - 1] = static_cast<unsigned char>(crc >> 24);
  spit(path, b);
  CHECK_THROWS_AS(aseg::load_checkpoint(path), aseg::InvalidCheckpointError);
  std::remove(path.c_str());
}

TEST_CASE("missing or unwritable paths raise IoError") {
  CHECK_THROWS_AS(aseg::load_checkpoint("/tmp/aseg_ckpt_test_never_written.bin"),
                  aseg::IoError);
  Network net = aseg::build_network(2, 1);
  CHECK_THROWS_AS(aseg::save_checkpoint(net, "/no_such_dir/x/y.bin"), aseg::IoError);
}

TEST_CASE("a loaded checkpoint reproduces the saved network's inference output") {
  const std::string path = temp_path("infer");
  Network net = scrambled_network(3, 21);
  aseg::save_checkpoint(net, path);
  Network back = aseg::load_checkpoint(path);
  Rng rng(5);
  aseg::Tensor<float> in({1, 1, 133, 135});
  for (auto& v : in.data) v = float(rng.uniform(-1, 1));
  aseg::Tensor<float> a = net.forward_infer(in);
  aseg::Tensor<float> b = back.forward_infer(in);
  CHECK(a.shape == b.shape);
  CHECK(a.data == b.data);
  std::remove(path.c_str());
}

TEST_SUITE_END();
