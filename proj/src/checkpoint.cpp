#include "aseg/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <vector>

#include "aseg/error.hpp"

namespace aseg {
namespace {

void put_bytes(std::vector<unsigned char>& buf, const void* p, size_t n) {
  const unsigned char* b = static_cast<const unsigned char*>(p);
  buf.insert(buf.end(), b, b + n);
}

template <typename T>
void put(std::vector<unsigned char>& buf, T v) {
  put_bytes(buf, &v, sizeof(T));
}

struct Cursor {
  const unsigned char* p;
  size_t remaining;

  void read(void* dst, size_t n) {
    if (n > remaining) throw CorruptCheckpointError("checkpoint truncated: unexpected end of file");
    std::memcpy(dst, p, n);
    p += n;
    remaining -= n;
  }
  template <typename T>
  T get() {
    T v;
    read(&v, sizeof(T));
    return v;
  }
};

void put_tensor(std::vector<unsigned char>& buf, const Tensor<float>& t) {
  put_bytes(buf, t.ptr(), t.numel() * sizeof(float));
}

void get_tensor(Cursor& c, Tensor<float>& t) {
  c.read(t.ptr(), t.numel() * sizeof(float));
}

}  // namespace

void save_checkpoint(const Network& net, const std::string& path) {
  std::vector<unsigned char> buf;
  buf.reserve(parameter_count(net.spec) * sizeof(float) + 256);
  put_bytes(buf, "ADCN", 4);
  put<std::uint32_t>(buf, kCheckpointVersion);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(net.spec.num_classes));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(net.spec.layers.size()));
  for (size_t l = 0; l < net.spec.layers.size(); ++l) {
    const LayerSpec& ls = net.spec.layers[l];
    put<std::uint8_t>(buf, static_cast<std::uint8_t>(ls.kind));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(ls.in_channels));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(ls.out_channels));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(ls.dilation));
    std::uint8_t flags = 0;
    if (ls.batch_norm) flags |= 1u;
    if (ls.dropout_before) flags |= 2u;
    flags |= static_cast<std::uint8_t>(static_cast<std::uint8_t>(ls.activation) << 2);
    put<std::uint8_t>(buf, flags);
    put_tensor(buf, net.conv[l].weights);
    put_tensor(buf, net.conv[l].bias);
    if (ls.batch_norm) {
      put_tensor(buf, net.bn[l].gamma);
      put_tensor(buf, net.bn[l].beta);
      put_tensor(buf, net.bn[l].running_mean);
      put_tensor(buf, net.bn[l].running_var);
    }
  }
  put<std::uint64_t>(buf, net.meta.iteration);
  put<std::uint64_t>(buf, net.meta.seed);
  put<float>(buf, net.meta.best_val_dice);

  const std::uint32_t crc =
      static_cast<std::uint32_t>(crc32(0L, buf.data(), static_cast<uInt>(buf.size())));
  put<std::uint32_t>(buf, crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write saving checkpoint: " + path);
}

Network load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 8) throw CorruptCheckpointError("checkpoint truncated: file too small");

  const size_t body = buf.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, buf.data() + body, 4);
  const std::uint32_t actual =
      static_cast<std::uint32_t>(crc32(0L, buf.data(), static_cast<uInt>(body)));
  if (stored != actual)
    throw CorruptCheckpointError("checkpoint integrity check failed: CRC mismatch");

  Cursor c{buf.data(), body};
  char magic[4];
  c.read(magic, 4);
  if (std::memcmp(magic, "ADCN", 4) != 0)
    throw CorruptCheckpointError("not a checkpoint file: bad magic");
  const auto version = c.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw InvalidCheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto num_classes = c.get<std::uint32_t>();
  const auto layer_count = c.get<std::uint32_t>();
  if (num_classes < 2 || num_classes > 4096 || layer_count < 1 || layer_count > 4096)
    throw InvalidCheckpointError("implausible checkpoint header");

  NetworkSpec spec;
  spec.num_classes = static_cast<int>(num_classes);
  Network net;
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    const auto kind = c.get<std::uint8_t>();
    if (kind > 1) throw InvalidCheckpointError("unknown layer kind in checkpoint");
    LayerSpec ls;
    ls.kind = static_cast<LayerKind>(kind);
    ls.in_channels = static_cast<int>(c.get<std::uint32_t>());
    ls.out_channels = static_cast<int>(c.get<std::uint32_t>());
    ls.dilation = static_cast<int>(c.get<std::uint32_t>());
    const auto flags = c.get<std::uint8_t>();
    if (flags & ~0x0Fu) throw InvalidCheckpointError("unknown layer flags in checkpoint");
    ls.batch_norm = flags & 1u;
    ls.dropout_before = flags & 2u;
    const std::uint8_t act = (flags >> 2) & 3u;
    if (act > 2) throw InvalidCheckpointError("unknown activation in checkpoint");
    ls.activation = static_cast<Activation>(act);
    if (ls.in_channels < 1 || ls.in_channels > 65536 || ls.out_channels < 1 ||
        ls.out_channels > 65536 || ls.dilation < 1 || ls.dilation > 65536)
      throw InvalidCheckpointError("implausible layer geometry in checkpoint");
    spec.layers.push_back(ls);

    const int k = ls.kernel();
    ConvParams<float> cp;
    cp.weights = Tensor<float>({ls.out_channels, ls.in_channels, k, k});
    cp.bias = Tensor<float>({ls.out_channels});
    cp.dilation = ls.dilation;
    get_tensor(c, cp.weights);
    get_tensor(c, cp.bias);
    net.conv.push_back(std::move(cp));
    BatchNormParams<float> bp(ls.batch_norm ? ls.out_channels : 1);
    if (ls.batch_norm) {
      get_tensor(c, bp.gamma);
      get_tensor(c, bp.beta);
      get_tensor(c, bp.running_mean);
      get_tensor(c, bp.running_var);
    }
    net.bn.push_back(std::move(bp));
  }
  net.meta.iteration = c.get<std::uint64_t>();
  net.meta.seed = c.get<std::uint64_t>();
  net.meta.best_val_dice = c.get<float>();
  if (c.remaining != 0)
    throw InvalidCheckpointError("checkpoint has trailing bytes after metadata");

  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw InvalidCheckpointError(std::string("checkpoint describes an invalid network: ") +
                                 e.what());
  }
  net.spec = std::move(spec);
  return net;
}

}  // namespace aseg
