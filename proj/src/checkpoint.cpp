#include "riser/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace riser {

namespace {

constexpr char kMagic[8] = {'R', 'I', 'S', 'E', 'R', 'C', 'K', '1'};
constexpr char kOptMagic[8] = {'O', 'P', 'T', 'S', 'T', 'A', 'T', '1'};
constexpr uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("truncated checkpoint file");
  return v;
}

void write_doubles(std::ofstream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::ifstream& in, std::vector<double>& v, size_t count) {
  v.resize(count);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw DataError("truncated checkpoint file");
}

}  // namespace

void save_checkpoint(const std::string& path, const PolicyState& policy,
                     const AdamW* optimizer) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(out, kFormatVersion);
  write_pod<uint32_t>(out, static_cast<uint32_t>(policy.dims().vocab));
  write_pod<uint32_t>(out, static_cast<uint32_t>(policy.dims().emb));
  write_pod<uint32_t>(out, static_cast<uint32_t>(policy.dims().hidden));
  write_pod<uint64_t>(out, policy.version());
  auto params = policy.params();
  write_pod<uint32_t>(out, static_cast<uint32_t>(params.size()));
  for (const auto& p : params) {
    write_pod<uint16_t>(out, static_cast<uint16_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_pod<uint64_t>(out, p.data->size());
    write_doubles(out, *p.data);
  }
  if (optimizer != nullptr) {
    auto* opt = const_cast<AdamW*>(optimizer);
    out.write(kOptMagic, sizeof(kOptMagic));
    write_pod<uint64_t>(out, static_cast<uint64_t>(optimizer->steps_taken()));
    for (size_t i = 0; i < params.size(); ++i) {
      write_doubles(out, opt->first_moments()[i]);
      write_doubles(out, opt->second_moments()[i]);
    }
  }
  if (!out) throw DataError("short write while saving checkpoint: " + path);
}

PolicyDims peek_checkpoint_dims(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  const auto version = read_pod<uint32_t>(in);
  if (version != kFormatVersion) throw DataError("unsupported checkpoint format version");
  PolicyDims dims;
  dims.vocab = static_cast<int>(read_pod<uint32_t>(in));
  dims.emb = static_cast<int>(read_pod<uint32_t>(in));
  dims.hidden = static_cast<int>(read_pod<uint32_t>(in));
  return dims;
}

PolicyState load_checkpoint(const std::string& path, const PolicyDims& expected,
                            AdamW* optimizer) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  if (read_pod<uint32_t>(in) != kFormatVersion) {
    throw DataError("unsupported checkpoint format version");
  }
  PolicyDims dims;
  dims.vocab = static_cast<int>(read_pod<uint32_t>(in));
  dims.emb = static_cast<int>(read_pod<uint32_t>(in));
  dims.hidden = static_cast<int>(read_pod<uint32_t>(in));
  if (dims.vocab != expected.vocab || dims.emb != expected.emb ||
      dims.hidden != expected.hidden) {
    throw DataError("checkpoint dims do not match the configuration");
  }
  const uint64_t update_counter = read_pod<uint64_t>(in);
  const uint32_t n_params = read_pod<uint32_t>(in);

  PolicyState policy(dims, /*init_seed=*/0);
  auto params = policy.params();
  if (n_params != params.size()) throw DataError("unexpected parameter count in checkpoint");
  for (auto& p : params) {
    const auto name_len = read_pod<uint16_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in || name != p.name) throw DataError("unexpected parameter order in checkpoint");
    const auto count = read_pod<uint64_t>(in);
    if (count != p.data->size()) throw DataError("parameter size mismatch in checkpoint");
    read_doubles(in, *p.data, count);
  }
  policy.set_version(update_counter);

  if (optimizer != nullptr) {
    char opt_magic[8];
    in.read(opt_magic, sizeof(opt_magic));
    if (!in || std::memcmp(opt_magic, kOptMagic, sizeof(kOptMagic)) != 0) {
      throw DataError("checkpoint has no optimizer state: " + path);
    }
    optimizer->set_steps_taken(static_cast<int64_t>(read_pod<uint64_t>(in)));
    for (size_t i = 0; i < params.size(); ++i) {
      read_doubles(in, optimizer->first_moments()[i], params[i].data->size());
      read_doubles(in, optimizer->second_moments()[i], params[i].data->size());
    }
  }
  return policy;
}

}  // namespace riser
