#include "surt/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace surt::nn {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint truncated");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamStore& store) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, std::uint32_t(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& name = store.name(i);
    const auto& value = store.value(i);
    put_u32(out, std::uint32_t(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, std::uint32_t(value.rank()));
    for (std::size_t d : value.shape()) put_u32(out, std::uint32_t(d));
    for (float f : value.values()) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

ParamStore decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  if (in.str(sizeof(kCheckpointMagic)) !=
      std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw IoError("not a checkpoint (bad magic)");
  }
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  ParamStore store;
  const std::uint32_t count = in.u32();
  for (std::uint32_t p = 0; p < count; ++p) {
    std::string name = in.str(in.u32());
    Shape shape(in.u32());
    for (auto& d : shape) d = in.u32();
    Tensor value(shape);
    for (float& f : value.values()) f = std::bit_cast<float>(in.u32());
    store.add(std::move(name), std::move(value));
  }
  if (!in.done()) throw IoError("trailing bytes after checkpoint payload");
  return store;
}

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(store);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint '" + path.string() + "'");
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void restore_values(ParamStore& target, const ParamStore& source) {
  if (target.size() != source.size()) {
    throw IoError("checkpoint has " + std::to_string(source.size()) +
                  " parameters, model expects " + std::to_string(target.size()));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    const std::size_t j = source.index_of(target.name(i));
    if (source.value(j).shape() != target.value(i).shape()) {
      throw IoError("parameter '" + target.name(i) + "' has shape " +
                    shape_string(source.value(j).shape()) + " in checkpoint, " +
                    shape_string(target.value(i).shape()) + " in model");
    }
    target.value(i) = source.value(j);
  }
}

}  // namespace surt::nn
