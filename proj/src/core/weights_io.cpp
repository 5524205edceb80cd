#include "core/weights_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "core/error.hpp"

namespace rfe {

namespace {

constexpr char kMagic[] = {'R', 'F', 'E', 'W', '1'};

static_assert(std::endian::native == std::endian::little,
              "weight container assumes a little-endian host");

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_f64(std::ostream& os, const double* v, std::size_t n) {
  os.write(reinterpret_cast<const char*>(v), static_cast<std::streamsize>(n * sizeof(double)));
}

class Reader {
 public:
  Reader(std::istream& is, const std::string& path) : is_(is), path_(path) {}

  bool at_eof() {
    is_.peek();
    return is_.eof();
  }

  std::uint64_t u64() {
    std::uint64_t v = 0;
    read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  }

  void bytes(char* out, std::size_t n) { read(out, n); }

  std::size_t offset() const { return offset_; }

 private:
  void read(char* out, std::size_t n) {
    is_.read(out, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw ParseError("truncated weight container '" + path_ + "'", offset_);
    }
    offset_ += n;
  }

  std::istream& is_;
  std::string path_;
  std::size_t offset_ = 0;
};

}  // namespace

void save_weights(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(kMagic, sizeof(kMagic));
  for (const NamedTensor& nt : tensors) {
    write_u64(os, nt.name.size());
    os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    write_u64(os, nt.tensor.rank());
    for (std::size_t e : nt.tensor.shape) write_u64(os, e);
    write_f64(os, nt.tensor.data.data(), nt.tensor.size());
  }
  os.flush();
  if (!os) throw IoError("failed writing '" + path + "'");
}

std::vector<NamedTensor> load_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  Reader r(is, path);
  char magic[sizeof(kMagic)];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("bad magic in weight container '" + path + "'", 0);
  }
  std::vector<NamedTensor> out;
  while (!r.at_eof()) {
    std::uint64_t name_len = r.u64();
    if (name_len > (1u << 20)) {
      throw ParseError("implausible name length in '" + path + "'", r.offset() - 8);
    }
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len);
    std::uint64_t rank = r.u64();
    if (rank > 8) throw ParseError("implausible rank in '" + path + "'", r.offset() - 8);
    Shape shape(rank);
    std::size_t numel = rank ? 1 : 0;
    for (std::uint64_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<std::size_t>(r.u64());
      numel *= shape[i];
    }
    Tensor t(std::move(shape));
    r.bytes(reinterpret_cast<char*>(t.data.data()), numel * sizeof(double));
    out.push_back({std::move(name), std::move(t)});
  }
  return out;
}

}  // namespace rfe
