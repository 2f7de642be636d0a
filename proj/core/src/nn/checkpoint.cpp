#include "mhqa/nn/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <set>

#include "mhqa/error.hpp"
#include "mhqa/io.hpp"

namespace mhqa::nn {

namespace {

constexpr char kMagic[8] = {'M', 'H', 'Q', 'A', 'W', 'T', '0', '1'};

template <typename T>
void put(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.append(bytes, sizeof(T));
}

class Cursor {
 public:
  Cursor(const std::string& data, const std::filesystem::path& path) : data_(data), path_(path) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, data_.data() + offset_, sizeof(T));
    offset_ += sizeof(T);
    return value;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(offset_, n);
    offset_ += n;
    return s;
  }

  bool at_end() const { return offset_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (offset_ + n > data_.size()) throw DataError("weight file '" + path_.string() + "' is truncated");
  }

  const std::string& data_;
  const std::filesystem::path& path_;
  std::size_t offset_ = 0;
};

}  // namespace

void save_weights(const ParameterStore& store, const std::filesystem::path& path) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(store.all().size()));
  for (const auto& p : store.all()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out += p->name;
    put<std::int64_t>(out, p->value.rows());
    put<std::int64_t>(out, p->value.cols());
    out.append(reinterpret_cast<const char*>(p->value.data()),
               static_cast<std::size_t>(p->value.size()) * sizeof(double));
  }
  io::write_file_atomic(path, out);
}

void load_weights(ParameterStore& store, const std::filesystem::path& path) {
  const std::string data = io::read_file(path);
  Cursor cursor(data, path);
  if (cursor.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw DataError("'" + path.string() + "' is not a weight file");
  }
  const auto count = cursor.get<std::uint32_t>();
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = cursor.bytes(cursor.get<std::uint32_t>());
    const auto rows = cursor.get<std::int64_t>();
    const auto cols = cursor.get<std::int64_t>();
    Parameter* p = store.find(name);
    if (p == nullptr) throw DataError("weight file has unknown parameter '" + name + "'");
    if (p->value.rows() != rows || p->value.cols() != cols) {
      throw DataError("parameter '" + name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                      " in file but " + std::to_string(p->value.rows()) + "x" + std::to_string(p->value.cols()) +
                      " in model");
    }
    const std::string raw = cursor.bytes(static_cast<std::size_t>(rows * cols) * sizeof(double));
    std::memcpy(p->value.data(), raw.data(), raw.size());
    seen.insert(name);
  }
  if (!cursor.at_end()) throw DataError("weight file '" + path.string() + "' has trailing bytes");
  for (const auto& p : store.all()) {
    if (seen.count(p->name) == 0) throw DataError("weight file lacks parameter '" + p->name + "'");
  }
  store.zero_grad();
}

}  // namespace mhqa::nn
