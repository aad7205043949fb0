#include "tvla/checkpoint.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tvla/errors.hpp"

namespace tvla {

namespace {
constexpr std::string_view kMagic = "TVLA-CHECKPOINT 1\n";

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}
}  // namespace

void Checkpoint::set(const std::string& key, const std::string& value) {
  if (key.find_first_of(" \n") != std::string::npos || value.find('\n') != std::string::npos) {
    throw ConfigError("checkpoint metadata key/value contains a separator: " + key);
  }
  for (auto& [k, v] : meta) {
    if (k == key) {
      v = value;
      return;
    }
  }
  meta.emplace_back(key, value);
}

const std::string& Checkpoint::get(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return v;
  }
  throw LookupError("checkpoint has no metadata key '" + key + "'");
}

bool Checkpoint::has(const std::string& key) const {
  for (const auto& kv : meta) {
    if (kv.first == key) return true;
  }
  return false;
}

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream os;
  os << kMagic;
  for (const auto& [k, v] : ckpt.meta) os << "meta " << k << ' ' << v << '\n';
  for (const auto& t : ckpt.tensors) {
    os << "tensor " << t.name << ' ' << (t.frozen ? 1 : 0) << ' ' << t.value.rank();
    for (auto d : t.value.shape()) os << ' ' << d;
    os << ' ' << hex64(t.value.checksum()) << '\n';
  }
  os << "end\n";
  std::string out = os.str();
  for (const auto& t : ckpt.tensors) {
    out.append(reinterpret_cast<const char*>(t.value.data()), t.value.size() * sizeof(double));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.compare(0, kMagic.size(), kMagic) != 0) throw FormatError("not a checkpoint (bad magic)", 0);
  Checkpoint ckpt;
  std::size_t pos = kMagic.size();
  std::vector<std::uint64_t> sums;
  while (true) {
    const std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string::npos) throw FormatError("checkpoint manifest is truncated", pos);
    const std::string line = bytes.substr(pos, eol - pos);
    const std::size_t line_start = pos;
    pos = eol + 1;
    if (line == "end") break;
    std::istringstream is(line);
    std::string kind;
    is >> kind;
    if (kind == "meta") {
      std::string key;
      is >> key;
      std::string value;
      std::getline(is, value);
      if (!value.empty() && value[0] == ' ') value.erase(0, 1);
      ckpt.meta.emplace_back(key, value);
    } else if (kind == "tensor") {
      CheckpointTensor t;
      int frozen = 0;
      std::size_t rank = 0;
      is >> t.name >> frozen >> rank;
      Shape shape(rank);
      for (auto& d : shape) is >> d;
      std::string sum;
      is >> sum;
      if (!is || sum.size() != 16) throw FormatError("malformed tensor entry '" + t.name + "'", line_start);
      t.frozen = frozen != 0;
      t.value = Tensor(shape);
      sums.push_back(std::stoull(sum, nullptr, 16));
      ckpt.tensors.push_back(std::move(t));
    } else {
      throw FormatError("unknown manifest line '" + line + "'", line_start);
    }
  }
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    auto& t = ckpt.tensors[i];
    const std::size_t n = t.value.size() * sizeof(double);
    if (pos + n > bytes.size()) {
      throw FormatError("payload of tensor '" + t.name + "' is truncated", bytes.size());
    }
    std::memcpy(t.value.data(), bytes.data() + pos, n);
    if (t.value.checksum() != sums[i]) throw FormatError("checksum mismatch in tensor '" + t.name + "'", pos);
    pos += n;
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes after last tensor payload", pos);
  return ckpt;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

std::string exact_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("not a number: '" + s + "'");
  return v;
}

}  // namespace tvla
