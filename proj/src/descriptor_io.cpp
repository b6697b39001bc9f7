#include "tagforge/descriptor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <set>
#include <sstream>

namespace tagforge {

namespace {

namespace fs = std::filesystem;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::string_view bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(take(4)); }
  std::uint64_t u64() { return take(8); }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  [[noreturn]] void fail(const std::string& what) const { throw DataError(source_ + ": " + what); }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) fail("truncated file");
  }
  std::uint64_t take(std::size_t n) {
    need(n);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += n;
    return v;
  }

  std::string_view bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::string file_stem(const std::string& path) { return fs::path(path).stem().string(); }

}  // namespace

std::string encode_descriptor_file(const DescriptorSet& ds) {
  std::string out = "TFDS";
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(ds.matrix.rows()));
  put_u32(out, static_cast<std::uint32_t>(ds.matrix.cols()));
  out.reserve(out.size() + ds.matrix.data().size() * 4);
  for (double v : ds.matrix.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

DescriptorSet decode_descriptor_file(std::string_view bytes, const std::string& video_id, const std::string& source_name) {
  Reader r(bytes, source_name);
  if (r.raw(4) != "TFDS") r.fail("bad magic (expected TFDS)");
  if (const auto version = r.u32(); version != 1) r.fail("unsupported version " + std::to_string(version));
  const std::uint32_t n = r.u32();
  const std::uint32_t d = r.u32();
  if (n == 0 || d == 0) r.fail("empty descriptor matrix");
  if (r.remaining() != static_cast<std::size_t>(n) * d * 4) r.fail("payload size does not match header");
  DescriptorSet ds{video_id, Matrix(n, d)};
  for (auto& v : ds.matrix.data()) {
    v = static_cast<double>(std::bit_cast<float>(r.u32()));
    if (!std::isfinite(v)) r.fail("non-finite descriptor value");
  }
  return ds;
}

void write_descriptor_file(const DescriptorSet& ds, const std::string& path) {
  write_file_atomic(path, encode_descriptor_file(ds));
}

DescriptorSet read_descriptor_file(const std::string& path) {
  return decode_descriptor_file(read_file(path), file_stem(path), path);
}

std::string encode_fisher_file(const FisherVector& fv) {
  std::string out = "TFFV";
  put_u32(out, 1);
  put_u32(out, fv.degenerate ? 1u : 0u);
  put_u32(out, static_cast<std::uint32_t>(fv.values.size()));
  for (double v : fv.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

FisherVector decode_fisher_file(std::string_view bytes, const std::string& video_id, const std::string& source_name) {
  Reader r(bytes, source_name);
  if (r.raw(4) != "TFFV") r.fail("bad magic (expected TFFV)");
  if (const auto version = r.u32(); version != 1) r.fail("unsupported version " + std::to_string(version));
  const std::uint32_t flags = r.u32();
  const std::uint32_t f = r.u32();
  if (r.remaining() != static_cast<std::size_t>(f) * 8) r.fail("payload size does not match header");
  FisherVector fv{video_id, std::vector<double>(f), (flags & 1u) != 0};
  for (auto& v : fv.values) v = std::bit_cast<double>(r.u64());
  return fv;
}

void write_fisher_file(const FisherVector& fv, const std::string& path) { write_file_atomic(path, encode_fisher_file(fv)); }

FisherVector read_fisher_file(const std::string& path) {
  return decode_fisher_file(read_file(path), file_stem(path), path);
}

std::vector<std::string> list_files(const std::string& dir, const std::string& extension) {
  if (!fs::is_directory(dir)) throw DataError(dir + ": not a directory");
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == extension) out.push_back(entry.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<DescriptorSet> read_descriptor_dir(const std::string& dir) {
  std::vector<DescriptorSet> out;
  for (const auto& path : list_files(dir, ".tfds")) out.push_back(read_descriptor_file(path));
  return out;
}

std::map<std::string, FisherVector> read_fisher_dir(const std::string& dir) {
  std::map<std::string, FisherVector> out;
  for (const auto& path : list_files(dir, ".fv")) {
    auto fv = read_fisher_file(path);
    out.emplace(fv.video_id, std::move(fv));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> read_labels(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    const std::string where = path + ":" + std::to_string(line_no);
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size() || line.find('\t', tab + 1) != std::string::npos) {
      throw DataError(where + ": expected video_id TAB class_stem");
    }
    std::string id = line.substr(0, tab);
    if (!seen.insert(id).second) throw DataError(where + ": duplicate video_id '" + id + "'");
    out.emplace_back(std::move(id), line.substr(tab + 1));
  }
  return out;
}

std::string serialize_labels(const std::vector<std::pair<std::string, std::string>>& labels) {
  std::string out;
  for (const auto& [id, cls] : labels) out += id + '\t' + cls + '\n';
  return out;
}

Matrix pool_descriptors(const std::vector<DescriptorSet>& sets) {
  if (sets.empty()) return {};
  const std::size_t d = sets.front().matrix.cols();
  std::size_t rows = 0;
  for (const auto& s : sets) {
    if (s.matrix.cols() != d) throw DataError(s.video_id + ": descriptor dimension differs from the rest of the dataset");
    rows += s.matrix.rows();
  }
  Matrix pooled(rows, d);
  std::size_t r = 0;
  for (const auto& s : sets) {
    std::copy(s.matrix.data().begin(), s.matrix.data().end(), pooled.data().begin() + static_cast<std::ptrdiff_t>(r * d));
    r += s.matrix.rows();
  }
  return pooled;
}

}  // namespace tagforge
