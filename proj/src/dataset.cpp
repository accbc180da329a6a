#include "mint/dataset.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace mint {

namespace {

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32_block(std::string& buf, const Mat& m) {
  put_u32(buf, static_cast<uint32_t>(m.data.size()));
  for (double v : m.data) {
    const float f = static_cast<float>(v);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(buf, bits);
  }
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw ValidationError("dataset: truncated record");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

}  // namespace

std::string serialize_dataset(const std::vector<env::Demonstration>& demos, int horizon) {
  std::string buf = "MINTD v1 H=" + std::to_string(horizon) + " D=" + std::to_string(env::kActionDim) +
                    " S=" + std::to_string(env::kStateDim) + "\n";
  for (const env::Demonstration& d : demos) {
    if (d.states.rows != d.actions.rows)
      throw ValidationError("dataset: state/action length mismatch");
    put_u32(buf, static_cast<uint32_t>(d.states.rows));
    put_f32_block(buf, d.states);
    put_f32_block(buf, d.actions);
    put_u32(buf, static_cast<uint32_t>(d.behavior_label));
    put_u32(buf, static_cast<uint32_t>(d.layout_id));
    put_u64(buf, d.seed);
  }
  return buf;
}

DatasetFile parse_dataset(const std::string& bytes) {
  const size_t nl = bytes.find('\n');
  if (nl == std::string::npos) throw ValidationError("dataset: missing header line");
  const std::string header = bytes.substr(0, nl);
  int horizon = 0, dim = 0, sdim = 0;
  if (std::sscanf(header.c_str(), "MINTD v1 H=%d D=%d S=%d", &horizon, &dim, &sdim) != 3)
    throw ValidationError("dataset: bad header '" + header + "'");
  if (dim != env::kActionDim || sdim != env::kStateDim)
    throw ValidationError("dataset: dimension mismatch with this build");
  if (horizon <= 0) throw ValidationError("dataset: bad horizon");

  DatasetFile out;
  out.horizon = horizon;
  Reader r{bytes, nl + 1};
  while (r.pos < bytes.size()) {
    env::Demonstration d;
    const uint32_t t_len = r.u32();
    if (t_len == 0 || t_len > 1 << 20) throw ValidationError("dataset: bad record length");
    const uint32_t ns = r.u32();
    if (ns != t_len * static_cast<uint32_t>(env::kStateDim))
      throw ValidationError("dataset: state block size mismatch");
    d.states = Mat(static_cast<int>(t_len), env::kStateDim);
    for (double& v : d.states.data) v = r.f32();
    const uint32_t na = r.u32();
    if (na != t_len * static_cast<uint32_t>(env::kActionDim))
      throw ValidationError("dataset: action block size mismatch");
    d.actions = Mat(static_cast<int>(t_len), env::kActionDim);
    for (double& v : d.actions.data) v = r.f32();
    d.behavior_label = static_cast<int>(r.u32());
    d.layout_id = static_cast<int>(r.u32());
    d.seed = r.u64();
    out.demos.push_back(std::move(d));
  }
  return out;
}

void save_dataset(const std::string& path, const std::vector<env::Demonstration>& demos,
                  int horizon) {
  const std::string buf = serialize_dataset(demos, horizon);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open dataset for writing: " + path);
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("dataset write failed: " + path);
}

DatasetFile load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_dataset(ss.str());
}

}  // namespace mint
