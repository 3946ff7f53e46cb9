#include "vmoe/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>
#include <sstream>

#include "vmoe/errors.hpp"

namespace vmoe {

namespace {

constexpr const char* kMagic = "vmoe-checkpoint";

std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

Shape parse_shape(const std::string& text) {
  Shape s;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) s.push_back(parse_int("shape", part));
  if (s.empty()) throw FormatError("empty shape");
  for (int d : s)
    if (d <= 0) throw FormatError("non-positive dimension in shape " + text);
  return s;
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
  return v;
}

struct Entry {
  std::string kind, name;
  Shape shape;
  std::size_t offset = 0, count = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ostringstream m;
  m << kMagic << ' ' << kCheckpointVersion << '\n';
  m << "epoch " << ckpt.epoch << '\n';
  m << "seed " << ckpt.seed << '\n';
  if (!ckpt.optimizer.empty()) m << "optimizer " << ckpt.optimizer << ' ' << ckpt.optimizer_step << '\n';
  for (const auto& [k, v] : config_entries(ckpt.model)) m << "config " << k << ' ' << v << '\n';
  std::size_t offset = 0;
  auto list = [&](const char* kind, const std::vector<NamedArray>& arrays) {
    for (const auto& a : arrays) {
      if (shape_size(a.shape) != a.values.size()) throw ContractError("array " + a.name + " size does not match its shape");
      m << "array " << kind << ' ' << a.name << ' ' << shape_text(a.shape) << ' ' << offset << ' ' << a.values.size()
        << '\n';
      offset += a.values.size();
    }
  };
  list("param", ckpt.parameters);
  list("state", ckpt.optimizer_state);
  m << "blob " << offset << '\n' << "end\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  const std::string manifest = m.str();
  out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  for (const auto* arrays : {&ckpt.parameters, &ckpt.optimizer_state}) {
    for (const auto& a : *arrays) {
      for (float f : a.values) {
        const std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(f));
        out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
      }
    }
  }
  if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  auto fail = [&](const std::string& why) { return FormatError(path.string() + ": " + why); };

  std::string line;
  if (!std::getline(in, line)) throw fail("empty file");
  {
    std::istringstream ls(line);
    std::string magic;
    int version = 0;
    if (!(ls >> magic >> version) || magic != kMagic) throw fail("not a checkpoint file");
    if (version != kCheckpointVersion) {
      throw fail("checkpoint version " + std::to_string(version) + ", this build reads version " +
                 std::to_string(kCheckpointVersion));
    }
  }
  Checkpoint ck;
  std::vector<Entry> entries;
  std::size_t blob = 0;
  bool have_blob = false, ended = false;
  ModelConfig model;
  model.moe.reset();
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    try {
      if (key == "end") {
        ended = true;
        break;
      } else if (key == "epoch") {
        if (!(ls >> ck.epoch)) throw fail("bad epoch line");
      } else if (key == "seed") {
        if (!(ls >> ck.seed)) throw fail("bad seed line");
      } else if (key == "optimizer") {
        if (!(ls >> ck.optimizer >> ck.optimizer_step)) throw fail("bad optimizer line");
      } else if (key == "config") {
        std::string k, v;
        if (!(ls >> k >> v) || !set_config_entry(model, k, v)) throw fail("bad config line '" + line + "'");
      } else if (key == "array") {
        Entry e;
        std::string shape;
        if (!(ls >> e.kind >> e.name >> shape >> e.offset >> e.count) || (e.kind != "param" && e.kind != "state")) {
          throw fail("bad array line '" + line + "'");
        }
        e.shape = parse_shape(shape);
        if (shape_size(e.shape) != e.count) throw fail("array " + e.name + " count does not match shape " + shape);
        entries.push_back(std::move(e));
      } else if (key == "blob") {
        if (!(ls >> blob)) throw fail("bad blob line");
        have_blob = true;
      } else {
        throw fail("unknown manifest line '" + line + "'");
      }
    } catch (const ConfigError& e) {
      throw fail(e.what());
    }
  }
  if (!ended || !have_blob) throw fail("manifest is incomplete");
  validate(model);
  ck.model = model;

  // Bounds and overlap checks, before touching the blob.
  std::vector<const Entry*> by_offset;
  for (const auto& e : entries) by_offset.push_back(&e);
  std::sort(by_offset.begin(), by_offset.end(), [](auto* a, auto* b) { return a->offset < b->offset; });
  std::size_t end = 0;
  for (const Entry* e : by_offset) {
    if (e->offset < end) throw fail("array " + e->name + " overlaps the previous array");
    if (e->offset > blob || e->count > blob - e->offset) {
      throw fail("array " + e->name + " spans floats [" + std::to_string(e->offset) + ", " +
                 std::to_string(e->offset + e->count) + ") past the end of a " + std::to_string(blob) + "-float blob");
    }
    end = e->offset + e->count;
  }
  const std::streampos data_start = in.tellg();
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != blob * sizeof(float)) {
    throw fail("blob holds " + std::to_string(bytes.size()) + " bytes, manifest declares " +
               std::to_string(blob * sizeof(float)) + " (data starts at byte offset " +
               std::to_string(static_cast<long long>(data_start)) + ")");
  }
  for (const auto& e : entries) {
    NamedArray a{e.name, e.shape, std::vector<float>(e.count)};
    for (std::size_t j = 0; j < e.count; ++j) {
      std::uint32_t bits;
      std::copy_n(bytes.data() + (e.offset + j) * sizeof bits, sizeof bits, reinterpret_cast<char*>(&bits));
      a.values[j] = std::bit_cast<float>(to_little(bits));
    }
    (e.kind == "param" ? ck.parameters : ck.optimizer_state).push_back(std::move(a));
  }
  return ck;
}

}  // namespace vmoe
