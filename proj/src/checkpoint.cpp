#include "tnas/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "tnas/binio.hpp"

namespace tnas::ckpt {

namespace {

constexpr const char* kMagic = "TNAS";

std::string encode_tensors(const std::vector<nd::Tensor>& ts) {
  std::ostringstream os;
  binio::put_u64(os, ts.size());
  for (const auto& t : ts) nd::write_tensor(os, t);
  return os.str();
}

std::vector<nd::Tensor> decode_tensors(const std::string& bytes, const std::string& name) {
  std::istringstream is(bytes);
  try {
    const auto n = binio::get_u64(is);
    if (n > bytes.size()) throw std::runtime_error("implausible tensor count");
    std::vector<nd::Tensor> out;
    out.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) out.push_back(nd::read_tensor(is));
    if (is.peek() != std::char_traits<char>::eof()) throw std::runtime_error("trailing bytes");
    return out;
  } catch (const std::runtime_error& e) {
    throw CheckpointError("checkpoint section '" + name + "': " + e.what());
  }
}

std::vector<nd::Tensor> moments_as_tensors(const OptimizerState& s) {
  std::vector<nd::Tensor> out;
  for (const auto& m : s.moments) {
    out.push_back(nd::Tensor(nd::Shape{static_cast<std::int64_t>(m.m.size())}, m.m));
    out.push_back(nd::Tensor(nd::Shape{static_cast<std::int64_t>(m.v.size())}, m.v));
  }
  return out;
}

std::vector<nd::AdamMoments> tensors_as_moments(const std::vector<nd::Tensor>& ts, const std::string& name) {
  if (ts.size() % 2 != 0) throw CheckpointError("checkpoint section '" + name + "': odd moment count");
  std::vector<nd::AdamMoments> out;
  for (std::size_t i = 0; i < ts.size(); i += 2) {
    out.push_back({std::vector<double>(ts[i].data().begin(), ts[i].data().end()),
                   std::vector<double>(ts[i + 1].data().begin(), ts[i + 1].data().end())});
  }
  return out;
}

std::string join_rows(const std::vector<std::string>& rows) {
  std::string s;
  for (const auto& r : rows) s += r + "\n";
  return s;
}

std::vector<std::string> split_rows(const std::string& s) {
  std::vector<std::string> rows;
  std::istringstream in(s);
  std::string line;
  while (std::getline(in, line)) rows.push_back(line);
  return rows;
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const auto x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw CheckpointError("checkpoint header: bad integer for '" + key + "': '" + v + "'");
  }
}

}  // namespace

std::string to_string(Phase p) {
  switch (p) {
    case Phase::kPretrain:
      return "pretrain";
    case Phase::kSearch:
      return "search";
    case Phase::kFinal:
      return "final";
  }
  return "?";
}

Phase parse_phase(const std::string& s) {
  if (s == "pretrain") return Phase::kPretrain;
  if (s == "search") return Phase::kSearch;
  if (s == "final") return Phase::kFinal;
  throw CheckpointError("checkpoint header: unknown phase '" + s + "'");
}

std::string encode(const Checkpoint& c) {
  const std::vector<std::pair<std::string, std::string>> sections = {
      {"config", c.config_text},
      {"arch_text", c.arch_text},
      {"metrics", join_rows(c.metrics)},
      {"weights", encode_tensors(c.weights)},
      {"arch_logits", encode_tensors(c.arch)},
      {"w_moments", encode_tensors(moments_as_tensors(c.w_opt))},
      {"arch_moments", encode_tensors(moments_as_tensors(c.arch_opt))},
  };
  std::ostringstream head;
  head << kMagic << " " << kFormatVersion << "\n"
       << "phase = " << to_string(c.phase) << "\n"
       << "epochs_done = " << c.epochs_done << "\n"
       << "complete = " << (c.complete ? 1 : 0) << "\n"
       << "arch_steps = " << c.arch_steps << "\n"
       << "w_opt_steps = " << c.w_opt.steps << "\n"
       << "arch_opt_steps = " << c.arch_opt.steps << "\n";
  std::size_t offset = 0;
  for (const auto& [name, body] : sections) {
    head << "section " << name << " " << offset << " " << body.size() << "\n";
    offset += body.size();
  }
  head << "end\n";
  std::string out = head.str();
  for (const auto& s : sections) out += s.second;
  return out;
}

Checkpoint decode(const std::string& bytes) {
  if (bytes.compare(0, 4, kMagic) != 0) throw CheckpointError("not a checkpoint: missing TNAS magic");
  const auto end_at = bytes.find("\nend\n");
  if (end_at == std::string::npos) throw CheckpointError("checkpoint header: missing 'end'");
  const std::size_t body_at = end_at + 5;

  std::istringstream head(bytes.substr(0, end_at + 1));
  std::string line;
  std::getline(head, line);
  {
    std::istringstream first(line);
    std::string magic;
    std::uint64_t version = 0;
    if (!(first >> magic >> version)) throw CheckpointError("checkpoint header: malformed first line");
    if (version != kFormatVersion) {
      throw CheckpointError("checkpoint format version " + std::to_string(version) + " unsupported (expected " +
                            std::to_string(kFormatVersion) + ")");
    }
  }

  std::map<std::string, std::string> fields;
  std::map<std::string, std::string> sections;
  while (std::getline(head, line)) {
    if (line.rfind("section ", 0) == 0) {
      std::istringstream ls(line.substr(8));
      std::string name;
      std::uint64_t off = 0, len = 0;
      if (!(ls >> name >> off >> len)) throw CheckpointError("checkpoint header: malformed '" + line + "'");
      if (off > bytes.size() - body_at || len > bytes.size() - body_at - off) {
        throw CheckpointError("checkpoint section '" + name + "' extends past end of file");
      }
      sections[name] = bytes.substr(body_at + off, len);
      continue;
    }
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw CheckpointError("checkpoint header: malformed '" + line + "'");
    fields[line.substr(0, eq)] = line.substr(eq + 3);
  }
  auto field = [&](const char* key) -> const std::string& {
    const auto it = fields.find(key);
    if (it == fields.end()) throw CheckpointError(std::string("checkpoint header: missing '") + key + "'");
    return it->second;
  };
  auto section = [&](const char* name) -> const std::string& {
    const auto it = sections.find(name);
    if (it == sections.end()) throw CheckpointError(std::string("checkpoint: missing section '") + name + "'");
    return it->second;
  };

  Checkpoint c;
  c.phase = parse_phase(field("phase"));
  c.epochs_done = static_cast<int>(parse_int("epochs_done", field("epochs_done")));
  c.complete = parse_int("complete", field("complete")) != 0;
  c.arch_steps = parse_int("arch_steps", field("arch_steps"));
  c.w_opt.steps = parse_int("w_opt_steps", field("w_opt_steps"));
  c.arch_opt.steps = parse_int("arch_opt_steps", field("arch_opt_steps"));
  c.config_text = section("config");
  c.arch_text = section("arch_text");
  c.metrics = split_rows(section("metrics"));
  c.weights = decode_tensors(section("weights"), "weights");
  c.arch = decode_tensors(section("arch_logits"), "arch_logits");
  c.w_opt.moments = tensors_as_moments(decode_tensors(section("w_moments"), "w_moments"), "w_moments");
  c.arch_opt.moments = tensors_as_moments(decode_tensors(section("arch_moments"), "arch_moments"), "arch_moments");
  return c;
}

void save(const std::string& path, const Checkpoint& c) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    const auto bytes = encode(c);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f) throw CheckpointError("cannot write checkpoint '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw CheckpointError("cannot move checkpoint into place at '" + path + "'");
  }
}

Checkpoint load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

void assign(const std::vector<nd::Tensor>& dst, const std::vector<nd::Tensor>& src, const char* what) {
  if (dst.size() != src.size()) {
    throw CheckpointError(std::string("checkpoint ") + what + ": expected " + std::to_string(dst.size()) +
                          " tensors, found " + std::to_string(src.size()));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].shape() != src[i].shape()) {
      throw CheckpointError(std::string("checkpoint ") + what + ": tensor " + std::to_string(i) + " has shape " +
                            nd::to_string(src[i].shape()) + ", expected " + nd::to_string(dst[i].shape()));
    }
    nd::Tensor t = dst[i];
    auto d = t.data();
    std::copy(src[i].data().begin(), src[i].data().end(), d.begin());
  }
}

OptimizerState capture(const nd::Adam& opt) { return {opt.steps(), opt.moments()}; }

void restore(nd::Adam& opt, const OptimizerState& s) {
  auto& m = opt.moments();
  if (m.size() != s.moments.size()) throw CheckpointError("checkpoint optimizer state does not match parameters");
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i].m.size() != s.moments[i].m.size() || m[i].v.size() != s.moments[i].v.size()) {
      throw CheckpointError("checkpoint optimizer moment " + std::to_string(i) + " has the wrong size");
    }
  }
  m = s.moments;
  opt.set_steps(s.steps);
}

}  // namespace tnas::ckpt
