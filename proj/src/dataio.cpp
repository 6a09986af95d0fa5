#include "sslct/dataio.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace sslct {

DatasetStats compute_stats(const std::vector<GrayImage>& images) {
  if (images.empty()) throw ValidationError("compute_stats: empty image set");
  std::int64_t n = 0;
  double sum = 0.0;
  for (const auto& img : images) {
    for (std::uint8_t p : img.pix) sum += (double)p / 255.0;
    n += (std::int64_t)img.pix.size();
  }
  if (n == 0) throw ValidationError("compute_stats: images contain no pixels");
  const double mean = sum / (double)n;
  double ss = 0.0;
  for (const auto& img : images)
    for (std::uint8_t p : img.pix) {
      const double d = (double)p / 255.0 - mean;
      ss += d * d;
    }
  const double stddev = std::sqrt(ss / (double)n);
  if (stddev <= 0.0)
    throw ValidationError("compute_stats: zero standard deviation (constant data)");
  return {mean, stddev};
}

void save_stats(const std::string& path, const DatasetStats& stats) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write stats file: " + path);
  f.precision(17);
  f << stats.mean << "\n" << stats.stddev << "\n";
}

DatasetStats load_stats(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read stats file: " + path);
  DatasetStats s;
  if (!(f >> s.mean >> s.stddev)) throw IoError("malformed stats file: " + path);
  if (s.stddev <= 0.0) throw ValidationError("stats file has non-positive std: " + path);
  return s;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

Manifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read manifest: " + path);
  std::string line;
  if (!std::getline(f, line)) throw ValidationError("manifest is empty: " + path);
  if (split_csv_line(line) != std::vector<std::string>{"image_path", "label", "subject_id",
                                                       "split"})
    throw ValidationError("manifest header must be image_path,label,subject_id,split: " + path);

  Manifest m;
  const std::set<std::string> known_splits{"train", "val", "test"};
  std::map<std::string, std::set<std::string>> subject_splits;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    const std::string where = path + ":" + std::to_string(lineno);
    if (fields.size() != 4)
      throw ValidationError("manifest row needs 4 fields: " + where);
    ManifestRecord r;
    r.image_path = fields[0];
    if (r.image_path.empty()) throw ValidationError("empty image_path: " + where);
    try {
      size_t used = 0;
      r.label = std::stoi(fields[1], &used);
      if (used != fields[1].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ValidationError("manifest label must be a non-negative integer: " + where);
    }
    if (r.label < 0) throw ValidationError("manifest label must be >= 0: " + where);
    r.subject_id = fields[2];
    if (r.subject_id.empty()) throw ValidationError("empty subject_id: " + where);
    r.split = fields[3];
    if (!known_splits.count(r.split))
      throw ValidationError("unknown split tag '" + r.split + "': " + where);
    subject_splits[r.subject_id].insert(r.split);
    m.records.push_back(std::move(r));
  }

  std::vector<std::string> leaking;
  for (const auto& [subject, splits] : subject_splits)
    if (splits.size() > 1) leaking.push_back(subject);
  if (!leaking.empty()) {
    std::string msg = "subject-level split leakage in " + path + ":";
    for (const auto& s : leaking) msg += " " + s;
    throw ValidationError(msg);
  }
  return m;
}

// ---------------------------------------------------------------------------
// 16-bit PGM
// ---------------------------------------------------------------------------

namespace {

// Reads one whitespace/comment-delimited token of a PNM header.
std::string pnm_token(std::istream& in, const std::string& path) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok += (char)c;
  }
  if (tok.empty()) throw IoError("truncated PGM header: " + path);
  return tok;
}

}  // namespace

void write_pgm16(const std::string& path, const HuSlice& slice) {
  check_cfg(slice.h >= 1 && slice.w >= 1 &&
                (int)slice.hu.size() == slice.h * slice.w,
            "write_pgm16: bad slice geometry");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write PGM: " + path);
  f << "P5\n" << slice.w << " " << slice.h << "\n65535\n";
  for (std::int16_t v : slice.hu) {
    const int off = (int)clamp_hu(v) + 1024;  // 0..4095
    f.put((char)((off >> 8) & 0xff));
    f.put((char)(off & 0xff));
  }
  if (!f) throw IoError("short write: " + path);
  std::ofstream meta(path + ".meta");
  if (!meta) throw IoError("cannot write sidecar: " + path + ".meta");
  meta << slice.subject_id << "\n";
}

HuSlice read_pgm16(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read PGM: " + path);
  if (pnm_token(f, path) != "P5") throw IoError("not a binary PGM (P5): " + path);
  HuSlice s;
  s.w = std::stoi(pnm_token(f, path));
  s.h = std::stoi(pnm_token(f, path));
  const int maxval = std::stoi(pnm_token(f, path));
  if (maxval != 65535) throw IoError("expected 16-bit PGM (maxval 65535): " + path);
  if (s.w < 1 || s.h < 1) throw IoError("bad PGM geometry: " + path);
  s.hu.resize((size_t)s.h * s.w);
  std::vector<unsigned char> raw((size_t)s.h * s.w * 2);
  f.read((char*)raw.data(), (std::streamsize)raw.size());
  if (f.gcount() != (std::streamsize)raw.size())
    throw IoError("truncated PGM pixel data: " + path);
  for (size_t i = 0; i < s.hu.size(); ++i) {
    const int off = ((int)raw[2 * i] << 8) | raw[2 * i + 1];
    s.hu[i] = (std::int16_t)(off - 1024);
  }
  std::ifstream meta(path + ".meta");
  if (meta) std::getline(meta, s.subject_id);
  return s;
}

}  // namespace sslct
