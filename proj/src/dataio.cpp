#include "cardiofuse/dataio.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cardiofuse/error.hpp"

namespace cardiofuse::dataio {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kHeaderBytes = 4 + 4 * 4;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const unsigned char> b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[off + i]} << (8 * i);
  return v;
}

const std::vector<std::string> kManifestHeader = {"patient_id", "label", "plax_path", "a4c_path"};
const std::vector<std::string> kDemoHeader = {"patient_id", "label", "age",    "sex",      "race",
                                              "sbp",        "dbp",   "weight_kg", "height_m", "bmi"};
const std::vector<std::string> kLabsHeader = {"patient_id", "code", "value", "days_from_echo"};

std::vector<std::string> metrics_header() {
  std::vector<std::string> h = {"patient_id"};
  for (auto name : kMetricNames) h.emplace_back(name);
  return h;
}

std::string clip_file_name(const std::string& id, View v) {
  return "clips/" + id + "_" + std::string(view_name(v)) + ".ecv";
}

}  // namespace

std::vector<unsigned char> encode_clip(const EchoClip& clip) {
  clip.validate();
  std::vector<unsigned char> out;
  out.reserve(kHeaderBytes + clip.pixels.size() * 4);
  out.insert(out.end(), kClipMagic, kClipMagic + 4);
  put_u32(out, clip.frames);
  put_u32(out, clip.height);
  put_u32(out, clip.width);
  put_u32(out, clip.channels);
  for (float f : clip.pixels) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

EchoClip decode_clip(std::span<const unsigned char> bytes, const std::string& origin) {
  if (bytes.size() < 4 || !std::equal(kClipMagic, kClipMagic + 4, bytes.begin())) {
    throw FormatError(origin + ": bad magic (expected ECV1)");
  }
  if (bytes.size() < kHeaderBytes) throw FormatError(origin + ": truncated header");
  EchoClip clip;
  clip.frames = get_u32(bytes, 4);
  clip.height = get_u32(bytes, 8);
  clip.width = get_u32(bytes, 12);
  clip.channels = get_u32(bytes, 16);
  const std::uint64_t count = std::uint64_t{clip.frames} * clip.height * clip.width * clip.channels;
  const std::uint64_t payload = bytes.size() - kHeaderBytes;
  if (payload < count * 4) {
    throw FormatError(origin + ": truncated payload (" + std::to_string(payload) + " bytes for " +
                      std::to_string(count) + " values)");
  }
  if (payload != count * 4) {
    throw FormatError(origin + ": dimension mismatch (" + std::to_string(payload - count * 4) +
                      " trailing bytes)");
  }
  clip.pixels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    clip.pixels[i] = std::bit_cast<float>(get_u32(bytes, kHeaderBytes + 4 * i));
  }
  try {
    clip.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(origin + ": " + e.what());
  }
  return clip;
}

void write_clip(const EchoClip& clip, const fs::path& path) {
  const auto bytes = encode_clip(clip);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError("failed writing " + path.string());
}

EchoClip read_clip(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("clip file not found: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_clip(bytes, path.string());
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, end);
}

std::vector<std::string> split_csv_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

double parse_double(std::string_view s, const std::string& context) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw LoadError(context + ": cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

long parse_long(std::string_view s, const std::string& context) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw LoadError(context + ": cannot parse integer '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path,
                                                const std::vector<std::string>& expected_header) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  do {
    if (!std::getline(in, line)) throw LoadError(path.string() + ": empty file");
    ++lineno;
  } while (!line.empty() && line[0] == '#');
  const auto header = split_csv_line(line);
  if (header != expected_header) {
    std::string want;
    for (const auto& h : expected_header) want += (want.empty() ? "" : ",") + h;
    throw LoadError(path.string() + ": unexpected header, expected " + want);
  }
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    auto fields = split_csv_line(line);
    if (fields.size() != expected_header.size()) {
      throw LoadError(path.string() + " line " + std::to_string(lineno) + ": expected " +
                      std::to_string(expected_header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

void write_text_file(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot open " + path.string() + " for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw LoadError("failed writing " + path.string());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_dataset(const Dataset& data, const fs::path& dir) {
  if (data.plax.size() != data.size() || data.a4c.size() != data.size()) {
    throw ValidationError("dataset needs one PLAX and one A4C clip per record");
  }
  fs::create_directories(dir / "clips");
  std::string manifest = "patient_id,label,plax_path,a4c_path\n";
  std::string demo = "patient_id,label,age,sex,race,sbp,dbp,weight_kg,height_m,bmi\n";
  std::string metrics;
  for (const auto& h : metrics_header()) metrics += (metrics.empty() ? "" : ",") + h;
  metrics += "\n";
  std::string labs = "patient_id,code,value,days_from_echo\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const PatientRecord& r = data.records[i];
    r.validate();
    if (r.patient_id.find(',') != std::string::npos || r.race.find(',') != std::string::npos) {
      throw ValidationError("fields must not contain commas: " + r.patient_id);
    }
    const std::string plax = clip_file_name(r.patient_id, View::PLAX);
    const std::string a4c = clip_file_name(r.patient_id, View::A4C);
    write_clip(data.plax[i], dir / plax);
    write_clip(data.a4c[i], dir / a4c);
    manifest += r.patient_id + "," + std::to_string(r.label) + "," + plax + "," + a4c + "\n";
    demo += r.patient_id + "," + std::to_string(r.label) + "," + format_double(r.age) + "," + r.sex +
            "," + r.race + "," + format_double(r.sbp) + "," + format_double(r.dbp) + "," +
            format_double(r.weight_kg) + "," + format_double(r.height_m) + "," +
            format_double(r.bmi) + "\n";
    metrics += r.patient_id;
    for (double m : r.cardiac_metrics) metrics += "," + format_double(m);
    metrics += "\n";
    for (const auto& lab : r.labs) {
      labs += r.patient_id + "," + lab.code + "," + format_double(lab.value) + "," +
              std::to_string(lab.days_from_echo) + "\n";
    }
  }
  write_text_file(dir / "manifest.csv", manifest);
  write_text_file(dir / "demographics.csv", demo);
  write_text_file(dir / "metrics.csv", metrics);
  write_text_file(dir / "labs.csv", labs);
  return dir / "manifest.csv";
}

Dataset load_dataset(const fs::path& manifest_path, LoadSummary* summary) {
  if (!fs::exists(manifest_path)) throw LoadError("manifest not found: " + manifest_path.string());
  const fs::path dir = manifest_path.parent_path();

  // The header names the per-view path columns; any other <view>_path column is rejected.
  {
    std::ifstream in(manifest_path);
    std::string line;
    std::getline(in, line);
    for (const auto& col : split_csv_line(line)) {
      const auto pos = col.rfind("_path");
      if (pos != std::string::npos && pos + 5 == col.size()) parse_view(col.substr(0, pos));
    }
  }
  const auto rows = read_csv(manifest_path, kManifestHeader);

  Dataset data;
  std::map<std::string, std::size_t> index;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& row = rows[k];
    const std::string where = manifest_path.string() + " row " + std::to_string(k + 1);
    const std::string& id = row[0];
    if (id.empty()) throw LoadError(where + ": empty patient_id");
    if (!index.emplace(id, k).second) throw LoadError(where + ": duplicate patient_id " + id);
    PatientRecord rec;
    rec.patient_id = id;
    const long label = parse_long(row[1], where);
    if (label != 0 && label != 1) throw LoadError(where + ": label must be 0 or 1");
    rec.label = static_cast<int>(label);
    data.records.push_back(std::move(rec));
    for (View v : {View::PLAX, View::A4C}) {
      const fs::path p = dir / row[v == View::PLAX ? 2 : 3];
      if (!fs::exists(p)) throw LoadError(where + ": missing clip file " + p.string());
      EchoClip clip = read_clip(p);
      clip.patient_id = id;
      clip.view = v;
      (v == View::PLAX ? data.plax : data.a4c).push_back(std::move(clip));
    }
  }

  std::set<std::string> seen_demo, seen_metrics;
  for (const auto& row : read_csv(dir / "demographics.csv", kDemoHeader)) {
    const std::string where = "demographics.csv patient " + row[0];
    auto it = index.find(row[0]);
    if (it == index.end()) throw LoadError(where + ": not in manifest");
    if (!seen_demo.insert(row[0]).second) throw LoadError(where + ": duplicate row");
    PatientRecord& r = data.records[it->second];
    if (parse_long(row[1], where) != r.label) throw LoadError(where + ": label disagrees with manifest");
    r.age = parse_double(row[2], where);
    r.sex = row[3];
    r.race = row[4];
    r.sbp = parse_double(row[5], where);
    r.dbp = parse_double(row[6], where);
    r.weight_kg = parse_double(row[7], where);
    r.height_m = parse_double(row[8], where);
    r.bmi = parse_double(row[9], where);
  }
  for (const auto& row : read_csv(dir / "metrics.csv", metrics_header())) {
    const std::string where = "metrics.csv patient " + row[0];
    auto it = index.find(row[0]);
    if (it == index.end()) throw LoadError(where + ": not in manifest");
    if (!seen_metrics.insert(row[0]).second) throw LoadError(where + ": duplicate row");
    for (std::size_t m = 0; m < kMetricCount; ++m) {
      data.records[it->second].cardiac_metrics[m] = parse_double(row[m + 1], where);
    }
  }
  const auto lab_rows = read_csv(dir / "labs.csv", kLabsHeader);
  for (std::size_t k = 0; k < lab_rows.size(); ++k) {
    const auto& row = lab_rows[k];
    const std::string where = "labs.csv row " + std::to_string(k + 1);
    auto it = index.find(row[0]);
    if (it == index.end()) throw LoadError(where + ": patient " + row[0] + " not in manifest");
    LabObservation obs;
    obs.code = row[1];
    obs.value = parse_double(row[2], where);
    obs.days_from_echo = static_cast<int>(parse_long(row[3], where));
    data.records[it->second].labs.push_back(std::move(obs));
  }
  for (const auto& r : data.records) {
    if (!seen_demo.count(r.patient_id)) throw LoadError("demographics.csv: no row for " + r.patient_id);
    if (!seen_metrics.count(r.patient_id)) throw LoadError("metrics.csv: no row for " + r.patient_id);
    try {
      r.validate();
    } catch (const ValidationError& e) {
      throw LoadError(std::string("invalid record: ") + e.what());
    }
  }
  if (summary) {
    summary->records = data.size();
    summary->clips = data.plax.size() + data.a4c.size();
    summary->lab_rows = lab_rows.size();
  }
  return data;
}

}  // namespace cardiofuse::dataio
