#pragma once

// On-disk dataset layout:
//
//   <dir>/manifest.csv      patient_id,label,plax_path,a4c_path (paths relative to <dir>)
//   <dir>/demographics.csv  patient_id,label,age,sex,race,sbp,dbp,weight_kg,height_m,bmi
//   <dir>/metrics.csv       patient_id,<8 cardiac metric columns>
//   <dir>/labs.csv          patient_id,code,value,days_from_echo
//   <dir>/clips/*.ecv       ECV1 clip files
//
// ECV1: ASCII "ECV1", then uint32 T,H,W,C, then T*H*W*C float32 in
// (t, row, col, channel) order. Everything little-endian.

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cardiofuse/records.hpp"

namespace cardiofuse::dataio {

inline constexpr char kClipMagic[4] = {'E', 'C', 'V', '1'};

void write_clip(const EchoClip& clip, const std::filesystem::path& path);
/// Reads an ECV1 file. patient_id and view are left for the caller to fill.
EchoClip read_clip(const std::filesystem::path& path);

std::vector<unsigned char> encode_clip(const EchoClip& clip);
EchoClip decode_clip(std::span<const unsigned char> bytes, const std::string& origin = "<buffer>");

/// Writes the full layout into `dir` (created if missing). Returns the manifest path.
std::filesystem::path write_dataset(const Dataset& data, const std::filesystem::path& dir);

struct LoadSummary {
  std::size_t records = 0;
  std::size_t clips = 0;
  std::size_t lab_rows = 0;
};

Dataset load_dataset(const std::filesystem::path& manifest, LoadSummary* summary = nullptr);

// CSV helpers shared with the report writers.
std::string format_double(double v);
std::vector<std::string> split_csv_line(std::string_view line);
double parse_double(std::string_view s, const std::string& context);
long parse_long(std::string_view s, const std::string& context);
/// Lines starting with "#" are skipped.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path,
                                                const std::vector<std::string>& expected_header);
void write_text_file(const std::filesystem::path& path, std::string_view contents);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace cardiofuse::dataio
