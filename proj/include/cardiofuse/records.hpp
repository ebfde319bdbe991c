#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace cardiofuse {

enum class View { PLAX, A4C };

std::string_view view_name(View v);
/// Accepts "PLAX"/"A4C" in any case; throws LoadError otherwise.
View parse_view(std::string_view s);

/// Minimum clip length that still covers a full cardiac cycle.
inline constexpr std::uint32_t kMinClipFrames = 30;
inline constexpr std::uint32_t kMinFrameExtent = 16;

/// One view-tagged echo video. Frames are stored as float32 in (t, row, col,
/// channel) order, exactly as in the ECV1 payload.
struct EchoClip {
  std::string patient_id;
  View view = View::PLAX;
  std::uint32_t frames = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 1;
  std::vector<float> pixels;

  std::size_t frame_size() const { return std::size_t{height} * width * channels; }
  float at(std::uint32_t t, std::uint32_t r, std::uint32_t c, std::uint32_t ch = 0) const {
    return pixels[((std::size_t{t} * height + r) * width + c) * channels + ch];
  }
  /// Throws ValidationError when the clip violates its invariants.
  void validate() const;
};

struct LabObservation {
  std::string code;
  double value = 0.0;
  int days_from_echo = 0;
};

inline constexpr std::size_t kMetricCount = 8;
inline constexpr std::array<std::string_view, kMetricCount> kMetricNames = {
    "wall_thickness",     "chamber_diameter", "chamber_volume_diastolic",
    "chamber_volume_systolic", "stroke_volume", "ejection_fraction",
    "fractional_shortening",   "sphericity_index"};

struct PatientRecord {
  std::string patient_id;
  int label = 0;  // 1 = cardiac amyloidosis
  double age = 0.0;
  std::string sex;   // "F" or "M"
  std::string race;
  double sbp = 0.0;
  double dbp = 0.0;
  double weight_kg = 0.0;
  double height_m = 0.0;
  double bmi = 0.0;
  std::array<double, kMetricCount> cardiac_metrics{};
  std::vector<LabObservation> labs;

  void validate() const;
};

/// Records with their two clips, aligned by index.
struct Dataset {
  std::vector<PatientRecord> records;
  std::vector<EchoClip> plax;
  std::vector<EchoClip> a4c;

  std::size_t size() const { return records.size(); }
  std::vector<int> labels() const;
  std::vector<std::string> ids() const;
  /// Subset in the given index order.
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

}  // namespace cardiofuse
