#include "cardiofuse/records.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "cardiofuse/error.hpp"

namespace cardiofuse {

std::string_view view_name(View v) { return v == View::PLAX ? "PLAX" : "A4C"; }

View parse_view(std::string_view s) {
  std::string up(s);
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
  if (up == "PLAX") return View::PLAX;
  if (up == "A4C") return View::A4C;
  throw LoadError("unknown view tag '" + std::string(s) + "' (expected PLAX or A4C)");
}

void EchoClip::validate() const {
  if (frames < kMinClipFrames) {
    throw ValidationError("clip " + patient_id + "/" + std::string(view_name(view)) + " has " +
                          std::to_string(frames) + " frames; clips need at least " +
                          std::to_string(kMinClipFrames) + " frames to cover a cardiac cycle");
  }
  if (height < kMinFrameExtent || width < kMinFrameExtent) {
    throw ValidationError("clip frames must be at least 16x16, got " + std::to_string(height) + "x" +
                          std::to_string(width));
  }
  if (channels != 1) throw ValidationError("clips must have exactly 1 channel");
  if (pixels.size() != std::size_t{frames} * frame_size()) {
    throw ValidationError("clip payload size does not match its dimensions");
  }
  for (float v : pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("clip pixel value outside [0,1]");
  }
}

void PatientRecord::validate() const {
  if (patient_id.empty()) throw ValidationError("patient_id is empty");
  if (label != 0 && label != 1) throw ValidationError(patient_id + ": label must be 0 or 1");
  for (double v : {age, sbp, dbp, weight_kg, height_m, bmi}) {
    if (!std::isfinite(v)) throw ValidationError(patient_id + ": non-finite vital sign");
  }
  if (height_m <= 0.0) throw ValidationError(patient_id + ": height must be positive");
  const double expected = weight_kg / (height_m * height_m);
  if (std::abs(bmi - expected) > 1e-6 * std::abs(expected)) {
    throw ValidationError(patient_id + ": bmi does not equal weight/height^2");
  }
  for (const auto& lab : labs) {
    if (lab.code.empty()) throw ValidationError(patient_id + ": lab observation with empty code");
    if (!std::isfinite(lab.value)) throw ValidationError(patient_id + ": non-finite lab value");
  }
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.label);
  return out;
}

std::vector<std::string> Dataset::ids() const {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.patient_id);
  return out;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  for (std::size_t i : indices) {
    out.records.push_back(records.at(i));
    if (!plax.empty()) out.plax.push_back(plax.at(i));
    if (!a4c.empty()) out.a4c.push_back(a4c.at(i));
  }
  return out;
}

}  // namespace cardiofuse
