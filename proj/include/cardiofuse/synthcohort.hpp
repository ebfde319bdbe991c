#pragma once

// Deterministic synthetic cohorts: EHR tables plus paired PLAX/A4C phantom
// clips, with a class signal knob per modality.
//
// Each patient carries one latent severity per modality,
//   severity_m = label * signal_m + N(0, 1),
// drawn independently, so the modalities carry complementary evidence about
// the label. The EHR severity drives the BNP lab (and optionally two more
// cardiac biomarkers); each
// view's severity drives the phantom wall thickness of that view.

#include <cstdint>
#include <filesystem>
#include <string>

#include "cardiofuse/records.hpp"
#include "cardiofuse/rng.hpp"

namespace cardiofuse::synth {

/// LOINC code of B-type natriuretic peptide; the lab that carries the EHR signal.
inline constexpr const char* kSignalLabCode = "30934-4";

/// Cardiac biomarkers that can share the EHR severity: BNP, NT-proBNP, troponin T.
inline constexpr const char* kBiomarkerCodes[] = {"30934-4", "33762-6", "6598-7"};

struct CohortSpec {
  std::uint32_t n_patients = 41;
  double prevalence = 17.0 / 41.0;
  std::uint64_t seed = 1;
  std::uint32_t n_lab_codes = 40;
  double lab_missingness = 0.3;
  double signal_ehr = 1.0;
  double signal_plax = 1.0;
  double signal_a4c = 1.0;
  std::uint32_t frames_per_clip = 30;
  std::uint32_t frame_size = 16;
  std::uint32_t channels = 1;
  /// When true the wall_thickness metric tracks the PLAX severity, so the
  /// cardiac-metrics block carries imaging information.
  bool metrics_follow_imaging = true;
  /// How many of the leading biomarker codes carry the EHR severity (1..3).
  /// Each is measured independently, so extra signal codes mostly offset missingness.
  std::uint32_t n_signal_labs = 1;

  /// Throws ValidationError naming the offending field.
  void validate() const;
  std::uint32_t positives() const;
  /// key = value lines, written next to the manifest as cohort.txt.
  std::string serialize() const;
};

/// Phantom echo clip: a bright wall ring around a dark chamber (PLAX) or four
/// chambers in quadrants (A4C); wall thickness pulses periodically. Pixel
/// values are pointwise nondecreasing in wall_param for a fixed RNG state, and
/// RNG consumption does not depend on wall_param.
EchoClip render_echo_clip(View view, double wall_param, Rng& rng, std::uint32_t frames,
                          std::uint32_t frame_size);

/// Nominal wall parameter for a given severity at this frame size.
double wall_param_for(double severity, std::uint32_t frame_size);

/// Lab code list for a cohort: the biomarker codes first, then synthetic LOINC-like codes.
std::vector<std::string> lab_codes(std::uint32_t n_lab_codes);

Dataset synthesize(const CohortSpec& spec);

/// synthesize + dataio::write_dataset, plus cohort.txt. Returns the manifest path.
std::filesystem::path generate_cohort(const CohortSpec& spec, const std::filesystem::path& dir);

}  // namespace cardiofuse::synth
