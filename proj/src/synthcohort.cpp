#include "cardiofuse/synthcohort.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "cardiofuse/dataio.hpp"
#include "cardiofuse/error.hpp"

namespace cardiofuse::synth {

namespace {

enum Stream : std::uint64_t {
  kLabelStream = 1,
  kCodeStream = 2,
  kPatientStream = 3,
};

// Sub-streams of one patient.
enum PatientStream : std::uint64_t { kDemo = 0, kLatent = 1, kLabs = 2, kPlax = 3, kA4c = 4 };

std::uint64_t patient_seed(std::uint64_t root, std::size_t patient, PatientStream s) {
  return derive_seed(derive_seed(root, kPatientStream), patient * 8 + s);
}

struct LabStats {
  double mean;
  double sd;
};

double clampd(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

std::string patient_id(std::size_t i, std::size_t n) {
  const std::size_t width = std::max<std::size_t>(4, std::to_string(n).size());
  std::string digits = std::to_string(i + 1);
  return "P" + std::string(width - digits.size(), '0') + digits;
}

}  // namespace

void CohortSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ValidationError("invalid cohort spec: " + field + " " + why);
  };
  if (n_patients < 2) fail("n_patients", "must be at least 2");
  if (!(prevalence >= 0.0 && prevalence <= 1.0)) fail("prevalence", "must lie in [0,1]");
  if (n_lab_codes < 1) fail("n_lab_codes", "must be at least 1");
  if (n_signal_labs < 1 || n_signal_labs > std::size(kBiomarkerCodes)) fail("n_signal_labs", "must lie in [1,3]");
  if (n_signal_labs > n_lab_codes) fail("n_signal_labs", "must not exceed n_lab_codes");
  if (!(lab_missingness >= 0.0 && lab_missingness < 1.0)) fail("lab_missingness", "must lie in [0,1)");
  for (auto [name, v] : {std::pair{"signal_ehr", signal_ehr}, std::pair{"signal_plax", signal_plax},
                         std::pair{"signal_a4c", signal_a4c}}) {
    if (!(v >= 0.0) || !std::isfinite(v)) fail(name, "must be a finite non-negative number");
  }
  if (frames_per_clip < kMinClipFrames) fail("frames_per_clip", "must be at least 30");
  if (frame_size < kMinFrameExtent) fail("frame_size", "must be at least 16");
  if (channels != 1) fail("channels", "must be 1");
  const std::uint32_t pos = positives();
  if (prevalence > 0.0 && prevalence < 1.0 && pos >= n_patients) {
    fail("prevalence", "leaves no negative patients at this n_patients");
  }
}

std::uint32_t CohortSpec::positives() const {
  return static_cast<std::uint32_t>(std::lround(static_cast<double>(n_patients) * prevalence));
}

double wall_param_for(double severity, std::uint32_t frame_size) {
  const double base = 0.12 * frame_size;
  const double step = 0.04 * frame_size;
  return std::max(0.25 * base, base + step * severity);
}

EchoClip render_echo_clip(View view, double wall_param, Rng& rng, std::uint32_t frames,
                          std::uint32_t frame_size) {
  if (!(wall_param > 0.0)) throw ValidationError("render_echo_clip: wall_param must be positive");
  if (frames < kMinClipFrames) throw ValidationError("render_echo_clip: at least 30 frames required");
  if (frame_size < kMinFrameExtent) throw ValidationError("render_echo_clip: frame_size must be >= 16");

  const double size = frame_size;
  const double cycles = rng.uniform(1.5, 2.5);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double cx = 0.5 * (size - 1.0) + rng.uniform(-1.0, 1.0);
  const double cy = 0.5 * (size - 1.0) + rng.uniform(-1.0, 1.0);

  // Signed distance (pixels) from the chamber boundary; negative inside.
  auto boundary_distance = [&](double r, double c) {
    if (view == View::PLAX) {
      const double ax = 0.30 * size, ay = 0.17 * size;
      const double dx = (c - cx) / ax, dy = (r - cy) / ay;
      return (std::sqrt(dx * dx + dy * dy) - 1.0) * ay;
    }
    const double off = 0.24 * size, radius = 0.11 * size;
    double best = INFINITY;
    for (double sy : {-1.0, 1.0}) {
      for (double sx : {-1.0, 1.0}) {
        const double dx = c - (cx + sx * off), dy = r - (cy + sy * off);
        best = std::min(best, std::sqrt(dx * dx + dy * dy) - radius);
      }
    }
    return best;
  };

  std::vector<double> dist(std::size_t{frame_size} * frame_size);
  for (std::uint32_t r = 0; r < frame_size; ++r) {
    for (std::uint32_t c = 0; c < frame_size; ++c) dist[r * frame_size + c] = boundary_distance(r, c);
  }

  EchoClip clip;
  clip.view = view;
  clip.frames = frames;
  clip.height = frame_size;
  clip.width = frame_size;
  clip.channels = 1;
  clip.pixels.resize(std::size_t{frames} * frame_size * frame_size);
  for (std::uint32_t t = 0; t < frames; ++t) {
    const double beat = std::sin(2.0 * std::numbers::pi * cycles * t / frames + phase);
    const double thickness = wall_param * (1.0 + 0.25 * beat);
    for (std::size_t p = 0; p < dist.size(); ++p) {
      const double d = dist[p];
      const double wall = d < 0.0 ? 0.0 : clampd(thickness + 0.5 - d, 0.0, 1.0);
      const double noise = 0.06 * rng.normal();
      clip.pixels[t * dist.size() + p] = static_cast<float>(clampd(0.08 + 0.8 * wall + noise, 0.0, 1.0));
    }
  }
  return clip;
}

std::vector<std::string> lab_codes(std::uint32_t n_lab_codes) {
  std::vector<std::string> codes;
  codes.reserve(n_lab_codes);
  for (std::uint32_t k = 0; k < n_lab_codes && k < std::size(kBiomarkerCodes); ++k) {
    codes.emplace_back(kBiomarkerCodes[k]);
  }
  for (std::uint32_t k = static_cast<std::uint32_t>(codes.size()); k < n_lab_codes; ++k) {
    const std::uint32_t number = 10000 + 97 * k;
    std::uint32_t check = 0;
    for (std::uint32_t v = number; v; v /= 10) check += v % 10;
    codes.push_back(std::to_string(number) + "-" + std::to_string(check % 10));
  }
  return codes;
}

Dataset synthesize(const CohortSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_patients;

  std::vector<int> labels(n, 0);
  std::fill_n(labels.begin(), std::min<std::size_t>(spec.positives(), n), 1);
  Rng label_rng(derive_seed(spec.seed, kLabelStream));
  label_rng.shuffle(std::span<int>(labels));

  const auto codes = lab_codes(spec.n_lab_codes);
  std::vector<LabStats> stats;
  Rng code_rng(derive_seed(spec.seed, kCodeStream));
  for (std::size_t k = 0; k < codes.size(); ++k) {
    const double mean = std::exp(code_rng.uniform(0.0, 5.0));
    stats.push_back({mean, mean * code_rng.uniform(0.1, 0.3)});
  }

  Dataset data;
  data.records.resize(n);
  data.plax.resize(n);
  data.a4c.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    PatientRecord& rec = data.records[i];
    rec.patient_id = patient_id(i, n);
    rec.label = labels[i];

    Rng latent(patient_seed(spec.seed, i, kLatent));
    const double sev_ehr = rec.label * spec.signal_ehr + latent.normal();
    const double sev_plax = rec.label * spec.signal_plax + latent.normal();
    const double sev_a4c = rec.label * spec.signal_a4c + latent.normal();
    const double metric_noise = latent.normal();

    Rng demo(patient_seed(spec.seed, i, kDemo));
    rec.age = std::round(clampd(demo.normal(66.1, 12.0), 18.0, 99.0));
    rec.sex = demo.bernoulli(27.0 / 41.0) ? "M" : "F";
    rec.race = demo.bernoulli(0.5) ? "White" : "Black";
    rec.sbp = std::round(clampd(demo.normal(121.6, 23.9), 70.0, 220.0));
    rec.dbp = std::round(clampd(demo.normal(72.5, 15.4), 40.0, 130.0));
    rec.weight_kg = std::round(10.0 * clampd(demo.normal(88.9, 19.8), 40.0, 200.0)) / 10.0;
    rec.height_m = std::round(100.0 * clampd(demo.normal(1.76, 0.1), 1.4, 2.1)) / 100.0;
    rec.bmi = rec.weight_kg / (rec.height_m * rec.height_m);

    auto& m = rec.cardiac_metrics;
    m[0] = 1.1 + 0.15 * (spec.metrics_follow_imaging ? sev_plax : metric_noise);
    m[1] = demo.normal(4.8, 0.6);
    m[2] = demo.normal(120.0, 30.0);
    m[3] = demo.normal(50.0, 15.0);
    m[4] = demo.normal(70.0, 15.0);
    m[5] = clampd(demo.normal(0.58, 0.08), 0.1, 0.85);
    m[6] = clampd(demo.normal(0.32, 0.06), 0.05, 0.6);
    m[7] = demo.normal(1.6, 0.2);

    Rng lab_rng(patient_seed(spec.seed, i, kLabs));
    for (std::size_t k = 0; k < codes.size(); ++k) {
      const bool missing = lab_rng.bernoulli(spec.lab_missingness);
      const double level = k < spec.n_signal_labs ? sev_ehr : lab_rng.normal();
      const int count = 1 + static_cast<int>(lab_rng.below(3));
      if (missing) continue;
      for (int o = 0; o < count; ++o) {
        LabObservation obs;
        obs.code = codes[k];
        obs.value = stats[k].mean + stats[k].sd * (level + 0.3 * lab_rng.normal());
        if (lab_rng.bernoulli(0.8)) {
          obs.days_from_echo = -90 + static_cast<int>(lab_rng.below(121));
        } else {
          const int far = 91 + static_cast<int>(lab_rng.below(275));
          obs.days_from_echo = lab_rng.bernoulli(0.5) ? -far : far - 60;
        }
        rec.labs.push_back(std::move(obs));
      }
    }

    Rng plax_rng(patient_seed(spec.seed, i, kPlax));
    data.plax[i] = render_echo_clip(View::PLAX, wall_param_for(sev_plax, spec.frame_size), plax_rng,
                                    spec.frames_per_clip, spec.frame_size);
    data.plax[i].patient_id = rec.patient_id;
    Rng a4c_rng(patient_seed(spec.seed, i, kA4c));
    data.a4c[i] = render_echo_clip(View::A4C, wall_param_for(sev_a4c, spec.frame_size), a4c_rng,
                                   spec.frames_per_clip, spec.frame_size);
    data.a4c[i].patient_id = rec.patient_id;
  }
  return data;
}

std::string CohortSpec::serialize() const {
  std::ostringstream os;
  os << "cardiofuse-cohort 1\n"
     << "seed = " << seed << "\n"
     << "n_patients = " << n_patients << "\n"
     << "prevalence = " << dataio::format_double(prevalence) << "\n"
     << "n_lab_codes = " << n_lab_codes << "\n"
     << "lab_missingness = " << dataio::format_double(lab_missingness) << "\n"
     << "signal_ehr = " << dataio::format_double(signal_ehr) << "\n"
     << "signal_plax = " << dataio::format_double(signal_plax) << "\n"
     << "signal_a4c = " << dataio::format_double(signal_a4c) << "\n"
     << "n_signal_labs = " << n_signal_labs << "\n"
     << "metrics_follow_imaging = " << (metrics_follow_imaging ? "true" : "false") << "\n"
     << "frames_per_clip = " << frames_per_clip << "\n"
     << "frame_size = " << frame_size << "\n"
     << "channels = " << channels << "\n";
  return os.str();
}

std::filesystem::path generate_cohort(const CohortSpec& spec, const std::filesystem::path& dir) {
  auto manifest = dataio::write_dataset(synthesize(spec), dir);
  dataio::write_text_file(dir / "cohort.txt", spec.serialize());
  return manifest;
}

}  // namespace cardiofuse::synth
