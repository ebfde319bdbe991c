#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "cardiofuse/dataio.hpp"
#include "cardiofuse/error.hpp"
#include "cardiofuse/synthcohort.hpp"
#include "test_util.hpp"

using namespace cardiofuse;
namespace fs = std::filesystem;

namespace {

EchoClip small_clip(std::uint32_t frames = 30) {
  EchoClip c;
  c.patient_id = "X";
  c.frames = frames;
  c.height = 16;
  c.width = 16;
  c.pixels.resize(std::size_t{frames} * 16 * 16);
  Rng rng(3);
  for (float& p : c.pixels) p = static_cast<float>(rng.uniform());
  return c;
}

template <typename E>
std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const E& e) {
    return e.what();
  }
  return "<no error>";
}

TEST(ClipFormat, RoundtripIsBitExact) {
  EchoClip c = small_clip(33);
  c.pixels[5] = 0.0f;
  c.pixels[6] = 1.0f;
  c.pixels[7] = std::nextafter(0.5f, 1.0f);
  const auto bytes = dataio::encode_clip(c);
  ASSERT_EQ(bytes.size(), 20u + 4u * c.pixels.size());
  const EchoClip back = dataio::decode_clip(bytes);
  EXPECT_EQ(back.frames, 33u);
  EXPECT_EQ(back.height, 16u);
  EXPECT_EQ(back.width, 16u);
  EXPECT_EQ(back.channels, 1u);
  ASSERT_EQ(back.pixels.size(), c.pixels.size());
  EXPECT_EQ(std::memcmp(back.pixels.data(), c.pixels.data(), c.pixels.size() * sizeof(float)), 0);
}

TEST(ClipFormat, FileRoundtrip) {
  const auto dir = cftest::temp_dir("clip_file");
  const EchoClip c = small_clip();
  dataio::write_clip(c, dir / "a.ecv");
  const EchoClip back = dataio::read_clip(dir / "a.ecv");
  EXPECT_EQ(back.pixels, c.pixels);
}

TEST(ClipFormat, HeaderIsLittleEndian) {
  const auto bytes = dataio::encode_clip(small_clip(31));
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "ECV1");
  EXPECT_EQ(bytes[4], 31);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[8], 16);
  EXPECT_EQ(bytes[16], 1);
  // 1.0f = 0x3f800000 stored low byte first.
  EchoClip one = small_clip();
  one.pixels.assign(one.pixels.size(), 1.0f);
  const auto b1 = dataio::encode_clip(one);
  EXPECT_EQ(b1[20], 0x00);
  EXPECT_EQ(b1[22], 0x80);
  EXPECT_EQ(b1[23], 0x3f);
}

TEST(ClipFormat, BadMagic) {
  auto bytes = dataio::encode_clip(small_clip());
  bytes[0] = 'X';
  EXPECT_NE(error_of<FormatError>([&] { dataio::decode_clip(bytes); }).find("bad magic"), std::string::npos);
}

TEST(ClipFormat, TruncatedHeaderAndPayload) {
  auto bytes = dataio::encode_clip(small_clip());
  std::vector<unsigned char> header(bytes.begin(), bytes.begin() + 10);
  EXPECT_NE(error_of<FormatError>([&] { dataio::decode_clip(header); }).find("truncated header"), std::string::npos);
  bytes.resize(bytes.size() - 4);
  EXPECT_NE(error_of<FormatError>([&] { dataio::decode_clip(bytes); }).find("truncated payload"), std::string::npos);
}

TEST(ClipFormat, DimensionMismatch) {
  auto bytes = dataio::encode_clip(small_clip());
  bytes.insert(bytes.end(), {0, 0, 0, 0});
  EXPECT_NE(error_of<FormatError>([&] { dataio::decode_clip(bytes); }).find("dimension mismatch"), std::string::npos);
}

TEST(ClipFormat, ErrorsAreDistinct) {
  auto good = dataio::encode_clip(small_clip());
  auto magic = good, trunc = good, extra = good;
  magic[1] = 'Z';
  trunc.pop_back();
  extra.push_back(0);
  std::set<std::string> messages;
  for (auto* b : {&magic, &trunc, &extra}) messages.insert(error_of<FormatError>([&] { dataio::decode_clip(*b); }));
  EXPECT_EQ(messages.size(), 3u);
}

TEST(ClipFormat, ShortClipRejectedCitingThirtyFrames) {
  // encode_clip refuses short clips, so patch a valid header down to T = 10.
  auto bytes = dataio::encode_clip(small_clip(30));
  bytes[4] = 10;
  bytes.resize(20 + 4 * 10 * 16 * 16);
  const std::string msg = error_of<ValidationError>([&] { dataio::decode_clip(bytes); });
  EXPECT_NE(msg.find("30"), std::string::npos) << msg;
}

TEST(ClipFormat, OutOfRangePixelRejected) {
  EchoClip c = small_clip();
  c.pixels[0] = 1.5f;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(ClipFormat, MissingFile) { EXPECT_THROW(dataio::read_clip("/nonexistent/x.ecv"), LoadError); }

class DatasetFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    synth::CohortSpec s;
    s.n_patients = 20;
    s.prevalence = 0.5;
    s.seed = 1;
    dir_ = cftest::temp_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    manifest_ = synth::generate_cohort(s, dir_);
  }
  void rewrite_manifest(const std::function<std::string(std::string)>& edit) {
    dataio::write_text_file(manifest_, edit(dataio::read_text_file(manifest_)));
  }
  fs::path dir_, manifest_;
};

TEST_F(DatasetFiles, TwentyRowsGiveTwentyRecordsFortyClips) {
  dataio::LoadSummary sum;
  const Dataset d = dataio::load_dataset(manifest_, &sum);
  EXPECT_EQ(sum.records, 20u);
  EXPECT_EQ(sum.clips, 40u);
  EXPECT_EQ(d.size(), 20u);
  EXPECT_EQ(d.plax.size(), 20u);
  EXPECT_EQ(d.a4c.size(), 20u);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(d.plax[i].patient_id, d.records[i].patient_id);
    EXPECT_EQ(d.plax[i].view, View::PLAX);
    EXPECT_EQ(d.a4c[i].view, View::A4C);
  }
}

TEST_F(DatasetFiles, LoadedDatasetMatchesSynthesized) {
  synth::CohortSpec s;
  s.n_patients = 20;
  s.prevalence = 0.5;
  s.seed = 1;
  const Dataset want = synth::synthesize(s);
  const Dataset got = dataio::load_dataset(manifest_);
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_EQ(got.records[i].patient_id, want.records[i].patient_id);
    EXPECT_EQ(got.records[i].age, want.records[i].age);
    EXPECT_EQ(got.records[i].cardiac_metrics, want.records[i].cardiac_metrics);
    ASSERT_EQ(got.records[i].labs.size(), want.records[i].labs.size());
    for (std::size_t j = 0; j < got.records[i].labs.size(); ++j) {
      EXPECT_EQ(got.records[i].labs[j].value, want.records[i].labs[j].value);
    }
    EXPECT_EQ(got.plax[i].pixels, want.plax[i].pixels);
  }
  EXPECT_EQ(cv::dataset_fingerprint(got), cv::dataset_fingerprint(want));
}

TEST_F(DatasetFiles, MissingClipNamesPath) {
  const Dataset d = dataio::load_dataset(manifest_);
  const auto rows = dataio::read_csv(manifest_, {"patient_id", "label", "plax_path", "a4c_path"});
  fs::remove(dir_ / rows[3][2]);
  const std::string msg = error_of<LoadError>([&] { dataio::load_dataset(manifest_); });
  EXPECT_NE(msg.find(rows[3][2]), std::string::npos) << msg;
}

TEST_F(DatasetFiles, DuplicateIdNamed) {
  rewrite_manifest([](std::string m) {
    const auto first = m.find('\n') + 1;
    const auto second = m.find('\n', first) + 1;
    return m + m.substr(first, second - first);
  });
  const std::string msg = error_of<LoadError>([&] { dataio::load_dataset(manifest_); });
  EXPECT_NE(msg.find("duplicate patient_id P0001"), std::string::npos) << msg;
}

TEST_F(DatasetFiles, UnknownViewTagRejected) {
  rewrite_manifest([](std::string m) { return "patient_id,label,plax_path,psax_path" + m.substr(m.find('\n')); });
  EXPECT_THROW(dataio::load_dataset(manifest_), LoadError);
}

TEST_F(DatasetFiles, MissingManifest) { EXPECT_THROW(dataio::load_dataset(dir_ / "nope.csv"), LoadError); }

TEST_F(DatasetFiles, BadLabelNamesRow) {
  rewrite_manifest([](std::string m) {
    const auto pos = m.find("P0002,");
    m[pos + 6] = '7';
    return m;
  });
  const std::string msg = error_of<LoadError>([&] { dataio::load_dataset(manifest_); });
  EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
}

TEST(Csv, SplitAndFormat) {
  EXPECT_EQ(dataio::split_csv_line("a,b,,c"), (std::vector<std::string>{"a", "b", "", "c"}));
  EXPECT_EQ(dataio::parse_double(dataio::format_double(0.1), "x"), 0.1);
  EXPECT_EQ(dataio::parse_double(dataio::format_double(1.0 / 3.0), "x"), 1.0 / 3.0);
  EXPECT_THROW(dataio::parse_double("abc", "ctx"), LoadError);
  EXPECT_THROW(dataio::parse_long("1.5", "ctx"), LoadError);
}

}  // namespace
