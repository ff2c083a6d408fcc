#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "knobtuner/backend.hpp"
#include "knobtuner/errors.hpp"
#include "knobtuner/extraction.hpp"

using namespace knobtuner;
using nlohmann::json;

namespace {

const json kIdentified = {{"knobs",
                           {{{"name", "BatchTimeout"}, {"description", "wait before cutting a block"}, {"performance_relevant", true}},
                            {{"name", "BlockSize"}, {"description", "transactions per block"}, {"performance_relevant", true}}}}};

const json kAttributes = {
    {"knobs",
     {{{"name", "BatchTimeout"}, {"type", "integer"}, {"unit", "ms"}, {"default", 2000}, {"range", {{"min", 100}, {"max", 10000}}}},
      {{"name", "BlockSize"}, {"type", "integer"}, {"unit", ""}, {"default", 500}, {"range", {{"min", 1}, {"max", 2000}}},
       {"special_values", {{{"value", 0}, {"meaning", "unlimited"}}}}}}}};

const json kGrouped = {{"clusters", {{{"id", "ordering"}, {"role", "ordering"}, {"description", "block cutting"}}}},
                       {"knobs", {{{"name", "BatchTimeout"}, {"cluster", "ordering"}}, {{"name", "BlockSize"}, {"cluster", "ordering"}}}}};

}  // namespace

TEST(Extraction, WellFormedRepliesPassThrough) {
  ScriptedBackend backend({kIdentified.dump(), "```json\n" + kAttributes.dump() + "\n```", kGrouped.dump()});
  const KnobKnowledge kk = extract_knob_knowledge({"BatchTimeout: ... BlockSize: ..."}, backend);
  ASSERT_EQ(kk.records.size(), 2u);
  ASSERT_EQ(kk.clusters.size(), 1u);
  const Knob* bt = kk.find("BatchTimeout");
  ASSERT_NE(bt, nullptr);
  EXPECT_EQ(bt->unit, "ms");
  EXPECT_EQ(std::get<IntRange>(bt->domain).max, 10000);
  EXPECT_EQ(bt->description, "wait before cutting a block");
  const Knob* bs = kk.find("BlockSize");
  ASSERT_EQ(bs->special_values.size(), 1u);
  EXPECT_EQ(backend.prompts().size(), 3u);
}

TEST(Extraction, StageThreeKeepsGroupedKnobsTogether) {
  ScriptedBackend backend({kIdentified.dump(), kAttributes.dump(), kGrouped.dump()});
  const KnobKnowledge kk = extract_knob_knowledge({"manual"}, backend);
  EXPECT_EQ(kk.find("BatchTimeout")->cluster_id, kk.find("BlockSize")->cluster_id);
  const ConfigSpace space = build_space(kk);  // cluster partition holds
  EXPECT_EQ(space.knobs_in_cluster("ordering").size(), 2u);
}

TEST(Extraction, MalformedTwiceIsRejected) {
  ScriptedBackend backend({"not json", "{\"still\": \"wrong\"}"});
  try {
    extract_knob_knowledge({"manual"}, backend);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ExtractionRejected);
  }
}

TEST(Extraction, MalformedOnceIsRetried) {
  ScriptedBackend backend({"garbage", kIdentified.dump(), kAttributes.dump(), kGrouped.dump()});
  EXPECT_EQ(extract_knob_knowledge({"manual"}, backend).records.size(), 2u);
}

TEST(Extraction, InvalidRecordsAreDropped) {
  json attrs = kAttributes;
  attrs["knobs"][1]["default"] = 99999;  // outside its own range
  ScriptedBackend backend({kIdentified.dump(), attrs.dump(), kGrouped.dump()});
  const KnobKnowledge kk = extract_knob_knowledge({"manual"}, backend);
  ASSERT_EQ(kk.records.size(), 1u);
  EXPECT_EQ(kk.records[0].name, "BatchTimeout");
}

TEST(Extraction, UnusedClustersAreDropped) {
  json grouped = kGrouped;
  grouped["clusters"].push_back({{"id", "empty"}, {"role", "nothing"}, {"description", ""}});
  ScriptedBackend backend({kIdentified.dump(), kAttributes.dump(), grouped.dump()});
  EXPECT_EQ(extract_knob_knowledge({"manual"}, backend).clusters.size(), 1u);
}

TEST(Extraction, BackendWithoutCompletionIsUnavailable) {
  struct Silent : DecisionBackend {
    std::string name() const override { return "silent"; }
    bool supports_sampling() const override { return false; }
  } silent;
  try {
    extract_knob_knowledge({"manual"}, silent);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BackendUnavailable);
  }
}

TEST(ManualChunks, RespectCapAndParagraphs) {
  std::string text;
  for (int i = 0; i < 50; ++i) text += "Paragraph " + std::to_string(i) + " " + std::string(90, 'x') + "\n\n";
  const auto chunks = chunk_manual_text(text, 500);
  std::string joined;
  for (const auto& c : chunks) {
    EXPECT_LE(c.size(), 500u);
    joined += c;
  }
  EXPECT_EQ(joined, text);
  EXPECT_EQ(chunk_manual_text(std::string(1200, 'y'), 500).size(), 3u);
}

TEST(ManualChunks, LoadDirSortedByName) {
  const auto dir = std::filesystem::temp_directory_path() / "knobtuner-unit-manual";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "b.txt") << "second";
  std::ofstream(dir / "a.txt") << "first";
  EXPECT_EQ(load_manual_dir(dir), (std::vector<std::string>{"first", "second"}));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  EXPECT_THROW(load_manual_dir(dir), Error);
}
