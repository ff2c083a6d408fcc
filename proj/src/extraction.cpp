#include "knobtuner/extraction.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "knobtuner/errors.hpp"

namespace knobtuner {

using nlohmann::json;

std::vector<std::string> chunk_manual_text(const std::string& text, std::size_t cap) {
  if (cap == 0) throw Error(ErrorCode::InvalidArgument, "chunk cap must be positive");
  std::vector<std::string> chunks;
  std::string current;
  auto flush = [&] {
    if (current.find_first_not_of(" \t\r\n") != std::string::npos) chunks.push_back(current);
    current.clear();
  };
  auto append = [&](const std::string& piece) {
    if (!current.empty() && current.size() + piece.size() > cap) flush();
    if (piece.size() <= cap) {
      current += piece;
      return;
    }
    for (std::size_t pos = 0; pos < piece.size(); pos += cap) {
      current = piece.substr(pos, cap);
      if (pos + cap < piece.size()) flush();
    }
  };

  // Paragraphs first; oversized paragraphs fall back to lines.
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find("\n\n", start);
    end = end == std::string::npos ? text.size() : end + 2;
    const std::string para = text.substr(start, end - start);
    if (para.size() <= cap) {
      append(para);
    } else {
      std::istringstream lines(para);
      std::string line;
      while (std::getline(lines, line)) append(line + "\n");
    }
    start = end;
  }
  flush();
  return chunks;
}

std::vector<std::string> load_manual_dir(const std::filesystem::path& dir, std::size_t cap) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorCode::ParseError, fmt::format("manual directory '{}' does not exist", dir.string()));
  }
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<std::string> chunks;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    for (auto& c : chunk_manual_text(ss.str(), cap)) chunks.push_back(std::move(c));
  }
  if (chunks.empty()) throw Error(ErrorCode::ParseError, fmt::format("no manual text found in '{}'", dir.string()));
  return chunks;
}

namespace {

constexpr const char* kIdentify =
    "Identify the configuration knobs described in the manual excerpt below that affect transaction "
    "throughput. Reply with JSON only: {\"knobs\": [{\"name\": \"<knob>\", \"description\": \"<what it "
    "controls>\", \"performance_relevant\": <bool>}]}";

constexpr const char* kAttributes =
    "For each knob listed, infer its type (integer, float, boolean, enum or string), unit, default, valid "
    "range or allowed values, and special values. Reply with JSON only: {\"knobs\": [{\"name\": \"<knob>\", "
    "\"type\": \"<type>\", \"unit\": \"<unit>\", \"default\": <value>, \"range\": {\"min\": <n>, \"max\": <n>, "
    "\"step\": <n>} or \"values\": [...], \"special_values\": [{\"value\": <v>, \"meaning\": \"<text>\"}]}]}";

constexpr const char* kCluster =
    "Group the knobs below into functional clusters that follow the transaction pipeline (gateway, "
    "execution, ordering, validation/commit) and system components such as resource management and "
    "networking. Reply with JSON only: {\"clusters\": [{\"id\": \"<id>\", \"role\": \"<role>\", "
    "\"description\": \"<text>\"}], \"knobs\": [{\"name\": \"<knob>\", \"cluster\": \"<id>\"}]}";

using Check = bool (*)(const json&);

bool has_knobs(const json& j) { return j.is_object() && j.contains("knobs") && j["knobs"].is_array(); }
bool has_clusters(const json& j) { return has_knobs(j) && j.contains("clusters") && j["clusters"].is_array(); }

json ask(DecisionBackend& backend, const std::string& prompt, Check check, const char* stage) {
  std::string last;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const auto texts = backend.complete(prompt, 1);
    if (texts.empty()) {
      last = "empty reply";
      continue;
    }
    try {
      json j = extract_json(texts.front());
      if (check(j)) return j;
      last = "reply does not follow the requested format";
    } catch (const Error& e) {
      last = e.what();
    }
    spdlog::warn("extraction {} stage: {}", stage, last);
  }
  throw Error(ErrorCode::ExtractionRejected, fmt::format("{} stage rejected after retry: {}", stage, last));
}

std::string knob_names(const json& knobs) {
  std::string out;
  for (const auto& k : knobs) {
    if (k.is_object() && k.contains("name") && k["name"].is_string()) out += "- " + k["name"].get<std::string>() + "\n";
  }
  return out;
}

}  // namespace

KnobKnowledge extract_knob_knowledge(const std::vector<std::string>& chunks, DecisionBackend& backend) {
  if (chunks.empty()) throw Error(ErrorCode::InvalidArgument, "no manual text to extract from");

  std::vector<json> records;
  std::map<std::string, json> clusters;
  std::vector<std::string> cluster_order;
  std::set<std::string> seen;

  for (const auto& chunk : chunks) {
    const json identified = ask(backend, std::string(kIdentify) + "\n\n## Manual\n" + chunk, has_knobs, "identify");
    const json& idknobs = identified["knobs"];
    if (idknobs.empty()) continue;
    const json attributes = ask(
        backend, std::string(kAttributes) + "\n\n## Knobs\n" + knob_names(idknobs) + "\n## Manual\n" + chunk, has_knobs,
        "attribute");
    const json grouped = ask(backend, std::string(kCluster) + "\n\n## Knobs\n" + knob_names(idknobs), has_clusters, "cluster");

    std::map<std::string, json> attrs;
    for (const auto& a : attributes["knobs"]) {
      if (a.is_object() && a.contains("name") && a["name"].is_string()) attrs.emplace(a["name"].get<std::string>(), a);
    }
    std::map<std::string, std::string> assignment;
    for (const auto& g : grouped["knobs"]) {
      if (g.is_object() && g.contains("name") && g.contains("cluster") && g["name"].is_string() && g["cluster"].is_string()) {
        assignment.emplace(g["name"].get<std::string>(), g["cluster"].get<std::string>());
      }
    }
    for (const auto& c : grouped["clusters"]) {
      if (!c.is_object() || !c.contains("id") || !c["id"].is_string()) {
        spdlog::warn("extraction: dropping malformed cluster {}", c.dump());
        continue;
      }
      const std::string id = c["id"];
      if (clusters.emplace(id, c).second) cluster_order.push_back(id);
    }

    for (const auto& k : idknobs) {
      if (!k.is_object() || !k.contains("name") || !k["name"].is_string()) {
        spdlog::warn("extraction: dropping unnamed knob record {}", k.dump());
        continue;
      }
      const std::string name = k["name"];
      if (seen.count(name)) continue;
      const auto a = attrs.find(name);
      const auto g = assignment.find(name);
      if (a == attrs.end() || g == assignment.end()) {
        spdlog::warn("extraction: dropping knob '{}' without {}", name, a == attrs.end() ? "attributes" : "a cluster");
        continue;
      }
      json record = a->second;
      record["name"] = name;
      record["description"] = k.value("description", record.value("description", std::string{}));
      record["performance_relevant"] = k.value("performance_relevant", true);
      record["cluster"] = g->second;
      const auto cluster = clusters.find(g->second);
      if (cluster == clusters.end()) {
        spdlog::warn("extraction: dropping knob '{}' assigned to unknown cluster '{}'", name, g->second);
        continue;
      }
      try {
        (void)parse_knob_knowledge({{"knobs", json::array({record})}, {"clusters", json::array({cluster->second})}});
      } catch (const SchemaViolation& e) {
        spdlog::warn("extraction: dropping knob '{}': {}", name, e.what());
        continue;
      }
      seen.insert(name);
      records.push_back(std::move(record));
    }
  }

  json doc = {{"knobs", records}, {"clusters", json::array()}};
  for (const auto& id : cluster_order) {
    const bool used = std::any_of(records.begin(), records.end(), [&](const json& r) { return r["cluster"] == id; });
    if (used) {
      doc["clusters"].push_back(clusters[id]);
    } else {
      spdlog::warn("extraction: dropping cluster '{}' with no knobs", id);
    }
  }
  if (records.empty()) throw Error(ErrorCode::ExtractionRejected, "no valid knob records were extracted");
  return parse_knob_knowledge(doc, "extracted");
}

}  // namespace knobtuner
