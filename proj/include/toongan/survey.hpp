#pragma once

// Ranking survey backend: definition, per-participant sessions, validated
// ranking submissions on an append-only JSON-lines log, and the mean-rank
// report. Effective state is a fold over the log; a resubmitted task
// replaces the earlier answer.

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "toongan/errors.hpp"
#include "toongan/random.hpp"

namespace toongan::survey {

using nlohmann::json;

inline const std::vector<std::string>& default_models() {
  static const std::vector<std::string> m = {"cartoongan", "ganilla", "ours"};
  return m;
}

inline std::string default_prompt(const std::string& question) {
  if (question == "aesthetic") return "rank the following images according to aesthetic/visual appeal";
  if (question == "cartoon") {
    return "rank the following images according to how much the image resembles a cartoon (i.e. illustrated photo or "
           "anime)";
  }
  return "";
}

struct Question {
  std::string id;
  std::string prompt;
};

struct TaskImage {
  std::string model;
  std::filesystem::path path;
};

struct Task {
  std::string id;
  std::string question;
  std::string source;  // id of the common source image
  std::vector<TaskImage> images;
};

struct SurveyDefinition {
  std::vector<Question> questions;
  std::vector<std::string> models = default_models();
  std::vector<Task> tasks;

  void validate() const {
    if (questions.size() != 2) throw ConfigError("survey needs exactly 2 questions");
    if (models.size() != 3 || std::set<std::string>(models.begin(), models.end()).size() != 3) {
      throw ConfigError("survey needs exactly 3 distinct models");
    }
    if (tasks.size() != 20) throw ConfigError("survey needs 20 tasks, got " + std::to_string(tasks.size()));
    std::set<std::string> ids;
    std::map<std::string, std::size_t> per_question;
    for (const auto& q : questions) per_question[q.id] = 0;
    if (per_question.size() != 2) throw ConfigError("question ids must be distinct");
    for (const auto& t : tasks) {
      if (t.id.empty() || !ids.insert(t.id).second) throw ConfigError("task id '" + t.id + "' is empty or repeated");
      auto it = per_question.find(t.question);
      if (it == per_question.end()) throw ConfigError("task " + t.id + " names unknown question '" + t.question + "'");
      ++it->second;
      std::set<std::string> seen;
      for (const auto& img : t.images) {
        if (std::find(models.begin(), models.end(), img.model) == models.end()) {
          throw ConfigError("task " + t.id + " uses unknown model '" + img.model + "'");
        }
        seen.insert(img.model);
      }
      if (t.images.size() != 3 || seen.size() != 3) throw ConfigError("task " + t.id + " needs one image per model");
    }
    for (const auto& [q, n] : per_question)
      if (n != 10) throw ConfigError("question '" + q + "' has " + std::to_string(n) + " tasks, expected 10");
  }

  const Task& task(const std::string& id) const {
    for (const auto& t : tasks)
      if (t.id == id) return t;
    throw NotFoundError("unknown task '" + id + "'");
  }

  const Question& question(const std::string& id) const {
    for (const auto& q : questions)
      if (q.id == id) return q;
    throw NotFoundError("unknown question '" + id + "'");
  }
};

/// Definition file format:
///   {"questions": [{"id": "aesthetic", "prompt": "..."}, ...],
///    "models": ["cartoongan", "ganilla", "ours"],
///    "tasks": [{"id": "t01", "question": "aesthetic", "source": "s01",
///               "images": {"cartoongan": "a.png", "ganilla": "b.png", "ours": "c.png"}}, ...]}
/// Prompts default to the published wording; image paths are relative to `base`.
inline SurveyDefinition parse_definition(const json& j, const std::filesystem::path& base = {}) {
  SurveyDefinition def;
  try {
    for (const auto& q : j.at("questions")) {
      Question out{q.at("id").get<std::string>(), q.value("prompt", std::string())};
      if (out.prompt.empty()) out.prompt = default_prompt(out.id);
      def.questions.push_back(out);
    }
    if (j.contains("models")) def.models = j.at("models").get<std::vector<std::string>>();
    for (const auto& t : j.at("tasks")) {
      Task task{t.at("id").get<std::string>(), t.at("question").get<std::string>(), t.value("source", std::string()), {}};
      for (const auto& model : def.models) {
        if (t.at("images").contains(model)) task.images.push_back({model, base / t.at("images").at(model).get<std::string>()});
      }
      def.tasks.push_back(task);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("survey definition: ") + e.what());
  }
  def.validate();
  return def;
}

inline SurveyDefinition load_definition(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read survey definition " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("survey definition " + path.string() + ": " + e.what());
  }
  return parse_definition(j, path.parent_path());
}

struct RankingRecord {
  std::string participant_id;
  std::string task_id;
  std::string question_id;
  std::map<std::string, int> rankings;  // model -> rank, 1 agrees most
  std::vector<std::string> image_order;   // models in the order they were shown
  std::string submitted_at;
};

/// Throws ValidationError unless `rankings` maps exactly `models` onto {1, 2, 3}.
inline void validate_ranking(const std::map<std::string, int>& rankings, const std::vector<std::string>& models) {
  if (rankings.size() != models.size()) throw ValidationError("expected ranks for exactly 3 images");
  std::set<int> ranks;
  for (const auto& m : models) {
    auto it = rankings.find(m);
    if (it == rankings.end()) throw ValidationError("missing rank for an image of this task");
    if (it->second < 1 || it->second > 3) throw ValidationError("ranks must be 1, 2 or 3");
    ranks.insert(it->second);
  }
  if (ranks.size() != 3) throw ValidationError("ranks must be a permutation of 1, 2, 3");
}

struct ModelRank {
  std::string model;
  std::uint64_t rank_sum = 0;
  std::uint64_t count = 0;

  double mean() const { return count ? static_cast<double>(rank_sum) / static_cast<double>(count) : 0.0; }
};

struct QuestionRanks {
  std::string question;
  std::vector<ModelRank> models;
};

struct MeanRankReport {
  std::vector<QuestionRanks> questions;
  std::size_t records = 0;  // effective records

  const ModelRank& at(const std::string& question, const std::string& model) const {
    for (const auto& q : questions)
      if (q.question == question)
        for (const auto& m : q.models)
          if (m.model == model) return m;
    throw NotFoundError("report has no entry for " + question + "/" + model);
  }
};

/// Later records for the same (participant, task) replace earlier ones.
inline std::vector<RankingRecord> effective_records(const std::vector<RankingRecord>& log) {
  std::map<std::pair<std::string, std::string>, std::size_t> last;
  for (std::size_t i = 0; i < log.size(); ++i) last[{log[i].participant_id, log[i].task_id}] = i;
  std::vector<std::size_t> keep;
  for (const auto& [key, i] : last) keep.push_back(i);
  std::sort(keep.begin(), keep.end());
  std::vector<RankingRecord> out;
  for (std::size_t i : keep) out.push_back(log[i]);
  return out;
}

/// Mean rank per (question, model) over the effective records. Rows follow
/// `questions` and `models`; ids not listed there are appended in sorted order.
inline MeanRankReport mean_rank_report(const std::vector<RankingRecord>& log,
                                       std::vector<std::string> questions = {"aesthetic", "cartoon"},
                                       std::vector<std::string> models = default_models()) {
  const auto records = effective_records(log);
  std::map<std::string, std::map<std::string, ModelRank>> acc;
  std::set<std::string> extra_q, extra_m;
  for (const auto& r : records) {
    if (std::find(questions.begin(), questions.end(), r.question_id) == questions.end()) extra_q.insert(r.question_id);
    for (const auto& [m, rank] : r.rankings) {
      if (std::find(models.begin(), models.end(), m) == models.end()) extra_m.insert(m);
      auto& cell = acc[r.question_id][m];
      cell.rank_sum += static_cast<std::uint64_t>(rank);
      ++cell.count;
    }
  }
  questions.insert(questions.end(), extra_q.begin(), extra_q.end());
  models.insert(models.end(), extra_m.begin(), extra_m.end());
  MeanRankReport report;
  report.records = records.size();
  for (const auto& q : questions) {
    QuestionRanks row{q, {}};
    for (const auto& m : models) {
      ModelRank cell = acc[q][m];
      cell.model = m;
      row.models.push_back(cell);
    }
    report.questions.push_back(row);
  }
  return report;
}

/// Two-decimal display; the only place rounding happens.
inline std::string format_rank(double mean) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", mean);
  return buf;
}

inline json report_to_json(const MeanRankReport& r) {
  json out = {{"records", r.records}, {"questions", json::array()}};
  for (const auto& q : r.questions) {
    json row = {{"question", q.question}, {"models", json::array()}};
    for (const auto& m : q.models) {
      row["models"].push_back({{"model", m.model},
                               {"mean_rank", m.mean()},
                               {"display", format_rank(m.mean())},
                               {"rank_sum", m.rank_sum},
                               {"count", m.count}});
    }
    out["questions"].push_back(row);
  }
  return out;
}

/// Plain-text table, one row per question.
inline std::string render_report(const MeanRankReport& r) {
  std::ostringstream out;
  if (r.questions.empty()) return "no questions\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-12s", "question");
  out << buf;
  for (const auto& m : r.questions.front().models) {
    std::snprintf(buf, sizeof buf, " %12s", m.model.c_str());
    out << buf;
  }
  out << "  responses\n";
  for (const auto& q : r.questions) {
    std::snprintf(buf, sizeof buf, "%-12s", q.question.c_str());
    out << buf;
    std::uint64_t n = 0;
    for (const auto& m : q.models) {
      std::snprintf(buf, sizeof buf, " %12s", m.count ? format_rank(m.mean()).c_str() : "-");
      out << buf;
      n = std::max(n, m.count);
    }
    out << "  " << n << "\n";
  }
  return out.str();
}

struct SessionTask {
  std::string task_id;
  std::vector<std::string> image_order;  // models, in display order
};

struct Session {
  std::string participant_id;
  std::vector<SessionTask> tasks;  // display order
  std::string created_at;

  const SessionTask* find(const std::string& task_id) const {
    for (const auto& t : tasks)
      if (t.task_id == task_id) return &t;
    return nullptr;
  }
};

/// Seeded session: tasks grouped by question (part 1, then part 2), shuffled
/// within each part, and each task's three images shuffled independently.
inline Session new_session(const SurveyDefinition& def, std::uint64_t seed, std::string participant_id,
                           std::string created_at = {}) {
  Rng rng(derive_seed(seed, "session"));
  Session s{std::move(participant_id), {}, std::move(created_at)};
  for (const auto& q : def.questions) {
    std::vector<const Task*> part;
    for (const auto& t : def.tasks)
      if (t.question == q.id) part.push_back(&t);
    rng.shuffle(part.begin(), part.end());
    for (const Task* t : part) {
      SessionTask st{t->id, {}};
      for (const auto& img : t->images) st.image_order.push_back(img.model);
      rng.shuffle(st.image_order.begin(), st.image_order.end());
      s.tasks.push_back(st);
    }
  }
  return s;
}

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace detail {

inline json session_to_log(const Session& s, std::uint64_t seed) {
  json tasks = json::array();
  for (const auto& t : s.tasks) tasks.push_back({{"task_id", t.task_id}, {"image_order", t.image_order}});
  return {{"type", "session"},
          {"participant_id", s.participant_id},
          {"seed", seed},
          {"tasks", tasks},
          {"created_at", s.created_at}};
}

inline Session session_from_log(const json& j) {
  Session s{j.at("participant_id").get<std::string>(), {}, j.value("created_at", std::string())};
  for (const auto& t : j.at("tasks")) {
    s.tasks.push_back({t.at("task_id").get<std::string>(), t.at("image_order").get<std::vector<std::string>>()});
  }
  return s;
}

inline json record_to_log(const RankingRecord& r, const std::string& nonce) {
  json j = {{"type", "response"},
            {"participant_id", r.participant_id},
            {"task_id", r.task_id},
            {"question_id", r.question_id},
            {"rankings", r.rankings},
            {"image_order", r.image_order},
            {"submitted_at", r.submitted_at}};
  if (!nonce.empty()) j["nonce"] = nonce;
  return j;
}

inline RankingRecord record_from_log(const json& j) {
  return {j.at("participant_id").get<std::string>(),
          j.at("task_id").get<std::string>(),
          j.at("question_id").get<std::string>(),
          j.at("rankings").get<std::map<std::string, int>>(),
          j.value("image_order", std::vector<std::string>()),
          j.value("submitted_at", std::string())};
}

}  // namespace detail

struct LogContents {
  std::vector<Session> sessions;
  std::vector<RankingRecord> records;
  std::vector<std::string> nonces;  // parallel to records; empty when absent
  std::size_t skipped_tail = 0;     // 1 if a torn final line was ignored
};

/// Reads a record log. A malformed final line (a write cut short) is skipped;
/// a malformed line anywhere else is an error.
inline LogContents read_log(const std::filesystem::path& path) {
  LogContents out;
  std::ifstream in(path);
  if (!in) return out;
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) lines.push_back(line);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      const json j = json::parse(lines[i]);
      const std::string type = j.at("type").get<std::string>();
      if (type == "session") {
        out.sessions.push_back(detail::session_from_log(j));
      } else if (type == "response") {
        out.records.push_back(detail::record_from_log(j));
        out.nonces.push_back(j.value("nonce", std::string()));
      } else {
        throw IoError("unknown record type '" + type + "'");
      }
    } catch (const std::exception& e) {
      if (i + 1 == lines.size()) {
        out.skipped_tail = 1;
        break;
      }
      throw IoError(path.string() + " line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

/// A client's answer for one task, keyed by the opaque image ids it was shown.
struct Submission {
  std::string task_id;
  std::map<std::string, int> rankings;  // image id -> rank
  std::string nonce;                    // optional client submission id
};

struct SubmitResult {
  bool duplicate = false;  // same nonce and payload seen before; nothing appended
  std::size_t answered = 0;
};

/// Session and ranking store backed by the record log. Mutations serialize on
/// one writer lock and publish a fresh immutable snapshot; readers only load
/// the current snapshot.
class SurveyService {
 public:
  struct Snapshot {
    std::map<std::string, std::shared_ptr<const Session>> sessions;
    std::vector<RankingRecord> log;  // every accepted submission, log order
    std::map<std::pair<std::string, std::string>, std::string> nonces;  // (pid, nonce) -> payload digest
  };

  SurveyService(SurveyDefinition def, std::filesystem::path log_path, std::uint64_t seed = 42)
      : def_(std::move(def)), log_path_(std::move(log_path)), seed_(seed) {
    def_.validate();
    for (const auto& t : def_.tasks)
      for (const auto& img : t.images) images_[image_id(t.id, img.model)] = {t.id, img.model};
    auto snap = std::make_shared<Snapshot>();
    const LogContents existing = read_log(log_path_);
    for (const auto& s : existing.sessions) snap->sessions[s.participant_id] = std::make_shared<const Session>(s);
    for (std::size_t i = 0; i < existing.records.size(); ++i) {
      snap->log.push_back(existing.records[i]);
      if (!existing.nonces[i].empty()) {
        snap->nonces[{existing.records[i].participant_id, existing.nonces[i]}] = digest(existing.records[i]);
      }
    }
    session_counter_ = existing.sessions.size();
    std::atomic_store(&snapshot_, std::shared_ptr<const Snapshot>(std::move(snap)));
    if (!log_path_.parent_path().empty()) std::filesystem::create_directories(log_path_.parent_path());
    out_.open(log_path_, std::ios::app | std::ios::binary);
    if (!out_) throw IoError("cannot open survey log " + log_path_.string());
  }

  const SurveyDefinition& definition() const { return def_; }
  std::shared_ptr<const Snapshot> snapshot() const { return std::atomic_load(&snapshot_); }

  /// Opaque, stable id for one stylized image. It is a hash of the seed,
  /// task and model, so it reveals nothing about the model to the client.
  std::string image_id(const std::string& task_id, const std::string& model) const {
    return hex64(derive_seed(seed_, "image/" + task_id + "/" + model));
  }

  /// (task, model) behind an image id.
  std::optional<std::pair<std::string, std::string>> resolve_image(const std::string& id) const {
    auto it = images_.find(id);
    if (it == images_.end()) return std::nullopt;
    return it->second;
  }

  std::shared_ptr<const Session> create_session() {
    std::lock_guard lock(write_);
    auto snap = std::make_shared<Snapshot>(*snapshot());
    std::string pid;
    std::uint64_t session_seed = 0;
    do {
      const std::uint64_t n = session_counter_++;
      session_seed = derive_seed(seed_, "participant", n);
      pid = hex64(session_seed) + hex64(derive_seed(session_seed, "token"));
    } while (snap->sessions.count(pid));
    auto session = std::make_shared<const Session>(new_session(def_, session_seed, pid, utc_now()));
    append(detail::session_to_log(*session, session_seed));
    snap->sessions[pid] = session;
    std::atomic_store(&snapshot_, std::shared_ptr<const Snapshot>(std::move(snap)));
    return session;
  }

  std::shared_ptr<const Session> session(const std::string& pid) const {
    const auto snap = snapshot();
    auto it = snap->sessions.find(pid);
    if (it == snap->sessions.end()) throw NotFoundError("unknown participant '" + pid + "'");
    return it->second;
  }

  /// Validates and appends one answer. ValidationError for malformed ranks,
  /// NotFoundError for unknown sessions or tasks outside the session,
  /// ConflictError when a nonce is replayed with a different answer.
  SubmitResult submit(const std::string& pid, const Submission& sub) {
    const auto s = session(pid);
    const SessionTask* st = s->find(sub.task_id);
    if (!st) throw NotFoundError("task '" + sub.task_id + "' is not part of this session");
    RankingRecord rec{pid, sub.task_id, def_.task(sub.task_id).question, {}, st->image_order, utc_now()};
    for (const auto& [image, rank] : sub.rankings) {
      const auto target = resolve_image(image);
      if (!target || target->first != sub.task_id) throw ValidationError("image '" + image + "' is not part of this task");
      rec.rankings[target->second] = rank;
    }
    validate_ranking(rec.rankings, def_.models);

    std::lock_guard lock(write_);
    auto snap = std::make_shared<Snapshot>(*snapshot());
    SubmitResult result;
    if (!sub.nonce.empty()) {
      const auto key = std::make_pair(pid, sub.nonce);
      auto it = snap->nonces.find(key);
      if (it != snap->nonces.end()) {
        if (it->second != digest(rec)) throw ConflictError("submission id '" + sub.nonce + "' was already used");
        result.duplicate = true;
        result.answered = answered(*snap, pid);
        return result;
      }
      snap->nonces[key] = digest(rec);
    }
    append(detail::record_to_log(rec, sub.nonce));
    snap->log.push_back(rec);
    result.answered = answered(*snap, pid);
    std::atomic_store(&snapshot_, std::shared_ptr<const Snapshot>(std::move(snap)));
    return result;
  }

  /// Task ids this participant has an effective answer for.
  std::set<std::string> answered_tasks(const std::string& pid) const {
    std::set<std::string> out;
    for (const auto& r : snapshot()->log)
      if (r.participant_id == pid) out.insert(r.task_id);
    return out;
  }

  MeanRankReport report() const {
    std::vector<std::string> qs;
    for (const auto& q : def_.questions) qs.push_back(q.id);
    return mean_rank_report(snapshot()->log, qs, def_.models);
  }

 private:
  static std::string digest(const RankingRecord& r) {
    std::string d = r.task_id;
    for (const auto& [m, rank] : r.rankings) d += "|" + m + "=" + std::to_string(rank);
    return d;
  }

  static std::size_t answered(const Snapshot& s, const std::string& pid) {
    std::set<std::string> tasks;
    for (const auto& r : s.log)
      if (r.participant_id == pid) tasks.insert(r.task_id);
    return tasks.size();
  }

  // Caller holds write_.
  void append(const json& j) {
    out_ << j.dump() << '\n';
    out_.flush();
    if (!out_) throw IoError("cannot append to survey log " + log_path_.string());
  }

  SurveyDefinition def_;
  std::filesystem::path log_path_;
  std::uint64_t seed_;
  std::map<std::string, std::pair<std::string, std::string>> images_;
  std::mutex write_;
  std::ofstream out_;
  std::uint64_t session_counter_ = 0;
  std::shared_ptr<const Snapshot> snapshot_;
};

/// Client-facing view of a session: task order, prompts and opaque image
/// ids. Model names never appear in it.
inline json session_payload(const SurveyService& svc, const Session& s) {
  json tasks = json::array();
  std::size_t index = 0;
  for (const auto& t : s.tasks) {
    const Task& task = svc.definition().task(t.task_id);
    json images = json::array();
    for (const auto& model : t.image_order) {
      const std::string id = svc.image_id(t.task_id, model);
      images.push_back({{"image_id", id}, {"url", "/img/" + id}});
    }
    tasks.push_back({{"index", ++index},
                     {"task_id", t.task_id},
                     {"question_id", task.question},
                     {"prompt", svc.definition().question(task.question).prompt},
                     {"images", images}});
  }
  return {{"participant_id", s.participant_id}, {"tasks", tasks}};
}

}  // namespace toongan::survey
