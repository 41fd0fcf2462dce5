#ifndef PROXYDEC_SCHEDULER_HPP
#define PROXYDEC_SCHEDULER_HPP

#include <algorithm>
#include <condition_variable>
#include <cstdio>
#include <exception>
#include <latch>
#include <map>
#include <mutex>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "proxydec/backends.hpp"
#include "proxydec/core.hpp"

namespace proxydec {

enum class Strategy { sequential, concurrent };

inline Strategy parse_strategy(const std::string& s) {
  if (s == "sequential") return Strategy::sequential;
  if (s == "concurrent") return Strategy::concurrent;
  throw ConfigError("unknown strategy '" + s + "' (expected sequential|concurrent)");
}

inline const char* to_string(Strategy s) { return s == Strategy::sequential ? "sequential" : "concurrent"; }

// Immutable step configuration. Roles sharing a group id run serially inside a
// step; distinct groups run in parallel under the concurrent strategy. An
// empty assignment gives every role its own group.
struct StepScheduler {
  Strategy strategy = Strategy::sequential;
  std::map<std::string, int> groups;

  int group_of(const std::string& role, std::size_t index) const {
    if (groups.empty()) return static_cast<int>(index);
    auto it = groups.find(role);
    if (it == groups.end()) throw ConfigError("no device group assigned to '" + role + "'");
    if (it->second < 0) throw ConfigError("device group ids must be non-negative");
    return it->second;
  }
};

// "base:0,expert:1,amateur:1"
inline std::map<std::string, int> parse_groups(const std::string& text) {
  std::map<std::string, int> out;
  if (text.empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == item.size()) {
      throw ConfigError("malformed group assignment '" + item + "' (expected role:id)");
    }
    const std::string id = item.substr(colon + 1);
    if (id.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("malformed group id in '" + item + "'");
    }
    out[item.substr(0, colon)] = std::stoi(id);
  }
  return out;
}

// Drives one set of sessions step by step. The concurrent strategy keeps one
// worker thread per device group alive for the runner's lifetime; each step
// fans out to the workers and joins on a latch before returning.
class StepRunner {
 public:
  StepRunner(const StepScheduler& scheduler, std::vector<Session*> sessions, std::vector<std::string> roles)
      : strategy_(scheduler.strategy), sessions_(std::move(sessions)), roles_(std::move(roles)) {
    if (sessions_.size() != roles_.size() || sessions_.empty()) {
      throw ConfigError("step runner needs one role name per session");
    }
    std::map<int, std::vector<std::size_t>> by_group;
    for (std::size_t i = 0; i < sessions_.size(); ++i) {
      by_group[scheduler.group_of(roles_[i], i)].push_back(i);
    }
    for (auto& [g, members] : by_group) group_members_.push_back(std::move(members));
    for (auto* s : sessions_) start_len_.push_back(s->context().size());

    if (strategy_ == Strategy::concurrent) {
      for (std::size_t w = 0; w < group_members_.size(); ++w) {
        workers_.emplace_back([this, w](std::stop_token st) { worker_loop(st, w); });
      }
    }
  }

  ~StepRunner() {
    {
      std::lock_guard lock(mu_);
      for (auto& w : workers_) w.request_stop();
    }
    cv_.notify_all();
  }

  StepRunner(const StepRunner&) = delete;
  StepRunner& operator=(const StepRunner&) = delete;

  std::size_t group_count() const { return group_members_.size(); }

  // Extends every session by new_tokens and returns their logits in session
  // order. Returns only after all sessions finished.
  std::vector<LogitVector> run(std::span<const TokenId> new_tokens) {
    for (std::size_t i = 0; i < sessions_.size(); ++i) {
      if (sessions_[i]->context().size() - start_len_[i] != sessions_[0]->context().size() - start_len_[0]) {
        throw ConfigError("sessions have advanced by different numbers of tokens");
      }
    }
    results_.assign(sessions_.size(), LogitVector{});
    errors_.assign(sessions_.size(), nullptr);

    if (strategy_ == Strategy::sequential) {
      for (std::size_t i = 0; i < sessions_.size(); ++i) {
        results_[i] = sessions_[i]->extend_and_score(new_tokens);
      }
      return results_;
    }

    std::latch done(static_cast<std::ptrdiff_t>(workers_.size()));
    {
      std::lock_guard lock(mu_);
      tokens_ = new_tokens;
      done_ = &done;
      ++generation_;
    }
    cv_.notify_all();
    done.wait();

    // First failure in session order, so the surfaced error does not depend
    // on completion order.
    for (auto& e : errors_) {
      if (e) std::rethrow_exception(e);
    }
    return results_;
  }

 private:
  void worker_loop(std::stop_token st, std::size_t w) {
    std::uint64_t seen = 0;
    while (true) {
      std::span<const TokenId> tokens;
      std::latch* done = nullptr;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return st.stop_requested() || generation_ != seen; });
        if (st.stop_requested()) return;
        seen = generation_;
        tokens = tokens_;
        done = done_;
      }
      for (std::size_t i : group_members_[w]) {
        try {
          results_[i] = sessions_[i]->extend_and_score(tokens);
        } catch (...) {
          errors_[i] = std::current_exception();
        }
      }
      done->count_down();
    }
  }

  Strategy strategy_;
  std::vector<Session*> sessions_;
  std::vector<std::string> roles_;
  std::vector<std::vector<std::size_t>> group_members_;
  std::vector<std::size_t> start_len_;  // sessions may carry role-specific prompt prefixes

  std::vector<LogitVector> results_;
  std::vector<std::exception_ptr> errors_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::uint64_t generation_ = 0;
  std::span<const TokenId> tokens_;
  std::latch* done_ = nullptr;
  std::vector<std::jthread> workers_;
};

// One-shot step over the given sessions.
inline std::vector<LogitVector> run_step(const StepScheduler& scheduler, std::vector<Session*> sessions,
                                         std::vector<std::string> roles, std::span<const TokenId> new_tokens) {
  StepRunner runner(scheduler, std::move(sessions), std::move(roles));
  return runner.run(new_tokens);
}

// ---------------------------------------------------------------------------
// Cost-model timeline simulator.

struct BackendCost {
  std::string name;
  double prefill_ms_per_token = 0.0;
  double decode_ms = 0.0;
};

// Per-backend costs in execution order plus a per-step barrier cost.
struct LatencyModel {
  std::vector<BackendCost> backends;
  double barrier_ms = 0.0;

  void validate() const {
    if (backends.empty()) throw ConfigError("latency model has no backends");
    std::set<std::string> names;
    for (const auto& b : backends) {
      if (!names.insert(b.name).second) throw ConfigError("duplicate backend '" + b.name + "' in latency model");
      if (!std::isfinite(b.prefill_ms_per_token) || b.prefill_ms_per_token < 0.0 || !std::isfinite(b.decode_ms) ||
          b.decode_ms < 0.0) {
        throw ConfigError("latency costs for '" + b.name + "' must be finite and non-negative");
      }
    }
    if (!std::isfinite(barrier_ms) || barrier_ms < 0.0) throw ConfigError("barrier cost must be finite and non-negative");
  }
};

struct TraceEvent {
  std::string backend;
  std::size_t step = 0;  // 0 is prefill
  double start_ms = 0.0;
  double end_ms = 0.0;
  int group = 0;  // -1 for barrier events
};

struct ScheduleTrace {
  Strategy strategy = Strategy::sequential;
  std::vector<TraceEvent> events;
  std::vector<int> groups;
  double makespan_ms = 0.0;
  std::map<int, double> busy_ms;
  std::map<int, double> idle_fraction;
};

inline constexpr int kBarrierGroup = -1;

inline ScheduleTrace simulate_timeline(const LatencyModel& latency, const StepScheduler& scheduler,
                                       std::size_t prompt_len, std::size_t steps) {
  latency.validate();
  if (steps < 1) throw DomainError("simulate_timeline needs at least one step");

  ScheduleTrace trace;
  trace.strategy = scheduler.strategy;
  std::map<int, std::vector<std::size_t>> by_group;
  for (std::size_t i = 0; i < latency.backends.size(); ++i) {
    by_group[scheduler.group_of(latency.backends[i].name, i)].push_back(i);
  }
  for (const auto& [g, _] : by_group) trace.groups.push_back(g);

  auto emit = [&](std::size_t i, std::size_t step, double start, double duration) {
    if (duration > 0.0) {
      trace.events.push_back(TraceEvent{latency.backends[i].name, step, start, start + duration,
                                        scheduler.group_of(latency.backends[i].name, i)});
    }
    return start + duration;
  };

  // Runs one phase (prefill or a decode step) starting at t and returns its end.
  auto phase = [&](double t, std::size_t step, auto cost_of) {
    if (scheduler.strategy == Strategy::sequential) {
      for (std::size_t i = 0; i < latency.backends.size(); ++i) t = emit(i, step, t, cost_of(latency.backends[i]));
      return t;
    }
    double end = t;
    for (const auto& [g, members] : by_group) {
      double gt = t;
      for (std::size_t i : members) gt = emit(i, step, gt, cost_of(latency.backends[i]));
      end = std::max(end, gt);
    }
    return end;
  };

  double t = phase(0.0, 0, [&](const BackendCost& b) { return b.prefill_ms_per_token * static_cast<double>(prompt_len); });
  for (std::size_t s = 1; s <= steps; ++s) {
    t = phase(t, s, [](const BackendCost& b) { return b.decode_ms; });
    if (latency.barrier_ms > 0.0) {
      trace.events.push_back(TraceEvent{"barrier", s, t, t + latency.barrier_ms, kBarrierGroup});
      t += latency.barrier_ms;
    }
  }

  if (!trace.events.empty()) {
    double lo = trace.events.front().start_ms;
    double hi = trace.events.front().end_ms;
    for (const auto& e : trace.events) {
      lo = std::min(lo, e.start_ms);
      hi = std::max(hi, e.end_ms);
    }
    trace.makespan_ms = hi - lo;
  }
  for (int g : trace.groups) trace.busy_ms[g] = 0.0;
  for (const auto& e : trace.events) {
    if (e.group != kBarrierGroup) trace.busy_ms[e.group] += e.end_ms - e.start_ms;
  }
  for (int g : trace.groups) {
    trace.idle_fraction[g] =
        trace.makespan_ms > 0.0 ? std::clamp(1.0 - trace.busy_ms[g] / trace.makespan_ms, 0.0, 1.0) : 0.0;
  }
  return trace;
}

struct IdleRow {
  int group = 0;
  double busy_ms = 0.0;
  double makespan_ms = 0.0;
  double idle_fraction = 0.0;
};

struct IdleReport {
  std::vector<IdleRow> rows;

  std::string to_csv() const {
    std::string out = "group,busy_ms,makespan_ms,idle_fraction\n";
    char buf[160];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%d,%.4f,%.4f,%.4f\n", r.group, r.busy_ms, r.makespan_ms, r.idle_fraction);
      out += buf;
    }
    return out;
  }
};

inline IdleReport idle_report(const ScheduleTrace& trace) {
  IdleReport report;
  for (int g : trace.groups) {
    report.rows.push_back(IdleRow{g, trace.busy_ms.at(g), trace.makespan_ms, trace.idle_fraction.at(g)});
  }
  return report;
}

inline nlohmann::json trace_to_json(const ScheduleTrace& trace) {
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : trace.events) {
    events.push_back({{"backend", e.backend}, {"step", e.step}, {"start_ms", e.start_ms}, {"end_ms", e.end_ms},
                      {"group", e.group}});
  }
  nlohmann::json idle = nlohmann::json::object();
  nlohmann::json busy = nlohmann::json::object();
  for (int g : trace.groups) {
    idle[std::to_string(g)] = trace.idle_fraction.at(g);
    busy[std::to_string(g)] = trace.busy_ms.at(g);
  }
  return {{"strategy", to_string(trace.strategy)},
          {"makespan_ms", trace.makespan_ms},
          {"busy_ms", busy},
          {"idle_fraction", idle},
          {"events", events}};
}

inline LatencyModel latency_model_from_json(const nlohmann::json& j) {
  try {
    LatencyModel m;
    for (const auto& b : j.at("backends")) {
      m.backends.push_back(BackendCost{b.at("name").get<std::string>(), b.value("prefill_ms_per_token", 0.0),
                                       b.at("decode_ms").get<double>()});
    }
    m.barrier_ms = j.value("barrier_ms", 0.0);
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed latency model: ") + e.what());
  }
}

}  // namespace proxydec

#endif  // PROXYDEC_SCHEDULER_HPP
