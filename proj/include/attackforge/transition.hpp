#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "attackforge/corpus.hpp"
#include "attackforge/errors.hpp"

namespace attackforge {

// The 12 transition actions, in declared index order.
enum class ActionKind {
  GenTrg = 0,
  TrgPass,
  GenArg,
  ArgPass,
  DepShift,
  RightShift,
  LeftShift,
  RightPass,
  LeftPass,
  GenShift,
  NoShift,
  ODelete,
};

inline constexpr int kActionCount = 12;

enum class ActionCategory { Event, Relation, Word };

inline ActionCategory action_category(ActionKind a) {
  switch (a) {
    case ActionKind::GenTrg:
    case ActionKind::TrgPass:
    case ActionKind::GenArg:
    case ActionKind::ArgPass:
    case ActionKind::DepShift: return ActionCategory::Event;
    case ActionKind::RightShift:
    case ActionKind::LeftShift:
    case ActionKind::RightPass:
    case ActionKind::LeftPass: return ActionCategory::Relation;
    default: return ActionCategory::Word;
  }
}

inline std::string to_string(ActionKind a) {
  static const char* names[kActionCount] = {
      "GEN-TRG",  "TRG-PASS",  "GEN-ARG",    "ARG-PASS",  "DEP-SHIFT", "RIGHT-SHIFT",
      "LEFT-SHIFT", "RIGHT-PASS", "LEFT-PASS", "GEN-SHIFT", "NO-SHIFT",  "O-DELETE"};
  return names[static_cast<int>(a)];
}

inline std::optional<ActionKind> action_from_string(const std::string& s) {
  for (int i = 0; i < kActionCount; ++i)
    if (to_string(static_cast<ActionKind>(i)) == s) return static_cast<ActionKind>(i);
  return std::nullopt;
}

struct AttackEvent {
  struct Arg {
    Span span;
    ArgType type = ArgType::Unset;
    bool operator==(const Arg& o) const { return span == o.span && type == o.type; }
  };
  int ordinal = 0;
  Span trigger;
  std::vector<Arg> args;
  bool operator==(const AttackEvent& o) const {
    return ordinal == o.ordinal && trigger == o.trigger && args == o.args;
  }
};

struct EventRelation {
  enum class Provenance { Explicit, Transitive };
  int src = 0;
  int dst = 0;
  RelType type = RelType::Unset;
  Provenance provenance = Provenance::Explicit;
  bool operator==(const EventRelation& o) const {
    return src == o.src && dst == o.dst && type == o.type && provenance == o.provenance;
  }
};

// Machine state: beta holds unprocessed word indices (as a cursor into the
// scoped tokens), e the current partial span, tau closed argument spans,
// xi completed events, and the primed stacks hold passed items awaiting a
// NO-SHIFT. The back of each vector is the stack top.
struct TransitionState {
  std::vector<std::string> words;
  int cursor = 0;               // words[cursor..) constitute beta
  std::vector<int> e;
  std::vector<Span> tau;
  std::vector<int> xi;          // event ordinals
  std::vector<int> xi_p;
  std::vector<Span> tau_p;
  std::vector<AttackEvent> events;
  std::vector<EventRelation> relations;
  std::set<std::pair<int, Span>> attached;   // (event ordinal, arg span)
  std::set<std::pair<int, int>> related;     // unordered event pairs in R
  int steps = 0;

  int beta_size() const { return static_cast<int>(words.size()) - cursor; }
  int consumed() const { return cursor - static_cast<int>(e.size()); }
  bool drained() const { return beta_size() == 0 && e.empty() && xi_p.empty() && tau_p.empty(); }
};

inline TransitionState init_state(const std::vector<std::string>& s_att) {
  if (s_att.empty()) throw EmptyScope();
  TransitionState st;
  st.words = s_att;
  return st;
}

inline std::array<bool, kActionCount> legal_actions(const TransitionState& st) {
  std::array<bool, kActionCount> legal{};
  auto set = [&](ActionKind a, bool v) { legal[static_cast<int>(a)] = v; };
  const bool beta = st.beta_size() > 0;
  const bool pair_ok = [&] {
    if (st.xi.size() < 2) return false;
    int top = st.xi.back();
    int second = st.xi[st.xi.size() - 2];
    auto key = std::minmax(second, top);
    return !st.related.count({key.first, key.second});
  }();
  set(ActionKind::GenShift, beta);
  set(ActionKind::ODelete, beta && st.e.empty());
  set(ActionKind::GenTrg, !st.e.empty());
  set(ActionKind::GenArg, !st.e.empty());
  set(ActionKind::DepShift,
      !st.xi.empty() && !st.tau.empty() &&
          !st.attached.count({st.xi.back(), st.tau.back()}));
  set(ActionKind::ArgPass, !st.tau.empty());
  set(ActionKind::TrgPass, st.xi.size() >= 2);
  set(ActionKind::RightShift, pair_ok);
  set(ActionKind::LeftShift, pair_ok);
  set(ActionKind::RightPass, pair_ok);
  set(ActionKind::LeftPass, pair_ok);
  set(ActionKind::NoShift, !st.xi_p.empty() || !st.tau_p.empty());
  return legal;
}

namespace detail {

inline void apply_in_place(TransitionState& st, ActionKind a) {
  if (!legal_actions(st)[static_cast<int>(a)])
    throw IllegalAction(to_string(a), "precondition not met");
  auto add_relation = [&](int src, int dst) {
    st.relations.push_back({src, dst, RelType::Unset, EventRelation::Provenance::Explicit});
    auto key = std::minmax(src, dst);
    st.related.insert({key.first, key.second});
  };
  auto pop_second_xi = [&] {
    int second = st.xi[st.xi.size() - 2];
    st.xi.erase(st.xi.end() - 2);
    return second;
  };
  switch (a) {
    case ActionKind::GenShift:
      st.e.push_back(st.cursor++);
      break;
    case ActionKind::ODelete:
      ++st.cursor;
      break;
    case ActionKind::GenTrg: {
      AttackEvent ev;
      ev.ordinal = static_cast<int>(st.events.size());
      ev.trigger = {st.e.front(), st.e.back() + 1};
      st.events.push_back(ev);
      st.xi.push_back(ev.ordinal);
      st.e.clear();
      break;
    }
    case ActionKind::GenArg:
      st.tau.push_back({st.e.front(), st.e.back() + 1});
      st.e.clear();
      break;
    case ActionKind::DepShift: {
      Span arg = st.tau.back();
      st.tau.pop_back();
      int ev = st.xi.back();
      st.events[ev].args.push_back({arg, ArgType::Unset});
      st.attached.insert({ev, arg});
      st.tau_p.push_back(arg);
      break;
    }
    case ActionKind::ArgPass:
      st.tau_p.push_back(st.tau.back());
      st.tau.pop_back();
      break;
    case ActionKind::TrgPass:
      st.xi_p.push_back(pop_second_xi());
      break;
    case ActionKind::RightShift: {
      int top = st.xi.back();
      add_relation(pop_second_xi(), top);
      break;
    }
    case ActionKind::LeftShift: {
      int top = st.xi.back();
      add_relation(top, pop_second_xi());
      break;
    }
    case ActionKind::RightPass: {
      int top = st.xi.back();
      int second = pop_second_xi();
      add_relation(second, top);
      st.xi_p.push_back(second);
      break;
    }
    case ActionKind::LeftPass: {
      int top = st.xi.back();
      int second = pop_second_xi();
      add_relation(top, second);
      st.xi_p.push_back(second);
      break;
    }
    case ActionKind::NoShift: {
      // Passed items return directly beneath the current top, in their
      // original relative order (the holding stacks accumulate in reverse).
      if (!st.xi_p.empty()) {
        std::vector<int> restored(st.xi_p.rbegin(), st.xi_p.rend());
        auto at = st.xi.empty() ? st.xi.end() : st.xi.end() - 1;
        st.xi.insert(at, restored.begin(), restored.end());
        st.xi_p.clear();
      }
      if (!st.tau_p.empty()) {
        std::vector<Span> restored(st.tau_p.rbegin(), st.tau_p.rend());
        auto at = st.tau.empty() ? st.tau.end() : st.tau.end() - 1;
        st.tau.insert(at, restored.begin(), restored.end());
        st.tau_p.clear();
      }
      break;
    }
  }
  ++st.steps;
}

}  // namespace detail

inline TransitionState apply_action(const TransitionState& st, ActionKind a) {
  TransitionState next = st;
  detail::apply_in_place(next, a);
  return next;
}

inline std::uint64_t state_digest(const TransitionState& st) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (i * 8)) & 0xFF;
      h *= 1099511628211ULL;
    }
  };
  mix(st.cursor);
  mix(st.e.size());
  mix(st.tau.size());
  mix(st.xi.size());
  mix(st.xi_p.size());
  mix(st.tau_p.size());
  mix(st.events.size());
  mix(st.relations.size());
  for (int ev : st.xi) mix(ev);
  return h;
}

struct StepRecord {
  int step = 0;
  ActionKind action = ActionKind::GenShift;
  std::uint64_t digest = 0;
};

struct RunResult {
  std::vector<AttackEvent> events;
  std::vector<EventRelation> relations;  // rel_type Unset
  std::vector<StepRecord> trace;
  bool truncated = false;
  TransitionState final_state;
};

inline int default_max_steps(std::size_t n_tokens) {
  return static_cast<int>(8 * n_tokens + 64);
}

// A policy surfaces raw scores over the 12 actions; nullopt means it has no
// further choice. The loop masks illegal actions and applies the masked
// argmax; it halts once the stacks drain and the raw top pick is illegal.
using PolicyFn =
    std::function<std::optional<std::array<double, kActionCount>>(const TransitionState&)>;

inline RunResult run(const std::vector<std::string>& s_att, const PolicyFn& policy,
                     int max_steps = -1) {
  if (max_steps < 0) max_steps = default_max_steps(s_att.size());
  if (max_steps < 1) throw Error("max_steps must be >= 1");
  TransitionState st = init_state(s_att);
  RunResult result;
  while (true) {
    auto legal = legal_actions(st);
    bool any_legal = false;
    for (bool b : legal) any_legal |= b;
    if (!any_legal) break;
    auto scores = policy(st);
    if (!scores) break;
    int raw_top = 0;
    int masked_top = -1;
    for (int i = 0; i < kActionCount; ++i) {
      if ((*scores)[i] > (*scores)[raw_top]) raw_top = i;
      if (legal[i] && (masked_top < 0 || (*scores)[i] > (*scores)[masked_top])) masked_top = i;
    }
    if (st.drained() && !legal[raw_top]) break;
    detail::apply_in_place(st, static_cast<ActionKind>(masked_top));
    result.trace.push_back({st.steps, static_cast<ActionKind>(masked_top), state_digest(st)});
    if (st.steps >= max_steps) {
      result.truncated = !st.drained();
      break;
    }
  }
  result.events = st.events;
  result.relations = st.relations;
  result.final_state = std::move(st);
  return result;
}

inline PolicyFn scripted_policy(std::vector<ActionKind> script) {
  auto pos = std::make_shared<std::size_t>(0);
  auto seq = std::make_shared<std::vector<ActionKind>>(std::move(script));
  return [pos, seq](const TransitionState&) -> std::optional<std::array<double, kActionCount>> {
    if (*pos >= seq->size()) return std::nullopt;
    std::array<double, kActionCount> scores{};
    scores[static_cast<int>((*seq)[(*pos)++])] = 1.0;
    return scores;
  };
}

// ---- gold action derivation ----

namespace detail {

struct GoldView {
  std::vector<LabeledSpan> spans;                  // textual order
  std::vector<Span> triggers;                      // event ordinal -> trigger span
  std::map<Span, int> arg_owner;                   // arg span -> event ordinal
  std::map<int, std::vector<Span>> args_of;        // gold args per event, textual order
  std::map<std::pair<int, int>, GoldRelation> pair_rel;  // keyed (min,max)
  std::vector<std::set<int>> partners;             // per event, related ordinals

  static GoldView build(const AnnotatedPost& gold) {
    GoldView v;
    v.spans = gold.spans();
    for (const auto& s : v.spans)
      if (s.role == SpanRole::Trigger) v.triggers.push_back(s.span);
    std::map<Span, int> trig_ordinal;
    for (std::size_t i = 0; i < v.triggers.size(); ++i)
      trig_ordinal[v.triggers[i]] = static_cast<int>(i);
    for (std::size_t d = 0; d < gold.deps.size(); ++d) {
      const auto& dep = gold.deps[d];
      auto it = trig_ordinal.find(dep.trigger);
      if (it == trig_ordinal.end()) throw DanglingSpan(d, "dep trigger is not an event");
      if (v.arg_owner.count(dep.arg))
        throw Underivable("argument span attached to more than one event");
      v.arg_owner[dep.arg] = it->second;
      v.args_of[it->second].push_back(dep.arg);
    }
    for (auto& [ev, args] : v.args_of) std::sort(args.begin(), args.end());
    v.partners.resize(v.triggers.size());
    for (const auto& rel : gold.relations) {
      auto key = std::minmax(rel.src, rel.dst);
      v.pair_rel[{key.first, key.second}] = rel;
      v.partners[rel.src].insert(rel.dst);
      v.partners[rel.dst].insert(rel.src);
    }
    return v;
  }

  bool has_later_pair(int ev, int than) const {
    for (int p : partners[ev])
      if (p > than) return true;
    return false;
  }
};

}  // namespace detail

// Derives the deterministic gold action sequence whose replay reproduces the
// gold events, dependencies, and directed relation pairs exactly.
inline std::vector<ActionKind> derive_oracle(const AnnotatedPost& gold) {
  if (gold.tokens.empty()) throw EmptyScope();
  auto view = detail::GoldView::build(gold);
  TransitionState st = init_state(gold.tokens);
  std::vector<ActionKind> seq;
  auto emit = [&](ActionKind a) {
    detail::apply_in_place(st, a);
    seq.push_back(a);
  };

  std::map<int, LabeledSpan> span_at_start;
  for (const auto& s : view.spans) span_at_start[s.span.begin] = s;

  const int n = static_cast<int>(gold.tokens.size());
  int i = 0;
  while (i < n) {
    auto it = span_at_start.find(i);
    if (it == span_at_start.end()) {
      emit(ActionKind::ODelete);
      ++i;
      continue;
    }
    const LabeledSpan& sp = it->second;
    for (int k = sp.span.begin; k < sp.span.end; ++k) emit(ActionKind::GenShift);
    if (sp.role == SpanRole::Trigger) {
      emit(ActionKind::GenTrg);
      const int ev = st.events.back().ordinal;
      // Attach gold arguments that already closed, surfacing each with
      // ARG-PASS reorders.
      auto args = view.args_of.count(ev) ? view.args_of.at(ev) : std::vector<Span>{};
      for (const auto& arg : args) {
        if (arg.begin >= sp.span.end) continue;  // closes later
        while (!st.tau.empty() && !(st.tau.back() == arg)) emit(ActionKind::ArgPass);
        if (st.tau.empty()) throw Underivable("gold argument unavailable at trigger close");
        emit(ActionKind::DepShift);
      }
      // Relation sweep over earlier events, nearest first.
      while (st.xi.size() >= 2) {
        int old = st.xi[st.xi.size() - 2];
        auto key = std::minmax(old, ev);
        auto rel_it = view.pair_rel.find({key.first, key.second});
        if (rel_it == view.pair_rel.end()) {
          emit(ActionKind::TrgPass);
          continue;
        }
        const bool right = rel_it->second.src == old;
        const bool retire = !view.has_later_pair(old, ev);
        if (right)
          emit(retire ? ActionKind::RightShift : ActionKind::RightPass);
        else
          emit(retire ? ActionKind::LeftShift : ActionKind::LeftPass);
      }
      if (!st.xi_p.empty() || !st.tau_p.empty()) emit(ActionKind::NoShift);
    } else {
      emit(ActionKind::GenArg);
      auto owner = view.arg_owner.find(sp.span);
      if (owner != view.arg_owner.end() &&
          owner->second < static_cast<int>(st.events.size())) {
        // Trigger already closed: it must still be the newest event.
        if (st.xi.empty() || st.xi.back() != owner->second)
          throw Underivable("argument follows a non-latest trigger");
        emit(ActionKind::DepShift);
      }
    }
    i = sp.span.end;
  }
  return seq;
}

// ---- implicit relation closure ----

namespace detail {

struct SeqRelation {
  EventRelation rel;
  int seq = 0;
};

inline bool find_cycle(const std::vector<SeqRelation>& edges, int n_events,
                       std::vector<int>* cycle_edge_indices) {
  // Adjacency over AchievedBy edges only, deterministic order.
  std::vector<std::vector<std::pair<int, int>>> adj(n_events);  // (dst, edge idx)
  for (std::size_t idx = 0; idx < edges.size(); ++idx) {
    const auto& e = edges[idx];
    if (e.rel.type == RelType::AchievedBy)
      adj[e.rel.src].push_back({e.rel.dst, static_cast<int>(idx)});
  }
  for (auto& a : adj) std::sort(a.begin(), a.end());
  std::vector<int> color(n_events, 0);  // 0 white, 1 gray, 2 black
  std::vector<std::pair<int, int>> path;  // (node, edge into node)
  std::function<bool(int)> dfs = [&](int u) -> bool {
    color[u] = 1;
    for (auto [v, idx] : adj[u]) {
      if (color[v] == 1) {
        // Cycle = edges entered after v on the gray path, plus the back edge.
        cycle_edge_indices->clear();
        bool seen_v = false;
        for (auto [node, eidx] : path) {
          if (seen_v) cycle_edge_indices->push_back(eidx);
          if (node == v) seen_v = true;
        }
        cycle_edge_indices->push_back(idx);
        return true;
      }
      if (color[v] == 0) {
        path.push_back({v, idx});
        if (dfs(v)) return true;
        path.pop_back();
      }
    }
    color[u] = 2;
    return false;
  };
  for (int s = 0; s < n_events; ++s) {
    if (color[s] != 0) continue;
    path.assign(1, {s, -1});
    if (dfs(s)) return true;
  }
  return false;
}

inline bool pair_present(const std::vector<SeqRelation>& edges, int a, int b) {
  for (const auto& e : edges) {
    if ((e.rel.src == a && e.rel.dst == b) || (e.rel.src == b && e.rel.dst == a)) return true;
  }
  return false;
}

// One transitive saturation pass set: anchors and links scanned in list
// order until no new edge fires.
inline void saturate(std::vector<SeqRelation>& edges, int n_events, int* next_seq) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t a = 0; a < edges.size(); ++a) {
      if (edges[a].rel.type != RelType::AchievedBy) continue;
      const int i = edges[a].rel.src;
      const int j = edges[a].rel.dst;
      for (std::size_t l = 0; l < edges.size(); ++l) {
        if (l == a) continue;
        const auto& link = edges[l].rel;
        int k = -1;
        if (link.src == j && link.dst != i) k = link.dst;
        else if (link.dst == j && link.src != i) k = link.src;
        if (k < 0 || k == i || k >= n_events) continue;
        if (pair_present(edges, i, k)) continue;
        edges.push_back({{i, k, RelType::AchievedBy, EventRelation::Provenance::Transitive},
                         (*next_seq)++});
        changed = true;
      }
    }
  }
}

inline void prune(std::vector<SeqRelation>& edges,
                  const std::vector<AttackEvent>& events) {
  // Resolve 2-cycles of AchievedBy: drop Transitive before Explicit; with
  // two Explicit edges keep the one whose src trigger starts earlier.
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t a = 0; a < edges.size() && !changed; ++a) {
      if (edges[a].rel.type != RelType::AchievedBy) continue;
      for (std::size_t b = a + 1; b < edges.size(); ++b) {
        if (edges[b].rel.type != RelType::AchievedBy) continue;
        if (edges[a].rel.src != edges[b].rel.dst || edges[a].rel.dst != edges[b].rel.src)
          continue;
        auto prov_a = edges[a].rel.provenance;
        auto prov_b = edges[b].rel.provenance;
        std::size_t drop;
        if (prov_a != prov_b) {
          drop = prov_a == EventRelation::Provenance::Transitive ? a : b;
        } else if (prov_a == EventRelation::Provenance::Transitive) {
          drop = edges[a].seq > edges[b].seq ? a : b;
        } else {
          int start_a = events[edges[a].rel.src].trigger.begin;
          int start_b = events[edges[b].rel.src].trigger.begin;
          if (start_a != start_b)
            drop = start_a < start_b ? b : a;
          else
            drop = edges[a].seq > edges[b].seq ? a : b;
        }
        edges.erase(edges.begin() + drop);
        changed = true;
        break;
      }
    }
  }
  // Break longer cycles by removing the latest-added AchievedBy edge on each.
  std::vector<int> cycle;
  while (find_cycle(edges, static_cast<int>(events.size()), &cycle)) {
    int victim = -1;
    for (int idx : cycle) {
      if (idx < 0) continue;
      if (victim < 0 || edges[idx].seq > edges[victim].seq) victim = idx;
    }
    if (victim < 0) break;
    edges.erase(edges.begin() + victim);
  }
}

}  // namespace detail

// Applies the transitive and asymmetric rules to a fixpoint: AchievedBy
// propagates across any linked pair, and the resulting digraph is made
// acyclic. Alternating saturation and pruning until the edge set is stable
// makes the operation idempotent.
inline std::vector<EventRelation> close_relations(const std::vector<AttackEvent>& events,
                                                  const std::vector<EventRelation>& relations) {
  for (const auto& r : relations)
    if (r.type == RelType::Unset)
      throw UntypedInput("close_relations requires typed relations");
  const int n = static_cast<int>(events.size());
  for (const auto& r : relations)
    if (r.src < 0 || r.src >= n || r.dst < 0 || r.dst >= n || r.src == r.dst)
      throw Error("relation endpoints out of range");

  std::vector<detail::SeqRelation> cur;
  int next_seq = 0;
  for (const auto& r : relations) cur.push_back({r, next_seq++});

  auto normalized = [](const std::vector<detail::SeqRelation>& v) {
    std::vector<std::tuple<int, int, int, int>> out;
    for (const auto& e : v)
      out.push_back({e.rel.src, e.rel.dst, static_cast<int>(e.rel.type),
                     static_cast<int>(e.rel.provenance)});
    std::sort(out.begin(), out.end());
    return out;
  };

  while (true) {
    auto before = normalized(cur);
    detail::saturate(cur, n, &next_seq);
    detail::prune(cur, events);
    if (normalized(cur) == before) break;
  }
  std::vector<EventRelation> out;
  for (const auto& e : cur) out.push_back(e.rel);
  return out;
}

}  // namespace attackforge
