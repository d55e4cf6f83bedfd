// SPDX-License-Identifier: Apache-2.0
#include "pei/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace pei {

using json = nlohmann::json;

namespace {

const std::vector<std::string> kLinkRelations = {"mentor", "rival",   "partner", "neighbor",
                                                 "patron", "cousin",  "sponsor", "teacher"};

const std::vector<std::pair<std::string, std::vector<std::string>>> kAttributeRelations = {
    {"color", {"red", "blue", "green", "amber", "violet"}},
    {"city", {"oslo", "lima", "kyoto", "cairo", "quito"}},
    {"sport", {"polo", "judo", "rugby", "golf", "chess"}},
    {"dish", {"curry", "pasta", "sushi", "tacos", "ramen"}},
    {"school", {"harvard", "yale", "oxford", "eton", "cambridge"}},
    {"instrument", {"harp", "cello", "flute", "oboe", "drums"}},
    {"language", {"latin", "greek", "hindi", "welsh", "swahili"}},
    {"planet", {"mars", "venus", "saturn", "jupiter", "neptune"}},
};

const std::vector<std::string> kFunctionWords = {"what", "which", "is",   "the", "of", "'s",
                                                 "do",   "and",   "share", "have", "same",
                                                 "?",    "yes",   "no"};

constexpr double kFactProbability = 0.7;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string make_name(std::mt19937_64& rng) {
  static const std::string consonants = "bdfgklmnprstvz";
  static const std::string vowels = "aeiou";
  std::string s;
  for (int i = 0; i < 3; ++i) {
    s += consonants[rng() % consonants.size()];
    s += vowels[rng() % vowels.size()];
  }
  return s;
}

std::size_t pick(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

bool is_what(const std::string& t) { return t == "what" || t == "which"; }

std::string hex_id(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

}  // namespace

std::string_view kind_name(QuestionKind kind) {
  switch (kind) {
    case QuestionKind::comparison: return "comparison";
    case QuestionKind::bridge: return "bridge";
    case QuestionKind::singlehop: return "singlehop";
  }
  return "unknown";
}

QuestionKind kind_from_name(std::string_view name) {
  if (name == "comparison") return QuestionKind::comparison;
  if (name == "bridge") return QuestionKind::bridge;
  if (name == "singlehop") return QuestionKind::singlehop;
  throw std::invalid_argument("unknown question type '" + std::string(name) + "'");
}

// ---- world -----------------------------------------------------------------

void World::index() {
  lookup_.clear();
  entity_ids_.clear();
  for (std::size_t i = 0; i < facts.size(); ++i) {
    lookup_[{facts[i].subject, facts[i].relation}] = i;
  }
  for (std::size_t i = 0; i < entities.size(); ++i) entity_ids_[entities[i]] = i;
}

std::optional<std::size_t> World::find(std::size_t subject, std::size_t relation) const {
  auto it = lookup_.find({subject, relation});
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> World::entity_index(const std::string& name) const {
  auto it = entity_ids_.find(name);
  if (it == entity_ids_.end()) return std::nullopt;
  return it->second;
}

bool World::is_functional() const {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const FactTriple& f : facts) {
    if (!seen.insert({f.subject, f.relation}).second) return false;
  }
  return true;
}

Tokens World::render(const FactTriple& fact) const {
  return {entities[fact.subject], "'s", relations[fact.relation].name, "is", fact.object};
}

bool World::operator==(const World& other) const {
  if (seed != other.seed || entities != other.entities || facts.size() != other.facts.size() ||
      relations.size() != other.relations.size()) {
    return false;
  }
  for (std::size_t i = 0; i < relations.size(); ++i) {
    if (relations[i].name != other.relations[i].name ||
        relations[i].attribute != other.relations[i].attribute ||
        relations[i].values != other.relations[i].values) {
      return false;
    }
  }
  for (std::size_t i = 0; i < facts.size(); ++i) {
    const FactTriple& a = facts[i];
    const FactTriple& b = other.facts[i];
    if (a.subject != b.subject || a.relation != b.relation || a.object != b.object) return false;
  }
  return true;
}

World generate_world(std::uint64_t seed, std::size_t entity_count, std::size_t relation_count) {
  if (entity_count < 2 || relation_count < 2) {
    throw std::invalid_argument("generate_world: need at least 2 entities and 2 relations to form "
                                "2-hop chains (got " + std::to_string(entity_count) + ", " +
                                std::to_string(relation_count) + ")");
  }
  const std::size_t n_link = (relation_count + 1) / 2;
  const std::size_t n_attr = relation_count / 2;
  if (n_link > kLinkRelations.size() || n_attr > kAttributeRelations.size()) {
    throw std::invalid_argument("generate_world: at most " +
                                std::to_string(2 * kAttributeRelations.size()) +
                                " relations are available");
  }
  World w;
  w.seed = seed;
  std::mt19937_64 rng(mix(seed));
  std::set<std::string> reserved(kFunctionWords.begin(), kFunctionWords.end());
  for (const auto& r : kLinkRelations) reserved.insert(r);
  for (const auto& [r, vals] : kAttributeRelations) {
    reserved.insert(r);
    reserved.insert(vals.begin(), vals.end());
  }
  while (w.entities.size() < entity_count) {
    std::string name = make_name(rng);
    if (reserved.insert(name).second) w.entities.push_back(name);
  }
  for (std::size_t i = 0; i < n_link; ++i) w.relations.push_back({kLinkRelations[i], false, {}});
  for (std::size_t i = 0; i < n_attr; ++i) {
    w.relations.push_back({kAttributeRelations[i].first, true, kAttributeRelations[i].second});
  }
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::set<std::pair<std::size_t, std::size_t>> taken;
  for (std::size_t s = 0; s < entity_count; ++s) {
    std::size_t added = 0;
    while (added == 0) {
      for (std::size_t r = 0; r < w.relations.size(); ++r) {
        if (coin(rng) >= kFactProbability) continue;
        // Functional relations: a second object for (s, r) is rejected and
        // the draw is discarded.
        if (!taken.insert({s, r}).second) continue;
        const Relation& rel = w.relations[r];
        std::string object;
        if (rel.attribute) {
          object = rel.values[pick(rng, rel.values.size())];
        } else {
          std::size_t o = pick(rng, entity_count - 1);
          if (o >= s) ++o;
          object = w.entities[o];
        }
        w.facts.push_back({s, r, object});
        ++added;
      }
    }
  }
  w.index();
  return w;
}

// ---- examples --------------------------------------------------------------

std::vector<std::size_t> QAExample::support_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < support_labels.size(); ++i) {
    if (support_labels[i] != 0) out.push_back(i);
  }
  return out;
}

namespace {

Tokens single_question(const World& w, std::size_t relation, const std::string& subject) {
  return {"what", "is", "the", w.relations[relation].name, "of", subject, "?"};
}

void apply_noise(Tokens& q, std::mt19937_64& rng) {
  for (std::string& t : q) {
    if (t == "what" && rng() % 2 == 0) t = "which";
    if (t == "share" && rng() % 2 == 0) t = "have";
  }
}

}  // namespace

QAExample generate_example(const World& world, QuestionKind kind, std::uint64_t seed,
                           const GeneratorOptions& options) {
  if (options.min_distractors > options.max_distractors) {
    throw std::invalid_argument("generate_example: min_distractors > max_distractors");
  }
  std::mt19937_64 rng(mix(seed ^ 0x5eedULL));
  std::vector<std::size_t> supports;  // fact indices in reasoning order
  std::vector<std::size_t> anchors;   // entities whose other facts make related distractors
  QAExample ex;
  ex.kind = kind;
  ex.id = std::string(kind_name(kind)).substr(0, 1) + "_" + hex_id(mix(seed));

  std::vector<std::size_t> link_facts, attr_rels;
  for (std::size_t i = 0; i < world.facts.size(); ++i) {
    if (!world.relations[world.facts[i].relation].attribute) link_facts.push_back(i);
  }
  for (std::size_t r = 0; r < world.relations.size(); ++r) {
    if (world.relations[r].attribute) attr_rels.push_back(r);
  }

  constexpr int kAttempts = 256;
  bool ok = false;
  switch (kind) {
    case QuestionKind::singlehop: {
      const std::size_t f = pick(rng, world.facts.size());
      const FactTriple& fact = world.facts[f];
      supports = {f};
      anchors = {fact.subject};
      ex.question = single_question(world, fact.relation, world.entities[fact.subject]);
      ex.answer = fact.object;
      ok = true;
      break;
    }
    case QuestionKind::bridge: {
      for (int a = 0; a < kAttempts && !ok && !link_facts.empty(); ++a) {
        const std::size_t f1 = link_facts[pick(rng, link_facts.size())];
        const FactTriple& hop1 = world.facts[f1];
        const std::size_t bridge = *world.entity_index(hop1.object);
        std::vector<std::size_t> second;
        for (std::size_t r = 0; r < world.relations.size(); ++r) {
          if (auto f2 = world.find(bridge, r)) second.push_back(*f2);
        }
        if (second.empty()) continue;
        const std::size_t f2 = second[pick(rng, second.size())];
        const FactTriple& hop2 = world.facts[f2];
        supports = {f1, f2};
        anchors = {hop1.subject, bridge};
        ex.question = {"what", "is", "the", world.relations[hop2.relation].name, "of", "the",
                       world.relations[hop1.relation].name, "of", world.entities[hop1.subject], "?"};
        ex.answer = hop2.object;
        ex.subquestions = {
            {single_question(world, hop1.relation, world.entities[hop1.subject]), hop1.object},
            {single_question(world, hop2.relation, hop1.object), hop2.object}};
        ok = true;
      }
      break;
    }
    case QuestionKind::comparison: {
      const bool want_yes = rng() % 2 == 0;
      for (int a = 0; a < kAttempts && !ok && !attr_rels.empty(); ++a) {
        const std::size_t r = attr_rels[pick(rng, attr_rels.size())];
        std::vector<std::size_t> holders;
        for (std::size_t i = 0; i < world.facts.size(); ++i) {
          if (world.facts[i].relation == r) holders.push_back(i);
        }
        if (holders.size() < 2) continue;
        const std::size_t fx = holders[pick(rng, holders.size())];
        std::vector<std::size_t> partners;
        for (std::size_t fy : holders) {
          if (fy == fx) continue;
          if ((world.facts[fy].object == world.facts[fx].object) == want_yes) partners.push_back(fy);
        }
        if (partners.empty()) continue;
        const std::size_t fy = partners[pick(rng, partners.size())];
        const FactTriple& x = world.facts[fx];
        const FactTriple& y = world.facts[fy];
        supports = {fx, fy};
        anchors = {x.subject, y.subject};
        ex.question = {"do", world.entities[x.subject], "and", world.entities[y.subject],
                       "share", "the", "same", world.relations[r].name, "?"};
        ex.answer = want_yes ? "yes" : "no";
        ex.subquestions = {
            {single_question(world, r, world.entities[x.subject]), x.object},
            {single_question(world, r, world.entities[y.subject]), y.object}};
        ok = true;
      }
      break;
    }
  }
  if (!ok) {
    throw std::runtime_error("generate_example: world has no valid chain for a " +
                             std::string(kind_name(kind)) + " question");
  }
  if (options.noise) apply_noise(ex.question, rng);

  // Distractors: other facts, some about the question's own entities.
  std::set<std::size_t> used(supports.begin(), supports.end());
  std::vector<std::size_t> related;
  for (std::size_t i = 0; i < world.facts.size(); ++i) {
    if (used.count(i)) continue;
    if (std::find(anchors.begin(), anchors.end(), world.facts[i].subject) != anchors.end()) {
      related.push_back(i);
    }
  }
  const std::size_t span = options.max_distractors - options.min_distractors + 1;
  const std::size_t n_distract = options.min_distractors + pick(rng, span);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<std::size_t> chosen;
  for (int guard = 0; chosen.size() < n_distract && guard < 10000; ++guard) {
    std::size_t f;
    if (!related.empty() && coin(rng) < options.related_distractor_share) {
      f = related[pick(rng, related.size())];
    } else {
      f = pick(rng, world.facts.size());
    }
    if (used.insert(f).second) chosen.push_back(f);
  }

  std::vector<std::pair<std::size_t, bool>> pool;  // (fact, is support)
  for (std::size_t f : supports) pool.emplace_back(f, true);
  for (std::size_t f : chosen) pool.emplace_back(f, false);
  std::vector<std::size_t> perm(pool.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  ex.support_order.assign(supports.size(), 0);
  for (std::size_t pos = 0; pos < perm.size(); ++pos) {
    const auto& [fact, is_support] = pool[perm[pos]];
    ex.sentences.push_back(world.render(world.facts[fact]));
    ex.support_labels.push_back(is_support ? 1 : 0);
    if (perm[pos] < supports.size()) ex.support_order[perm[pos]] = pos;
  }
  return ex;
}

std::vector<QAExample> generate_dataset(const World& world, std::size_t count, std::uint64_t seed,
                                        bool singlehop, const GeneratorOptions& options) {
  std::vector<QAExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const QuestionKind kind = singlehop ? QuestionKind::singlehop
                              : (i % 2 == 0) ? QuestionKind::bridge
                                             : QuestionKind::comparison;
    out.push_back(generate_example(world, kind, mix(seed * 1000003ULL + i), options));
  }
  return out;
}

std::optional<std::string> symbolic_answer(const Tokens& q, const std::vector<Tokens>& sentences) {
  std::map<std::pair<std::string, std::string>, std::string> facts;
  for (const Tokens& s : sentences) {
    if (s.size() == 5 && s[1] == "'s" && s[3] == "is") facts[{s[0], s[2]}] = s[4];
  }
  auto lookup = [&](const std::string& subj, const std::string& rel) -> std::optional<std::string> {
    auto it = facts.find({subj, rel});
    if (it == facts.end()) return std::nullopt;
    return it->second;
  };
  if (q.size() == 7 && is_what(q[0]) && q[1] == "is" && q[2] == "the" && q[4] == "of") {
    return lookup(q[5], q[3]);
  }
  if (q.size() == 10 && is_what(q[0]) && q[1] == "is" && q[2] == "the" && q[4] == "of" &&
      q[5] == "the" && q[7] == "of") {
    auto bridge = lookup(q[8], q[6]);
    if (!bridge) return std::nullopt;
    return lookup(*bridge, q[3]);
  }
  if (q.size() == 9 && q[0] == "do" && q[2] == "and" && (q[4] == "share" || q[4] == "have")) {
    auto a = lookup(q[1], q[7]);
    auto b = lookup(q[3], q[7]);
    if (!a || !b) return std::nullopt;
    return *a == *b ? "yes" : "no";
  }
  return std::nullopt;
}

std::optional<SentenceSpan> gold_answer_span(const QAExample& example) {
  if (example.is_yes_no()) return std::nullopt;
  const Tokens answer = tokenize(example.answer);
  if (answer.empty()) return std::nullopt;
  auto search = [&](std::size_t s) -> std::optional<SentenceSpan> {
    const Tokens& sent = example.sentences[s];
    if (sent.size() < answer.size()) return std::nullopt;
    for (std::size_t i = sent.size() - answer.size() + 1; i-- > 0;) {
      if (std::equal(answer.begin(), answer.end(), sent.begin() + static_cast<std::ptrdiff_t>(i))) {
        return SentenceSpan{s, i, i + answer.size() - 1};
      }
    }
    return std::nullopt;
  };
  for (auto it = example.support_order.rbegin(); it != example.support_order.rend(); ++it) {
    if (auto sp = search(*it)) return sp;
  }
  for (std::size_t s : example.support_indices()) {
    if (auto sp = search(s)) return sp;
  }
  return std::nullopt;
}

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    std::vector<std::string> trailing;
    while (cur.size() > 1 && std::string_view(".,?!;:").find(cur.back()) != std::string_view::npos) {
      trailing.insert(trailing.begin(), std::string(1, cur.back()));
      cur.pop_back();
    }
    out.push_back(cur);
    out.insert(out.end(), trailing.begin(), trailing.end());
    cur.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
  }
  flush();
  return out;
}

std::string join_tokens(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// ---- files -----------------------------------------------------------------

DatasetFormatError::DatasetFormatError(std::size_t line, const std::string& field,
                                       const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": field '" + field + "': " + what),
      line_(line),
      field_(field) {}

namespace {

Tokens split_ws(const std::string& s) {
  Tokens out;
  std::istringstream is(s);
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

const json& need(const json& rec, const char* field, std::size_t line) {
  auto it = rec.find(field);
  if (it == rec.end()) throw DatasetFormatError(line, field, "missing");
  return *it;
}

}  // namespace

std::string example_to_line(const QAExample& ex) {
  json rec;
  rec["id"] = ex.id;
  rec["type"] = kind_name(ex.kind);
  rec["question"] = join_tokens(ex.question);
  json sents = json::array();
  for (const Tokens& s : ex.sentences) sents.push_back(join_tokens(s));
  rec["sentences"] = sents;
  rec["support_labels"] = ex.support_labels;
  rec["answer"] = ex.answer;
  json subs = json::array();
  for (const SubQuestion& sq : ex.subquestions) {
    subs.push_back({{"question", join_tokens(sq.question)}, {"answer", sq.answer}});
  }
  rec["subquestions"] = subs;
  rec["support_order"] = ex.support_order;
  return rec.dump();
}

QAExample example_from_line(std::string_view line, std::size_t n) {
  json rec;
  try {
    rec = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DatasetFormatError(n, "<record>", e.what());
  }
  if (!rec.is_object()) throw DatasetFormatError(n, "<record>", "not an object");
  QAExample ex;
  try {
    ex.id = need(rec, "id", n).get<std::string>();
    try {
      ex.kind = kind_from_name(need(rec, "type", n).get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw DatasetFormatError(n, "type", e.what());
    }
    ex.question = split_ws(need(rec, "question", n).get<std::string>());
    for (const auto& s : need(rec, "sentences", n)) ex.sentences.push_back(split_ws(s.get<std::string>()));
    ex.support_labels = need(rec, "support_labels", n).get<std::vector<int>>();
    ex.answer = need(rec, "answer", n).get<std::string>();
    for (const auto& sq : need(rec, "subquestions", n)) {
      ex.subquestions.push_back({split_ws(need(sq, "question", n).get<std::string>()),
                                 need(sq, "answer", n).get<std::string>()});
    }
    if (auto it = rec.find("support_order"); it != rec.end()) {
      ex.support_order = it->get<std::vector<std::size_t>>();
    } else {
      ex.support_order = ex.support_indices();
    }
  } catch (const json::type_error& e) {
    throw DatasetFormatError(n, "<record>", e.what());
  }
  if (ex.support_labels.size() != ex.sentences.size()) {
    throw DatasetFormatError(n, "support_labels",
                             std::to_string(ex.support_labels.size()) + " labels for " +
                                 std::to_string(ex.sentences.size()) + " sentences");
  }
  for (std::size_t s : ex.support_order) {
    if (s >= ex.sentences.size()) throw DatasetFormatError(n, "support_order", "index out of range");
  }
  return ex;
}

void write_dataset(const std::filesystem::path& path, const std::vector<QAExample>& examples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write dataset " + path.string());
  for (const QAExample& ex : examples) os << example_to_line(ex) << '\n';
}

std::vector<QAExample> read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read dataset " + path.string());
  std::vector<QAExample> out;
  std::string line;
  for (std::size_t n = 1; std::getline(is, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(example_from_line(line, n));
  }
  return out;
}

std::vector<QAExample> parse_hotpotqa(std::string_view text) {
  const json root = json::parse(text);
  if (!root.is_array()) throw DatasetFormatError(1, "<root>", "expected a JSON array");
  std::vector<QAExample> out;
  std::size_t n = 0;
  for (const json& rec : root) {
    ++n;
    QAExample ex;
    ex.id = need(rec, "_id", n).get<std::string>();
    const std::string type = rec.value("type", "bridge");
    ex.kind = type.find("comparison") != std::string::npos ? QuestionKind::comparison
                                                           : QuestionKind::bridge;
    ex.question = tokenize(need(rec, "question", n).get<std::string>());
    ex.answer = join_tokens(tokenize(need(rec, "answer", n).get<std::string>()));
    std::map<std::pair<std::string, std::size_t>, std::size_t> where;
    for (const json& para : need(rec, "context", n)) {
      if (!para.is_array() || para.size() != 2) throw DatasetFormatError(n, "context", "expected [title, sentences]");
      const std::string title = para[0].get<std::string>();
      std::size_t k = 0;
      for (const json& s : para[1]) {
        where[{title, k++}] = ex.sentences.size();
        ex.sentences.push_back(tokenize(s.get<std::string>()));
      }
    }
    ex.support_labels.assign(ex.sentences.size(), 0);
    for (const json& sf : need(rec, "supporting_facts", n)) {
      if (!sf.is_array() || sf.size() != 2) throw DatasetFormatError(n, "supporting_facts", "expected [title, index]");
      auto it = where.find({sf[0].get<std::string>(), sf[1].get<std::size_t>()});
      if (it == where.end()) continue;  // HotpotQA has a few dangling references
      if (ex.support_labels[it->second] == 0) ex.support_order.push_back(it->second);
      ex.support_labels[it->second] = 1;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<QAExample> read_hotpotqa(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_hotpotqa(ss.str());
}

// ---- vocabulary ------------------------------------------------------------

Vocabulary::Vocabulary() {
  for (const char* t : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[SENT]"}) add(t);
}

std::size_t Vocabulary::add(const std::string& token) {
  auto [it, inserted] = ids_.try_emplace(token, tokens_.size());
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::size_t Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<std::size_t> Vocabulary::ids(const Tokens& tokens) const {
  std::vector<std::size_t> out;
  out.reserve(tokens.size());
  for (const std::string& t : tokens) out.push_back(id(t));
  return out;
}

Vocabulary Vocabulary::for_world(const World& world) {
  Vocabulary v;
  for (const std::string& t : kFunctionWords) v.add(t);
  for (const Relation& r : world.relations) {
    v.add(r.name);
    for (const std::string& val : r.values) v.add(val);
  }
  for (const std::string& e : world.entities) v.add(e);
  return v;
}

Vocabulary Vocabulary::from_examples(const std::vector<QAExample>& examples) {
  Vocabulary v;
  for (const QAExample& ex : examples) {
    for (const auto& t : ex.question) v.add(t);
    for (const Tokens& s : ex.sentences) {
      for (const auto& t : s) v.add(t);
    }
    for (const auto& t : tokenize(ex.answer)) v.add(t);
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write vocabulary " + path.string());
  for (const std::string& t : tokens_) os << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read vocabulary " + path.string());
  Vocabulary v;
  v.tokens_.clear();
  v.ids_.clear();
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) v.add(line);
  }
  if (v.size() < 5 || v.tokens_[kSent] != "[SENT]") {
    throw std::runtime_error("vocabulary " + path.string() + " lacks the reserved tokens");
  }
  return v;
}

}  // namespace pei
