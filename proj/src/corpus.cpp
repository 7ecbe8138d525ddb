// SPDX-License-Identifier: Apache-2.0
#include "unlearn/corpus.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "unlearn/error.hpp"

namespace unlearn {
namespace {

using WordClass = Vocabulary::WordClass;

constexpr std::array kFunctionWords = {".",  "the",  "a",     "of",      "is",    "was",
                                       "in", "with", "and",   "to",      "at",    "on",
                                       "'s", "for",  "phone", "number",  "call",  "code",
                                       "costs", "dollars"};

constexpr std::array kNames = {
    "alice",  "bob",     "carol",   "dave",    "erin",    "frank",  "grace",   "heidi",  "ivan",
    "judy",   "mallory", "nina",    "oscar",   "peggy",   "quinn",  "rupert",  "sybil",  "trent",
    "ursula", "victor",  "walter",  "xena",    "yusuf",   "zara",   "amir",    "bianca", "chen",
    "dmitri", "elena",   "farah",   "goran",   "hana",    "igor",   "jonas",   "keiko",  "lars",
    "mei",    "nadia",   "omar",    "priya",   "ravi",    "sofia",  "tomas",   "uma",    "vera",
    "wen",    "yara",    "zoltan",  "anders",  "beatriz", "cyrus",  "dalia",   "emil",   "fiona",
    "gustav", "helga",   "isabel",  "jamal",   "kira",    "luca",   "marta",   "niko",   "olga",
    "pavel",  "rosa",    "stefan",  "tara",    "ugo",     "vlad",   "wanda",   "ximena", "yosef",
    "zeno",   "arjun",   "bruno",   "clara",   "diego",   "esme",   "felix",   "gita",   "hugo",
    "ingrid", "javier",  "kamal",   "leila",   "milo",    "noor",   "otto",    "petra",  "rafael",
    "selma",  "theo",    "ulrich",  "valeria", "willem",  "yasmin"};

constexpr std::array kNouns = {
    "report",  "garden",   "letter",  "ticket",   "bridge",  "window",   "engine",   "basket",
    "candle",  "doctor",   "farmer",  "teacher",  "river",   "mountain", "castle",   "market",
    "lantern", "pencil",   "camera",  "blanket",  "bottle",  "button",   "cabinet",  "carpet",
    "ladder",  "mirror",   "needle",  "pillow",   "rocket",  "saddle",   "tunnel",   "violin",
    "wallet",  "anchor",   "barrel",  "compass",  "drawer",  "feather",  "guitar",   "hammer",
    "island",  "jacket",   "kettle",  "lemon",    "magnet",  "napkin",   "orange",   "parcel",
    "quilt",   "ribbon",   "shovel",  "trumpet",  "umbrella", "vessel",  "wagon",    "yacht",
    "apron",   "banner",   "cellar",  "dagger",   "eagle",   "falcon",   "glacier",  "helmet",
    "iceberg", "jewel",    "kitten",  "lobster",  "meadow",  "nest",     "oyster",   "pepper",
    "quarry",  "raven",    "salmon",  "tiger",    "unicorn", "valley",   "walrus",   "zebra",
    "album",   "biscuit",  "canyon",  "diamond",  "ember",   "fountain", "goblet",   "harbor",
    "ivory",   "jungle",   "kayak",   "lily",     "marble",  "nugget",   "orchard",  "puzzle",
    "quiver",  "robot",    "scarf",   "thimble",  "utensil", "velvet",   "whistle",  "yogurt",
    "acorn",   "buckle",   "chimney", "dolphin",  "easel",   "fossil",   "gadget",   "hatchet",
    "igloo",   "jigsaw",   "kiosk",   "locket",   "mitten",  "nozzle",   "otter",    "paddle",
    "quail",   "rattle",   "spindle", "tractor",  "urn",     "vase",     "wrench",   "yarn",
    "artist",  "baker",    "captain", "dentist",  "editor",  "fisher",   "gardener", "hunter",
    "inventor", "judge",   "knight",  "lawyer",   "miner",   "nurse",    "officer",  "pilot",
    "sailor",  "tailor",   "umpire",  "vendor",   "weaver",  "writer",   "archive",  "budget",
    "contract", "deposit", "estate",  "invoice",  "ledger",  "mortgage", "pension",  "receipt",
    "salary",  "account",  "balance", "license",  "passport", "permit",  "record",   "statement",
    "treaty",  "voucher"};

constexpr std::array kVerbs = {
    "bought",    "carried",  "painted",   "repaired",  "visited",   "found",     "sold",
    "opened",    "closed",   "cleaned",   "watched",   "followed",  "borrowed",  "returned",
    "signed",    "mailed",   "lifted",    "dropped",   "counted",   "measured",  "packed",
    "wrapped",   "polished", "sketched",  "studied",   "guarded",   "hid",       "moved",
    "ordered",   "printed",  "pushed",    "pulled",    "shared",    "traded",    "weighed",
    "washed",    "tested",   "stored",    "sorted",    "scanned",   "rented",    "mended",
    "locked",    "loaded",   "lost",      "kept",      "fixed",     "filled",    "fetched",
    "emptied",   "delivered", "copied",   "checked",   "built",     "baked",     "admired",
    "approved",  "archived", "assembled", "audited",   "booked",    "branded",   "cataloged",
    "charted",   "claimed",  "coded",     "crafted",   "decorated", "designed",  "drafted",
    "engraved",  "examined", "exported",  "framed",    "gathered",  "handled",   "inspected",
    "insured",   "labeled",  "launched",  "listed",    "logged",    "mapped",    "marked",
    "mounted",   "noted",    "offered",   "planted",   "posted",    "prepared",  "priced",
    "recorded",  "restored", "reviewed",  "sealed",    "shipped",   "stamped",   "tagged",
    "towed",     "tuned"};

constexpr std::array kAdjectives = {
    "red",     "blue",    "green",   "yellow",   "purple",   "silver",  "golden",   "tiny",
    "huge",    "ancient", "modern",  "quiet",    "noisy",    "bright",  "dark",     "heavy",
    "light",   "warm",    "cold",    "fresh",    "stale",    "smooth",  "rough",    "sharp",
    "dull",    "narrow",  "wide",    "shallow",  "deep",     "clean",   "dirty",    "empty",
    "full",    "brave",   "calm",    "eager",    "gentle",   "happy",   "jolly",    "kind",
    "lively",  "proud",   "silly",   "witty",    "fancy",    "plain",   "rare",     "common",
    "rapid",   "slow",    "steady",  "shiny",    "rusty",    "wooden",  "woolen",   "glass",
    "paper",   "stone",   "iron",    "copper",   "velvety",  "frozen",  "sunny",    "rainy",
    "windy",   "foggy",   "misty",   "sandy",    "rocky",    "grassy",  "spicy",    "sweet",
    "sour",    "bitter",  "salty",   "crisp",    "fragile",  "sturdy",  "hollow",   "solid"};

constexpr std::array kPlaces = {
    "paris",    "london",   "berlin",  "madrid",  "rome",     "vienna",   "prague",  "oslo",
    "lisbon",   "dublin",   "warsaw",  "athens",  "cairo",    "lagos",    "nairobi", "tokyo",
    "seoul",    "beijing",  "delhi",   "lima",    "quito",    "bogota",   "havana",  "toronto",
    "chicago",  "boston",   "denver",  "austin",  "seattle",  "phoenix",  "miami",   "atlanta",
    "sydney",   "perth",    "auckland", "manila", "jakarta",  "hanoi",    "bangkok", "dhaka",
    "karachi",  "tehran",   "baghdad", "riyadh",  "ankara",   "kyiv",     "minsk",   "riga",
    "tallinn",  "vilnius"};

struct ClassSpec {
  WordClass cls;
  std::span<const char* const> words;
  const char* fallback_stem;
};

void append_class(std::vector<std::string>& symbols, std::vector<WordClass>& classes, const ClassSpec& spec,
                  int count) {
  for (int i = 0; i < count; ++i) {
    if (static_cast<std::size_t>(i) < spec.words.size()) {
      symbols.emplace_back(spec.words[static_cast<std::size_t>(i)]);
    } else {
      symbols.push_back(std::string(spec.fallback_stem) + std::to_string(i));
    }
    classes.push_back(spec.cls);
  }
}

// Deterministic uniform draw in [0, n).
std::size_t draw(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

template <class C>
const auto& choose(std::mt19937_64& rng, const C& items) {
  return items[draw(rng, items.size())];
}

// Slot markers: $N name, $O noun, $V verb, $A adjective, $P place, $D digit,
// $X sample opener, $R planted digit run. Bare words are function words.
constexpr std::array kOpenerTemplates = {
    "$X $V the $O in $P .",
    "$X is a $A $O .",
    "$X of the $O $V $N .",
};

constexpr std::array kFillerTemplates = {
    "$N $V the $A $O .",     "the $O of $N is $A .", "$N was in $P with $N .", "a $A $O $V to $P .",
    "$N and $N $V the $O .", "the $O is at $P on the $O .", "$O costs $D $D dollars .",
};

constexpr std::array kSecretTemplates = {
    "$N 's phone number is $R .",
    "call $N at $R .",
    "the code for $P is $R .",
};

constexpr int kRunLength = 6;
constexpr int kSecretOffsetMin = 10;

class Generator {
 public:
  Generator(const Vocabulary& vocab, std::uint64_t seed) : vocab_(vocab), rng_(seed) {}

  std::mt19937_64& rng() { return rng_; }

  void emit(std::vector<TokenId>& out, std::string_view tmpl, TokenId opener,
            std::span<const TokenId> run) {
    std::istringstream words{std::string(tmpl)};
    std::string w;
    while (words >> w) {
      if (w == "$X") {
        out.push_back(opener);
      } else if (w == "$R") {
        out.insert(out.end(), run.begin(), run.end());
      } else if (w.size() == 2 && w[0] == '$') {
        out.push_back(slot(w[1]));
      } else {
        out.push_back(function_word(w));
      }
    }
  }

 private:
  TokenId slot(char marker) {
    WordClass cls = WordClass::kNoun;
    switch (marker) {
      case 'N': cls = WordClass::kName; break;
      case 'O': cls = WordClass::kNoun; break;
      case 'V': cls = WordClass::kVerb; break;
      case 'A': cls = WordClass::kAdjective; break;
      case 'P': cls = WordClass::kPlace; break;
      case 'D': cls = WordClass::kDigit; break;
      default: throw ParameterError(std::string("unknown template slot $") + marker);
    }
    auto pool = vocab_.members(cls);
    if (pool.empty()) pool = vocab_.members(WordClass::kNoun);
    if (pool.empty()) pool = vocab_.members(WordClass::kFunction);
    return choose(rng_, pool);
  }

  // Function words missing from a truncated vocabulary fold onto the ones present.
  TokenId function_word(const std::string& w) {
    auto fn = vocab_.members(WordClass::kFunction);
    for (std::size_t i = 0; i < kFunctionWords.size(); ++i) {
      if (w == kFunctionWords[i]) return fn[i % fn.size()];
    }
    throw ParameterError("template word '" + w + "' is not a function word");
  }

  const Vocabulary& vocab_;
  std::mt19937_64 rng_;
};

std::vector<TokenId> opener_pool(const Vocabulary& vocab, std::uint64_t seed) {
  std::vector<TokenId> pool;
  for (WordClass c : {WordClass::kName, WordClass::kNoun, WordClass::kAdjective, WordClass::kPlace}) {
    auto m = vocab.members(c);
    pool.insert(pool.end(), m.begin(), m.end());
  }
  std::mt19937_64 rng(seed ^ 0x6f70656e65727321ULL);
  std::shuffle(pool.begin(), pool.end(), rng);
  return pool;
}

std::string sample_id(char tag, int index) {
  std::ostringstream os;
  os << tag;
  os.width(4);
  os.fill('0');
  os << index;
  return os.str();
}

void check_params(const CorpusParams& p) {
  if (p.n_samples <= 0 || p.n_secrets <= 0) throw ParameterError("n_samples and n_secrets must be positive");
  if (p.n_secrets >= p.n_samples) throw ParameterError("n_secrets must be smaller than n_samples");
  if (p.vocab_size < Vocabulary::kMinSize) throw ParameterError("vocab_size must be at least 8");
  if (p.prefix_len <= 0 || p.suffix_len <= 0) throw ParameterError("prefix_len and suffix_len must be positive");
  if (p.prefix_len + p.suffix_len < kSecretOffsetMin + 12 + 8) {
    throw ParameterError("prefix_len + suffix_len too short to plant a secret run");
  }
}

TokenSequence split(std::string id, std::vector<TokenId> tokens, int prefix_len, int suffix_len) {
  tokens.resize(static_cast<std::size_t>(prefix_len + suffix_len));
  TokenSequence x;
  x.id = std::move(id);
  x.prefix.assign(tokens.begin(), tokens.begin() + prefix_len);
  x.suffix.assign(tokens.begin() + prefix_len, tokens.end());
  return x;
}

std::vector<TokenId> plain_sample(Generator& gen, TokenId opener, std::size_t length) {
  std::vector<TokenId> tokens;
  gen.emit(tokens, choose(gen.rng(), kOpenerTemplates), opener, {});
  while (tokens.size() < length) gen.emit(tokens, choose(gen.rng(), kFillerTemplates), opener, {});
  return tokens;
}

// Same layout for secret and public numbers: the run starts at or after
// kSecretOffsetMin so it straddles the prefix/suffix boundary.
std::vector<TokenId> contact_sample(Generator& gen, TokenId opener, std::span<const TokenId> run, std::size_t length) {
  std::vector<TokenId> tokens;
  gen.emit(tokens, choose(gen.rng(), kOpenerTemplates), opener, {});
  while (tokens.size() < kSecretOffsetMin) gen.emit(tokens, choose(gen.rng(), kFillerTemplates), opener, {});
  gen.emit(tokens, choose(gen.rng(), kSecretTemplates), opener, run);
  while (tokens.size() < length) gen.emit(tokens, choose(gen.rng(), kFillerTemplates), opener, {});
  return tokens;
}

std::vector<TokenId> fresh_run(Generator& gen, std::span<const TokenId> digits, std::set<std::vector<TokenId>>& used) {
  std::vector<TokenId> run(kRunLength);
  do {
    for (auto& d : run) d = choose(gen.rng(), digits);
  } while (!used.insert(run).second);
  return run;
}

// One in this many non-secret samples mentions a public number, so the
// grammar around a run is not itself a secret.
constexpr std::size_t kPublicRunOneIn = 2;

}  // namespace

Vocabulary Vocabulary::for_grammar(int size) {
  if (size < kMinSize) throw ParameterError("vocabulary size must be at least 8");
  Vocabulary v;
  v.symbols_ = {"<pad>", "<bos>"};
  v.classes_ = {WordClass::kSpecial, WordClass::kSpecial};
  const int remaining = size - 2;
  const int n_digit = std::min(10, std::max(1, remaining / 6));
  const int n_function = std::min(static_cast<int>(kFunctionWords.size()), std::max(1, remaining / 6));
  const int rest = remaining - n_digit - n_function;

  static constexpr std::array<const char*, 10> kDigits = {"0", "1", "2", "3", "4", "5", "6", "7", "8", "9"};
  append_class(v.symbols_, v.classes_, {WordClass::kDigit, kDigits, "d"}, n_digit);
  append_class(v.symbols_, v.classes_, {WordClass::kFunction, kFunctionWords, "fn"}, n_function);

  // Content split: names 20%, verbs 20%, adjectives 15%, places 10%, nouns the rest.
  const int n_name = rest * 20 / 100;
  const int n_verb = rest * 20 / 100;
  const int n_adj = rest * 15 / 100;
  const int n_place = rest * 10 / 100;
  const int n_noun = rest - n_name - n_verb - n_adj - n_place;
  append_class(v.symbols_, v.classes_, {WordClass::kName, kNames, "name"}, n_name);
  append_class(v.symbols_, v.classes_, {WordClass::kNoun, kNouns, "noun"}, n_noun);
  append_class(v.symbols_, v.classes_, {WordClass::kVerb, kVerbs, "verb"}, n_verb);
  append_class(v.symbols_, v.classes_, {WordClass::kAdjective, kAdjectives, "adj"}, n_adj);
  append_class(v.symbols_, v.classes_, {WordClass::kPlace, kPlaces, "place"}, n_place);

  v.members_.resize(static_cast<std::size_t>(WordClass::kPlace) + 1);
  for (std::size_t i = 0; i < v.symbols_.size(); ++i) {
    auto id = static_cast<TokenId>(i);
    if (!v.index_.emplace(v.symbols_[i], id).second) {
      throw ParameterError("duplicate vocabulary symbol " + v.symbols_[i]);
    }
    v.members_[static_cast<std::size_t>(v.classes_[i])].push_back(id);
  }
  return v;
}

const std::string& Vocabulary::symbol(TokenId id) const {
  if (id < 0 || id >= size()) throw ParameterError("token id out of range: " + std::to_string(id));
  return symbols_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::id_of(const std::string& s) const {
  auto it = index_.find(s);
  if (it == index_.end()) throw ParameterError("unknown symbol: " + s);
  return it->second;
}

std::span<const TokenId> Vocabulary::members(WordClass c) const {
  return members_.at(static_cast<std::size_t>(c));
}

std::string Vocabulary::render(std::span<const TokenId> tokens) const {
  std::string out;
  for (TokenId t : tokens) {
    if (!out.empty()) out += ' ';
    out += (t >= 0 && t < size()) ? symbols_[static_cast<std::size_t>(t)] : "<unk>";
  }
  return out;
}

std::vector<TokenId> full_sequence(const TokenSequence& x) {
  std::vector<TokenId> out;
  out.reserve(x.length());
  out.insert(out.end(), x.prefix.begin(), x.prefix.end());
  out.insert(out.end(), x.suffix.begin(), x.suffix.end());
  return out;
}

bool Corpus::is_forget(const std::string& id) const {
  return std::find(forget_ids.begin(), forget_ids.end(), id) != forget_ids.end();
}

const TokenSequence& Corpus::sample(const std::string& id) const {
  for (const auto& s : samples) {
    if (s.id == id) return s;
  }
  throw ParameterError("no sample with id " + id);
}

std::vector<TokenSequence> Corpus::forget_samples() const {
  std::set<std::string> f(forget_ids.begin(), forget_ids.end());
  std::vector<TokenSequence> out;
  for (const auto& s : samples) {
    if (f.count(s.id)) out.push_back(s);
  }
  return out;
}

std::vector<TokenSequence> Corpus::retain_samples() const {
  std::set<std::string> f(forget_ids.begin(), forget_ids.end());
  std::vector<TokenSequence> out;
  for (const auto& s : samples) {
    if (!f.count(s.id)) out.push_back(s);
  }
  return out;
}

void Corpus::validate(bool allow_empty_forget) const {
  if (vocab_size < Vocabulary::kMinSize) throw ParameterError("corpus vocab_size must be at least 8");
  if (prefix_len <= 0 || suffix_len <= 0) throw ParameterError("prefix and suffix lengths must be positive");
  std::set<std::string> ids;
  for (const auto& s : samples) {
    if (!ids.insert(s.id).second) throw ParameterError("duplicate sample id " + s.id);
    if (static_cast<int>(s.prefix.size()) != prefix_len || static_cast<int>(s.suffix.size()) != suffix_len) {
      throw ParameterError("sample " + s.id + " does not match declared prefix/suffix lengths");
    }
    for (TokenId t : full_sequence(s)) {
      if (t < 0 || t >= vocab_size) throw ParameterError("sample " + s.id + " has token outside vocabulary");
    }
  }
  std::set<std::string> f;
  for (const auto& id : forget_ids) {
    if (!ids.count(id)) throw ParameterError("forget id " + id + " is not a sample id");
    if (!f.insert(id).second) throw ParameterError("duplicate forget id " + id);
  }
  const auto m = forget_ids.size();
  if ((!allow_empty_forget && m == 0) || m >= samples.size()) {
    throw ParameterError("forget set size must satisfy 0 < M < N");
  }
}

std::vector<TokenId> planted_run(const Vocabulary& vocab, const TokenSequence& x) {
  const auto tokens = full_sequence(x);
  int run = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    run = vocab.word_class(tokens[i]) == WordClass::kDigit ? run + 1 : 0;
    if (run == kRunLength) return {tokens.begin() + static_cast<long>(i) + 1 - kRunLength, tokens.begin() + static_cast<long>(i) + 1};
  }
  return {};
}

Corpus synthesize_corpus(const CorpusParams& p) {
  check_params(p);
  const auto vocab = Vocabulary::for_grammar(p.vocab_size);
  const auto digits = vocab.members(WordClass::kDigit);
  double distinct_runs = 1.0;
  for (int i = 0; i < kRunLength; ++i) distinct_runs *= static_cast<double>(digits.size());
  if (distinct_runs < p.n_secrets) throw ParameterError("vocabulary has too few digits for distinct secret runs");
  const auto openers = opener_pool(vocab, p.seed);
  if (openers.size() <= static_cast<std::size_t>(p.n_secrets)) {
    throw ParameterError("vocabulary too small to give every secret a distinct opener");
  }

  Generator gen(vocab, p.seed);
  std::vector<int> order(static_cast<std::size_t>(p.n_samples));
  for (int i = 0; i < p.n_samples; ++i) order[static_cast<std::size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), gen.rng());
  std::vector<bool> secret(order.size(), false);
  for (int i = 0; i < p.n_secrets; ++i) secret[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;

  const std::size_t length = static_cast<std::size_t>(p.prefix_len + p.suffix_len);
  std::set<std::vector<TokenId>> used_runs;
  std::span<const TokenId> shared_openers(openers.begin() + p.n_secrets, openers.end());
  int next_secret = 0;

  Corpus c;
  c.vocab_size = p.vocab_size;
  c.prefix_len = p.prefix_len;
  c.suffix_len = p.suffix_len;
  for (int i = 0; i < p.n_samples; ++i) {
    std::string id = sample_id('s', i);
    std::vector<TokenId> tokens;
    if (secret[static_cast<std::size_t>(i)]) {
      const auto run = fresh_run(gen, digits, used_runs);
      tokens = contact_sample(gen, openers[static_cast<std::size_t>(next_secret++)], run, length);
      c.forget_ids.push_back(id);
    } else {
      const TokenId opener = choose(gen.rng(), shared_openers);
      if (draw(gen.rng(), kPublicRunOneIn) == 0) {
        const auto run = fresh_run(gen, digits, used_runs);
        tokens = contact_sample(gen, opener, run, length);
      } else {
        tokens = plain_sample(gen, opener, length);
      }
    }
    c.samples.push_back(split(std::move(id), std::move(tokens), p.prefix_len, p.suffix_len));
  }
  c.validate();
  return c;
}

Corpus synthesize_heldout(const CorpusParams& p, int n_heldout) {
  check_params(p);
  if (n_heldout <= 1) throw ParameterError("n_heldout must be at least 2");
  const auto vocab = Vocabulary::for_grammar(p.vocab_size);
  const auto openers = opener_pool(vocab, p.seed);
  std::span<const TokenId> shared_openers(openers.begin() + std::min<std::size_t>(openers.size() - 1, static_cast<std::size_t>(p.n_secrets)), openers.end());
  Generator gen(vocab, p.seed * 0x9E3779B97F4A7C15ULL + 0x68656c646f7574ULL);
  const std::size_t length = static_cast<std::size_t>(p.prefix_len + p.suffix_len);
  Corpus c;
  c.vocab_size = p.vocab_size;
  c.prefix_len = p.prefix_len;
  c.suffix_len = p.suffix_len;
  // Held-out numbers never repeat a run from the training corpus.
  std::set<std::vector<TokenId>> used_runs;
  for (const auto& x : synthesize_corpus(p).samples) {
    if (auto run = planted_run(vocab, x); !run.empty()) used_runs.insert(std::move(run));
  }
  const auto digits = vocab.members(WordClass::kDigit);
  for (int i = 0; i < n_heldout; ++i) {
    const TokenId opener = choose(gen.rng(), shared_openers);
    std::vector<TokenId> tokens;
    if (draw(gen.rng(), kPublicRunOneIn) == 0) {
      tokens = contact_sample(gen, opener, fresh_run(gen, digits, used_runs), length);
    } else {
      tokens = plain_sample(gen, opener, length);
    }
    c.samples.push_back(split(sample_id('h', i), std::move(tokens), p.prefix_len, p.suffix_len));
  }
  c.validate(/*allow_empty_forget=*/true);
  return c;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  nlohmann::json header = {{"format_version", 1},
                           {"vocab_size", corpus.vocab_size},
                           {"prefix_len", corpus.prefix_len},
                           {"suffix_len", corpus.suffix_len}};
  out << header.dump() << '\n';
  std::set<std::string> forget(corpus.forget_ids.begin(), corpus.forget_ids.end());
  for (const auto& s : corpus.samples) {
    nlohmann::json rec = {{"id", s.id}, {"prefix", s.prefix}, {"suffix", s.suffix}, {"forget", forget.count(s.id) > 0}};
    out << rec.dump() << '\n';
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path, bool allow_empty_forget) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open corpus file " + path.string());
  Corpus c;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  auto fail = [&](const std::string& what) {
    return FormatError(path.string() + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw fail(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw fail("record is not a JSON object");
    try {
      if (!have_header) {
        if (j.at("format_version").get<int>() != 1) throw fail("unsupported format_version");
        c.vocab_size = j.at("vocab_size").get<int>();
        c.prefix_len = j.at("prefix_len").get<int>();
        c.suffix_len = j.at("suffix_len").get<int>();
        have_header = true;
        continue;
      }
      TokenSequence s;
      s.id = j.at("id").get<std::string>();
      s.prefix = j.at("prefix").get<std::vector<TokenId>>();
      s.suffix = j.at("suffix").get<std::vector<TokenId>>();
      if (static_cast<int>(s.prefix.size()) != c.prefix_len) throw fail("prefix length differs from declared prefix_len");
      if (static_cast<int>(s.suffix.size()) != c.suffix_len) throw fail("suffix length differs from declared suffix_len");
      for (TokenId t : full_sequence(s)) {
        if (t < 0 || t >= c.vocab_size) throw fail("token id outside vocabulary");
      }
      if (j.at("forget").get<bool>()) c.forget_ids.push_back(s.id);
      c.samples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw fail(std::string("bad field: ") + e.what());
    }
  }
  if (!have_header) throw FormatError(path.string() + ":1: empty corpus file");
  if (c.samples.empty()) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": corpus has no records");
  try {
    c.validate(allow_empty_forget);
  } catch (const ParameterError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return c;
}

}  // namespace unlearn
