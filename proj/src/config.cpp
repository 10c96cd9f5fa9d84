#include "dsq/config.hpp"

#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace dsq::config {

namespace {

// Minimal TOML reader covering the experiment-config subset: [table] and
// [[array-of-tables]] headers, key = value lines with strings, booleans,
// numbers, and (nested) arrays.  Comments start with '#' outside strings.

struct Value {
  enum class Type { String, Bool, Number, Array } type = Type::Number;
  std::string str;
  bool boolean = false;
  double number = 0;
  bool is_integer = false;
  long long integer = 0;
  std::vector<Value> array;
  int line = 0;
};

struct Table {
  std::map<std::string, Value> values;
};

struct Document {
  std::map<std::string, std::vector<Table>> sections;
};

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

int bracket_balance(const std::string& s) {
  int depth = 0;
  bool in_string = false;
  for (char c : s) {
    if (c == '"') in_string = !in_string;
    if (in_string) continue;
    if (c == '[') ++depth;
    if (c == ']') --depth;
  }
  return depth;
}

class ValueParser {
 public:
  ValueParser(const std::string& text, int line) : text_(text), line_(line) {}

  Value parse() {
    skip_ws();
    Value v = parse_value();
    skip_ws();
    if (pos_ != text_.size())
      throw ConfigError("trailing characters after value (line " +
                        std::to_string(line_) + ")");
    return v;
  }

 private:
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_])))
      ++pos_;
  }

  Value parse_value() {
    Value v;
    v.line = line_;
    skip_ws();
    if (pos_ >= text_.size())
      throw ConfigError("missing value (line " + std::to_string(line_) + ")");
    const char c = text_[pos_];
    if (c == '"') {
      ++pos_;
      const auto end = text_.find('"', pos_);
      if (end == std::string::npos)
        throw ConfigError("unterminated string (line " + std::to_string(line_) + ")");
      v.type = Value::Type::String;
      v.str = text_.substr(pos_, end - pos_);
      pos_ = end + 1;
      return v;
    }
    if (c == '[') {
      ++pos_;
      v.type = Value::Type::Array;
      skip_ws();
      if (pos_ < text_.size() && text_[pos_] == ']') {
        ++pos_;
        return v;
      }
      while (true) {
        v.array.push_back(parse_value());
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == ',') {
          ++pos_;
          skip_ws();
          if (pos_ < text_.size() && text_[pos_] == ']') {  // trailing comma
            ++pos_;
            return v;
          }
          continue;
        }
        if (pos_ < text_.size() && text_[pos_] == ']') {
          ++pos_;
          return v;
        }
        throw ConfigError("malformed array (line " + std::to_string(line_) + ")");
      }
    }
    if (text_.compare(pos_, 4, "true") == 0) {
      v.type = Value::Type::Bool;
      v.boolean = true;
      pos_ += 4;
      return v;
    }
    if (text_.compare(pos_, 5, "false") == 0) {
      v.type = Value::Type::Bool;
      v.boolean = false;
      pos_ += 5;
      return v;
    }
    std::size_t end = pos_;
    while (end < text_.size() && text_[end] != ',' && text_[end] != ']' &&
           !std::isspace(static_cast<unsigned char>(text_[end])))
      ++end;
    const std::string token = text_.substr(pos_, end - pos_);
    try {
      std::size_t used = 0;
      v.number = std::stod(token, &used);
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ConfigError("malformed value '" + token + "' (line " +
                        std::to_string(line_) + ")");
    }
    if (token.find_first_of(".eE") == std::string::npos) {
      v.is_integer = true;
      v.integer = std::stoll(token);
    }
    v.type = Value::Type::Number;
    pos_ = end;
    return v;
  }

  const std::string& text_;
  int line_;
  std::size_t pos_ = 0;
};

Document parse_document(const std::string& text) {
  Document doc;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::string section = "";
  doc.sections[""].emplace_back();
  while (std::getline(in, line)) {
    ++lineno;
    std::string content = trim(strip_comment(line));
    if (content.empty()) continue;
    if (content.front() == '[') {
      const bool array_table = content.size() > 1 && content[1] == '[';
      const std::string closer = array_table ? "]]" : "]";
      if (content.substr(content.size() - closer.size()) != closer)
        throw ConfigError("malformed section header (line " + std::to_string(lineno) + ")");
      const std::size_t open = array_table ? 2 : 1;
      section = trim(content.substr(open, content.size() - open - closer.size()));
      if (section.empty())
        throw ConfigError("empty section name (line " + std::to_string(lineno) + ")");
      if (array_table || doc.sections.find(section) == doc.sections.end())
        doc.sections[section].emplace_back();
      continue;
    }
    const auto eq = content.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected key = value (line " + std::to_string(lineno) + ")");
    const std::string key = trim(content.substr(0, eq));
    std::string rhs = trim(content.substr(eq + 1));
    if (key.empty())
      throw ConfigError("empty key (line " + std::to_string(lineno) + ")");
    // multi-line arrays: keep reading until brackets balance
    int balance = bracket_balance(rhs);
    while (balance > 0 && std::getline(in, line)) {
      ++lineno;
      const std::string more = trim(strip_comment(line));
      rhs += " " + more;
      balance = bracket_balance(rhs);
    }
    if (balance != 0)
      throw ConfigError("unbalanced brackets (line " + std::to_string(lineno) + ")");
    auto& table = doc.sections[section].back();
    if (table.values.count(key))
      throw ConfigError("duplicate key '" + section + "." + key + "' (line " +
                        std::to_string(lineno) + ")");
    Value v = ValueParser(rhs, lineno).parse();
    table.values[key] = std::move(v);
  }
  return doc;
}

class TableReader {
 public:
  TableReader(const Table& table, std::string section)
      : table_(table), section_(std::move(section)) {}

  bool has(const std::string& key) const { return table_.values.count(key) > 0; }

  const Value& get(const std::string& key) {
    seen_.push_back(key);
    const auto it = table_.values.find(key);
    if (it == table_.values.end())
      throw ConfigError("missing required key '" + qualified(key) + "'");
    return it->second;
  }

  std::string get_string(const std::string& key, std::optional<std::string> fallback = {}) {
    if (!has(key) && fallback) {
      seen_.push_back(key);
      return *fallback;
    }
    const Value& v = get(key);
    if (v.type != Value::Type::String)
      throw ConfigError("key '" + qualified(key) + "' must be a string (line " +
                        std::to_string(v.line) + ")");
    return v.str;
  }

  double get_number(const std::string& key, std::optional<double> fallback = {}) {
    if (!has(key) && fallback) {
      seen_.push_back(key);
      return *fallback;
    }
    const Value& v = get(key);
    if (v.type != Value::Type::Number)
      throw ConfigError("key '" + qualified(key) + "' must be a number (line " +
                        std::to_string(v.line) + ")");
    return v.number;
  }

  long long get_integer(const std::string& key, std::optional<long long> fallback = {}) {
    if (!has(key) && fallback) {
      seen_.push_back(key);
      return *fallback;
    }
    const Value& v = get(key);
    if (v.type != Value::Type::Number || !v.is_integer)
      throw ConfigError("key '" + qualified(key) + "' must be an integer (line " +
                        std::to_string(v.line) + ")");
    return v.integer;
  }

  std::vector<double> get_number_list(const std::string& key) {
    const Value& v = get(key);
    if (v.type != Value::Type::Array)
      throw ConfigError("key '" + qualified(key) + "' must be an array (line " +
                        std::to_string(v.line) + ")");
    std::vector<double> out;
    for (const auto& item : v.array) {
      if (item.type != Value::Type::Number)
        throw ConfigError("key '" + qualified(key) + "' must hold numbers (line " +
                          std::to_string(v.line) + ")");
      out.push_back(item.number);
    }
    return out;
  }

  std::vector<std::pair<Index, Index>> get_edge_list(const std::string& key) {
    const Value& v = get(key);
    if (v.type != Value::Type::Array)
      throw ConfigError("key '" + qualified(key) + "' must be an array (line " +
                        std::to_string(v.line) + ")");
    std::vector<std::pair<Index, Index>> out;
    for (const auto& item : v.array) {
      if (item.type != Value::Type::Array || item.array.size() != 2 ||
          !item.array[0].is_integer || !item.array[1].is_integer)
        throw ConfigError("key '" + qualified(key) + "' must hold [i, j] pairs (line " +
                          std::to_string(v.line) + ")");
      out.emplace_back(static_cast<Index>(item.array[0].integer),
                       static_cast<Index>(item.array[1].integer));
    }
    return out;
  }

  void reject_unknown() const {
    for (const auto& [key, value] : table_.values) {
      bool known = false;
      for (const auto& s : seen_) known |= s == key;
      if (!known)
        throw ConfigError("unknown key '" + qualified(key) + "' (line " +
                          std::to_string(value.line) + ")");
    }
  }

 private:
  std::string qualified(const std::string& key) const {
    return section_.empty() ? key : section_ + "." + key;
  }

  const Table& table_;
  std::string section_;
  std::vector<std::string> seen_;
};

}  // namespace

ExperimentConfig parse_toml(const std::string& text) {
  const Document doc = parse_document(text);
  ExperimentConfig cfg;

  for (const auto& [name, tables] : doc.sections) {
    if (name.empty()) {
      if (!tables.empty() && !tables.front().values.empty())
        throw ConfigError("unknown key '" + tables.front().values.begin()->first +
                          "' outside any section (line " +
                          std::to_string(tables.front().values.begin()->second.line) + ")");
      continue;
    }
    if (name != "problem" && name != "topology" && name != "compressor" &&
        name != "output" && name != "lr_decay" && name != "algorithms")
      throw ConfigError("unknown section '" + name + "'");
  }

  if (doc.sections.count("problem")) {
    TableReader r(doc.sections.at("problem").front(), "problem");
    cfg.problem.kind = r.get_string("kind", std::string("quadratic"));
    cfg.problem.d = static_cast<Index>(r.get_integer("d", 32));
    cfg.problem.m_per_node = static_cast<Index>(r.get_integer("m_per_node", 64));
    cfg.problem.heterogeneity = r.get_number("heterogeneity", 0.5);
    cfg.problem.margin = r.get_number("margin", 1.0);
    cfg.problem.noise_sigma = r.get_number("noise_sigma", 0.0);
    cfg.problem.l2_reg = r.get_number("l2_reg", 0.0);
    cfg.problem.seed = static_cast<std::uint64_t>(r.get_integer("seed", 1));
    cfg.problem.libsvm_path = r.get_string("libsvm_path", std::string(""));
    cfg.problem.partition = r.get_string("partition", std::string("shuffled"));
    r.reject_unknown();
    if (cfg.problem.kind != "quadratic" && cfg.problem.kind != "logistic")
      throw ConfigError("problem.kind must be 'quadratic' or 'logistic'");
    if (cfg.problem.partition != "shuffled" && cfg.problem.partition != "label_sorted")
      throw ConfigError("problem.partition must be 'shuffled' or 'label_sorted'");
  }

  if (doc.sections.count("topology")) {
    TableReader r(doc.sections.at("topology").front(), "topology");
    cfg.topology.kind = r.get_string("kind", std::string("ring"));
    cfg.topology.n = static_cast<Index>(r.get_integer("n", 8));
    if (r.has("edges")) cfg.topology.edges = r.get_edge_list("edges");
    r.reject_unknown();
    if (cfg.topology.kind != "ring" && cfg.topology.kind != "complete" &&
        cfg.topology.kind != "edges")
      throw ConfigError("topology.kind must be 'ring', 'complete', or 'edges'");
    if (cfg.topology.kind == "edges" && cfg.topology.edges.empty())
      throw ConfigError("topology.kind = 'edges' requires a nonempty edges list");
  }

  if (doc.sections.count("compressor")) {
    TableReader r(doc.sections.at("compressor").front(), "compressor");
    cfg.compressor.kind = r.get_string("kind", std::string("identity"));
    cfg.compressor.k = static_cast<Index>(r.get_integer("k", 0));
    cfg.compressor.bits = static_cast<int>(r.get_integer("bits", 0));
    r.reject_unknown();
    if (cfg.compressor.kind != "identity" && cfg.compressor.kind != "topk" &&
        cfg.compressor.kind != "randk" && cfg.compressor.kind != "bitquant")
      throw ConfigError("compressor.kind must be identity|topk|randk|bitquant");
  }

  if (doc.sections.count("output")) {
    TableReader r(doc.sections.at("output").front(), "output");
    cfg.outdir = r.get_string("outdir", std::string("out"));
    if (r.has("target_loss")) cfg.target_loss = r.get_number("target_loss");
    r.reject_unknown();
  }

  if (doc.sections.count("lr_decay")) {
    TableReader r(doc.sections.at("lr_decay").front(), "lr_decay");
    engine::LrDecay decay;
    decay.every = static_cast<long>(r.get_integer("every"));
    decay.factor = r.get_number("factor");
    r.reject_unknown();
    if (decay.every < 1) throw ConfigError("lr_decay.every must be >= 1");
    if (!(decay.factor > 0.0 && decay.factor <= 1.0))
      throw ConfigError("lr_decay.factor must lie in (0, 1]");
    cfg.lr_decay = decay;
  }

  if (!doc.sections.count("algorithms") || doc.sections.at("algorithms").empty())
    throw ConfigError("config needs at least one [[algorithms]] block");
  for (const auto& table : doc.sections.at("algorithms")) {
    TableReader r(table, "algorithms");
    AlgorithmConfig alg;
    alg.name = r.get_string("name");
    engine::parse_algorithm(alg.name);  // validates the name
    alg.gammas = r.get_number_list("gammas");
    alg.eta = r.get_number("eta", 0.5);
    alg.T = static_cast<long>(r.get_integer("T", 100));
    alg.batch_size = static_cast<Index>(r.get_integer("batch_size", 0));
    for (double s : r.get_number_list("seeds"))
      alg.seeds.push_back(static_cast<std::uint64_t>(s));
    alg.eval_every = static_cast<long>(r.get_integer("eval_every", 1));
    r.reject_unknown();
    if (alg.gammas.empty())
      throw ConfigError("algorithms." + alg.name + ": gammas must be nonempty");
    if (alg.seeds.empty())
      throw ConfigError("algorithms." + alg.name + ": seeds must be nonempty");
    cfg.algorithms.push_back(std::move(alg));
  }
  return cfg;
}

ExperimentConfig load_toml(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_toml(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

TopologyConfig parse_topology_toml(const std::string& text) {
  const Document doc = parse_document(text);
  TopologyConfig cfg;
  if (!doc.sections.count("topology"))
    throw ConfigError("config has no [topology] section");
  TableReader r(doc.sections.at("topology").front(), "topology");
  cfg.kind = r.get_string("kind", std::string("ring"));
  cfg.n = static_cast<Index>(r.get_integer("n", 8));
  if (r.has("edges")) cfg.edges = r.get_edge_list("edges");
  r.reject_unknown();
  return cfg;
}

TopologyConfig load_topology(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_topology_toml(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

compression::CompressorSpec to_spec(const CompressorConfig& cfg) {
  if (cfg.kind == "identity") return compression::CompressorSpec::identity();
  if (cfg.kind == "topk") return compression::CompressorSpec::topk(cfg.k);
  if (cfg.kind == "randk") return compression::CompressorSpec::randk(cfg.k);
  if (cfg.kind == "bitquant") return compression::CompressorSpec::bit_quant(cfg.bits);
  throw ConfigError("unknown compressor kind '" + cfg.kind + "'");
}

topology::MixingMatrix build_topology(const TopologyConfig& cfg) {
  if (cfg.kind == "ring") return topology::build_ring(cfg.n);
  if (cfg.kind == "complete") return topology::build_complete(cfg.n);
  if (cfg.kind == "edges") return topology::build_from_edges(cfg.n, cfg.edges);
  throw ConfigError("unknown topology kind '" + cfg.kind + "'");
}

problems::ProblemSpec build_problem(const ProblemConfig& cfg, Index n_nodes) {
  const auto strategy = cfg.partition == "label_sorted"
                            ? problems::PartitionStrategy::LabelSorted
                            : problems::PartitionStrategy::Shuffled;
  if (!cfg.libsvm_path.empty()) {
    const auto ds = problems::load_libsvm(cfg.libsvm_path);
    const auto kind = cfg.kind == "logistic" ? problems::Kind::Logistic
                                             : problems::Kind::Quadratic;
    return problems::from_dataset(ds, kind, n_nodes, strategy, cfg.seed, cfg.l2_reg,
                                  cfg.noise_sigma);
  }
  if (cfg.kind == "logistic")
    return problems::synth_two_class(n_nodes, cfg.d, cfg.m_per_node, cfg.margin,
                                     cfg.seed, strategy, cfg.l2_reg, cfg.noise_sigma);
  return problems::synth_quadratic(n_nodes, cfg.d, cfg.m_per_node, cfg.heterogeneity,
                                   cfg.seed, cfg.noise_sigma);
}

}  // namespace dsq::config
