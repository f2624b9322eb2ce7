#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "peg/error.hpp"
#include "peg/optimizer.hpp"
#include "peg/progressive_loss.hpp"

namespace peg {

/// Every tunable of every pipeline stage. The file form is flat `key = value`
/// lines; `#` starts a comment line; strings may be double-quoted (needed for
/// empty strings or surrounding spaces). Unknown keys are rejected.
struct RunConfig {
  // paths
  std::string corpus;
  std::string queries;
  std::string qrels;
  std::string dataset;
  std::string checkpoint;
  std::string gallery;
  std::string out_dir = "out";

  // model
  std::size_t dim = 16;
  std::size_t max_vocab = 0;
  std::size_t max_query_len = 64;
  std::size_t max_passage_len = 256;

  // optimisation
  double mask_ratio = 0.3;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  double lr = 0.01;
  double weight_decay = 0.0;
  std::string optimizer = "adamw";
  std::string reduction = "sum";
  std::string loss_mode = "progressive";
  double alpha = 0.5;
  double beta = 0.1;
  double tau = 0.01;

  // mining
  std::size_t mine_k = 5;
  std::size_t max_chars = 512;
  std::string generator = "first_sentence";
  std::string judge = "never";
  double judge_threshold = 0.95;

  // evaluation
  std::size_t ndcg_k = 10;
  std::size_t mrr_k = 10;
  std::vector<std::size_t> recall_ks{1, 10, 50};
  std::size_t eval_depth = 0;
  bool include_unjudged = false;

  std::size_t seed = 42;
  std::string query_prefix;

  // synthetic benchmark
  std::size_t synth_clusters = 8;
  std::size_t synth_latent_dim = 16;
  std::size_t synth_gallery = 2000;
  std::size_t synth_train = 1600;
  std::size_t synth_heldout = 200;
  std::size_t synth_bins = 16;
  double synth_center_scale = 1.0;
  double synth_passage_noise = 0.5;
  double synth_query_noise = 0.1;
  double noise_rate = 0.0;
  std::size_t bench_seeds = 1;
  std::size_t bench_hard_negatives = 5;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

  HyperParams hyper() const { return {alpha, beta, tau}; }
  OptimizerConfig optimizer_config() const {
    OptimizerConfig c;
    c.kind = parse_optimizer(optimizer);
    c.lr = lr;
    c.weight_decay = weight_decay;
    return c;
  }
  Reduction reduction_mode() const { return reduction == "mean" ? Reduction::kMean : Reduction::kSum; }
  LossMode mode() const { return parse_loss_mode(loss_mode); }

  void validate() const;
};

namespace config_detail {

using Member = std::variant<std::string RunConfig::*, std::size_t RunConfig::*, double RunConfig::*,
                            bool RunConfig::*, std::vector<std::size_t> RunConfig::*>;

struct Field {
  std::string_view key;
  Member member;
};

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"corpus", &RunConfig::corpus},
      {"queries", &RunConfig::queries},
      {"qrels", &RunConfig::qrels},
      {"dataset", &RunConfig::dataset},
      {"checkpoint", &RunConfig::checkpoint},
      {"gallery", &RunConfig::gallery},
      {"out_dir", &RunConfig::out_dir},
      {"dim", &RunConfig::dim},
      {"max_vocab", &RunConfig::max_vocab},
      {"max_query_len", &RunConfig::max_query_len},
      {"max_passage_len", &RunConfig::max_passage_len},
      {"mask_ratio", &RunConfig::mask_ratio},
      {"batch_size", &RunConfig::batch_size},
      {"epochs", &RunConfig::epochs},
      {"lr", &RunConfig::lr},
      {"weight_decay", &RunConfig::weight_decay},
      {"optimizer", &RunConfig::optimizer},
      {"reduction", &RunConfig::reduction},
      {"loss_mode", &RunConfig::loss_mode},
      {"alpha", &RunConfig::alpha},
      {"beta", &RunConfig::beta},
      {"tau", &RunConfig::tau},
      {"mine_k", &RunConfig::mine_k},
      {"max_chars", &RunConfig::max_chars},
      {"generator", &RunConfig::generator},
      {"judge", &RunConfig::judge},
      {"judge_threshold", &RunConfig::judge_threshold},
      {"ndcg_k", &RunConfig::ndcg_k},
      {"mrr_k", &RunConfig::mrr_k},
      {"recall_ks", &RunConfig::recall_ks},
      {"eval_depth", &RunConfig::eval_depth},
      {"include_unjudged", &RunConfig::include_unjudged},
      {"seed", &RunConfig::seed},
      {"query_prefix", &RunConfig::query_prefix},
      {"synth_clusters", &RunConfig::synth_clusters},
      {"synth_latent_dim", &RunConfig::synth_latent_dim},
      {"synth_gallery", &RunConfig::synth_gallery},
      {"synth_train", &RunConfig::synth_train},
      {"synth_heldout", &RunConfig::synth_heldout},
      {"synth_bins", &RunConfig::synth_bins},
      {"synth_center_scale", &RunConfig::synth_center_scale},
      {"synth_passage_noise", &RunConfig::synth_passage_noise},
      {"synth_query_noise", &RunConfig::synth_query_noise},
      {"noise_rate", &RunConfig::noise_rate},
      {"bench_seeds", &RunConfig::bench_seeds},
      {"bench_hard_negatives", &RunConfig::bench_hard_negatives},
  };
  return table;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline std::string unquote(const std::string& raw, const std::string& where) {
  if (raw.size() < 2 || raw.front() != '"') return raw;
  if (raw.back() != '"') throw ValidationError(where + ": unterminated string");
  std::string out;
  for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
    if (raw[i] == '\\' && i + 2 < raw.size()) ++i;
    out.push_back(raw[i]);
  }
  return out;
}

inline std::size_t parse_size(const std::string& s, const std::string& where) {
  std::size_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ValidationError(where + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

inline double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ValidationError(where + ": expected a number, got '" + s + "'");
  }
  return v;
}

}  // namespace config_detail

/// Sets one key from its textual value.
inline void set_config_value(RunConfig& cfg, std::string_view key, const std::string& raw,
                             const std::string& where = "config") {
  using namespace config_detail;
  for (const auto& f : fields()) {
    if (f.key != key) continue;
    const std::string ctx = where + ": " + std::string(key);
    std::visit(
        [&](auto member) {
          using T = std::remove_reference_t<decltype(cfg.*member)>;
          if constexpr (std::is_same_v<T, std::string>) {
            cfg.*member = unquote(raw, ctx);
          } else if constexpr (std::is_same_v<T, std::size_t>) {
            cfg.*member = parse_size(raw, ctx);
          } else if constexpr (std::is_same_v<T, double>) {
            cfg.*member = parse_double(raw, ctx);
          } else if constexpr (std::is_same_v<T, bool>) {
            if (raw == "true") cfg.*member = true;
            else if (raw == "false") cfg.*member = false;
            else throw ValidationError(ctx + ": expected true|false, got '" + raw + "'");
          } else {
            std::vector<std::size_t> list;
            std::stringstream ss(raw);
            std::string item;
            while (std::getline(ss, item, ',')) list.push_back(parse_size(trim(item), ctx));
            cfg.*member = std::move(list);
          }
        },
        f.member);
    return;
  }
  throw ValidationError(where + ": unknown key '" + std::string(key) + "'");
}

inline RunConfig parse_config(std::string_view text, const std::string& source = "config") {
  RunConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = config_detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    const std::string where = source + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ValidationError(where + ": expected 'key = value'");
    set_config_value(cfg, config_detail::trim(std::string_view(t).substr(0, eq)),
                     config_detail::trim(std::string_view(t).substr(eq + 1)), where);
  }
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

inline std::string serialize_config(const RunConfig& cfg) {
  using namespace config_detail;
  std::string out;
  for (const auto& f : fields()) {
    out += std::string(f.key) + " = ";
    std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(cfg.*member)>;
          const auto& v = cfg.*member;
          if constexpr (std::is_same_v<T, std::string>) {
            out += quote(v);
          } else if constexpr (std::is_same_v<T, std::size_t>) {
            out += std::to_string(v);
          } else if constexpr (std::is_same_v<T, double>) {
            out += format_double(v);
          } else if constexpr (std::is_same_v<T, bool>) {
            out += v ? "true" : "false";
          } else {
            for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
          }
        },
        f.member);
    out += '\n';
  }
  return out;
}

inline void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("config: " + msg); };
  try {
    hyper().validate();
  } catch (const DomainError& e) {
    fail(e.what());
  }
  if (dim < 1) fail("dim must be >= 1");
  if (max_query_len < 1 || max_passage_len < 1) fail("max_query_len and max_passage_len must be >= 1");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) fail("mask_ratio must lie in [0, 1)");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(lr >= 0.0)) fail("lr must be >= 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (optimizer != "adamw" && optimizer != "sgd") fail("optimizer must be adamw|sgd");
  if (reduction != "sum" && reduction != "mean") fail("reduction must be sum|mean");
  if (loss_mode != "progressive" && loss_mode != "infonce") fail("loss_mode must be progressive|infonce");
  if (mine_k < 1) fail("mine_k must be >= 1");
  if (mine_k > 5) fail("mine_k must be <= 5 (at most five hard negatives per query)");
  if (max_chars < 1) fail("max_chars must be >= 1");
  if (generator != "first_sentence") fail("generator must be first_sentence");
  if (judge != "never" && judge != "always" && judge != "threshold") fail("judge must be never|always|threshold");
  if (ndcg_k < 1 || mrr_k < 1) fail("metric cutoffs must be >= 1");
  if (recall_ks.empty()) fail("recall_ks must list at least one cutoff");
  for (auto k : recall_ks) {
    if (k < 1) fail("recall cutoffs must be >= 1");
  }
  if (synth_clusters < 1 || synth_latent_dim < 1 || synth_bins < 2) fail("invalid synthetic corpus shape");
  if (synth_train + synth_heldout > synth_gallery) fail("synth_train + synth_heldout must not exceed synth_gallery");
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) fail("noise_rate must lie in [0, 1]");
  if (bench_seeds < 1) fail("bench_seeds must be >= 1");
  if (bench_hard_negatives > 5) fail("bench_hard_negatives must be <= 5");
}

}  // namespace peg
