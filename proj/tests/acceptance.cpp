// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "peg/peg.hpp"

namespace {

using namespace peg;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void run(int id, const std::string& name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_s > 0 && secs > budget_s) {
    o.pass = false;
    o.detail += " (over time budget " + std::to_string(budget_s) + " s)";
  }
  if (!o.pass) ++g_failures;
  std::printf("%s [%2d] %-34s %s  [%.2f s]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(double v, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
  return buf;
}

Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (double& x : m.values()) x = n(rng);
  return m;
}

// ---------------------------------------------------------------------------
// Reference evaluation of the progressive objective, one query at a time.

double ref_cos(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  return ab / std::sqrt(aa * bb);
}

// -log(e^p / (e^p + sum e^n)) = log(1 + sum e^(n - p)), rescaled when a
// negative logit dominates.
double ref_neg_log_ratio(double pos_logit, const std::vector<double>& neg_logits) {
  double m = pos_logit;
  for (double x : neg_logits) m = std::max(m, x);
  if (m == pos_logit) {
    double s = 0.0;
    for (double x : neg_logits) s += std::exp(x - pos_logit);
    return std::log1p(s);
  }
  double s = std::exp(pos_logit - m);
  for (double x : neg_logits) s += std::exp(x - m);
  return m + std::log(s) - pos_logit;
}

struct RefCoefficients {
  std::vector<double> w;
  std::vector<std::vector<double>> a;
};

RefCoefficients ref_coefficients(const std::vector<double>& pos, const std::vector<std::vector<double>>& neg,
                                 double sigma, double t) {
  RefCoefficients c;
  for (std::size_t q = 0; q < pos.size(); ++q) {
    double w = 1.0;
    if (pos[q] < sigma && sigma > 0.0) w = std::min(1.0, std::max(0.0, pos[q] / sigma));
    c.w.push_back(w);
    std::vector<double> row;
    for (double s : neg[q]) row.push_back(pos[q] < sigma || s < pos[q] ? 1.0 : t + pos[q]);
    c.a.push_back(row);
  }
  return c;
}

double ref_loss(const std::vector<double>& pos, const std::vector<std::vector<double>>& neg,
                const RefCoefficients& c, double tau) {
  double total = 0.0;
  for (std::size_t q = 0; q < pos.size(); ++q) {
    std::vector<double> logits;
    for (std::size_t n = 0; n < neg[q].size(); ++n) logits.push_back(c.a[q][n] * neg[q][n] / tau);
    total += c.w[q] * ref_neg_log_ratio(pos[q] / tau, logits);
  }
  return total;
}

// Embedding-level objective with coefficients frozen; negatives are a pool
// filtered per query by `allowed`.
double ref_embedding_loss(const Matrix& qs, const Matrix& ps, const Matrix& ns,
                          const std::vector<std::vector<bool>>& allowed, const RefCoefficients& c, double tau) {
  std::vector<double> pos;
  std::vector<std::vector<double>> neg;
  RefCoefficients cc;
  for (std::size_t q = 0; q < qs.rows(); ++q) {
    pos.push_back(ref_cos(qs.row(q), ps.row(q)));
    std::vector<double> row, arow;
    for (std::size_t j = 0; j < ns.rows(); ++j) {
      if (!allowed[q][j]) continue;
      row.push_back(ref_cos(qs.row(q), ns.row(j)));
      arow.push_back(c.a[q][j]);
    }
    neg.push_back(row);
    cc.a.push_back(arow);
  }
  cc.w = c.w;
  return ref_loss(pos, neg, cc, tau);
}

Outcome criterion_gradients() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> pick_b(1, 4), pick_n(1, 6), pick_d(2, 8);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double taus[] = {1.0, 0.1, 0.01};
  const double h = 1e-6;
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t b = pick_b(rng), n = pick_n(rng), d = pick_d(rng);
    const double tau = taus[inst % 3];
    Matrix qs = random_matrix(rng, b, d), ps = random_matrix(rng, b, d), ns = random_matrix(rng, n, d);
    // Pull positives toward their queries so both coefficient branches occur.
    for (std::size_t q = 0; q < b; ++q) {
      const double mix = unit(rng);
      for (std::size_t k = 0; k < d; ++k) ps(q, k) = mix * qs(q, k) + (1.0 - mix) * ps(q, k);
    }
    NegativeMask mask(b, n, true);
    std::vector<std::vector<bool>> allowed(b, std::vector<bool>(n, true));
    for (std::size_t q = 0; q < b; ++q) {
      for (std::size_t j = 0; j < n; ++j) {
        if (n > 1 && unit(rng) < 0.2) {
          mask.set(q, j, false);
          allowed[q][j] = false;
        }
      }
    }
    const double t = unit(rng);
    std::vector<double> pos;
    std::vector<std::vector<double>> neg(b);
    for (std::size_t q = 0; q < b; ++q) {
      pos.push_back(ref_cos(qs.row(q), ps.row(q)));
      for (std::size_t j = 0; j < n; ++j) neg[q].push_back(ref_cos(qs.row(q), ns.row(j)));
    }
    const double sigma = batch_threshold(pos, 0.1);
    const RefCoefficients coef = ref_coefficients(pos, neg, sigma, t);
    const LossGradients lg = loss_gradients(qs, ps, ns, sigma, t, {{0.5, 0.1, tau}, LossMode::kProgressive}, mask);

    auto check = [&](Matrix& target, const Matrix& analytic) {
      double max_diff = 0.0, max_mag = 0.0;
      for (std::size_t i = 0; i < target.rows(); ++i) {
        for (std::size_t k = 0; k < target.cols(); ++k) {
          const double orig = target(i, k);
          target(i, k) = orig + h;
          const double up = ref_embedding_loss(qs, ps, ns, allowed, coef, tau);
          target(i, k) = orig - h;
          const double down = ref_embedding_loss(qs, ps, ns, allowed, coef, tau);
          target(i, k) = orig;
          const double numeric = (up - down) / (2.0 * h);
          max_diff = std::max(max_diff, std::abs(numeric - analytic(i, k)));
          max_mag = std::max({max_mag, std::abs(numeric), std::abs(analytic(i, k))});
        }
      }
      if (max_mag > 0.0) worst = std::max(worst, max_diff / max_mag);
    };
    check(qs, lg.grad_queries);
    check(ps, lg.grad_positives);
    check(ns, lg.grad_negatives);
  }
  return {worst <= 1e-5, "max rel err " + fmt(worst, 3)};
}

Outcome criterion_oracle() {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<std::size_t> pick_b(1, 16), pick_n(0, 12);
  std::uniform_real_distribution<double> sim(-1.0, 1.0), unit(0.0, 1.0);
  const double taus[] = {1.0, 0.1, 0.05, 0.01};
  double worst = 0.0;
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t b = pick_b(rng), n = pick_n(rng);
    const double tau = taus[inst % 4], t = unit(rng), beta = 0.2 * unit(rng);
    std::vector<double> pos(b);
    std::vector<std::vector<double>> neg(b, std::vector<double>(n));
    Matrix m(b, n);
    for (std::size_t q = 0; q < b; ++q) {
      pos[q] = sim(rng);
      for (std::size_t j = 0; j < n; ++j) m(q, j) = neg[q][j] = sim(rng);
    }
    double mean = 0.0;
    for (double p : pos) mean += p;
    const double sigma = mean / static_cast<double>(b) - beta;
    const double expected = ref_loss(pos, neg, ref_coefficients(pos, neg, sigma, t), tau);
    const double got = progressive_loss(pos, m, sigma, t, tau).loss;
    worst = std::max(worst, std::abs(got - expected));
  }
  return {worst <= 1e-10, "max abs diff " + fmt(worst, 3)};
}

Outcome criterion_reduction() {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<std::size_t> pick_b(1, 32), pick_n(1, 16);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double taus[] = {1.0, 0.1, 0.01};
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t b = pick_b(rng), n = pick_n(rng);
    const double beta = 0.1, tau = taus[inst % 3], t = unit(rng);
    // Positives within a band narrower than beta sit at or above sigma.
    const double lo = -0.5 + 1.4 * unit(rng);
    std::vector<double> pos(b);
    for (double& p : pos) p = lo + 0.09 * unit(rng);
    Matrix neg(b, n);
    for (std::size_t q = 0; q < b; ++q) {
      for (std::size_t j = 0; j < n; ++j) neg(q, j) = -1.0 + (pos[q] + 1.0) * unit(rng) * 0.999;
    }
    const double sigma = batch_threshold(pos, beta);
    const double a = progressive_loss(pos, neg, sigma, t, tau).loss;
    const double v = info_nce(pos, neg, tau);
    worst = std::max(worst, std::abs(a - v));
  }
  return {worst <= 1e-9, "max |progressive - infonce| " + fmt(worst, 3)};
}

Outcome criterion_momentum() {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> sim(-1.0, 1.0);
  double worst = 0.0;
  for (double alpha : {0.1, 0.5, 0.9}) {
    for (int trial = 0; trial < 10; ++trial) {
      const double m = sim(rng);
      const std::vector<double> batch(7, m);
      MomentumState state;
      for (int s = 1; s <= 50; ++s) {
        state = update_momentum(state, batch, alpha);
        const double expected = std::pow(1.0 - alpha, s) * std::abs(m);
        worst = std::max(worst, std::abs(std::abs(state.t - m) - expected));
      }
    }
  }
  return {worst <= 1e-12, "max deviation " + fmt(worst, 3)};
}

Outcome criterion_stability() {
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> sim(-1.0, 1.0);
  const std::size_t b = 1000, n = 1000;
  std::vector<double> pos(b);
  for (double& p : pos) p = sim(rng);
  Matrix neg(b, n);
  for (double& x : neg.values()) x = sim(rng);
  const double sigma = batch_threshold(pos, 0.1);
  const double loss = progressive_loss(pos, neg, sigma, 0.9, 0.01).loss;
  const double plain = info_nce(pos, neg, 0.01);
  return {std::isfinite(loss) && std::isfinite(plain) && loss > 0.0,
          "progressive " + fmt(loss) + ", infonce " + fmt(plain)};
}

Outcome criterion_metrics() {
  using namespace eval;
  auto list = [](std::initializer_list<const char*> ids) {
    RankedList r{"q", {}};
    double s = 1.0;
    for (const char* id : ids) r.entries.push_back({id, s -= 0.01});
    return r;
  };
  struct Check {
    const char* name;
    double got, want;
  };
  const Qrels one{{"q", {{"d2", 1}}}};
  const Qrels two{{"q", {{"d1", 1}, {"d3", 1}}}};
  const Qrels graded{{"q", {{"d1", 2}, {"d2", 1}, {"d9", 3}}}};
  const RankedList hit2 = list({"d1", "d2", "d3", "d4"});
  const RankedList ap = list({"d1", "d2", "d3", "d4"});
  const RankedList g = list({"d1", "d2", "d3"});
  // graded: DCG = 3/log2(2) + 1/log2(3); IDCG = 7 + 3/log2(3) + 1/log2(4)
  const double dcg = 3.0 + 1.0 / std::log2(3.0);
  const double idcg = 7.0 + 3.0 / std::log2(3.0) + 0.5;
  const std::vector<Check> checks = {
      {"ndcg@10 rank-2 hit", ndcg_at_k(hit2, one, 10), 0.6309297535714575},
      {"mrr@10 rank-2 hit", mrr_at_k(hit2, one, 10), 0.5},
      {"recall@1 rank-2 hit", recall_at_k(hit2, one, 1).value(), 0.0},
      {"recall@10 rank-2 hit", recall_at_k(hit2, one, 10).value(), 1.0},
      {"map ranks 1,3", average_precision(ap, two).value(), 0.8333333333333334},
      {"recall@2 ranks 1,3", recall_at_k(ap, two, 2).value(), 0.5},
      {"ndcg@10 graded", ndcg_at_k(g, graded, 10), dcg / idcg},
      {"recall@10 graded", recall_at_k(g, graded, 10).value(), 2.0 / 3.0},
  };
  double worst = 0.0;
  std::string bad;
  for (const auto& c : checks) {
    const double diff = std::abs(c.got - c.want);
    if (diff > 1e-12) bad += std::string(" ") + c.name;
    worst = std::max(worst, diff);
  }
  return {bad.empty(), std::to_string(checks.size()) + " fixtures, max diff " + fmt(worst, 3) + bad};
}

Outcome criterion_mining() {
  std::mt19937_64 rng(707);
  std::uniform_int_distribution<std::size_t> pick_size(100, 1000), pick_k(1, 10), pick_d(2, 8);
  std::uniform_int_distribution<int> coarse(-2, 2);
  std::size_t mismatches = 0;
  for (int corpus_no = 0; corpus_no < 50; ++corpus_no) {
    const std::size_t size = pick_size(rng), d = pick_d(rng), k = pick_k(rng);
    mining::EmbeddedCorpus corpus;
    corpus.embeddings = Matrix(size, d);
    // Small integer coordinates give many exact similarity ties.
    for (std::size_t i = 0; i < size; ++i) {
      corpus.ids.push_back("p" + std::to_string((i * 7919) % size));
      bool zero = true;
      for (std::size_t j = 0; j < d; ++j) {
        corpus.embeddings(i, j) = coarse(rng);
        zero = zero && corpus.embeddings(i, j) == 0.0;
      }
      if (zero) corpus.embeddings(i, 0) = 1.0;
    }
    Vector query(d);
    for (double& x : query) x = coarse(rng);
    query[0] += 3.0;
    std::set<std::string> positives;
    std::uniform_int_distribution<std::size_t> pick_row(0, size - 1);
    for (int p = 0; p < 3; ++p) positives.insert(corpus.ids[pick_row(rng)]);

    std::vector<std::pair<double, std::string>> all;
    for (std::size_t i = 0; i < size; ++i) {
      if (positives.count(corpus.ids[i])) continue;
      all.emplace_back(cosine(query, corpus.embeddings.row(i)), corpus.ids[i]);
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    all.resize(std::min(k, all.size()));
    const auto got = mining::mine_hard_negatives(query, corpus, positives, k);
    bool same = got.size() == all.size();
    for (std::size_t i = 0; same && i < got.size(); ++i) {
      same = got[i].passage_id == all[i].second && got[i].similarity == all[i].first;
    }
    mismatches += same ? 0 : 1;
  }
  return {mismatches == 0, "50 corpora, " + std::to_string(mismatches) + " mismatches"};
}

RunConfig synthetic_run_config() {
  RunConfig cfg;
  cfg.dim = 32;
  cfg.epochs = 20;
  cfg.lr = 0.003;
  cfg.batch_size = 128;
  cfg.bench_hard_negatives = 5;
  return cfg;
}

Outcome criterion_synthetic() {
  const RunConfig cfg = synthetic_run_config();
  const auto runs = cli::bench_seed(cfg, cfg.seed, {LossMode::kProgressive});
  const double r1 = runs.front().report.macro_recall(1).value();
  const double r10 = runs.front().report.macro_recall(10).value();
  return {r1 >= 0.9, "held-out Recall@1 " + fmt(r1, 4) + " (Recall@10 " + fmt(r10, 4) + ", " +
                         std::to_string(cfg.epochs) + " epochs)"};
}

Outcome criterion_noise() {
  RunConfig cfg = synthetic_run_config();
  cfg.noise_rate = 0.2;
  double prog = 0.0, vanilla = 0.0;
  std::string per_seed;
  for (std::size_t r = 0; r < 5; ++r) {
    const auto runs = cli::bench_seed(cfg, cfg.seed + r, {LossMode::kProgressive, LossMode::kInfoNce});
    const double p = runs[0].report.macro_recall(1).value(), v = runs[1].report.macro_recall(1).value();
    prog += p / 5.0;
    vanilla += v / 5.0;
    per_seed += " " + fmt(p, 3) + "/" + fmt(v, 3);
  }
  return {prog >= vanilla, "mean Recall@1 progressive " + fmt(prog, 4) + " vs infonce " + fmt(vanilla, 4) +
                               " (per seed" + per_seed + ")"};
}

std::vector<TokenSequence> toy_sequences(std::size_t count, std::uint64_t seed) {
  // Each sequence repeats one of a few templates with a couple of substitutions.
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick_template(0, 4), pick_len(6, 12), pick_tok(3, 42), coin(0, 9);
  std::vector<std::vector<TokenId>> templates(5);
  for (auto& t : templates) {
    for (int i = 0; i < 12; ++i) t.push_back(pick_tok(rng));
  }
  std::vector<TokenSequence> out;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& t = templates[pick_template(rng)];
    TokenSequence s;
    const int len = pick_len(rng);
    for (int j = 0; j < len; ++j) s.tokens.push_back(coin(rng) == 0 ? pick_tok(rng) : t[j]);
    out.push_back(std::move(s));
  }
  return out;
}

Outcome criterion_mae() {
  const std::size_t vocab = 43, dim = 16;
  auto corpus = toy_sequences(100, 1001);
  ToyEncoder enc = ToyEncoder::random(vocab, dim, 11);
  MaeDecoder dec = MaeDecoder::random(12, dim, vocab, 12);
  PretrainConfig pc;
  pc.epochs = 10;
  pc.batch_size = 10;
  pc.optimizer.lr = 0.02;
  const auto curve = pretrain(corpus, enc, dec, pc);
  const double ratio = curve.back() / curve.front();

  std::vector<TokenSequence> single = {corpus.front()};
  ToyEncoder enc1 = ToyEncoder::random(vocab, dim, 21);
  MaeDecoder dec1 = MaeDecoder::random(12, dim, vocab, 22);
  PretrainConfig pc1;
  pc1.epochs = 300;
  pc1.batch_size = 1;
  pc1.optimizer.lr = 0.05;
  const auto curve1 = pretrain(single, enc1, dec1, pc1);
  const double final_single = mae_loss(enc1, dec1, single[0], corrupt(single[0], pc1.mask_ratio, mix_seed(pc1.seed, 0)));
  return {ratio < 0.5 && final_single < 0.05, "epoch10/epoch1 " + fmt(ratio, 4) + " (" + fmt(curve.front(), 4) +
                                                  " -> " + fmt(curve.back(), 4) + "), single-sequence loss " +
                                                  fmt(final_single, 3)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome criterion_determinism() {
  const fs::path root = fs::temp_directory_path() / ("peg_acceptance_" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
  fs::remove_all(root);
  fs::create_directories(root);
  std::vector<Passage> passages;
  SyntheticConfig sc;
  sc.gallery = 120;
  sc.train_queries = 80;
  sc.heldout_queries = 10;
  const auto data = make_synthetic_corpus(sc);
  write_corpus(root / "corpus.jsonl", data.passages);

  RunConfig cfg;
  cfg.corpus = (root / "corpus.jsonl").string();
  cfg.optimizer = "sgd";
  cfg.lr = 0.05;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  std::ostringstream log;
  cli::cmd_pretrain(cfg, root / "pre", log);
  cfg.checkpoint = (root / "pre" / cli::kCheckpointFile).string();
  cfg.mine_k = 3;
  cli::cmd_mine(cfg, root / "mined", log);
  cfg.dataset = (root / "mined" / cli::kDatasetFile).string();
  cfg.corpus = (root / "mined" / cli::kPassagesFile).string();
  cfg.epochs = 3;
  cli::cmd_finetune(cfg, root / "a", log);
  cli::cmd_finetune(cfg, root / "b", log);
  const bool same_ckpt = slurp(root / "a" / cli::kCheckpointFile) == slurp(root / "b" / cli::kCheckpointFile);
  const bool same_audit = slurp(root / "a" / cli::kFinetuneAuditFile) == slurp(root / "b" / cli::kFinetuneAuditFile);
  const bool changed = slurp(root / "a" / cli::kCheckpointFile) != slurp(cfg.checkpoint);
  fs::remove_all(root);
  return {same_ckpt && same_audit && changed, std::string("checkpoints ") + (same_ckpt ? "identical" : "differ") +
                                                   ", audit logs " + (same_audit ? "identical" : "differ")};
}

}  // namespace

int main() {
  run(1, "gradient check", 10.0, criterion_gradients);
  run(2, "scalar oracle equivalence", 5.0, criterion_oracle);
  run(3, "reduction to InfoNCE", 0.0, criterion_reduction);
  run(4, "momentum law", 0.0, criterion_momentum);
  run(5, "numerical stability B=N=1000", 0.0, criterion_stability);
  run(6, "metric fixtures", 0.0, criterion_metrics);
  run(7, "mining exactness", 0.0, criterion_mining);
  run(8, "synthetic retrieval Recall@1", 120.0, criterion_synthetic);
  run(9, "noise robustness direction", 900.0, criterion_noise);
  run(10, "MAE pretraining sanity", 0.0, criterion_mae);
  run(11, "finetune determinism", 0.0, criterion_determinism);
  std::printf("%d criterion(s) failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
