// Command-line surface: vocabulary construction, training, perplexity
// evaluation, sampling-based generation, gradient checking and synthetic
// corpus generation.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ntmdlg/corpus.hpp"
#include "ntmdlg/train.hpp"

namespace {

using namespace ntmdlg;

struct CliOptions {
  std::string arch = "lm";
  std::string corpus_path;
  std::string vocab_path;
  std::string checkpoint_path;
  std::string resume_path;
  std::string log_path;
  std::string prompt;
  std::string gc_arch = "all";
  std::string task = "copy";
  std::string out_path;
  int vocab_size = 50000;
  int segment_size = 20;
  int slots = -1, mem_width = -1, read_heads = -1, write_heads = -1;
  int emb = -1, hidden = -1, enc_hidden = -1, ctrl_hidden = -1, ntm_out = -1;
  double lr = 1e-4;
  int batch = 32;
  int epochs = 1;
  int max_steps = 0;
  int val_every = 100;
  double clip = 0;
  std::uint64_t seed = 0;
  int precision = 32;
  int max_len = 30;
  int n = 1000;
  int len = 10;
  int width = 6;
};

TrainConfig to_train_config(const CliOptions& o) {
  TrainConfig cfg;
  cfg.arch = arch_from_name(o.arch);
  cfg.lr = o.lr;
  cfg.batch = o.batch;
  cfg.epochs = o.epochs;
  cfg.seed = o.seed;
  cfg.vocab_size = o.vocab_size;
  cfg.segment_size = o.segment_size;
  cfg.clip_norm = o.clip;
  cfg.val_every = o.val_every;
  cfg.max_steps = o.max_steps;
  cfg.emb = o.emb;
  cfg.hidden = o.hidden;
  cfg.enc_hidden = o.enc_hidden;
  cfg.slots = o.slots;
  cfg.mem_width = o.mem_width;
  cfg.read_heads = o.read_heads;
  cfg.write_heads = o.write_heads;
  cfg.ctrl_hidden = o.ctrl_hidden;
  cfg.ntm_out = o.ntm_out;
  return cfg;
}

// Encodes a corpus for the given architecture and splits 95/5 by index hash.
void prepare_datasets(Arch arch, const std::vector<Conversation>& corpus,
                      const Vocabulary& vocab, int segment_size,
                      std::vector<TrainExample>& train_set,
                      std::vector<TrainExample>& valid_set) {
  long skipped = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    TrainExample ex;
    if (is_lm_family(arch)) {
      ex = encode_lm(corpus[i], vocab, segment_size);
    } else {
      auto enc = encode_seq2seq(corpus[i], vocab);
      if (!enc) {
        ++skipped;
        continue;
      }
      ex = *enc;
    }
    (is_validation_index(i) ? valid_set : train_set).push_back(std::move(ex));
  }
  if (skipped)
    std::cerr << "warning: skipped " << skipped
              << " single-turn conversations\n";
}

template <class S>
int run_train(const CliOptions& o) {
  TrainConfig cfg = to_train_config(o);
  auto corpus = load_corpus(o.corpus_path);
  Vocabulary vocab = Vocabulary::load(o.vocab_path);
  std::vector<TrainExample> train_set, valid_set;
  prepare_datasets(cfg.arch, corpus, vocab, cfg.segment_size, train_set,
                   valid_set);

  AnyModel<S> model;
  AdamState<S> adam;
  Rng rng(cfg.seed);
  long start_step = 0;
  if (!o.resume_path.empty()) {
    auto ck = load_checkpoint<S>(o.resume_path, o.arch);
    model = std::move(ck.model);
    adam = std::move(ck.adam);
    rng = ck.rng;
    start_step = ck.step;
    cfg = ck.config;
    cfg.epochs = o.epochs;
    cfg.max_steps = o.max_steps;
  } else {
    if (vocab.size() > cfg.vocab_size)
      throw std::runtime_error(
          "configuration error: vocabulary larger than --vocab-size");
    model = build_model<S>(cfg, vocab.size());
    init_model(model, rng);
  }

  auto res = train_loop(model, adam, rng, cfg, train_set, valid_set,
                        start_step);
  std::ostream* log = &std::cout;
  std::ofstream log_file;
  if (!o.log_path.empty()) {
    log_file.open(o.log_path, std::ios::binary);
    if (!log_file) throw std::runtime_error("cannot write log: " + o.log_path);
    log = &log_file;
  }
  for (const auto& e : res.log) *log << format_log_line(e) << "\n";
  if (!o.checkpoint_path.empty())
    save_checkpoint(o.checkpoint_path, cfg, vocab.size(), o.vocab_path,
                    res.steps, model, adam, rng);
  return 0;
}

template <class S>
int run_eval(const CliOptions& o) {
  auto ck = load_checkpoint<S>(o.checkpoint_path);
  Vocabulary vocab = Vocabulary::load(o.vocab_path);
  auto corpus = load_corpus(o.corpus_path);
  std::vector<TrainExample> all;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (is_lm_family(ck.config.arch)) {
      all.push_back(encode_lm(corpus[i], vocab, ck.config.segment_size));
    } else if (auto enc = encode_seq2seq(corpus[i], vocab)) {
      all.push_back(*enc);
    }
  }
  double ppl = evaluate_perplexity(ck.model, all);
  std::printf("perplexity\t%.6f\n", ppl);
  return 0;
}

template <class S>
int run_generate(const CliOptions& o) {
  auto ck = load_checkpoint<S>(o.checkpoint_path);
  Vocabulary vocab = Vocabulary::load(o.vocab_path);
  Conversation prompt;
  std::string turn;
  std::istringstream ps(o.prompt);
  while (std::getline(ps, turn, '\t')) {
    std::istringstream ts(turn);
    std::vector<std::string> toks;
    std::string tok;
    while (ts >> tok) toks.push_back(tok);
    if (!toks.empty()) prompt.turns.push_back(std::move(toks));
  }
  if (prompt.turns.empty())
    throw std::runtime_error("generate: empty prompt");
  auto ids = generate(ck.model, prompt, vocab, o.max_len, o.seed);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) std::cout << ' ';
    std::cout << vocab.token(ids[i]);
  }
  std::cout << "\n";
  return 0;
}

int run_gradcheck(const CliOptions& o) {
  std::vector<Arch> archs;
  if (o.gc_arch == "all") {
    archs = {Arch::kSeq2Seq, Arch::kDntms, Arch::kLm, Arch::kNtmLm};
  } else {
    archs = {arch_from_name(o.gc_arch)};
  }
  bool ok = true;
  for (Arch a : archs) {
    auto rep = gradcheck_architecture(a, o.seed ? o.seed : 7);
    std::printf("%s\tmax_rel_err\t%.3e\t%s\n", arch_name(a).c_str(),
                rep.worst, rep.pass() ? "pass" : "FAIL");
    for (const auto& g : rep.groups)
      if (g.max_rel_err > 1e-5)
        std::printf("  %-24s %.3e\n", g.name.c_str(), g.max_rel_err);
    ok = ok && rep.pass();
  }
  return ok ? 0 : 1;
}

int run_synth(const CliOptions& o) {
  if (o.task == "recall") {
    auto corpus = gen_recall_dialogues(o.n, o.seed);
    save_corpus(o.out_path, corpus);
  } else if (o.task == "copy") {
    // Copy sequences rendered as two-turn conversations: pattern, then the
    // pattern again as the response.
    std::vector<Conversation> corpus;
    Rng lens(o.seed ^ 0x5eedULL);
    for (int i = 0; i < o.n; ++i) {
      int len = 1 + static_cast<int>(lens.below(static_cast<std::uint64_t>(o.len)));
      CopyTask task = gen_copy_task(len, o.width, o.seed + 1000003ull * i);
      Conversation c;
      std::vector<std::string> turn;
      for (const auto& row : task.pattern) turn.push_back(copy_token(row));
      c.turns.push_back(turn);
      c.turns.push_back(turn);
      corpus.push_back(std::move(c));
    }
    save_corpus(o.out_path, corpus);
  } else {
    throw std::runtime_error("unknown synth task: " + o.task);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Memory-augmented dialogue models (NTM-based) trainer"};
  app.require_subcommand(1);
  CliOptions o;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", o.seed, "RNG seed");
    cmd->add_option("--precision", o.precision, "scalar precision (32|64)")
        ->check(CLI::IsMember({32, 64}));
  };
  auto add_model_flags = [&](CLI::App* cmd) {
    cmd->add_option("--arch", o.arch, "seq2seq|d-ntms|lm|ntm-lm");
    cmd->add_option("--segment-size", o.segment_size, "NTM-LM segment size");
    cmd->add_option("--slots", o.slots, "memory slots");
    cmd->add_option("--mem-width", o.mem_width, "memory slot width");
    cmd->add_option("--read-heads", o.read_heads, "read head count");
    cmd->add_option("--write-heads", o.write_heads, "write head count");
    cmd->add_option("--emb", o.emb, "embedding size");
    cmd->add_option("--hidden", o.hidden, "decoder/LM hidden size");
    cmd->add_option("--enc-hidden", o.enc_hidden, "encoder hidden size");
    cmd->add_option("--ctrl-hidden", o.ctrl_hidden, "controller hidden size");
    cmd->add_option("--ntm-out", o.ntm_out, "NTM step output width");
  };

  auto* vb = app.add_subcommand("build-vocab", "build a vocabulary file");
  vb->add_option("--corpus", o.corpus_path)->required();
  vb->add_option("--vocab", o.vocab_path, "output path")->required();
  vb->add_option("--vocab-size", o.vocab_size);

  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--corpus", o.corpus_path)->required();
  tr->add_option("--vocab", o.vocab_path)->required();
  tr->add_option("--vocab-size", o.vocab_size);
  tr->add_option("--lr", o.lr);
  tr->add_option("--batch", o.batch);
  tr->add_option("--epochs", o.epochs);
  tr->add_option("--max-steps", o.max_steps);
  tr->add_option("--val-every", o.val_every);
  tr->add_option("--clip", o.clip, "max gradient norm (0 = off)");
  tr->add_option("--checkpoint", o.checkpoint_path, "output checkpoint");
  tr->add_option("--resume", o.resume_path, "checkpoint to resume from");
  tr->add_option("--log", o.log_path, "loss log path (default stdout)");
  add_model_flags(tr);
  add_common(tr);

  auto* ev = app.add_subcommand("eval", "evaluate per-word perplexity");
  ev->add_option("--checkpoint", o.checkpoint_path)->required();
  ev->add_option("--corpus", o.corpus_path)->required();
  ev->add_option("--vocab", o.vocab_path)->required();
  add_common(ev);

  auto* ge = app.add_subcommand("generate", "sample a response");
  ge->add_option("--checkpoint", o.checkpoint_path)->required();
  ge->add_option("--vocab", o.vocab_path)->required();
  ge->add_option("--prompt", o.prompt, "turns separated by TAB")->required();
  ge->add_option("--max-len", o.max_len);
  add_common(ge);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference verification");
  gc->add_option("--arch", o.gc_arch, "architecture or 'all'");
  add_common(gc);

  auto* sy = app.add_subcommand("synth", "emit a synthetic corpus");
  sy->add_option("--task", o.task, "copy|recall");
  sy->add_option("--n", o.n, "number of examples");
  sy->add_option("--len", o.len, "max copy pattern length");
  sy->add_option("--width", o.width, "copy bit width");
  sy->add_option("--out", o.out_path)->required();
  add_common(sy);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(vb)) {
      auto corpus = load_corpus(o.corpus_path);
      build_vocab(corpus, o.vocab_size).save(o.vocab_path);
      return 0;
    }
    if (app.got_subcommand(tr))
      return o.precision == 64 ? run_train<double>(o) : run_train<float>(o);
    if (app.got_subcommand(ev))
      return o.precision == 64 ? run_eval<double>(o) : run_eval<float>(o);
    if (app.got_subcommand(ge))
      return o.precision == 64 ? run_generate<double>(o)
                               : run_generate<float>(o);
    if (app.got_subcommand(gc)) return run_gradcheck(o);
    if (app.got_subcommand(sy)) return run_synth(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
