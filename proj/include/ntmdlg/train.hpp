#pragma once

// Adam optimizer, training loop, perplexity evaluation, random-sampling
// generation, finite-difference gradient checking and checkpoint I/O for the
// four architectures (seq2seq, d-ntms, lm, ntm-lm).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ntmdlg/corpus.hpp"
#include "ntmdlg/dntms.hpp"
#include "ntmdlg/ntmlm.hpp"
#include "ntmdlg/rng.hpp"
#include "ntmdlg/tensor.hpp"

namespace ntmdlg {

enum class Arch { kSeq2Seq, kDntms, kLm, kNtmLm };

inline std::string arch_name(Arch a) {
  switch (a) {
    case Arch::kSeq2Seq: return "seq2seq";
    case Arch::kDntms: return "d-ntms";
    case Arch::kLm: return "lm";
    case Arch::kNtmLm: return "ntm-lm";
  }
  throw std::logic_error("bad arch");
}

inline Arch arch_from_name(const std::string& s) {
  if (s == "seq2seq") return Arch::kSeq2Seq;
  if (s == "d-ntms") return Arch::kDntms;
  if (s == "lm") return Arch::kLm;
  if (s == "ntm-lm") return Arch::kNtmLm;
  throw std::invalid_argument("unknown architecture: " + s);
}

inline bool is_lm_family(Arch a) {
  return a == Arch::kLm || a == Arch::kNtmLm;
}

struct TrainConfig {
  Arch arch = Arch::kLm;
  double lr = 1e-4;
  int batch = 32;
  int epochs = 1;
  std::uint64_t seed = 0;
  int vocab_size = 50000;
  int segment_size = 20;       // ntm-lm
  double clip_norm = 0;        // 0 disables clipping
  int val_every = 100;
  int max_steps = 0;           // 0: no cap
  // Dimension overrides; -1 keeps the architecture default.
  int emb = -1;
  int hidden = -1;             // decoder / LM hidden
  int enc_hidden = -1;
  int slots = -1;
  int mem_width = -1;
  int read_heads = -1;
  int write_heads = -1;
  int ctrl_hidden = -1;
  int ntm_out = -1;

  void validate() const {
    if (lr <= 0 || batch < 1 || epochs < 1 || segment_size < 1)
      throw std::invalid_argument("train config: non-positive field");
  }
};

template <class S>
struct AnyModel {
  Arch arch = Arch::kLm;
  std::unique_ptr<DntmsModel<S>> dntms;
  std::unique_ptr<NtmLmModel<S>> ntmlm;

  std::vector<Param<S>*> params() {
    return dntms ? dntms->params() : ntmlm->params();
  }
  int vocab() const {
    return dntms ? dntms->cfg.vocab : ntmlm->cfg.vocab;
  }
};

template <class S>
AnyModel<S> build_model(const TrainConfig& cfg, int vocab_size) {
  AnyModel<S> m;
  m.arch = cfg.arch;
  auto ov = [](int v, int dflt) { return v > 0 ? v : dflt; };
  if (is_lm_family(cfg.arch)) {
    NtmLmConfig c = NtmLmConfig::defaults(vocab_size,
                                          cfg.arch == Arch::kNtmLm);
    c.emb = ov(cfg.emb, c.emb);
    c.hidden = ov(cfg.hidden, c.hidden);
    c.segment_size = cfg.segment_size;
    c.ntm.slots = ov(cfg.slots, c.ntm.slots);
    c.ntm.width = ov(cfg.mem_width, c.ntm.width);
    c.ntm.read_heads = ov(cfg.read_heads, c.ntm.read_heads);
    c.ntm.write_heads = ov(cfg.write_heads, c.ntm.write_heads);
    c.ntm.ctrl_hidden = ov(cfg.ctrl_hidden, c.ntm.ctrl_hidden);
    c.ntm.output = ov(cfg.ntm_out, c.ntm.output);
    c.finalize();
    m.ntmlm = std::make_unique<NtmLmModel<S>>(c);
  } else {
    DntmsConfig c = DntmsConfig::defaults(vocab_size,
                                          cfg.arch == Arch::kDntms);
    c.emb = ov(cfg.emb, c.emb);
    c.dec_hidden = ov(cfg.hidden, c.dec_hidden);
    c.enc_hidden = ov(cfg.enc_hidden, c.enc_hidden);
    c.ntm.slots = ov(cfg.slots, c.ntm.slots);
    c.ntm.width = ov(cfg.mem_width, c.ntm.width);
    c.ntm.read_heads = ov(cfg.read_heads, c.ntm.read_heads);
    c.ntm.write_heads = ov(cfg.write_heads, c.ntm.write_heads);
    c.ntm.ctrl_hidden = ov(cfg.ctrl_hidden, c.ntm.ctrl_hidden);
    c.ntm.output = ov(cfg.ntm_out, c.ntm.output);
    c.finalize();
    m.dntms = std::make_unique<DntmsModel<S>>(c);
  }
  return m;
}

template <class S>
void init_model(AnyModel<S>& m, Rng& rng) {
  if (m.dntms) m.dntms->init(rng);
  if (m.ntmlm) m.ntmlm->init(rng);
}

using TrainExample = std::variant<EncodedDialogue, EncodedStream>;

template <class S>
struct ExampleLoss {
  Var<S> nll;
  int count = 0;
};

template <class S>
ExampleLoss<S> example_loss(Tape<S>& t, AnyModel<S>& m,
                            const TrainExample& ex) {
  if (std::holds_alternative<EncodedDialogue>(ex)) {
    if (!m.dntms)
      throw std::invalid_argument("dialogue example fed to an LM model");
    auto l = forward_loss(t, std::get<EncodedDialogue>(ex), *m.dntms);
    return {l.total_nll, l.token_count};
  }
  if (!m.ntmlm)
    throw std::invalid_argument("stream example fed to a seq2seq model");
  auto l = lm_forward(t, std::get<EncodedStream>(ex), *m.ntmlm,
                      m.arch == Arch::kNtmLm ? LmMode::kNtmLm : LmMode::kLm);
  return {l.total_nll, l.token_count};
}

// --- Adam -------------------------------------------------------------------

template <class S>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  std::vector<std::vector<S>> m, v;

  void ensure(const std::vector<Param<S>*>& params) {
    if (!m.empty()) return;
    for (auto* p : params) {
      m.emplace_back(p->size(), S(0));
      v.emplace_back(p->size(), S(0));
    }
  }
};

template <class S>
void adam_step(std::vector<Param<S>*>& params, AdamState<S>& st, double lr) {
  st.ensure(params);
  if (st.m.size() != params.size())
    throw std::invalid_argument("adam_step: state/parameter count mismatch");
  ++st.t;
  double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param<S>& p = *params[i];
    if (st.m[i].size() != p.size())
      throw std::invalid_argument("adam_step: moment shape mismatch for " +
                                  p.name);
    for (std::size_t j = 0; j < p.size(); ++j) {
      double g = static_cast<double>(p.grad[j]);
      double mj = st.beta1 * st.m[i][j] + (1.0 - st.beta1) * g;
      double vj = st.beta2 * st.v[i][j] + (1.0 - st.beta2) * g * g;
      st.m[i][j] = static_cast<S>(mj);
      st.v[i][j] = static_cast<S>(vj);
      double mhat = mj / bc1;
      double vhat = vj / bc2;
      p.value[j] = static_cast<S>(p.value[j] -
                                  lr * mhat / (std::sqrt(vhat) + st.eps));
    }
  }
}

template <class S>
void clip_gradients(std::vector<Param<S>*>& params, double max_norm) {
  if (max_norm <= 0) return;
  double sq = 0;
  for (auto* p : params)
    for (S g : p->grad) sq += static_cast<double>(g) * g;
  double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  double scale = max_norm / norm;
  for (auto* p : params)
    for (auto& g : p->grad) g = static_cast<S>(g * scale);
}

// --- training loop ----------------------------------------------------------

struct LossLogEntry {
  long step;
  std::string split;  // "train" or "valid"
  double loss;
};

inline std::string format_log_line(const LossLogEntry& e) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%ld\t%s\t%.9g", e.step, e.split.c_str(),
                e.loss);
  return buf;
}

template <class S>
double dataset_mean_nll(AnyModel<S>& m, const std::vector<TrainExample>& xs,
                        std::size_t limit = 0) {
  double total = 0;
  long count = 0;
  std::size_t n = xs.size();
  if (limit && n > limit) n = limit;
  for (std::size_t i = 0; i < n; ++i) {
    Tape<S> t;
    auto l = example_loss(t, m, xs[i]);
    total += static_cast<double>(t.scalar(l.nll));
    count += l.count;
  }
  if (count == 0) throw std::invalid_argument("evaluation set is empty");
  return total / count;
}

template <class S>
double evaluate_perplexity(AnyModel<S>& m,
                           const std::vector<TrainExample>& xs) {
  return std::exp(dataset_mean_nll(m, xs));
}

template <class S>
struct TrainResult {
  std::vector<LossLogEntry> log;
  long steps = 0;
};

// One epoch = ceil(n / batch) optimizer steps. Per-example recurrent and NTM
// states; loss normalized per unmasked token.
template <class S>
TrainResult<S> train_loop(AnyModel<S>& m, AdamState<S>& adam, Rng& rng,
                          const TrainConfig& cfg,
                          const std::vector<TrainExample>& train_set,
                          const std::vector<TrainExample>& valid_set,
                          long start_step = 0) {
  cfg.validate();
  if (train_set.empty())
    throw std::invalid_argument("train: empty training set");
  auto params = m.params();
  adam.ensure(params);
  TrainResult<S> res;
  long step = start_step;
  std::vector<std::size_t> order(train_set.size());
  bool done = false;
  for (int epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    // re-derive the permutation from the identity each epoch so a resumed
    // run shuffles exactly like an unbroken one
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t at = 0; at < order.size() && !done;
         at += static_cast<std::size_t>(cfg.batch)) {
      std::size_t end = std::min(order.size(),
                                 at + static_cast<std::size_t>(cfg.batch));
      Tape<S> t;
      Var<S> total = t.constant({}, S(0));
      int tokens = 0;
      for (std::size_t i = at; i < end; ++i) {
        auto l = example_loss(t, m, train_set[order[i]]);
        total = t.add(total, l.nll);
        tokens += l.count;
      }
      if (tokens == 0)
        throw std::invalid_argument("train: batch with no loss tokens");
      auto loss = t.affine(total, S(1.0 / tokens), S(0));
      t.backward(loss);
      clip_gradients(params, cfg.clip_norm);
      adam_step(params, adam, cfg.lr);
      ++step;
      res.log.push_back({step, "train", static_cast<double>(t.scalar(loss))});
      if (!valid_set.empty() && cfg.val_every > 0 &&
          step % cfg.val_every == 0) {
        res.log.push_back(
            {step, "valid", dataset_mean_nll(m, valid_set, 256)});
      }
      if (cfg.max_steps > 0 && step - start_step >= cfg.max_steps) done = true;
    }
  }
  if (!valid_set.empty()) {
    res.log.push_back({step, "valid", dataset_mean_nll(m, valid_set, 256)});
  }
  res.steps = step;
  return res;
}

// --- sampling ----------------------------------------------------------------

// Samples an id from a probability vector with PAD excluded and the rest
// renormalized.
template <class S>
int sample_token(const std::vector<S>& probs, Rng& rng) {
  double z = 0;
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (i != Vocabulary::kPad) z += static_cast<double>(probs[i]);
  double u = rng.uniform(0.0, 1.0) * z;
  double acc = 0;
  int last = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (i == Vocabulary::kPad) continue;
    acc += static_cast<double>(probs[i]);
    last = static_cast<int>(i);
    if (u <= acc) return last;
  }
  return last;
}

// Random-sampling generation (temperature 1) until EOS or max_len tokens.
template <class S>
std::vector<int> generate(AnyModel<S>& m, const Conversation& prompt,
                          const Vocabulary& v, int max_len,
                          std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> out;
  if (is_lm_family(m.arch)) {
    EncodedStream s = encode_lm(prompt, v, m.ntmlm->cfg.segment_size);
    if (!s.ids.empty() && s.ids.back() == Vocabulary::kEos)
      s.ids.pop_back();  // keep generating past the prompt
    s.ids.push_back(Vocabulary::kSep);
    Tape<S> t;
    auto run = LmRun<S>::start(
        t, *m.ntmlm, m.arch == Arch::kNtmLm ? LmMode::kNtmLm : LmMode::kLm);
    for (int id : s.ids) run.consume(id);
    for (int i = 0; i < max_len; ++i) {
      auto dist = t.softmax(run.logits());
      int id = sample_token(t.val(dist), rng);
      out.push_back(id);
      if (id == Vocabulary::kEos) break;
      run.consume(id);
    }
  } else {
    Conversation padded = prompt;
    padded.turns.push_back({"<eos>"});  // dummy final turn; history = prompt
    auto enc = encode_seq2seq(padded, v);
    if (!enc) throw std::invalid_argument("generate: prompt not encodable");
    Tape<S> t;
    auto encoding = encode_history(t, *enc, *m.dntms);
    auto st = init_decode(t, encoding, *m.dntms);
    int y_prev = Vocabulary::kPad;
    for (int i = 0; i < max_len; ++i) {
      auto r = decode_step(t, y_prev, encoding.context, st, *m.dntms);
      int id = sample_token(t.val(r.logits), rng);
      out.push_back(id);
      if (id == Vocabulary::kEos) break;
      st = r.state;
      y_prev = id;
    }
  }
  return out;
}

// --- gradient checking --------------------------------------------------------

struct GradcheckGroup {
  std::string name;
  double max_rel_err = 0;
};

struct GradcheckReport {
  std::vector<GradcheckGroup> groups;
  double worst = 0;
  bool pass(double tol = 1e-4) const { return worst < tol; }
};

// Compares analytic gradients against central finite differences over every
// parameter scalar. `forward` must rebuild the graph from current parameter
// values and return the loss; `backward_pass` must additionally fill
// Param.grad.
template <class S>
GradcheckReport run_gradcheck(std::vector<Param<S>*> params,
                              const std::function<double()>& forward,
                              const std::function<double()>& backward_pass,
                              double h = 1e-5) {
  GradcheckReport rep;
  backward_pass();
  std::vector<std::vector<S>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param<S>& p = *params[i];
    GradcheckGroup g{p.name, 0};
    for (std::size_t j = 0; j < p.size(); ++j) {
      S orig = p.value[j];
      p.value[j] = orig + static_cast<S>(h);
      double lp = forward();
      p.value[j] = orig - static_cast<S>(h);
      double lm = forward();
      p.value[j] = orig;
      double fd = (lp - lm) / (2 * h);
      double an = static_cast<double>(analytic[i][j]);
      double denom = std::max({std::abs(an), std::abs(fd), 1e-4});
      g.max_rel_err = std::max(g.max_rel_err, std::abs(an - fd) / denom);
    }
    rep.worst = std::max(rep.worst, g.max_rel_err);
    rep.groups.push_back(std::move(g));
  }
  return rep;
}

// Tiny-dimension preset used by the gradcheck command.
inline TrainConfig gradcheck_config(Arch arch) {
  TrainConfig cfg;
  cfg.arch = arch;
  cfg.vocab_size = 11;
  cfg.emb = 4;
  cfg.hidden = 6;
  cfg.enc_hidden = 6;
  cfg.slots = 4;
  cfg.mem_width = 5;
  cfg.read_heads = 1;
  cfg.write_heads = 1;
  cfg.ctrl_hidden = 6;
  cfg.ntm_out = 5;
  cfg.segment_size = 3;
  return cfg;
}

inline TrainExample gradcheck_example(Arch arch) {
  if (is_lm_family(arch)) {
    EncodedStream s;
    s.ids = {4, 5, 6, 7, 8, 9, 10, 4, 6, 8};
    s.mask.assign(s.ids.size(), true);
    s.segment_size = 3;
    return s;
  }
  EncodedDialogue d;
  d.turns.push_back({0, {4, 5, 6, 7, 8}});
  d.turns.push_back({1, {9, 10, 4}});
  d.response = {5, 6, 7, Vocabulary::kEos};
  return d;
}

// Full gradient check of one architecture at tiny dimensions (64-bit).
inline GradcheckReport gradcheck_architecture(Arch arch,
                                              std::uint64_t seed = 7) {
  TrainConfig cfg = gradcheck_config(arch);
  AnyModel<double> model = build_model<double>(cfg, cfg.vocab_size);
  Rng rng(seed);
  init_model(model, rng);
  TrainExample ex = gradcheck_example(arch);
  auto forward = [&]() {
    Tape<double> t;
    auto l = example_loss(t, model, ex);
    return t.scalar(l.nll);
  };
  auto backward_pass = [&]() {
    Tape<double> t;
    auto l = example_loss(t, model, ex);
    t.backward(l.nll);
    return t.scalar(l.nll);
  };
  return run_gradcheck<double>(model.params(), forward, backward_pass);
}

// --- checkpointing -------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("checkpoint corrupt: truncated file");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_str(std::istream& is) {
  std::uint32_t n = read_u32(is);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n))
    throw std::runtime_error("checkpoint corrupt: truncated string");
  return s;
}

template <class S>
void write_tensor(std::ostream& os, const std::string& name,
                  const Shape& shape, const std::vector<S>& data) {
  write_str(os, name);
  write_u32(os, static_cast<std::uint32_t>(shape.size()));
  for (int d : shape) write_u32(os, static_cast<std::uint32_t>(d));
  // raw little-endian scalars (this project targets little-endian hosts)
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(S)));
}

template <class S>
void read_tensor_into(std::istream& is, const std::string& expect_name,
                      const Shape& expect_shape, std::vector<S>& out) {
  std::string name = read_str(is);
  if (name != expect_name)
    throw std::runtime_error("checkpoint mismatch: expected tensor '" +
                             expect_name + "', found '" + name + "'");
  std::uint32_t rank = read_u32(is);
  Shape sh(rank);
  for (auto& d : sh) d = static_cast<int>(read_u32(is));
  if (sh != expect_shape)
    throw std::runtime_error("checkpoint mismatch: tensor '" + name +
                             "' has shape " + shape_str(sh) + ", expected " +
                             shape_str(expect_shape));
  out.resize(numel(sh));
  if (!is.read(reinterpret_cast<char*>(out.data()),
               static_cast<std::streamsize>(out.size() * sizeof(S))))
    throw std::runtime_error("checkpoint corrupt: truncated tensor '" + name +
                             "'");
}

inline nlohmann::json config_json(const TrainConfig& cfg) {
  return nlohmann::json{{"arch", arch_name(cfg.arch)},
                        {"lr", cfg.lr},
                        {"batch", cfg.batch},
                        {"epochs", cfg.epochs},
                        {"seed", cfg.seed},
                        {"vocab_size", cfg.vocab_size},
                        {"segment_size", cfg.segment_size},
                        {"clip_norm", cfg.clip_norm},
                        {"val_every", cfg.val_every},
                        {"max_steps", cfg.max_steps},
                        {"emb", cfg.emb},
                        {"hidden", cfg.hidden},
                        {"enc_hidden", cfg.enc_hidden},
                        {"slots", cfg.slots},
                        {"mem_width", cfg.mem_width},
                        {"read_heads", cfg.read_heads},
                        {"write_heads", cfg.write_heads},
                        {"ctrl_hidden", cfg.ctrl_hidden},
                        {"ntm_out", cfg.ntm_out}};
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.arch = arch_from_name(j.at("arch").get<std::string>());
  cfg.lr = j.at("lr").get<double>();
  cfg.batch = j.at("batch").get<int>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.segment_size = j.at("segment_size").get<int>();
  cfg.clip_norm = j.at("clip_norm").get<double>();
  cfg.val_every = j.at("val_every").get<int>();
  cfg.max_steps = j.at("max_steps").get<int>();
  cfg.emb = j.at("emb").get<int>();
  cfg.hidden = j.at("hidden").get<int>();
  cfg.enc_hidden = j.at("enc_hidden").get<int>();
  cfg.slots = j.at("slots").get<int>();
  cfg.mem_width = j.at("mem_width").get<int>();
  cfg.read_heads = j.at("read_heads").get<int>();
  cfg.write_heads = j.at("write_heads").get<int>();
  cfg.ctrl_hidden = j.at("ctrl_hidden").get<int>();
  cfg.ntm_out = j.at("ntm_out").get<int>();
  return cfg;
}

}  // namespace detail

template <class S>
struct Checkpoint {
  TrainConfig config;
  int vocab_size = 0;
  std::string vocab_path;
  long step = 0;
  AnyModel<S> model;
  AdamState<S> adam;
  Rng rng;
};

template <class S>
void save_checkpoint(const std::string& path, const TrainConfig& cfg,
                     int vocab_size, const std::string& vocab_path,
                     long step, AnyModel<S>& model, AdamState<S>& adam,
                     const Rng& rng) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  os.write("NTMD", 4);
  detail::write_u32(os, kCheckpointVersion);
  nlohmann::json header{{"config", detail::config_json(cfg)},
                        {"vocab_size", vocab_size},
                        {"vocab_path", vocab_path},
                        {"step", step},
                        {"adam_t", adam.t},
                        {"precision", static_cast<int>(sizeof(S) * 8)},
                        {"rng_state", rng.state()}};
  detail::write_str(os, header.dump());
  auto params = model.params();
  detail::write_u32(os, static_cast<std::uint32_t>(params.size()));
  for (auto* p : params) detail::write_tensor(os, p->name, p->shape, p->value);
  AdamState<S>& a = const_cast<AdamState<S>&>(adam);
  a.ensure(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    detail::write_tensor(os, "adam.m." + params[i]->name, params[i]->shape,
                         a.m[i]);
    detail::write_tensor(os, "adam.v." + params[i]->name, params[i]->shape,
                         a.v[i]);
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

template <class S>
Checkpoint<S> load_checkpoint(const std::string& path,
                              const std::string& expect_arch = "") {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "NTMD", 4) != 0)
    throw std::runtime_error("checkpoint corrupt: bad format id");
  std::uint32_t version = detail::read_u32(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version));
  nlohmann::json header = nlohmann::json::parse(detail::read_str(is));
  Checkpoint<S> ck;
  ck.config = detail::config_from_json(header.at("config"));
  ck.vocab_size = header.at("vocab_size").get<int>();
  ck.vocab_path = header.at("vocab_path").get<std::string>();
  ck.step = header.at("step").get<long>();
  int precision = header.at("precision").get<int>();
  if (precision != static_cast<int>(sizeof(S) * 8))
    throw std::runtime_error("checkpoint precision " +
                             std::to_string(precision) +
                             " does not match requested precision " +
                             std::to_string(sizeof(S) * 8));
  if (!expect_arch.empty() &&
      arch_from_name(expect_arch) != ck.config.arch)
    throw std::runtime_error("configuration error: checkpoint architecture " +
                             arch_name(ck.config.arch) + " does not match " +
                             expect_arch);
  ck.rng.set_state(header.at("rng_state").get<std::string>());
  ck.model = build_model<S>(ck.config, ck.vocab_size);
  auto params = ck.model.params();
  std::uint32_t count = detail::read_u32(is);
  if (count != params.size())
    throw std::runtime_error("checkpoint mismatch: tensor count");
  for (auto* p : params)
    detail::read_tensor_into(is, p->name, p->shape, p->value);
  ck.adam.t = header.at("adam_t").get<long>();
  ck.adam.m.resize(params.size());
  ck.adam.v.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    detail::read_tensor_into(is, "adam.m." + params[i]->name,
                             params[i]->shape, ck.adam.m[i]);
    detail::read_tensor_into(is, "adam.v." + params[i]->name,
                             params[i]->shape, ck.adam.v[i]);
  }
  return ck;
}

}  // namespace ntmdlg
