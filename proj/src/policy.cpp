#include "rlfr/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rlfr/errors.hpp"
#include "rlfr/rng.hpp"

namespace rlfr {

namespace {

constexpr double kInitStd = 0.08;

void fill_gaussian(Tensor& t, Rng& rng, double stddev) {
    for (double& v : t.values) v = rng.normal(0.0, stddev);
}

}  // namespace

// ------------------------------------------------------------------- params

PolicyParams PolicyParams::zeros(const Vocab& vocab, PolicyDims dims) {
    if (dims.d < 1) throw ConfigError("policy dim must be >= 1");
    if (dims.context_len < 2) throw ConfigError("context_len must be >= 2");
    PolicyParams p;
    p.vocab = vocab;
    p.dims = dims;
    const std::int64_t V = vocab.size();
    const std::int64_t d = dims.d;
    p.embed = Tensor(V, d);
    p.gru_wx = Tensor(d, 3 * d);
    p.gru_bx = Tensor(1, 3 * d);
    p.gru_uh = Tensor(d, 3 * d);
    p.out_w = Tensor(d, V);
    p.out_b = Tensor(1, V);
    return p;
}

PolicyParams PolicyParams::init(const Vocab& vocab, PolicyDims dims, std::uint64_t seed) {
    PolicyParams p = zeros(vocab, dims);
    Rng rng(mix_seed(0x706f6cu, seed));
    fill_gaussian(p.embed, rng, kInitStd);
    fill_gaussian(p.gru_wx, rng, kInitStd);
    fill_gaussian(p.gru_uh, rng, kInitStd);
    fill_gaussian(p.out_w, rng, kInitStd);
    return p;
}

std::vector<Tensor*> PolicyParams::trainable() {
    std::vector<Tensor*> ts = {&embed, &gru_wx, &gru_bx, &gru_uh, &out_w, &out_b};
    for (Tensor* t : ts) {
        if (!t->requires_grad) t->set_requires_grad(true);
    }
    return ts;
}

std::vector<const Tensor*> PolicyParams::tensors() const {
    return {&embed, &gru_wx, &gru_bx, &gru_uh, &out_w, &out_b};
}

void PolicyParams::validate() const {
    const std::int64_t V = vocab.size();
    const std::int64_t d = dims.d;
    if (V < 5) throw ConfigError("vocab too small for a policy");
    if (d < 1 || dims.context_len < 2) throw ConfigError("bad policy dims");
    auto expect = [](const Tensor& t, std::int64_t r, std::int64_t c, const char* name) {
        if (t.rows != r || t.cols != c)
            throw ContractError(std::string("policy tensor ") + name + " has wrong shape");
    };
    expect(embed, V, d, "embed");
    expect(gru_wx, d, 3 * d, "gru_wx");
    expect(gru_bx, 1, 3 * d, "gru_bx");
    expect(gru_uh, d, 3 * d, "gru_uh");
    expect(out_w, d, V, "out_w");
    expect(out_b, 1, V, "out_b");
}

PolicySnapshot make_snapshot(const PolicyParams& params, std::uint64_t version) {
    PolicySnapshot s;
    s.params = params;
    for (Tensor* t : std::vector<Tensor*>{&s.params.embed, &s.params.gru_wx, &s.params.gru_bx,
                                          &s.params.gru_uh, &s.params.out_w, &s.params.out_b}) {
        t->set_requires_grad(false);
    }
    s.version = version;
    return s;
}

void restore(PolicyParams& params, const PolicySnapshot& snapshot) {
    const bool had_grad = params.embed.requires_grad;
    params = snapshot.params;
    if (had_grad) params.trainable();
}

// ------------------------------------------------------------ plain forward

namespace {

struct GruState {
    std::vector<double> h;
};

GruState initial_state(const PolicyParams& p) {
    return GruState{std::vector<double>(static_cast<std::size_t>(p.dims.d), 0.0)};
}

void gru_step(const PolicyParams& p, GruState& state, int token) {
    const std::int64_t d = p.dims.d;
    const std::int64_t g3 = 3 * d;
    // Input and state contributions stay separate because the reset gate
    // multiplies only the state part of the candidate block.
    const double* x = &p.embed.values[static_cast<std::size_t>(token) * static_cast<std::size_t>(d)];
    std::vector<double> gx(static_cast<std::size_t>(g3)), gh(static_cast<std::size_t>(g3), 0.0);
    for (std::int64_t j = 0; j < g3; ++j) gx[static_cast<std::size_t>(j)] = p.gru_bx.values[static_cast<std::size_t>(j)];
    for (std::int64_t m = 0; m < d; ++m) {
        const double xm = x[m];
        if (xm != 0.0) {
            const double* wrow = &p.gru_wx.values[static_cast<std::size_t>(m * g3)];
            for (std::int64_t j = 0; j < g3; ++j) gx[static_cast<std::size_t>(j)] += xm * wrow[j];
        }
        const double hm = state.h[static_cast<std::size_t>(m)];
        if (hm != 0.0) {
            const double* urow = &p.gru_uh.values[static_cast<std::size_t>(m * g3)];
            for (std::int64_t j = 0; j < g3; ++j) gh[static_cast<std::size_t>(j)] += hm * urow[j];
        }
    }
    std::vector<double> h_new(static_cast<std::size_t>(d));
    for (std::int64_t i = 0; i < d; ++i) {
        const double z = 1.0 / (1.0 + std::exp(-(gx[static_cast<std::size_t>(i)] + gh[static_cast<std::size_t>(i)])));
        const double r = 1.0 / (1.0 + std::exp(-(gx[static_cast<std::size_t>(d + i)] + gh[static_cast<std::size_t>(d + i)])));
        const double c = std::tanh(gx[static_cast<std::size_t>(2 * d + i)] + r * gh[static_cast<std::size_t>(2 * d + i)]);
        h_new[static_cast<std::size_t>(i)] = (1.0 - z) * state.h[static_cast<std::size_t>(i)] + z * c;
    }
    state.h = std::move(h_new);
}

std::vector<double> output_logits(const PolicyParams& p, const GruState& state) {
    const std::int64_t V = p.vocab.size();
    const std::int64_t d = p.dims.d;
    std::vector<double> logits(p.out_b.values.begin(), p.out_b.values.end());
    for (std::int64_t m = 0; m < d; ++m) {
        const double hm = state.h[static_cast<std::size_t>(m)];
        if (hm == 0.0) continue;
        const double* wrow = &p.out_w.values[static_cast<std::size_t>(m * V)];
        for (std::int64_t j = 0; j < V; ++j) logits[static_cast<std::size_t>(j)] += hm * wrow[j];
    }
    return logits;
}

void log_softmax_inplace(std::vector<double>& x) {
    double mx = x[0];
    for (double v : x) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : x) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (double& v : x) v -= lse;
}

void check_ids(const PolicyParams& p, const std::vector<int>& ids, const char* what) {
    for (int id : ids) {
        if (id < 0 || id >= p.vocab.size())
            throw ContractError(std::string(what) + ": token id out of vocab range: " + std::to_string(id));
    }
}

void check_prompt(const PolicyParams& p, const std::vector<int>& prompt) {
    if (prompt.empty()) throw ContractError("prompt must be non-empty");
    if (static_cast<std::int64_t>(prompt.size()) > p.dims.context_len)
        throw ContractError("prompt exceeds context length (" + std::to_string(prompt.size()) + " > " +
                            std::to_string(p.dims.context_len) + ")");
    check_ids(p, prompt, "prompt");
}

}  // namespace

// ------------------------------------------------------------------ prompts

Tokens prompt_tokens(const std::string& direction, const Tokens& source) {
    Tokens out;
    out.reserve(source.size() + 2);
    out.push_back("<" + direction + ">");
    for (const auto& t : source) out.push_back(t);
    out.push_back("<sep>");
    return out;
}

std::vector<int> encode_prompt(const Vocab& vocab, const std::string& direction, const Tokens& source) {
    return vocab.encode(prompt_tokens(direction, source));
}

std::int64_t default_t_max(std::size_t source_len) {
    return 2 * static_cast<std::int64_t>(source_len) + 8;
}

std::size_t Hypothesis::content_len() const {
    if (!tokens.empty() && tokens.back() == Vocab::kEos) return tokens.size() - 1;
    return tokens.size();
}

std::vector<int> Hypothesis::content_ids() const {
    return std::vector<int>(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(content_len()));
}

// ----------------------------------------------------------------- sampling

std::vector<Hypothesis> sample_k(const PolicySnapshot& snapshot, const std::vector<int>& prompt,
                                 int k, double temperature, std::uint64_t seed,
                                 std::int64_t t_max, const std::string& prompt_id) {
    const PolicyParams& p = snapshot.params;
    p.validate();
    check_prompt(p, prompt);
    if (k < 1) throw ContractError("sample_k: k must be >= 1");
    if (temperature < 0.0) throw ContractError("sample_k: temperature must be >= 0");
    if (t_max < 1) throw ContractError("sample_k: t_max must be >= 1");

    Rng rng(mix_seed(0x73616d70u, seed));
    std::vector<Hypothesis> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int s = 0; s < k; ++s) {
        Hypothesis hyp;
        hyp.prompt_id = prompt_id;
        hyp.sample_index = s;
        GruState state = initial_state(p);
        for (int tok : prompt) gru_step(p, state, tok);
        for (std::int64_t t = 0; t < t_max; ++t) {
            std::vector<double> logits = output_logits(p, state);
            std::vector<double> lp1 = logits;
            log_softmax_inplace(lp1);
            int chosen = 0;
            if (temperature == 0.0) {
                for (std::size_t j = 1; j < logits.size(); ++j) {
                    if (logits[j] > logits[static_cast<std::size_t>(chosen)]) chosen = static_cast<int>(j);
                }
            } else {
                std::vector<double> lpt = logits;
                for (double& v : lpt) v /= temperature;
                log_softmax_inplace(lpt);
                const double u = rng.uniform();
                double cum = 0.0;
                chosen = static_cast<int>(lpt.size()) - 1;
                for (std::size_t j = 0; j < lpt.size(); ++j) {
                    cum += std::exp(lpt[j]);
                    if (u < cum) {
                        chosen = static_cast<int>(j);
                        break;
                    }
                }
            }
            hyp.tokens.push_back(chosen);
            hyp.old_logprobs.push_back(lp1[static_cast<std::size_t>(chosen)]);
            if (chosen == Vocab::kEos) break;
            gru_step(p, state, chosen);
        }
        hyp.hit_cap = (hyp.tokens.empty() || hyp.tokens.back() != Vocab::kEos);
        out.push_back(std::move(hyp));
    }
    return out;
}

std::vector<int> greedy_decode(const PolicyParams& params, const std::vector<int>& prompt,
                               std::int64_t t_max) {
    params.validate();
    check_prompt(params, prompt);
    std::vector<int> tokens;
    GruState state = initial_state(params);
    for (int tok : prompt) gru_step(params, state, tok);
    for (std::int64_t t = 0; t < t_max; ++t) {
        const std::vector<double> logits = output_logits(params, state);
        int chosen = 0;
        for (std::size_t j = 1; j < logits.size(); ++j) {
            if (logits[j] > logits[static_cast<std::size_t>(chosen)]) chosen = static_cast<int>(j);
        }
        tokens.push_back(chosen);
        if (chosen == Vocab::kEos) break;
        gru_step(params, state, chosen);
    }
    return tokens;
}

// --------------------------------------------------------------- likelihood

std::vector<double> logprob_seq(const PolicyParams& params, const std::vector<int>& prompt,
                                const std::vector<int>& target) {
    params.validate();
    check_prompt(params, prompt);
    if (target.empty()) throw ContractError("logprob_seq: target must be non-empty");
    check_ids(params, target, "target");
    std::vector<double> out;
    out.reserve(target.size());
    GruState state = initial_state(params);
    for (int tok : prompt) gru_step(params, state, tok);
    for (std::size_t t = 0; t < target.size(); ++t) {
        std::vector<double> lp = output_logits(params, state);
        log_softmax_inplace(lp);
        out.push_back(lp[static_cast<std::size_t>(target[t])]);
        if (t + 1 < target.size()) gru_step(params, state, target[t]);
    }
    return out;
}

namespace {

// One recurrent step on the tape; returns the new hidden state node (1xd).
Var gru_step_node(Tape& tape, PolicyParams& p, Var h, Var ones, int token,
                  Var embed_leaf, Var wx_leaf, Var bx_leaf, Var uh_leaf) {
    const std::int64_t d = p.dims.d;
    Var x = tape.embed({token}, embed_leaf);
    Var gx = tape.affine(x, wx_leaf, bx_leaf);
    Var gh = tape.affine(h, uh_leaf);
    Var z = tape.sigmoid_op(tape.add(tape.slice_cols(gx, 0, d), tape.slice_cols(gh, 0, d)));
    Var r = tape.sigmoid_op(tape.add(tape.slice_cols(gx, d, d), tape.slice_cols(gh, d, d)));
    Var c = tape.tanh_op(tape.add(tape.slice_cols(gx, 2 * d, d),
                                  tape.hadamard(r, tape.slice_cols(gh, 2 * d, d))));
    Var keep = tape.scale_add(ones, -1.0, z);  // 1 - z
    return tape.add(tape.hadamard(keep, h), tape.hadamard(z, c));
}

}  // namespace

std::vector<Var> logprob_seq_nodes(Tape& tape, PolicyParams& params, const std::vector<int>& prompt,
                                   const std::vector<int>& target) {
    params.validate();
    check_prompt(params, prompt);
    if (target.empty()) throw ContractError("logprob_seq_nodes: target must be non-empty");
    check_ids(params, target, "target");
    params.trainable();

    const std::int64_t d = params.dims.d;
    Var embed_leaf = tape.leaf(params.embed);
    Var wx_leaf = tape.leaf(params.gru_wx);
    Var bx_leaf = tape.leaf(params.gru_bx);
    Var uh_leaf = tape.leaf(params.gru_uh);
    Var ow_leaf = tape.leaf(params.out_w);
    Var ob_leaf = tape.leaf(params.out_b);
    Var ones = tape.constant(Tensor(1, d, 1.0));

    Var h = tape.constant(Tensor(1, d, 0.0));
    for (int tok : prompt) h = gru_step_node(tape, params, h, ones, tok, embed_leaf, wx_leaf, bx_leaf, uh_leaf);

    std::vector<Var> out;
    out.reserve(target.size());
    for (std::size_t t = 0; t < target.size(); ++t) {
        Var logits = tape.affine(h, ow_leaf, ob_leaf);
        Var lsm = tape.log_softmax_rows(logits);
        out.push_back(tape.gather_rows(lsm, {target[t]}));
        if (t + 1 < target.size())
            h = gru_step_node(tape, params, h, ones, target[t], embed_leaf, wx_leaf, bx_leaf, uh_leaf);
    }
    return out;
}

double categorical_kl(const std::vector<double>& logp, const std::vector<double>& logq) {
    if (logp.size() != logq.size()) throw ContractError("categorical_kl: size mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < logp.size(); ++i) {
        kl += std::exp(logp[i]) * (logp[i] - logq[i]);
    }
    return std::max(kl, 0.0);
}

std::vector<double> kl_per_position(const PolicyParams& params, const PolicyParams& anchor,
                                    const std::vector<int>& prompt, const std::vector<int>& target) {
    params.validate();
    anchor.validate();
    if (params.vocab.size() != anchor.vocab.size())
        throw ContractError("kl_per_position: vocab size mismatch between policies");
    check_prompt(params, prompt);
    if (target.empty()) throw ContractError("kl_per_position: target must be non-empty");
    check_ids(params, target, "target");

    GruState cur = initial_state(params);
    GruState old = initial_state(anchor);
    for (int tok : prompt) {
        gru_step(params, cur, tok);
        gru_step(anchor, old, tok);
    }
    std::vector<double> out;
    out.reserve(target.size());
    for (std::size_t t = 0; t < target.size(); ++t) {
        std::vector<double> lp = output_logits(params, cur);
        std::vector<double> lq = output_logits(anchor, old);
        log_softmax_inplace(lp);
        log_softmax_inplace(lq);
        out.push_back(categorical_kl(lp, lq));
        if (t + 1 < target.size()) {
            gru_step(params, cur, target[t]);
            gru_step(anchor, old, target[t]);
        }
    }
    return out;
}

// -------------------------------------------------------------- checkpoints

namespace {

void write_tensor(std::ofstream& out, const char* name, const Tensor& t) {
    out << "tensor " << name << ' ' << t.rows << ' ' << t.cols << '\n';
    char buf[32];
    for (std::int64_t r = 0; r < t.rows; ++r) {
        for (std::int64_t c = 0; c < t.cols; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", t.at(r, c));
            out << buf << (c + 1 == t.cols ? '\n' : ' ');
        }
    }
}

Tensor read_tensor(std::istream& in, const std::string& name, const std::string& path) {
    std::string word, got;
    std::int64_t rows = 0, cols = 0;
    if (!(in >> word >> got >> rows >> cols) || word != "tensor" || got != name)
        throw IoError(path + ": expected tensor '" + name + "'");
    if (rows < 1 || cols < 1) throw IoError(path + ": bad tensor shape for '" + name + "'");
    Tensor t(rows, cols);
    for (double& v : t.values) {
        if (!(in >> v)) throw IoError(path + ": truncated tensor '" + name + "'");
    }
    return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const PolicyParams& params) {
    params.validate();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out << "rlfr-checkpoint v1\n";
    out << "dims " << params.dims.d << ' ' << params.dims.context_len << '\n';
    out << "vocab " << params.vocab.size() << '\n';
    for (const auto& s : params.vocab.symbols()) out << s << '\n';
    write_tensor(out, "embed", params.embed);
    write_tensor(out, "gru_wx", params.gru_wx);
    write_tensor(out, "gru_bx", params.gru_bx);
    write_tensor(out, "gru_uh", params.gru_uh);
    write_tensor(out, "out_w", params.out_w);
    write_tensor(out, "out_b", params.out_b);
    out << "end\n";
    if (!out) throw IoError("failed while writing checkpoint: " + path);
}

PolicyParams load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read checkpoint: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "rlfr-checkpoint v1")
        throw IoError(path + ": not a v1 checkpoint (bad magic line)");
    std::string word;
    PolicyDims dims;
    if (!(in >> word >> dims.d >> dims.context_len) || word != "dims")
        throw IoError(path + ": missing dims header");
    std::int64_t vocab_size = 0;
    if (!(in >> word >> vocab_size) || word != "vocab" || vocab_size < 5)
        throw IoError(path + ": missing vocab header");
    std::getline(in, line);  // finish header line
    Tokens symbols;
    for (std::int64_t i = 0; i < vocab_size; ++i) {
        if (!std::getline(in, line) || line.empty()) throw IoError(path + ": truncated vocab block");
        symbols.push_back(line);
    }
    PolicyParams p;
    p.vocab = Vocab::from_symbols(symbols);
    p.dims = dims;
    p.embed = read_tensor(in, "embed", path);
    p.gru_wx = read_tensor(in, "gru_wx", path);
    p.gru_bx = read_tensor(in, "gru_bx", path);
    p.gru_uh = read_tensor(in, "gru_uh", path);
    p.out_w = read_tensor(in, "out_w", path);
    p.out_b = read_tensor(in, "out_b", path);
    if (!(in >> word) || word != "end") throw IoError(path + ": missing end marker");
    try {
        p.validate();
    } catch (const std::exception& e) {
        throw IoError(path + ": inconsistent checkpoint (" + e.what() + ")");
    }
    return p;
}

}  // namespace rlfr
