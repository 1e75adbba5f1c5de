#include "rlfr/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>

#include "CLI11.hpp"
#include "json.hpp"

#include "rlfr/corpus.hpp"
#include "rlfr/errors.hpp"
#include "rlfr/eval.hpp"
#include "rlfr/refine.hpp"
#include "rlfr/reward.hpp"
#include "rlfr/rl.hpp"
#include "rlfr/rng.hpp"
#include "rlfr/sft.hpp"
#include "rlfr/strings.hpp"

namespace fs = std::filesystem;

namespace rlfr::cli {

namespace {

// ------------------------------------------------------------ run directory

fs::path prepare_run_dir(const std::string& out, bool with_inputs) {
    fs::path dir(out);
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw IoError("'" + out + "' exists and is not a directory");
        if (!fs::is_empty(dir))
            throw IoError("run directory '" + out + "' already exists and is not empty");
    }
    fs::create_directories(dir);
    if (with_inputs) fs::create_directories(dir / "inputs");
    return dir;
}

// Inputs are copied into the run directory so a run is reproducible from its
// own contents alone.
void copy_input(const fs::path& dir, const std::string& src) {
    const fs::path to = dir / "inputs" / fs::path(src).filename();
    fs::copy_file(src, to, fs::copy_options::overwrite_existing);
}

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
    if (!out) throw IoError("short write to " + path.string());
}

std::string na_or(double v) { return std::isnan(v) ? "na" : fmt_g(v); }

// --------------------------------------------------------------- subcommands

struct GenOpts {
    std::string out;
    std::string task = "cipher";
    std::size_t n = 600;
    std::size_t heldout_n = 200;
    int alphabet_size = 10;
    int len_min = 3;
    int len_max = 6;
    std::int64_t mapping_seed = 1;
    int entities = 8;
    double entity_prob = 0.75;
    double corruption_rate = 0.2;
    std::string direction = "en-xx";
    std::uint64_t seed = 1;
};

void run_gen_corpus(const GenOpts& o, const std::string& config_snapshot) {
    SyntheticTaskSpec spec;
    spec.kind = o.task == "cipher" ? TaskKind::substitution_cipher
                                   : TaskKind::word_mapping_with_reorder;
    spec.alphabet_size = o.alphabet_size;
    spec.mapping_seed = o.mapping_seed;
    spec.entity_table = default_entity_table(o.entities);
    spec.len_min = o.len_min;
    spec.len_max = o.len_max;
    spec.corruption_rate = o.corruption_rate;
    spec.entity_prob = o.entity_prob;
    spec.direction = o.direction;
    validate(spec);

    const fs::path dir = prepare_run_dir(o.out, /*with_inputs=*/false);
    const Corpus clean = generate_corpus(spec, o.n, o.seed);

    // Held-out examples are disjoint from training by source sentence.
    std::set<std::string> seen;
    for (const auto& ex : clean) seen.insert(join(ex.source));
    Corpus heldout;
    for (std::uint64_t round = 0; heldout.size() < o.heldout_n; ++round) {
        if (round >= 50)
            throw ConfigError("cannot draw a disjoint held-out set; the task space is too small "
                              "(grow alphabet_size or len_max)");
        for (auto& ex : generate_corpus(spec, o.heldout_n, o.seed + 1 + round)) {
            if (heldout.size() >= o.heldout_n) break;
            if (!seen.insert(join(ex.source)).second) continue;
            char idbuf[32];
            std::snprintf(idbuf, sizeof(idbuf), "held-%06zu", heldout.size());
            ex.id = idbuf;
            heldout.push_back(std::move(ex));
        }
    }

    // Corruption pool: every token the clean golds use.
    Tokens pool;
    {
        std::set<std::string> uniq;
        for (const auto& ex : clean) {
            for (const auto& t : *ex.gold) uniq.insert(t);
        }
        pool.assign(uniq.begin(), uniq.end());
    }
    const Corpus corrupted = corrupt_corpus(clean, o.corruption_rate, pool, o.seed);

    save_corpus((dir / "train_clean.jsonl").string(), clean);
    save_corpus((dir / "train_sft.jsonl").string(), corrupted);
    save_corpus((dir / "heldout.jsonl").string(), heldout);
    save_vocab((dir / "vocab.txt").string(), vocab_for_task(spec));
    write_text(dir / "config.txt", config_snapshot);
    std::cout << "wrote " << clean.size() << " train (clean + corrupted at rate "
              << fmt_g(o.corruption_rate) << ") and " << heldout.size()
              << " held-out examples to " << dir.string() << '\n';
}

struct SftOpts {
    std::string corpus;
    std::string vocab;
    std::string out;
    SftConfig config;
    std::int64_t dim = 32;
    std::int64_t context_len = 64;
    std::uint64_t init_seed = 1;
};

void run_sft(const SftOpts& o, const std::string& config_snapshot) {
    const Vocab vocab = load_vocab(o.vocab);
    const Corpus corpus = load_corpus(o.corpus);
    const fs::path dir = prepare_run_dir(o.out, /*with_inputs=*/true);
    copy_input(dir, o.corpus);
    copy_input(dir, o.vocab);

    PolicyParams params = PolicyParams::init(vocab, {o.dim, o.context_len}, o.init_seed);
    std::string log = "epoch,loss,holdout_exact\n";
    SftHooks hooks;
    hooks.on_epoch = [&](int epoch, double loss, double em) {
        log += std::to_string(epoch) + ',' + fmt_g(loss) + ',' + na_or(em) + '\n';
        std::cout << "epoch " << epoch << "  loss " << fmt_g(loss) << "  holdout_exact "
                  << na_or(em) << '\n';
    };
    const SftReport report = train_sft(params, corpus, o.config, hooks);
    save_checkpoint((dir / "checkpoint.txt").string(), params);
    write_text(dir / "sft_log.csv", log);
    write_text(dir / "config.txt", config_snapshot);
    std::cout << "sft done: kept epoch " << report.best_epoch << " of "
              << report.epoch_loss.size() << " (train " << report.n_train << ", holdout "
              << report.n_holdout << ")\n";
}

struct ScorerOpts {
    std::string scorer = "chrf";
    std::string endpoint;
    double timeout_s = 30.0;
    bool reference_free = false;
};

std::unique_ptr<SemanticScorer> make_scorer(const ScorerOpts& o) {
    if (o.scorer == "chrf") return std::make_unique<ChrfScorer>();
    if (o.endpoint.empty()) throw ConfigError("--scorer remote needs --scorer-endpoint");
    return std::make_unique<RemoteScorer>(RemoteScorerConfig{o.endpoint, o.timeout_s, o.reference_free});
}

void add_scorer_flags(CLI::App* cmd, ScorerOpts& o) {
    cmd->add_option("--scorer", o.scorer, "adequacy scorer")
        ->check(CLI::IsMember({"chrf", "remote"}))
        ->capture_default_str();
    cmd->add_option("--scorer-endpoint", o.endpoint, "remote scorer URL");
    cmd->add_option("--scorer-timeout", o.timeout_s, "remote scorer timeout, seconds")
        ->capture_default_str();
    cmd->add_flag("--scorer-reference-free", o.reference_free,
                  "omit the reference from remote scorer requests");
}

struct RlOpts {
    std::string corpus;
    std::string init;
    std::string out;
    std::string mode = "rlfr";
    std::string teacher = "oracle";
    std::string alpha_preset = "balanced";
    double alpha = 0.5;
    bool alpha_given = false;
    TrainConfig config;
    // remote teacher
    std::string endpoint;
    std::string model;
    std::string api_key_env = "RLFR_TEACHER_API_KEY";
    double teacher_timeout = 30.0;
    int retries = 3;
    int backoff_ms = 200;
    int max_concurrency = 4;
    std::string cache;
    double teacher_temperature = 0.0;
    // fixed teacher
    double fixed_perturb_rate = 0.12;
    std::uint64_t fixed_seed = 0;
    double fixed_entity_boost = 3.0;
    ScorerOpts scorer;
};

void run_rl(const RlOpts& o, const std::string& config_snapshot) {
    const Corpus corpus = load_corpus(o.corpus);
    PolicyParams params = load_checkpoint(o.init);
    for (const auto& ex : corpus) {
        for (const auto& t : ex.source) {
            if (!params.vocab.contains(t))
                throw ConfigError("source token '" + t + "' of example '" + ex.id +
                                  "' is not in the checkpoint vocabulary");
        }
    }

    const fs::path dir = prepare_run_dir(o.out, /*with_inputs=*/true);
    copy_input(dir, o.corpus);
    copy_input(dir, o.init);

    TrainConfig config = o.config;
    config.mode = train_mode_from_string(o.mode);
    config.alpha = o.alpha_given ? o.alpha : alpha_from_preset(o.alpha_preset);

    TeacherConfig tc;
    tc.kind = o.teacher == "oracle"   ? TeacherKind::oracle
              : o.teacher == "remote" ? TeacherKind::remote
                                      : TeacherKind::fixed;
    tc.endpoint = o.endpoint;
    tc.model = o.model;
    tc.api_key_env = o.api_key_env;
    tc.timeout_s = o.teacher_timeout;
    tc.retries = o.retries;
    tc.backoff_ms = o.backoff_ms;
    tc.max_concurrency = o.max_concurrency;
    tc.cache_path = o.cache;
    tc.temperature = o.teacher_temperature;
    const std::unique_ptr<Teacher> teacher =
        make_teacher(tc, corpus, o.fixed_perturb_rate, o.fixed_seed, o.fixed_entity_boost);
    const std::unique_ptr<SemanticScorer> scorer = make_scorer(o.scorer);

    std::ofstream jsonl(dir / "metrics.jsonl");
    std::ofstream csv(dir / "metrics.csv");
    if (!jsonl || !csv) throw IoError("cannot open metrics files under " + dir.string());
    csv << "iteration,mean_reward,mean_resp_len,adequacy,entity_acc,clip_fraction,mean_kl,"
           "n_hyps,n_dropped\n";

    TrainHooks hooks;
    hooks.on_metrics = [&](const MetricsRecord& m) {
        nlohmann::ordered_json j;
        j["iteration"] = m.iteration;
        j["mean_reward"] = m.mean_reward;
        j["mean_resp_len"] = m.mean_resp_len;
        j["adequacy"] = m.adequacy;
        if (std::isnan(m.entity_acc)) {
            j["entity_acc"] = nullptr;
        } else {
            j["entity_acc"] = m.entity_acc;
        }
        j["clip_fraction"] = m.clip_fraction;
        j["mean_kl"] = m.mean_kl;
        j["n_hyps"] = m.n_hyps;
        j["n_dropped"] = m.n_dropped;
        jsonl << j.dump() << '\n';
        csv << m.iteration << ',' << fmt_g(m.mean_reward) << ',' << fmt_g(m.mean_resp_len) << ','
            << fmt_g(m.adequacy) << ',' << na_or(m.entity_acc) << ',' << fmt_g(m.clip_fraction)
            << ',' << fmt_g(m.mean_kl) << ',' << m.n_hyps << ',' << m.n_dropped << '\n';
        if (m.iteration % 10 == 0) {
            std::cout << "iter " << m.iteration << "  reward " << fmt_g(m.mean_reward)
                      << "  len " << fmt_g(m.mean_resp_len) << "  adequacy " << fmt_g(m.adequacy)
                      << "  entity " << na_or(m.entity_acc) << '\n';
        }
    };
    hooks.on_checkpoint = [&](int iteration, const PolicyParams& p) {
        char name[48];
        std::snprintf(name, sizeof(name), "checkpoint_iter%04d.txt", iteration);
        save_checkpoint((dir / name).string(), p);
    };

    const TrainResult result = train_rl(params, corpus, *teacher, *scorer, config, hooks);
    save_checkpoint((dir / "checkpoint.txt").string(), params);
    write_text(dir / "config.txt", config_snapshot);
    std::cout << "rl done: " << result.metrics.size() << " iterations, final reward "
              << (result.metrics.empty() ? "na" : fmt_g(result.metrics.back().mean_reward))
              << '\n';
}

struct EvalOpts {
    std::string corpus;
    std::string checkpoint;
    std::string out;
    std::string name = "model";
    ScorerOpts scorer;
};

void run_eval(const EvalOpts& o, const std::string& config_snapshot) {
    const Corpus corpus = load_corpus(o.corpus);
    const PolicyParams params = load_checkpoint(o.checkpoint);
    const std::unique_ptr<SemanticScorer> scorer = make_scorer(o.scorer);
    const EvalResult res = evaluate(params, corpus, *scorer);
    const std::vector<CompareRow> rows{{o.name, res}};
    std::cout << comparison_table(rows);
    if (!o.out.empty()) {
        const fs::path dir = prepare_run_dir(o.out, /*with_inputs=*/true);
        copy_input(dir, o.corpus);
        copy_input(dir, o.checkpoint);
        write_text(dir / "eval.csv", comparison_csv(rows));
        write_text(dir / "config.txt", config_snapshot);
    }
}

struct CompareOpts {
    std::string corpus;
    std::string out;
    std::vector<std::string> checkpoints;  // NAME=PATH
    ScorerOpts scorer;
};

void run_compare(const CompareOpts& o, const std::string& config_snapshot) {
    std::vector<std::pair<std::string, PolicyParams>> loaded;
    for (const auto& spec : o.checkpoints) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
            throw ConfigError("checkpoint spec '" + spec + "' is not NAME=PATH");
        loaded.emplace_back(spec.substr(0, eq), load_checkpoint(spec.substr(eq + 1)));
    }
    const Corpus corpus = load_corpus(o.corpus);
    const std::unique_ptr<SemanticScorer> scorer = make_scorer(o.scorer);
    const std::vector<CompareRow> rows = compare(loaded, corpus, *scorer);
    std::cout << comparison_table(rows);
    if (!o.out.empty()) {
        const fs::path dir = prepare_run_dir(o.out, /*with_inputs=*/true);
        copy_input(dir, o.corpus);
        write_text(dir / "comparison.csv", comparison_csv(rows));
        write_text(dir / "config.txt", config_snapshot);
    }
}

struct PlotOpts {
    std::string run;
    std::string out;
};

void run_plot_data(const PlotOpts& o) {
    const fs::path metrics = fs::path(o.run) / "metrics.jsonl";
    std::ifstream in(metrics);
    if (!in) throw IoError("no metrics log at " + metrics.string());
    std::string csv = "step,reward,resp_len,adequacy\n";
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            csv += std::to_string(j.at("iteration").get<int>()) + ',' +
                   fmt_g(j.at("mean_reward").get<double>()) + ',' +
                   fmt_g(j.at("mean_resp_len").get<double>()) + ',' +
                   fmt_g(j.at("adequacy").get<double>()) + '\n';
        } catch (const nlohmann::json::exception& e) {
            throw IoError(metrics.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (o.out.empty()) {
        std::cout << csv;
    } else {
        write_text(o.out, csv);
        std::cout << "wrote " << o.out << '\n';
    }
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"desk-scale refinement-reward training lab"};
    app.require_subcommand(1);

    GenOpts gen;
    CLI::App* gen_cmd = app.add_subcommand("gen-corpus", "generate a synthetic parallel corpus");
    gen_cmd->set_config("--config");
    gen_cmd->add_option("--out", gen.out, "fresh output directory")->required();
    gen_cmd->add_option("--task", gen.task, "transduction family")
        ->check(CLI::IsMember({"cipher", "reorder"}))
        ->capture_default_str();
    gen_cmd->add_option("--n", gen.n, "training examples")->capture_default_str();
    gen_cmd->add_option("--heldout-n", gen.heldout_n, "held-out examples (source-disjoint)")
        ->capture_default_str();
    gen_cmd->add_option("--alphabet-size", gen.alphabet_size)->capture_default_str();
    gen_cmd->add_option("--len-min", gen.len_min)->capture_default_str();
    gen_cmd->add_option("--len-max", gen.len_max)->capture_default_str();
    gen_cmd->add_option("--mapping-seed", gen.mapping_seed, "symbol bijection seed")
        ->capture_default_str();
    gen_cmd->add_option("--entities", gen.entities, "entity table size (0 disables)")
        ->capture_default_str();
    gen_cmd->add_option("--entity-prob", gen.entity_prob)->capture_default_str();
    gen_cmd->add_option("--corruption-rate", gen.corruption_rate,
                        "gold corruption for the warm-start split")
        ->capture_default_str();
    gen_cmd->add_option("--direction", gen.direction)->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed)->capture_default_str();

    SftOpts sft;
    CLI::App* sft_cmd = app.add_subcommand("sft", "teacher-forced warm start");
    sft_cmd->set_config("--config");
    sft_cmd->add_option("--corpus", sft.corpus, "training corpus (jsonl)")->required();
    sft_cmd->add_option("--vocab", sft.vocab, "vocabulary file")->required();
    sft_cmd->add_option("--out", sft.out, "fresh run directory")->required();
    sft_cmd->add_option("--epochs", sft.config.epochs)->capture_default_str();
    sft_cmd->add_option("--batch-size", sft.config.batch_size)->capture_default_str();
    sft_cmd->add_option("--lr", sft.config.lr)->capture_default_str();
    sft_cmd->add_option("--clip-norm", sft.config.clip_norm)->capture_default_str();
    sft_cmd->add_option("--holdout-frac", sft.config.holdout_fraction)->capture_default_str();
    sft_cmd->add_option("--patience", sft.config.patience)->capture_default_str();
    sft_cmd->add_option("--seed", sft.config.seed)->capture_default_str();
    sft_cmd->add_option("--dim", sft.dim, "model width")->capture_default_str();
    sft_cmd->add_option("--context-len", sft.context_len, "max prompt length")
        ->capture_default_str();
    sft_cmd->add_option("--init-seed", sft.init_seed, "weight init seed")->capture_default_str();

    RlOpts rl;
    CLI::App* rl_cmd = app.add_subcommand("rl", "refinement-reward policy training");
    rl_cmd->set_config("--config");
    rl_cmd->add_option("--corpus", rl.corpus, "prompt corpus with clean golds (jsonl)")->required();
    rl_cmd->add_option("--init", rl.init, "warm-start checkpoint")->required();
    rl_cmd->add_option("--out", rl.out, "fresh run directory")->required();
    rl_cmd->add_option("--mode", rl.mode, "training mode")
        ->check(CLI::IsMember({"rlfr", "fixed-ref"}))
        ->capture_default_str();
    rl_cmd->add_option("--teacher", rl.teacher, "refinement source")
        ->check(CLI::IsMember({"oracle", "remote", "fixed"}))
        ->capture_default_str();
    CLI::Option* preset_opt = rl_cmd->add_option("--alpha-preset", rl.alpha_preset,
                                                 "composite reward preset")
                                  ->check(CLI::IsMember({"lexical", "semantic", "balanced"}))
                                  ->capture_default_str();
    CLI::Option* alpha_opt = rl_cmd->add_option("--alpha", rl.alpha, "explicit blend weight")
                                 ->check(CLI::Range(0.0, 1.0));
    alpha_opt->excludes(preset_opt);
    rl_cmd->add_option("--k", rl.config.k, "hypotheses per prompt")->capture_default_str();
    rl_cmd->add_option("--rollout-batch", rl.config.rollout_batch)->capture_default_str();
    rl_cmd->add_option("--beta", rl.config.beta, "KL penalty weight")->capture_default_str();
    rl_cmd->add_option("--eps-clip", rl.config.eps_clip)->capture_default_str();
    rl_cmd->add_option("--eps-stat", rl.config.eps_stat)->capture_default_str();
    rl_cmd->add_option("--lr", rl.config.lr)->capture_default_str();
    rl_cmd->add_option("--clip-norm", rl.config.clip_norm)->capture_default_str();
    rl_cmd->add_option("--inner-epochs", rl.config.inner_epochs)->capture_default_str();
    rl_cmd->add_option("--iterations", rl.config.iterations)->capture_default_str();
    rl_cmd->add_option("--seed", rl.config.seed)->capture_default_str();
    rl_cmd->add_option("--temperature", rl.config.temperature, "rollout sampling temperature")
        ->capture_default_str();
    rl_cmd->add_option("--max-drop-rate", rl.config.max_drop_rate)->capture_default_str();
    rl_cmd->add_option("--checkpoint-every", rl.config.checkpoint_every)->capture_default_str();
    rl_cmd->add_option("--endpoint", rl.endpoint, "remote teacher chat endpoint");
    rl_cmd->add_option("--model", rl.model, "remote teacher model name");
    rl_cmd->add_option("--api-key-env", rl.api_key_env,
                       "environment variable holding the bearer token")
        ->capture_default_str();
    rl_cmd->add_option("--teacher-timeout", rl.teacher_timeout)->capture_default_str();
    rl_cmd->add_option("--retries", rl.retries)->capture_default_str();
    rl_cmd->add_option("--backoff-ms", rl.backoff_ms)->capture_default_str();
    rl_cmd->add_option("--max-concurrency", rl.max_concurrency)->capture_default_str();
    rl_cmd->add_option("--cache", rl.cache, "refinement cache file (jsonl)");
    rl_cmd->add_option("--teacher-temperature", rl.teacher_temperature)->capture_default_str();
    rl_cmd->add_option("--fixed-perturb-rate", rl.fixed_perturb_rate,
                       "reference perturbation for the fixed teacher")
        ->capture_default_str();
    rl_cmd->add_option("--fixed-seed", rl.fixed_seed)->capture_default_str();
    rl_cmd->add_option("--fixed-entity-boost", rl.fixed_entity_boost,
                       "perturbation multiplier on entity renderings")
        ->capture_default_str();
    add_scorer_flags(rl_cmd, rl.scorer);

    EvalOpts ev;
    CLI::App* eval_cmd = app.add_subcommand("eval", "held-out metrics for one checkpoint");
    eval_cmd->set_config("--config");
    eval_cmd->add_option("--corpus", ev.corpus, "evaluation corpus (jsonl)")->required();
    eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
    eval_cmd->add_option("--out", ev.out, "optional fresh run directory");
    eval_cmd->add_option("--name", ev.name, "row label")->capture_default_str();
    add_scorer_flags(eval_cmd, ev.scorer);

    CompareOpts cmp;
    CLI::App* cmp_cmd = app.add_subcommand("compare", "side-by-side checkpoint metrics");
    cmp_cmd->set_config("--config");
    cmp_cmd->add_option("--corpus", cmp.corpus, "evaluation corpus (jsonl)")->required();
    cmp_cmd->add_option("--out", cmp.out, "optional fresh run directory");
    cmp_cmd->add_option("checkpoints", cmp.checkpoints, "NAME=PATH entries")
        ->required()
        ->expected(2, -1);
    add_scorer_flags(cmp_cmd, cmp.scorer);

    PlotOpts plot;
    CLI::App* plot_cmd = app.add_subcommand("plot-data", "training dynamics CSV from a run");
    plot_cmd->add_option("--run", plot.run, "rl run directory")->required();
    plot_cmd->add_option("--out", plot.out, "CSV destination (default stdout)");

    gen_cmd->callback([&] { run_gen_corpus(gen, gen_cmd->config_to_str(true, false)); });
    sft_cmd->callback([&] { run_sft(sft, sft_cmd->config_to_str(true, false)); });
    rl_cmd->callback([&] {
        rl.alpha_given = alpha_opt->count() > 0;
        run_rl(rl, rl_cmd->config_to_str(true, false));
    });
    eval_cmd->callback([&] { run_eval(ev, eval_cmd->config_to_str(true, false)); });
    cmp_cmd->callback([&] { run_compare(cmp, cmp_cmd->config_to_str(true, false)); });
    plot_cmd->callback([&] { run_plot_data(plot); });

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace rlfr::cli
