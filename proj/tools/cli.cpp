#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sdm/sdm.hpp"

namespace sdm::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

const std::map<std::string, TrainMode> mode_names{{"baseline", TrainMode::baseline},
                                                  {"shortcut", TrainMode::shortcut}};
const std::map<std::string, ChainGrad> chain_grad_names{{"full", ChainGrad::full},
                                                        {"last-step", ChainGrad::last_step}};
const std::map<std::string, ChainInit> chain_init_names{{"teacher-forced", ChainInit::teacher_forced},
                                                        {"pure-noise", ChainInit::pure_noise}};
const std::map<std::string, TimeInput> time_input_names{{"normalized", TimeInput::normalized},
                                                        {"gamma", TimeInput::gamma}};

template <class E>
std::string choices(const std::map<std::string, E>& names) {
    std::string s;
    for (const auto& [k, v] : names) s += (s.empty() ? "" : "|") + k;
    return s;
}

template <class T>
struct is_vector : std::false_type {};
template <class T>
struct is_vector<std::vector<T>> : std::true_type {};

/// Options settable from a flat JSON config (snake_case keys) and from
/// flags (the same names in kebab-case). Flags are applied last.
class FieldSet {
public:
    template <class T>
    CLI::Option* add(CLI::App& app, const std::string& key, T& target, const std::string& desc,
                     bool positional = false) {
        auto holder = std::make_shared<T>(target);
        const std::string name = positional ? key : flag_name(key);
        CLI::Option* opt = nullptr;
        if constexpr (std::is_same_v<T, bool>)
            opt = app.add_flag(name, *holder, desc);
        else
            opt = app.add_option(name, *holder, desc)->capture_default_str();
        if constexpr (is_vector<T>::value)
            if (!positional) opt->expected(1)->allow_extra_args(false)->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
        fields_.push_back({key, opt, [&target](const json& j) { target = j.get<T>(); },
                           [opt, holder, &target] { target = *holder; }});
        return opt;
    }

    template <class E>
    CLI::Option* add_enum(CLI::App& app, const std::string& key, E& target, const std::map<std::string, E>& names,
                          const std::string& desc) {
        auto holder = std::make_shared<E>(target);
        CLI::Option* opt = app.add_option(flag_name(key), *holder, desc + " (" + choices(names) + ")")
                               ->transform(CLI::CheckedTransformer(names));
        fields_.push_back({key, opt,
                           [&target, &names, key](const json& j) {
                               const auto it = names.find(j.get<std::string>());
                               if (it == names.end())
                                   throw ConfigError("'" + key + "' must be one of " + choices(names));
                               target = it->second;
                           },
                           [opt, holder, &target] { target = *holder; }});
        return opt;
    }

    void add_config_option(CLI::App& app) {
        app.add_option("--config", config_path_, "flat JSON object of option values; flags take precedence");
    }

    /// Applies the JSON config (if any) and then every flag given on the
    /// command line. Safe to call again after targets were reset.
    void resolve() {
        if (!config_path_.empty() && config_.is_null()) config_ = load_config(config_path_);
        for (const auto& [key, value] : config_.items()) {
            const Field* f = find(key);
            if (!f) throw ConfigError(config_path_ + ": unknown key '" + key + "'");
            try {
                f->from_json(value);
            } catch (const json::exception& e) {
                throw ConfigError(config_path_ + ": bad value for '" + key + "': " + e.what());
            }
        }
        for (const auto& f : fields_)
            if (f.opt->count() > 0) f.from_flag();
    }

    bool is_set(const std::string& key) const {
        const Field* f = find(key);
        return f && (f->opt->count() > 0 || config_.contains(key));
    }

private:
    struct Field {
        std::string key;
        CLI::Option* opt;
        std::function<void(const json&)> from_json;
        std::function<void()> from_flag;
    };

    static std::string flag_name(std::string key) {
        for (auto& c : key)
            if (c == '_') c = '-';
        return "--" + key;
    }

    static json load_config(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open config '" + path + "'");
        json j;
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ConfigError(path + ": " + e.what());
        }
        if (!j.is_object()) throw ConfigError(path + ": expected a JSON object");
        return j;
    }

    const Field* find(const std::string& key) const {
        for (const auto& f : fields_)
            if (f.key == key) return &f;
        return nullptr;
    }

    std::vector<Field> fields_;
    std::string config_path_;
    json config_;
};

// gen-data ------------------------------------------------------------------

struct GenDataArgs {
    long n = 1024;
    std::uint64_t seed = 0;
    double jitter = 0.01;
    std::string out = "swirl.csv";
};

void register_gen_data(CLI::App& sub, FieldSet& fields, GenDataArgs& a) {
    fields.add_config_option(sub);
    fields.add(sub, "n", a.n, "number of points");
    fields.add(sub, "seed", a.seed, "random seed");
    fields.add(sub, "jitter", a.jitter, "std of the Gaussian jitter added before normalization");
    fields.add(sub, "out", a.out, "output CSV (a .meta sidecar is written next to it)");
}

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
    const PointSet ps = generate_swirl(a.n, a.seed, a.jitter);
    save_points(ps, a.out);
    out << "wrote " << ps.size() << " points to " << a.out << " (seed " << a.seed << ", jitter "
        << format_double(a.jitter) << ")\n";
    return 0;
}

// train ---------------------------------------------------------------------

struct TrainArgs {
    ScheduleConfig schedule;
    NetConfig net;
    TrainConfig train;
    std::string data;
    long n = 1024;
    std::uint64_t data_seed = 0;
    double jitter = 0.01;
    std::string out = "run";
    int checkpoint_every = 0;
    std::string resume;
};

void register_train(CLI::App& sub, FieldSet& f, TrainArgs& a) {
    f.add_config_option(sub);
    f.add_enum(sub, "mode", a.train.mode, mode_names, "training objective");
    f.add(sub, "T", a.train.T, "diffusion steps");
    f.add(sub, "K", a.train.K, "shortcut chain length");
    f.add(sub, "epochs", a.train.epochs, "total epochs (including any resumed ones)");
    f.add(sub, "batch_size", a.train.batch_size, "minibatch size, 0 = full batch");
    f.add(sub, "lr", a.train.lr, "Adam learning rate");
    f.add(sub, "lambda_fidelity", a.train.lambda_fidelity, "weight of the chain fidelity loss");
    f.add_enum(sub, "chain_grad", a.train.chain_grad, chain_grad_names, "gradient through the chain");
    f.add_enum(sub, "chain_init", a.train.chain_init, chain_init_names, "chain start during training");
    f.add(sub, "weighted_eps_loss", a.train.weighted_eps_loss, "weight the noise loss by the per-step KL weight");
    f.add(sub, "combined_step", a.train.combined_step, "one optimizer step on the summed losses");
    f.add(sub, "seed", a.train.seed, "training seed");
    f.add(sub, "eval_every", a.train.eval_every, "evaluate every n epochs, 0 = never");
    f.add(sub, "eval_samples", a.train.eval_samples, "samples drawn per evaluation");
    f.add(sub, "full_eval_every", a.train.full_eval_every, "every n-th evaluation also runs the full sampler");
    f.add(sub, "gamma_min", a.schedule.gamma_min, "log-SNR schedule start");
    f.add(sub, "gamma_max", a.schedule.gamma_max, "log-SNR schedule end");
    f.add(sub, "hidden_dim", a.net.hidden_dim, "hidden layer width");
    f.add(sub, "n_freqs", a.net.n_freqs, "Fourier frequencies per coordinate");
    f.add(sub, "time_embed", a.net.time_embed, "add Fourier features of the time input");
    f.add(sub, "n_time_freqs", a.net.n_time_freqs, "Fourier frequencies of the time input");
    f.add_enum(sub, "time_input", a.net.time_input, time_input_names, "scalar fed to the time features");
    f.add(sub, "data", a.data, "training points CSV; generated when empty");
    f.add(sub, "n", a.n, "points to generate when --data is empty");
    f.add(sub, "data_seed", a.data_seed, "seed of the generated data");
    f.add(sub, "jitter", a.jitter, "jitter of the generated data");
    f.add(sub, "out", a.out, "output directory");
    f.add(sub, "checkpoint_every", a.checkpoint_every, "periodic checkpoint interval in epochs, 0 = final only");
    f.add(sub, "resume", a.resume, "checkpoint to continue from");
}

/// Keeps the lines of `path` whose epoch is at most `epoch`.
void truncate_log(const fs::path& path, int epoch, bool csv) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return;
    std::vector<std::string> kept;
    std::string line;
    bool header = csv;
    while (std::getline(in, line)) {
        if (header) {
            kept.push_back(line);
            header = false;
            continue;
        }
        if (line.empty()) continue;
        int e = 0;
        if (csv) {
            e = std::stoi(line.substr(0, line.find(',')));
        } else {
            const json j = json::parse(line, nullptr, false);
            e = j.is_object() && j.contains("epoch") ? j["epoch"].get<int>() : 0;
        }
        if (e <= epoch) kept.push_back(line);
    }
    in.close();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    for (const auto& l : kept) out << l << '\n';
}

std::ofstream open_append(const fs::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::app);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    return f;
}

int cmd_train(TrainArgs& a, FieldSet& fields, std::ostream& out, std::ostream& err) {
    a.schedule.T = a.train.T;
    std::optional<Checkpoint> ckpt;
    if (!a.resume.empty()) {
        ckpt = load_checkpoint(a.resume);
        // Start from the checkpoint's settings, then re-apply what the user
        // gave explicitly; only the epoch budget and evaluation may change.
        a.schedule = ckpt->schedule;
        a.net = ckpt->net;
        a.train = ckpt->train;
        fields.resolve();
        a.schedule.T = a.train.T;
        TrainConfig cmp = a.train;
        cmp.epochs = ckpt->train.epochs;
        cmp.eval_every = ckpt->train.eval_every;
        cmp.eval_samples = ckpt->train.eval_samples;
        cmp.full_eval_every = ckpt->train.full_eval_every;
        if (!(a.schedule == ckpt->schedule) || !(a.net == ckpt->net) || !(cmp == ckpt->train))
            throw ConfigError("--resume: settings other than epochs and evaluation must match the checkpoint");
    }
    a.schedule.validate();
    a.net.validate();
    a.train.validate();
    if (a.checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");

    const NoiseSchedule sch(a.schedule);
    const PointSet data = a.data.empty() ? generate_swirl(a.n, a.data_seed, a.jitter) : load_points(a.data);
    if (data.points.cols() != a.net.input_dim) throw ConfigError("data dimension does not match the network");

    const fs::path dir(a.out);
    fs::create_directories(dir);
    const fs::path log_path = dir / "train_log.csv";
    const fs::path metrics_path = dir / "metrics.jsonl";

    TrainState state = ckpt ? ckpt->restore() : TrainState::fresh(a.net, a.train);
    if (ckpt) {
        truncate_log(log_path, state.epoch, true);
        truncate_log(metrics_path, state.epoch, false);
    } else {
        std::ofstream(log_path, std::ios::binary | std::ios::trunc) << TrainLog::csv_header << '\n';
        std::ofstream(metrics_path, std::ios::binary | std::ios::trunc);
    }
    if (!fs::exists(log_path)) std::ofstream(log_path, std::ios::binary) << TrainLog::csv_header << '\n';
    std::ofstream log = open_append(log_path);
    std::ofstream metrics = open_append(metrics_path);

    FitHooks hooks;
    hooks.on_epoch = [&](const TrainState& s, const TrainRecord& r) {
        log << TrainLog::csv_row(r) << '\n' << std::flush;
        for (const auto* m : {&r.shortcut_metrics, &r.full_metrics})
            if (*m) metrics << to_json_line(**m) << '\n' << std::flush;
        if (r.shortcut_metrics) {
            out << "epoch " << r.epoch << " eps_loss " << format_double(r.eps_loss) << " fidelity_loss "
                << format_double(r.fidelity_loss) << " energy_distance "
                << format_double(r.shortcut_metrics->energy_distance);
            if (r.full_metrics) out << " full_energy_distance " << format_double(r.full_metrics->energy_distance);
            out << '\n';
        }
        if (a.checkpoint_every > 0 && r.epoch % a.checkpoint_every == 0 && r.epoch < a.train.epochs)
            save_checkpoint(Checkpoint::capture(a.schedule, a.train, s),
                            (dir / ("checkpoint_" + std::to_string(r.epoch) + ".sdmc")).string());
    };

    try {
        fit(state, data.points, a.train, sch, hooks);
    } catch (const NumericError&) {
        const auto path = (dir / "last_good.sdmc").string();
        save_checkpoint(Checkpoint::capture(a.schedule, a.train, state), path);
        err << "training stopped at epoch " << state.epoch + 1 << "; last good state saved to " << path << '\n';
        throw;
    }
    const auto final_path = (dir / "checkpoint.sdmc").string();
    save_checkpoint(Checkpoint::capture(a.schedule, a.train, state), final_path);
    out << "trained " << (a.train.mode == TrainMode::shortcut ? "shortcut" : "baseline") << " model to epoch "
        << state.epoch << "; checkpoint " << final_path << '\n';
    return 0;
}

// sample --------------------------------------------------------------------

struct SampleArgs {
    std::string checkpoint = "run/checkpoint.sdmc";
    std::string steps; ///< K, or "full"; empty = K from the checkpoint
    long n = 1024;
    std::uint64_t seed = 0;
    std::string out = "samples.csv";
    std::string snapshots;
    std::vector<int> snapshot_k{20, 60, 100, 160, 200};
};

void register_sample(CLI::App& sub, FieldSet& f, SampleArgs& a) {
    f.add_config_option(sub);
    f.add(sub, "checkpoint", a.checkpoint, "trained checkpoint");
    f.add(sub, "steps", a.steps, "sampler steps K, or 'full' for all T steps (default: K of the checkpoint)");
    f.add(sub, "n", a.n, "number of samples");
    f.add(sub, "seed", a.seed, "sampling seed");
    f.add(sub, "out", a.out, "output CSV");
    f.add(sub, "snapshots", a.snapshots, "directory for intermediate chain snapshots");
    f.add(sub, "snapshot_k", a.snapshot_k, "steps recorded by the full sampler");
}

int cmd_sample(const SampleArgs& a, std::ostream& out) {
    const Checkpoint c = load_checkpoint(a.checkpoint);
    const NoiseSchedule sch(c.schedule);
    const TrainState state = c.restore();
    if (a.n < 1) throw ArgumentError("n must be >= 1");

    const bool full = a.steps == "full";
    int K = c.train.K;
    if (!full && !a.steps.empty()) {
        std::size_t used = 0;
        try {
            K = std::stoi(a.steps, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != a.steps.size()) throw ArgumentError("--steps must be an integer or 'full'");
    }
    if (!full && (K < 1 || K > sch.T())) throw ArgumentError("--steps must be in [1, T]");

    SnapshotPlan plan;
    plan.full = full;
    plan.full_k = a.snapshot_k;
    if (!full) plan.spec = ChainSpec::evenly_spaced(sch.T(), K);

    PointSet ps;
    ps.seed = a.seed;
    ps.generator = full ? "sample-full" : "sample-shortcut-" + std::to_string(K);
    if (!a.snapshots.empty()) {
        fs::create_directories(a.snapshots);
        auto snaps = snapshot_grid(state.net, sch, plan, a.seed, a.n, a.snapshots);
        ps.points = full ? sample_full(state.net, a.n, sch, a.seed) : std::move(snaps.back().second);
        out << "wrote " << snaps.size() << " snapshots to " << a.snapshots << '\n';
    } else {
        ps.points = full ? sample_full(state.net, a.n, sch, a.seed) : sample_shortcut(state.net, a.n, plan.spec, sch, a.seed);
    }
    save_points(ps, a.out);
    out << "wrote " << ps.size() << " samples (" << (full ? "full, T=" + std::to_string(sch.T()) : "shortcut, K=" + std::to_string(K))
        << ") to " << a.out << '\n';
    return 0;
}

// eval ----------------------------------------------------------------------

struct EvalArgs {
    std::string gen;
    std::string real;
    std::string out;
    std::string label;
};

void register_eval(CLI::App& sub, FieldSet& f, EvalArgs& a) {
    f.add_config_option(sub);
    f.add(sub, "gen", a.gen, "generated points CSV");
    f.add(sub, "real", a.real, "reference points CSV");
    f.add(sub, "out", a.out, "write the JSON report here as well as to stdout");
    f.add(sub, "label", a.label, "sampler name in the report (default: from the generated set's metadata)");
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    if (a.gen.empty() || a.real.empty()) throw ArgumentError("--gen and --real are required");
    const PointSet gen = load_points(a.gen);
    const PointSet real = load_points(a.real);
    const MetricReport r = evaluate(gen.points, real.points, a.label.empty() ? gen.generator : a.label);
    const std::string line = to_json_line(r);
    if (!a.out.empty()) {
        std::ofstream f(a.out, std::ios::binary);
        if (!f) throw IoError("cannot open '" + a.out + "' for writing");
        f << line << '\n';
        if (!f) throw IoError("failed writing '" + a.out + "'");
    }
    out << line << '\n';
    return 0;
}

// plot ----------------------------------------------------------------------

struct PlotArgs {
    std::vector<std::string> inputs;
    std::string out = "plot.svg";
    int cols = 0;
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    std::string title;
};

void register_plot(CLI::App& sub, FieldSet& f, PlotArgs& a) {
    f.add_config_option(sub);
    f.add(sub, "inputs", a.inputs, "point CSVs, one panel each, in row-major order", true);
    f.add(sub, "out", a.out, "output SVG");
    f.add(sub, "cols", a.cols, "panels per row, 0 = one row");
    f.add(sub, "row_labels", a.row_labels, "comma-separated row labels");
    f.add(sub, "col_labels", a.col_labels, "comma-separated column labels");
    f.add(sub, "title", a.title, "figure title");
}

int cmd_plot(const PlotArgs& a, std::ostream& out) {
    if (a.inputs.empty()) throw ArgumentError("plot needs at least one input CSV");
    std::vector<PointBatch> panels;
    for (const auto& p : a.inputs) panels.push_back(read_points_csv(p));
    PlotLayout layout;
    layout.cols = a.cols;
    layout.row_labels = a.row_labels;
    layout.col_labels = a.col_labels;
    layout.title = a.title;
    write_svg(a.out, render_svg(panels, layout));
    out << "wrote " << panels.size() << " panel" << (panels.size() == 1 ? "" : "s") << " to " << a.out << '\n';
    return 0;
}

int exit_code(Error::Kind k) {
    switch (k) {
    case Error::Kind::config:
    case Error::Kind::argument: return 2;
    case Error::Kind::io:
    case Error::Kind::parse:
    case Error::Kind::version: return 3;
    case Error::Kind::numeric:
    case Error::Kind::state: return 4;
    }
    return 1;
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Shortcut-chain diffusion on 2-D point sets", "sdm"};
    app.require_subcommand(1);

    FieldSet gen_f, train_f, sample_f, eval_f, plot_f;
    GenDataArgs gen_a;
    TrainArgs train_a;
    SampleArgs sample_a;
    EvalArgs eval_a;
    PlotArgs plot_a;
    auto* gen = app.add_subcommand("gen-data", "generate the swirl dataset");
    auto* train = app.add_subcommand("train", "train a model and write checkpoints and logs");
    auto* sample = app.add_subcommand("sample", "draw samples from a checkpoint");
    auto* eval = app.add_subcommand("eval", "compare two point sets");
    auto* plot = app.add_subcommand("plot", "render point sets as an SVG scatter grid");
    register_gen_data(*gen, gen_f, gen_a);
    register_train(*train, train_f, train_a);
    register_sample(*sample, sample_f, sample_a);
    register_eval(*eval, eval_f, eval_a);
    register_plot(*plot, plot_f, plot_a);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            gen_f.resolve();
            return cmd_gen_data(gen_a, out);
        }
        if (train->parsed()) {
            train_f.resolve();
            return cmd_train(train_a, train_f, out, err);
        }
        if (sample->parsed()) {
            sample_f.resolve();
            return cmd_sample(sample_a, out);
        }
        if (eval->parsed()) {
            eval_f.resolve();
            return cmd_eval(eval_a, out);
        }
        plot_f.resolve();
        return cmd_plot(plot_a, out);
    } catch (const Error& e) {
        err << "sdm: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const fs::filesystem_error& e) {
        err << "sdm: I/O error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        err << "sdm: " << e.what() << '\n';
        return 1;
    }
}

} // namespace sdm::cli
