#include "dualstyle/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "dualstyle/errors.hpp"
#include "dualstyle/image_io.hpp"
#include "dualstyle/pipeline.hpp"
#include "dualstyle/selfcheck.hpp"

#ifndef DUALSTYLE_DEFAULT_WEIGHTS
#define DUALSTYLE_DEFAULT_WEIGHTS "fixtures"
#endif

namespace dualstyle::cli {

namespace fs = std::filesystem;

std::string resolve_weights_dir(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("DUALSTYLE_WEIGHTS"); env && *env) return env;
    return DUALSTYLE_DEFAULT_WEIGHTS;
}

namespace {

struct Options {
    StylizeConfig cfg;
    std::string noise_init = "forward-noised-content";
    std::string sampler = "plms-guided";
    std::string weights;

    std::string content;
    std::string prompt = "oil-painting";
    std::string out;
    std::string report;
    std::string trace;

    std::string param;
    std::vector<std::string> values;
    bool seed_per_run = false;
    int jobs = 1;
};

void add_config_flags(CLI::App& app, Options& o) {
    auto& c = o.cfg;
    auto& g = c.guidance;
    const char* group = "Sampling";
    app.add_option("--T", c.T, "Guided (inference) steps")->capture_default_str()->group(group);
    app.add_option("--T1", c.T1, "Total steps including free diffusion, T1 >= T")->capture_default_str()->group(group);
    app.add_option("--w", c.w, "Blend weight of the natural denoiser, in [0, 1]")->capture_default_str()->group(group);
    app.add_option("--seed", c.seed, "Seed of the random stream")->capture_default_str()->group(group);
    app.add_option("--noise_init,--noise-init", o.noise_init, "forward-noised-content | gaussian")
        ->capture_default_str()->group(group);
    app.add_option("--sampler", o.sampler, "plms-guided | ancestral-guided")->capture_default_str()->group(group);
    app.add_option("--horizon", c.horizon, "Training steps spanned by the T1 steps (0: equal to T1)")
        ->capture_default_str()->group(group);
    group = "Guidance";
    app.add_option("--lambda_d,--lambda-d", g.lambda_d, "Instruction loss weight")->capture_default_str()->group(group);
    app.add_option("--lambda_c1,--lambda-c1", g.lambda_c1, "Content loss weight")->capture_default_str()->group(group);
    app.add_option("--lambda_c2,--lambda-c2", g.lambda_c2, "Patch contrastive loss weight")
        ->capture_default_str()->group(group);
    app.add_option("--lambda_aes,--lambda-aes", g.lambda_aes, "Aesthetic loss weight")->capture_default_str()->group(group);
    app.add_option("--lambda_tv,--lambda-tv", g.lambda_tv, "Total variation loss weight")
        ->capture_default_str()->group(group);
    app.add_option("--patch_size,--patch-size", g.patch_size, "Patch side for the contrastive loss")
        ->capture_default_str()->group(group);
    app.add_option("--tau", g.tau, "Contrastive temperature")->capture_default_str()->group(group);
}

struct ModelFileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

StylizeModels load_model_dir(const std::string& dir) {
    try {
        return load_models(dir);
    } catch (const Error& e) {
        throw ModelFileError("cannot load models from '" + dir + "': " + e.what());
    }
}

void finish_config(Options& o) {
    o.cfg.noise_init = parse_noise_init(o.noise_init);
    o.cfg.sampler = parse_sampler(o.sampler);
}

std::string with_extension(const std::string& path, const std::string& ext) {
    return fs::path(path).replace_extension(ext).string();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f || !(f << text)) throw IoError("cannot write '" + path + "'");
}

int run_stylize(Options& o, std::ostream& out) {
    finish_config(o);
    const ImageTensor content = read_png(o.content);
    o.cfg.validate(content.shape(), default_schedule().t_train());
    const StylizeModels models = load_model_dir(resolve_weights_dir(o.weights));
    const RunReport r = stylize(content, o.prompt, o.cfg, models);
    write_png(r.image, o.out);
    const std::string report = o.report.empty() ? with_extension(o.out, ".json") : o.report;
    const std::string trace = o.trace.empty() ? with_extension(o.out, ".csv") : o.trace;
    write_text(report, report_json(r));
    write_text(trace, trace_csv(r));
    char buf[200];
    std::snprintf(buf, sizeof buf, "wrote %s (L_inst %.4f, content %.4f, %.2f s)\n", o.out.c_str(),
                  r.final_terms.instruction, r.content_metric, r.wall_seconds);
    out << buf;
    return kOk;
}

void apply_param(StylizeConfig& c, const std::string& param, const std::string& value) {
    try {
        std::size_t used = 0;
        if (param == "lambda_d") {
            c.guidance.lambda_d = std::stod(value, &used);
        } else if (param == "w") {
            c.w = std::stod(value, &used);
        } else if (param == "T") {
            c.T = std::stoi(value, &used);
        } else if (param == "T1") {
            c.T1 = std::stoi(value, &used);
        } else {
            throw ConfigurationError("sweep parameter must be one of lambda_d, T, T1, w; got '" + param + "'");
        }
        if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::invalid_argument&) {
        throw ConfigurationError("bad value '" + value + "' for " + param);
    } catch (const std::out_of_range&) {
        throw ConfigurationError("value '" + value + "' for " + param + " is out of range");
    }
}

int run_sweep(Options& o, std::ostream& out) {
    finish_config(o);
    if (o.values.empty()) throw ConfigurationError("--values needs at least one entry");
    if (o.jobs < 1) throw ConfigurationError("--jobs must be >= 1");
    const ImageTensor content = read_png(o.content);
    std::vector<StylizeConfig> grid;
    for (std::size_t i = 0; i < o.values.size(); ++i) {
        StylizeConfig c = o.cfg;
        apply_param(c, o.param, o.values[i]);
        if (o.seed_per_run) c.seed = o.cfg.seed + i;
        c.validate(content.shape(), default_schedule().t_train());
        grid.push_back(c);
    }
    const StylizeModels models = load_model_dir(resolve_weights_dir(o.weights));

    std::vector<RunReport> results(grid.size());
    std::vector<std::exception_ptr> failures(grid.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < grid.size(); i = next++) {
            try {
                results[i] = stylize(content, o.prompt, grid[i], models);
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const int threads = std::min<int>(o.jobs, static_cast<int>(grid.size()));
    for (int k = 1; k < threads; ++k) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& f : failures) {
        if (f) std::rethrow_exception(f);
    }

    std::ostringstream csv;
    csv.precision(17);
    csv << "param,value,seed,instruction_loss,content_loss,patch_loss,aesthetic_loss,tv_loss,total_loss,"
           "content_metric,wall_seconds,image_hash\n";
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto& r = results[i];
        const auto& t = r.final_terms;
        char hash[17];
        std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(content_hash(r.image)));
        csv << o.param << ',' << o.values[i] << ',' << grid[i].seed << ',' << t.instruction << ',' << t.content
            << ',' << t.patch << ',' << t.aesthetic << ',' << t.tv << ',' << t.weighted_total(grid[i].guidance) << ','
            << r.content_metric << ',' << r.wall_seconds << ',' << hash << '\n';
    }
    if (o.out.empty()) {
        out << csv.str();
    } else {
        write_text(o.out, csv.str());
        out << "wrote " << grid.size() << " rows to " << o.out << '\n';
    }
    return kOk;
}

int run_verify(Options& o, std::ostream& out) {
    const std::string dir = resolve_weights_dir(o.weights);
    const StylizeModels models = load_model_dir(dir);
    const std::string content_path = o.content.empty() ? (fs::path(dir) / "content_disc.png").string() : o.content;
    const ImageTensor content = read_png(content_path);
    int failed = 0;
    for (const auto& r : run_self_checks(models, content, o.prompt)) {
        out << (r.passed ? "PASS  " : "FAIL  ") << r.name << "  (" << r.detail << ")\n";
        failed += r.passed ? 0 : 1;
    }
    out << (failed == 0 ? "all self-checks passed\n" : std::to_string(failed) + " self-check(s) failed\n");
    return failed == 0 ? kOk : kCheckFailed;
}

}  // namespace

int parse_and_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Text-driven image stylization with dual denoisers and guided sampling.", "dualstyle"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "Key-value config file (TOML/INI); command-line flags take precedence");
    app.allow_config_extras(false);
    app.add_option("--weights", o.weights,
                   "Directory with the .dsw model files (default: $DUALSTYLE_WEIGHTS, then the bundled fixtures)");
    add_config_flags(app, o);

    auto* stylize_cmd = app.add_subcommand("stylize", "Stylize one image and write the image, report and loss trace");
    stylize_cmd->add_option("--content", o.content, "Content image (8-bit RGB PNG)")->required();
    stylize_cmd->add_option("--prompt", o.prompt, "Style tag from the embedder vocabulary")->required();
    stylize_cmd->add_option("--out", o.out, "Output PNG")->required();
    stylize_cmd->add_option("--report", o.report, "Report file (default: output path with .json)");
    stylize_cmd->add_option("--trace", o.trace, "Per-step loss CSV (default: output path with .csv)");

    auto* sweep_cmd = app.add_subcommand("sweep", "Run stylize over a parameter grid and write one CSV row per run");
    sweep_cmd->add_option("--content", o.content, "Content image (8-bit RGB PNG)")->required();
    sweep_cmd->add_option("--prompt", o.prompt, "Style tag")->capture_default_str();
    sweep_cmd->add_option("--param", o.param, "Swept parameter: lambda_d, T, T1 or w")->required();
    sweep_cmd->add_option("--values", o.values, "Comma-separated grid values")->required()->delimiter(',');
    sweep_cmd->add_option("--out", o.out, "CSV output (default: standard output)");
    sweep_cmd->add_flag("--seed-per-run", o.seed_per_run, "Use seed + i for the i-th grid point");
    sweep_cmd->add_option("--jobs", o.jobs, "Grid points run concurrently")->capture_default_str();

    auto* verify_cmd = app.add_subcommand("verify", "Run the self-check suite and print pass/fail per check");
    verify_cmd->add_option("--content", o.content, "Content image (default: content_disc.png in the weights directory)");
    verify_cmd->add_option("--prompt", o.prompt, "Style tag")->capture_default_str();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << "run 'dualstyle --help' for usage\n";
        return kUsage;
    }

    try {
        if (stylize_cmd->parsed()) return run_stylize(o, out);
        if (sweep_cmd->parsed()) return run_sweep(o, out);
        if (verify_cmd->parsed()) return run_verify(o, out);
        return kUsage;
    } catch (const ModelFileError& e) {
        err << "error: " << e.what() << '\n';
        return kModelFile;
    } catch (const DivergenceError& e) {
        err << "error: numeric divergence at step " << e.step() << ": " << e.what() << '\n';
        return kDivergence;
    } catch (const NumericError& e) {
        err << "error: non-finite " << e.term() << " term: " << e.what() << '\n';
        return kDivergence;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    }
}

int parse_and_run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return parse_and_run(args, std::cout, std::cerr);
}

}  // namespace dualstyle::cli
