#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <optional>
#include <sstream>

#include "convlut/bench.hpp"
#include "convlut/common.hpp"
#include "convlut/degradation.hpp"
#include "convlut/lut_builder.hpp"
#include "convlut/lut_core.hpp"
#include "convlut/training.hpp"

namespace convlut::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

/// Argument problems found after parsing.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    int threads = 1;
    std::uint64_t seed = 0;
};

void add_common(CLI::App& sub, Common& c) {
    sub.add_option("--threads", c.threads, "Worker threads (0 = all cores); outputs do not depend on it")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    sub.add_option("--seed", c.seed, "Seed for every random choice")->capture_default_str();
}

std::pair<int, int> parse_size(const std::string& s) {
    const auto x = s.find('x');
    try {
        if (x != std::string::npos) {
            std::size_t a = 0, b = 0;
            const int w = std::stoi(s.substr(0, x), &a);
            const int h = std::stoi(s.substr(x + 1), &b);
            if (a == x && b == s.size() - x - 1 && w > 0 && h > 0) return {w, h};
        }
    } catch (const std::exception&) {
    }
    throw UsageError("size must look like WIDTHxHEIGHT, got '" + s + "'");
}

std::vector<int> parse_labels(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw UsageError("bad QP label '" + item + "'");
        }
    }
    if (out.empty()) throw UsageError("at least one QP label is required");
    for (int v : out)
        if (v < 0 || v > 51) throw UsageError("QP labels must lie in [0, 51]");
    return out;
}

void check_interval_arg(int interval) {
    try {
        check_interval(interval);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

std::ofstream open_out(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot write " + p.string());
    return f;
}

json number_or_inf(double v) {
    if (std::isinf(v)) return "inf";
    return v;
}

std::string fixed(double v, int digits) {
    if (std::isinf(v)) return "inf";
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

std::vector<StreamSample> load_all(const std::vector<std::string>& manifests) {
    std::vector<StreamSample> all;
    for (const auto& m : manifests) {
        auto part = load_dataset(m);
        all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    return all;
}

Model model_from(const std::string& weights) { return weights.empty() ? Model{} : load_model(weights); }

void check_model(const Model& m, const ExpertBank& bank) {
    if (m.has_predictor() && m.predictor.output_channels(1) != bank.size())
        throw std::invalid_argument("weights predict " + std::to_string(m.predictor.output_channels(1)) +
                                    " experts but the bank holds " + std::to_string(bank.size()));
}

// ---- subcommands ----

struct BuildLutArgs {
    Common common;
    std::string oracle = "qp_adaptive";
    std::string labels = "0,10,20,30,40,50";
    int interval = 16;
    int scale = 4;
    std::string out;
};

int build_lut(const BuildLutArgs& a, std::ostream& out) {
    const OracleKind kind = [&] {
        try {
            return parse_oracle_kind(a.oracle);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }();
    const std::vector<int> labels = parse_labels(a.labels);
    check_interval_arg(a.interval);
    if (a.scale < 1 || a.scale > 8) throw UsageError("scale must lie in [1, 8]");
    const ExpertBank bank = build_bank(labels, kind, a.interval, a.scale, a.common.threads);
    save_bank(bank, a.out);
    const std::uint64_t payload = lut_size_bytes(a.interval, a.scale, static_cast<int>(labels.size()));
    const std::uint64_t file = fs::file_size(a.out);
    json rec = {{"kind", "bank"},     {"path", a.out},       {"oracle", a.oracle}, {"labels", labels},
                {"interval", a.interval}, {"scale", a.scale}, {"payload_bytes", payload},
                {"file_bytes", file}};
    out << rec.dump() << '\n';
    out << "wrote " << labels.size() << " expert(s) to " << a.out << ": " << fixed(payload / 1e6, 3)
        << " MB payload, " << file << " bytes on disk\n";
    return kOk;
}

struct SimulateArgs {
    Common common;
    std::string hr_dir, out;
    int synth = 0;
    std::string size = "64x64";
    std::string profile = "500kbps";
    std::string trace;
    int qp = -1;
};

int simulate(const SimulateArgs& a, const CLI::App& sub, std::ostream& out) {
    if (a.hr_dir.empty() == (a.synth == 0)) throw UsageError("give exactly one of --hr-dir and --synth");
    DatasetOptions o;
    o.seed = a.common.seed;
    o.threads = a.common.threads;
    try {
        o.profile = parse_profile(a.profile);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (sub.count("--qp") > 0) {
        if (a.qp < 0 || a.qp > 51) throw UsageError("--qp must lie in [0, 51]");
        o.fixed_qp = a.qp;
    }
    if (!a.trace.empty()) o.trace = load_trace(a.trace);

    fs::path hr = a.hr_dir;
    if (a.synth > 0) {
        const auto [w, h] = parse_size(a.size);
        hr = fs::path(a.out) / "source";
        fs::create_directories(hr);
        const auto clip = synth_clip(a.synth, w, h, a.common.seed);
        char name[32];
        for (std::size_t i = 0; i < clip.size(); ++i) {
            std::snprintf(name, sizeof name, "frame_%04zu.ppm", i);
            write_pnm(clip[i], hr / name);
        }
    } else if (!fs::is_directory(hr)) {
        throw IoError("HR directory not found: " + a.hr_dir);
    }
    const auto records = generate_dataset(hr, a.out, o);
    int dropped = 0;
    double qp = 0.0, psnr_sum = 0.0;
    int finite = 0;
    for (const auto& r : records) {
        if (r.dropped) {
            ++dropped;
            continue;
        }
        qp += r.qp_mean;
        if (r.psnr && std::isfinite(*r.psnr)) {
            psnr_sum += *r.psnr;
            ++finite;
        }
    }
    const int received = static_cast<int>(records.size()) - dropped;
    json rec = {{"kind", "dataset"},
                {"manifest", (fs::path(a.out) / "manifest.jsonl").string()},
                {"frames", records.size()},
                {"dropped", dropped},
                {"mean_qp", received > 0 ? qp / received : 0.0},
                {"mean_lr_psnr", finite > 0 ? json(psnr_sum / finite) : json(nullptr)}};
    out << rec.dump() << '\n';
    out << records.size() << " frames, " << dropped << " dropped, mean QP "
        << fixed(received > 0 ? qp / received : 0.0, 2) << '\n';
    return kOk;
}

struct SynthArgs {
    Common common;
    int frames = 8;
    std::string size = "64x64";
    std::string out;
};

int synth(const SynthArgs& a, std::ostream& out) {
    const auto [w, h] = parse_size(a.size);
    if (a.frames < 1) throw UsageError("--frames must be positive");
    fs::create_directories(a.out);
    const auto clip = synth_clip(a.frames, w, h, a.common.seed);
    char name[32];
    for (std::size_t i = 0; i < clip.size(); ++i) {
        std::snprintf(name, sizeof name, "frame_%04zu.ppm", i);
        write_pnm(clip[i], fs::path(a.out) / name);
    }
    out << json{{"kind", "clip"}, {"dir", a.out}, {"frames", a.frames}, {"width", w}, {"height", h}}.dump() << '\n';
    return kOk;
}

struct TrainArgs {
    Common common;
    std::vector<std::string> data, val;
    std::string bank, out, init, bank_out, log;
    TrainConfig cfg;
    bool no_temporal = false;
};

int train_cmd(TrainArgs& a, std::ostream& out) {
    a.cfg.seed = a.common.seed;
    a.cfg.threads = std::max(1, resolve_threads(a.common.threads));
    a.cfg.temporal = !a.no_temporal;
    if (a.cfg.finetune_lut && a.bank_out.empty()) throw UsageError("--finetune-lut needs --bank-out");
    if (!a.cfg.finetune_lut && !a.bank_out.empty()) throw UsageError("--bank-out is only written with --finetune-lut");
    try {
        a.cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    ExpertBank bank = load_bank(a.bank);
    const auto train_set = load_all(a.data);
    const auto val_set = load_all(a.val);
    std::optional<Model> init;
    if (!a.init.empty()) init = load_model(a.init);

    std::optional<std::ofstream> log;
    if (!a.log.empty()) log = open_out(a.log);
    const TrainResult r = train(a.cfg, train_set, val_set, bank, init ? &*init : nullptr, [&](const TrainLogRecord& rec) {
        const std::string line = to_json_line(rec);
        out << line << '\n';
        if (log) *log << line << '\n';
    });
    save_model(r.model, a.out);
    if (a.cfg.finetune_lut) save_bank(bank, a.bank_out);
    out << "saved weights to " << a.out << '\n';
    return kOk;
}

struct UpscaleArgs {
    Common common;
    std::string data, bank, weights, out;
    bool no_temporal = false;
    bool timing = false;
};

int upscale(const UpscaleArgs& a, std::ostream& out) {
    const ExpertBank bank = load_bank(a.bank);
    const Model m = model_from(a.weights);
    check_model(m, bank);
    const auto samples = load_dataset(a.data);
    const OrderTable order = build_order_table(bank.interval());
    fs::create_directories(a.out);
    const int threads = std::max(1, resolve_threads(a.common.threads));
    const Image* last = nullptr;
    int written = 0;
    char name[32];
    for (const auto& s : samples) {
        if (s.dropped || !s.lr) {
            if (a.timing) out << json{{"kind", "frame"}, {"index", s.frame_index}, {"dropped", true}}.dump() << '\n';
            continue;
        }
        const Image* prev = s.motion ? last : nullptr;
        const auto t0 = std::chrono::steady_clock::now();
        const Image sr = upscale_frame(m, bank, order, *s.lr, prev, prev ? &*s.motion : nullptr, !a.no_temporal, threads);
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        std::snprintf(name, sizeof name, "sr_%04d.ppm", s.frame_index);
        write_pnm(sr, fs::path(a.out) / name);
        if (a.timing)
            out << json{{"kind", "frame"}, {"index", s.frame_index}, {"dropped", false}, {"latency_ms", ms}}.dump()
                << '\n';
        last = &*s.lr;
        ++written;
    }
    out << "wrote " << written << " frame(s) to " << a.out << '\n';
    return kOk;
}

struct EvalArgs {
    Common common;
    std::vector<std::string> data;
    std::string bank, weights, records;
    bool no_temporal = false;
};

int eval_cmd(const EvalArgs& a, std::ostream& out) {
    const ExpertBank bank = load_bank(a.bank);
    const Model m = model_from(a.weights);
    check_model(m, bank);
    const EvalReport r = evaluate(m, bank, load_all(a.data), !a.no_temporal, std::max(1, resolve_threads(a.common.threads)));
    std::optional<std::ofstream> rec;
    if (!a.records.empty()) rec = open_out(a.records);
    if (rec) {
        for (const auto& f : r.frames)
            *rec << json{{"kind", "frame"},
                         {"profile", f.profile},
                         {"index", f.index},
                         {"psnr", number_or_inf(f.psnr)},
                         {"ssim", f.ssim}}
                        .dump()
                 << '\n';
        for (const auto& p : r.profiles)
            *rec << json{{"kind", "profile"},
                         {"profile", p.profile},
                         {"frames", p.frames},
                         {"psnr", number_or_inf(p.mean_psnr)},
                         {"ssim", p.mean_ssim},
                         {"ssim_channel", "luma"}}
                        .dump()
                 << '\n';
    }
    out << std::left << std::setw(12) << "profile" << std::right << std::setw(8) << "frames" << std::setw(12)
        << "PSNR (dB)" << std::setw(10) << "SSIM" << '\n';
    for (const auto& p : r.profiles)
        out << std::left << std::setw(12) << p.profile << std::right << std::setw(8) << p.frames << std::setw(12)
            << fixed(p.mean_psnr, 3) << std::setw(10) << fixed(p.mean_ssim, 4) << '\n';
    return kOk;
}

struct BenchArgs {
    Common common;
    std::vector<std::string> modes;
    std::string size = "320x180";
    int iters = 10;
    int warmup = 1;
    std::string records;
};

int bench(BenchArgs& a, std::ostream& out) {
    const auto [w, h] = parse_size(a.size);
    if (a.iters < 1) throw UsageError("--iters must be positive");
    if (a.warmup < 0) throw UsageError("--warmup must be non-negative");
    if (a.modes.empty()) a.modes = bench_modes();
    for (const auto& m : a.modes)
        if (std::find(bench_modes().begin(), bench_modes().end(), m) == bench_modes().end())
            throw UsageError("unknown bench mode '" + m + "'");
    std::optional<std::ofstream> rec;
    if (!a.records.empty()) rec = open_out(a.records);
    std::vector<BenchReport> reports;
    for (const auto& m : a.modes) {
        const BenchReport r = bench_interp(m, w, h, a.iters, std::max(1, resolve_threads(a.common.threads)), a.warmup, a.common.seed);
        const json j = {{"kind", "bench"},     {"mode", r.mode},         {"width", r.width},
                        {"height", r.height}, {"iterations", r.iterations}, {"threads", r.threads},
                        {"min_ms", r.min_ms}, {"median_ms", r.median_ms}, {"mean_ms", r.mean_ms},
                        {"fps", r.fps},       {"verified", r.verified}};
        out << j.dump() << '\n';
        if (rec) *rec << j.dump() << '\n';
        reports.push_back(r);
    }
    out << std::left << std::setw(20) << "mode" << std::right << std::setw(12) << "min ms" << std::setw(12)
        << "median ms" << std::setw(12) << "mean ms" << std::setw(10) << "fps" << '\n';
    for (const auto& r : reports)
        out << std::left << std::setw(20) << r.mode << std::right << std::setw(12) << fixed(r.min_ms, 3) << std::setw(12)
            << fixed(r.median_ms, 3) << std::setw(12) << fixed(r.mean_ms, 3) << std::setw(10) << fixed(r.fps, 1)
            << '\n';
    return kOk;
}

constexpr const char* kDatasetFormat =
    "Dataset directory: manifest.jsonl (one JSON object per frame: index, dropped, base_qp, qp_mean, psnr, bits, "
    "budget, hr, lr, meta, profile), hr_NNNN.ppm, lr_NNNN.ppm and meta_NNNN.json (QP map and block motion).";
constexpr const char* kBankFormat =
    "Bank file: 'CLUT' magic, u32 version, interval, bins, scale, expert count, i32 QP labels, then uint8 entries "
    "in [expert][b][b][b][b][r][r] order, little endian.";
constexpr const char* kWeightFormat =
    "Weight file: named float32 tensors under 'predictor.' and 'temporal.' prefixes (see docs/FORMATS.md).";

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Expert-fused lookup-table video super-resolution", "convlut"};
    app.require_subcommand(1);
    app.footer("Exit codes: 0 ok, 2 bad arguments, 3 I/O error, 4 validation failure. See docs/FORMATS.md.");

    BuildLutArgs bl;
    auto* s_bl = app.add_subcommand("build-lut", "Tabulate built-in SR oracles into an expert bank");
    add_common(*s_bl, bl.common);
    s_bl->add_option("--oracle", bl.oracle, "nearest, bilinear, sharpen or qp_adaptive")->capture_default_str();
    s_bl->add_option("--qp-labels", bl.labels, "Comma-separated QP labels, one expert each")->capture_default_str();
    s_bl->add_option("--interval", bl.interval, "Lattice interval, a power of two dividing 256")->capture_default_str();
    s_bl->add_option("--scale", bl.scale, "Upscaling factor")->capture_default_str();
    s_bl->add_option("--out", bl.out, "Output bank file")->required();
    s_bl->footer(kBankFormat);

    SimulateArgs sm;
    auto* s_sm = app.add_subcommand("simulate", "Degrade HR frames through the rate-controlled codec into a dataset");
    add_common(*s_sm, sm.common);
    auto* o_hr = s_sm->add_option("--hr-dir", sm.hr_dir, "Directory of HR .ppm/.pgm frames, sorted by name");
    auto* o_syn = s_sm->add_option("--synth", sm.synth, "Generate a synthetic clip of this many frames instead");
    o_hr->excludes(o_syn);
    s_sm->add_option("--size", sm.size, "Synthetic clip size WxH (multiples of 4)")->capture_default_str();
    auto* o_prof = s_sm->add_option("--profile", sm.profile, "100kbps, 500kbps or 1mbps")->capture_default_str();
    auto* o_trace = s_sm->add_option("--trace", sm.trace, "Per-frame bit budget file, overrides --profile");
    auto* o_qp = s_sm->add_option("--qp", sm.qp, "Fixed QP: no rate control, no drops");
    o_trace->excludes(o_qp);
    o_prof->excludes(o_trace);
    o_prof->excludes(o_qp);
    s_sm->add_option("--out", sm.out, "Output dataset directory")->required();
    s_sm->footer(kDatasetFormat);

    SynthArgs sy;
    auto* s_sy = app.add_subcommand("synth-clip", "Write a deterministic synthetic RGB clip");
    add_common(*s_sy, sy.common);
    s_sy->add_option("--frames", sy.frames, "Frame count")->capture_default_str();
    s_sy->add_option("--size", sy.size, "Frame size WxH")->capture_default_str();
    s_sy->add_option("--out", sy.out, "Output directory (frame_NNNN.ppm)")->required();

    TrainArgs tr;
    auto* s_tr = app.add_subcommand("train", "Train the fusion-weight predictor and temporal branch");
    add_common(*s_tr, tr.common);
    s_tr->add_option("--data", tr.data, "Training manifest.jsonl (repeatable)")->required();
    s_tr->add_option("--val", tr.val, "Validation manifest (repeatable; default: the training data)");
    s_tr->add_option("--bank", tr.bank, "Expert bank file")->required();
    s_tr->add_option("--out", tr.out, "Output weight file")->required();
    s_tr->add_option("--init", tr.init, "Start from these weights instead of a fresh model");
    s_tr->add_option("--epochs", tr.cfg.epochs, "Epochs")->capture_default_str();
    s_tr->add_option("--steps", tr.cfg.steps_per_epoch, "Steps per epoch (0: one pass of patches)")->capture_default_str();
    s_tr->add_option("--patch", tr.cfg.patch, "LR patch side")->capture_default_str();
    s_tr->add_option("--batch", tr.cfg.batch, "Patches per step")->capture_default_str();
    s_tr->add_option("--lr", tr.cfg.lr, "Adam learning rate")->capture_default_str();
    s_tr->add_option("--beta1", tr.cfg.beta1, "Adam beta1")->capture_default_str();
    s_tr->add_option("--beta2", tr.cfg.beta2, "Adam beta2")->capture_default_str();
    s_tr->add_option("--eps", tr.cfg.charbonnier_eps, "Charbonnier epsilon")->capture_default_str();
    s_tr->add_option("--hidden", tr.cfg.hidden, "Hidden channels of both nets")->capture_default_str();
    s_tr->add_flag("--no-temporal", tr.no_temporal, "Train without the temporal branch");
    s_tr->add_flag("--finetune-lut", tr.cfg.finetune_lut, "Also update LUT entries");
    s_tr->add_option("--lut-lr", tr.cfg.lut_lr, "Adam step for LUT entries, gray levels")->capture_default_str();
    s_tr->add_option("--bank-out", tr.bank_out, "Where the fine-tuned bank is written");
    s_tr->add_option("--log", tr.log, "Also write the JSON-lines training log here");
    s_tr->footer(std::string(kDatasetFormat) + "\n" + kWeightFormat +
                 "\nLog lines: {kind: step|epoch, epoch, step, loss[, val_psnr]}.");

    UpscaleArgs up;
    auto* s_up = app.add_subcommand("upscale", "Super-resolve every received frame of a dataset in arrival order");
    add_common(*s_up, up.common);
    s_up->add_option("--data", up.data, "Dataset manifest.jsonl")->required();
    s_up->add_option("--bank", up.bank, "Expert bank file")->required();
    s_up->add_option("--weights", up.weights, "Weight file (default: uniform fusion, no temporal branch)");
    s_up->add_option("--out", up.out, "Output directory (sr_NNNN.ppm)")->required();
    s_up->add_flag("--no-temporal", up.no_temporal, "Spatial branch only");
    s_up->add_flag("--timing", up.timing, "Print per-frame latency records");
    s_up->footer(std::string(kDatasetFormat) + "\n" + kWeightFormat);

    EvalArgs ev;
    auto* s_ev = app.add_subcommand("eval", "Per-profile PSNR/SSIM of the full pipeline");
    add_common(*s_ev, ev.common);
    s_ev->add_option("--data", ev.data, "Dataset manifest.jsonl (repeatable)")->required();
    s_ev->add_option("--bank", ev.bank, "Expert bank file")->required();
    s_ev->add_option("--weights", ev.weights, "Weight file (default: uniform fusion)");
    s_ev->add_flag("--no-temporal", ev.no_temporal, "Spatial branch only");
    s_ev->add_option("--records", ev.records, "Write per-frame and per-profile JSON lines here");
    s_ev->footer(std::string(kDatasetFormat) + "\nPSNR over all channels; SSIM on luma.");

    BenchArgs be;
    auto* s_be = app.add_subcommand("bench", "Time the LUT query paths");
    add_common(*s_be, be.common);
    s_be->add_option("--mode", be.modes,
                     "reference_branchy, order_table, tetralinear, fused_n6 or srlut_rot4 (repeatable; default all)");
    s_be->add_option("--size", be.size, "LR frame size WxH")->capture_default_str();
    s_be->add_option("--iters", be.iters, "Timed iterations")->capture_default_str();
    s_be->add_option("--warmup", be.warmup, "Untimed iterations")->capture_default_str();
    s_be->add_option("--records", be.records, "Also write the JSON-lines records here");

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kArgs;
    }

    try {
        if (s_bl->parsed()) return build_lut(bl, out);
        if (s_sm->parsed()) return simulate(sm, *s_sm, out);
        if (s_sy->parsed()) return synth(sy, out);
        if (s_tr->parsed()) return train_cmd(tr, out);
        if (s_up->parsed()) return upscale(up, out);
        if (s_ev->parsed()) return eval_cmd(ev, out);
        if (s_be->parsed()) return bench(be, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kArgs;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << '\n';
        return kIo;
    } catch (const FormatError& e) {
        err << "I/O error: " << e.what() << '\n';
        return kIo;
    } catch (const fs::filesystem_error& e) {
        err << "I/O error: " << e.what() << '\n';
        return kIo;
    } catch (const std::exception& e) {
        err << "validation failure: " << e.what() << '\n';
        return kValidation;
    }
    return kArgs;
}

}  // namespace convlut::cli
