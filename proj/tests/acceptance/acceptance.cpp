// Acceptance runner: checks every headline requirement at its stated scale
// and tolerance and prints one PASS/FAIL line per requirement.
//
//   jamident_acceptance [--work DIR] [--reuse] [--only 1,2,...]
//
// --reuse keeps datasets and checkpoints already present in DIR (handy while
// iterating); ctest always starts from an empty directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "criteria.hpp"
#include "jamident/pipeline.hpp"

namespace fs = std::filesystem;
using namespace jamident;
using criteria::Outcome;
using Clock = std::chrono::steady_clock;

namespace {

std::ostringstream g_log;  // pipeline chatter, written to DIR/pipeline.log

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a = 0, double b = 0, double c = 0, double d = 0) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const char* kStrategies[] = {"baseline", "masked", "consistent"};

// Desk-scale artifacts shared by the learning-trend and defense checks.
class DeskRun {
public:
    DeskRun(fs::path work, bool reuse) : work_(std::move(work)), reuse_(reuse), cfg_(config::AppConfig::desk_scale()) {}

    const config::AppConfig& config() const { return cfg_; }
    fs::path data_dir() const { return work_ / "desk" / "data"; }
    fs::path run_dir(const std::string& s) const { return work_ / "desk" / s; }
    double gen_seconds() const { return gen_s_; }
    double train_seconds(const std::string& s) const { return train_s_.count(s) ? train_s_.at(s) : 0.0; }

    void ensure_dataset() {
        if (have_data_) return;
        if (!(reuse_ && fs::exists(data_dir() / "manifest.json"))) {
            const auto t0 = Clock::now();
            pipeline::gen_dataset(cfg_, data_dir(), g_log);
            gen_s_ = seconds_since(t0);
            std::cout << fmt("  desk dataset generated in %.0f s", gen_s_) << std::endl;
        }
        have_data_ = true;
    }

    fs::path checkpoint(const std::string& strategy) {
        ensure_dataset();
        const auto ck = run_dir(strategy) / "checkpoint.bin";
        if (reuse_ && fs::exists(ck) && fs::exists(checkpoint::header_path(ck))) return ck;
        if (trained_.count(strategy)) return ck;
        pipeline::TrainRequest req{cfg_, *training::strategy_from_string(strategy), data_dir(), ck,
                                   run_dir(strategy) / "train_log.jsonl"};
        const auto t0 = Clock::now();
        pipeline::train(req, g_log);
        train_s_[strategy] = seconds_since(t0);
        std::cout << "  " << strategy << fmt(" model trained in %.0f s", train_s_[strategy]) << std::endl;
        trained_.insert(strategy);
        return ck;
    }

    const evaluate::EvalReport& clean(const std::string& strategy) {
        if (!clean_.count(strategy)) {
            pipeline::EvalRequest req{cfg_, data_dir(), checkpoint(strategy), run_dir(strategy)};
            const auto t0 = Clock::now();
            clean_[strategy] = pipeline::eval(req, g_log);
            eval_s_ += seconds_since(t0);
        }
        return clean_.at(strategy);
    }

    const std::vector<evaluate::EvalReport>& attacked(const std::string& strategy) {
        if (!attack_.count(strategy)) {
            pipeline::EvalRequest req{cfg_, data_dir(), checkpoint(strategy), run_dir(strategy)};
            const auto t0 = Clock::now();
            attack_[strategy] = pipeline::attack_eval(req, g_log);
            std::cout << "  " << strategy << fmt(" model attacked in %.0f s", seconds_since(t0)) << std::endl;
        }
        return attack_.at(strategy);
    }

    double eval_seconds() const { return eval_s_; }

private:
    fs::path work_;
    bool reuse_;
    config::AppConfig cfg_;
    bool have_data_ = false;
    double gen_s_ = 0.0, eval_s_ = 0.0;
    std::map<std::string, double> train_s_;
    std::set<std::string> trained_;
    std::map<std::string, evaluate::EvalReport> clean_;
    std::map<std::string, std::vector<evaluate::EvalReport>> attack_;
};

double isnr_accuracy(const evaluate::EvalReport& r, double isnr_db) {
    for (std::size_t k = 0; k < r.isnr_grid_db.size(); ++k)
        if (r.isnr_grid_db[k] == isnr_db) return r.per_isnr[k].accuracy();
    throw std::runtime_error(fmt("no %.0f dB entry in the report", isnr_db));
}

const evaluate::EvalReport& at_eps(const std::vector<evaluate::EvalReport>& rows, int eps_255) {
    for (const auto& r : rows)
        if (r.eps_255 == eps_255) return r;
    throw std::runtime_error("missing attack budget");
}

Outcome learning_trend(DeskRun& desk) {
    desk.ensure_dataset();
    desk.checkpoint("baseline");
    const auto& r = desk.clean("baseline");
    const double total = desk.gen_seconds() + desk.train_seconds("baseline") + desk.eval_seconds();

    std::vector<double> acc;
    for (double db : {-14.0, -8.0, 0.0, 8.0}) acc.push_back(isnr_accuracy(r, db));
    bool increasing = true;
    for (std::size_t k = 1; k < acc.size(); ++k) increasing = increasing && acc[k] > acc[k - 1];
    const bool fast = total < 30.0 * 60.0;
    const bool pass = acc[3] >= 0.85 && acc[0] <= 0.45 && increasing && fast;
    return {pass, fmt("baseline accuracy by ISNR -14/-8/0/8 dB = %.3f/%.3f/%.3f/%.3f", acc[0], acc[1], acc[2], acc[3]) +
                      fmt(" (need >= 0.85 at 8 dB, <= 0.45 at -14 dB, strictly increasing); pipeline %.0f s", total)};
}

Outcome defense_ordering(DeskRun& desk) {
    std::map<std::string, double> at14, at6_8db;
    for (const char* s : kStrategies) {
        const auto& rows = desk.attacked(s);
        at14[s] = at_eps(rows, 14).overall.accuracy();
        at6_8db[s] = isnr_accuracy(at_eps(rows, 6), 8.0);
    }
    const double m = at14["masked"], c = at14["consistent"], b = at14["baseline"];
    const double gap6 = at6_8db["masked"] - at6_8db["baseline"];
    const bool pass = m - c >= 0.05 && c - b >= 0.05 && gap6 >= 0.10;
    return {pass, fmt("eps 14/255 accuracy masked %.3f, consistent %.3f, undefended %.3f (need gaps >= 0.05); ", m, c, b) +
                      fmt("eps 6/255 at 8 dB masked %.3f vs undefended %.3f (need gap >= 0.10)", at6_8db["masked"],
                          at6_8db["baseline"])};
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            double below = 0, equal = 0;
            for (double w : v) below += w < v[i], equal += w == v[i];
            r[i] = below + (equal + 1.0) / 2.0;
        }
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size()), mean = (n + 1.0) / 2.0;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mean) * (ry[i] - mean);
        sxx += (rx[i] - mean) * (rx[i] - mean);
        syy += (ry[i] - mean) * (ry[i] - mean);
    }
    return sxx > 0 && syy > 0 ? sxy / std::sqrt(sxx * syy) : 0.0;
}

Outcome isnr_rank_trend(DeskRun& desk) {
    std::string detail;
    bool pass = true;
    for (const char* s : kStrategies) {
        const auto& r = desk.clean(s);
        std::vector<double> acc;
        for (const auto& t : r.per_isnr) acc.push_back(t.accuracy());
        const double rho = spearman(r.isnr_grid_db, acc);
        pass = pass && rho > 0.0;
        detail += std::string(detail.empty() ? "" : ", ") + s + fmt(" rho %.2f", rho);
    }
    return {pass, "rank correlation of clean accuracy with ISNR: " + detail + " (need > 0)"};
}

Outcome undefended_eps_monotone(DeskRun& desk) {
    std::vector<double> acc = {desk.clean("baseline").overall.accuracy()};
    std::string detail = fmt("clean %.3f", acc[0]);
    for (const auto& r : desk.attacked("baseline")) {
        acc.push_back(r.overall.accuracy());
        detail += fmt(", %.0f/255 %.3f", r.eps_255, acc.back());
    }
    bool pass = true;
    for (std::size_t k = 1; k < acc.size(); ++k) pass = pass && acc[k] <= acc[k - 1] + 0.02;
    return {pass, "undefended accuracy by budget: " + detail + " (non-increasing within 0.02)"};
}

// Two complete runs from the same seed, the second with a different worker
// count; dataset blobs, checkpoints and every report must match byte for byte.
Outcome reproducibility(const fs::path& work) {
    auto cfg = config::AppConfig::desk_scale();
    cfg.dataset.samples_per_type_per_isnr = 12;
    cfg.train.epochs = 2;
    cfg.attack.eps_255 = {0, 8};
    cfg.set_seed(11);

    const char* saved = std::getenv("JAMIDENT_THREADS");
    const std::string saved_value = saved ? saved : "";
    std::vector<fs::path> roots;
    for (const char* threads : {"1", "3"}) {
        const auto root = work / "repro" / (std::string("threads") + threads);
        fs::remove_all(root);
        ::setenv("JAMIDENT_THREADS", threads, 1);
        pipeline::gen_dataset(cfg, root / "data", g_log);
        for (const char* s : kStrategies) {
            const auto run = root / s;
            pipeline::TrainRequest tr{cfg, *training::strategy_from_string(s), root / "data", run / "checkpoint.bin",
                                      run / "train_log.jsonl"};
            pipeline::train(tr, g_log);
            pipeline::EvalRequest er{cfg, root / "data", tr.checkpoint, run};
            pipeline::eval(er, g_log);
            pipeline::attack_eval(er, g_log);
        }
        roots.push_back(root);
    }
    if (saved) ::setenv("JAMIDENT_THREADS", saved_value.c_str(), 1);
    else ::unsetenv("JAMIDENT_THREADS");

    std::vector<fs::path> files = {"data/manifest.json", "data/images.f32", "data/labels.u8", "data/isnr.f32"};
    for (const char* s : kStrategies)
        for (const char* f : {"checkpoint.bin", "checkpoint.json", "train_log.jsonl", "accuracy.csv",
                              "accuracy_by_isnr.csv", "accuracy_by_class.csv", "confusion.csv", "attack.csv",
                              "attack_by_isnr.csv", "attack_by_class.csv"})
            files.push_back(fs::path(s) / f);
    std::size_t same = 0;
    std::string first_diff;
    for (const auto& f : files) {
        const auto a = roots[0] / f, b = roots[1] / f;
        if (fs::exists(a) && fs::exists(b) && slurp(a) == slurp(b)) ++same;
        else if (first_diff.empty()) first_diff = f.string();
    }
    const bool pass = same == files.size();
    return {pass, fmt("%.0f of %.0f artifacts byte-identical across two seeded runs (1 and 3 workers)",
                      static_cast<double>(same), static_cast<double>(files.size())) +
                      (pass ? std::string() : "; first difference: " + first_diff)};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    std::string work = "acceptance_work";
    bool reuse = false;
    std::vector<int> only;
    app.add_option("--work", work, "scratch directory");
    app.add_flag("--reuse", reuse, "reuse datasets and checkpoints found in the scratch directory");
    app.add_option("--only", only, "run only these criteria")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    const fs::path root = work;
    if (!reuse) fs::remove_all(root);
    fs::create_directories(root);
    DeskRun desk(root, reuse);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
        {"autodiff gradient checks", [] { return criteria::autodiff_gradients(); }},
        {"differential attention algebra", [] { return criteria::differential_attention_algebra(); }},
        {"masking exclusion", [] { return criteria::masking_exclusion(100); }},
        {"FGSM contract", [] { return criteria::fgsm_contract(); }},
        {"signal pipeline", [] { return criteria::signal_pipeline(); }},
        {"FLOPs band", [] { return criteria::flops_band(); }},
        {"desk-scale learning trend", [&] { return learning_trend(desk); }},
        {"defense ordering under FGSM", [&] { return defense_ordering(desk); }},
        {"reproducibility", [&] { return reproducibility(root); }},
        {"supplementary: accuracy rises with ISNR", [&] { return isnr_rank_trend(desk); }},
        {"supplementary: undefended accuracy falls with budget", [&] { return undefended_eps_monotone(desk); }},
    };

    std::vector<std::string> lines;
    int failures = 0;
    for (std::size_t i = 0; i < checks.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = checks[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const auto line = std::string(o.pass ? "PASS" : "FAIL") + " [" + std::to_string(id) + "] " + checks[i].first +
                          ": " + o.detail + fmt(" (%.1f s)", seconds_since(t0));
        std::cout << line << std::endl;
        lines.push_back(line);
        failures += !o.pass;
    }

    std::ofstream(root / "pipeline.log") << g_log.str();
    std::ofstream summary(root / "summary.txt");
    for (const auto& l : lines) summary << l << "\n";
    std::cout << (failures ? std::to_string(failures) + " of " + std::to_string(lines.size()) + " checks failed"
                           : "all " + std::to_string(lines.size()) + " checks passed")
              << std::endl;
    return failures ? 1 : 0;
}
