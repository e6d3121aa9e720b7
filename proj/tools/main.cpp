#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "phlora/phlora.hpp"

namespace {

phlora::TargetSpec make_target_spec(const std::vector<std::string>& include,
                                    const std::vector<std::string>& exclude,
                                    std::size_t min_dim) {
    phlora::TargetSpec spec;
    spec.include_patterns = include.empty() ? std::vector<std::string>{"*"} : include;
    spec.exclude_patterns = exclude;
    spec.min_dim = min_dim;
    return spec;
}

std::vector<std::size_t> parse_rank_list(const std::string& csv) {
    std::vector<std::size_t> ranks;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        const std::size_t comma = csv.find(',', pos);
        const std::string tok = csv.substr(pos, comma == std::string::npos ? std::string::npos
                                                                           : comma - pos);
        if (!tok.empty()) {
            const long long v = std::stoll(tok);
            if (v < 1) throw phlora::ValidationError("ranks must be >= 1, got '" + tok + "'");
            ranks.push_back(static_cast<std::size_t>(v));
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (ranks.empty()) throw phlora::ValidationError("--ranks list is empty");
    return ranks;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"phlora: extract, analyze, merge, and verify low-rank adapters "
                 "from checkpoint weight deltas"};
    app.require_subcommand(1);

    // ---- extract ----
    std::string ex_base, ex_ft, ex_out, ex_report, ex_method = "auto", ex_dtype = "F32";
    std::vector<std::string> ex_include, ex_exclude;
    std::int64_t ex_rank = -1;
    double ex_threshold = -1.0;
    std::size_t ex_min_dim = 1;
    unsigned ex_jobs = 0;
    auto* extract = app.add_subcommand(
        "extract", "Extract a low-rank adapter from a base/fine-tuned checkpoint pair");
    extract->add_option("--base", ex_base, "Base checkpoint path")->required();
    extract->add_option("--finetuned", ex_ft, "Fine-tuned checkpoint path")->required();
    extract->add_option("--out", ex_out, "Adapter output directory")->required();
    auto* rank_opt = extract->add_option("--rank", ex_rank, "Uniform adapter rank (default 32)");
    auto* thr_opt = extract->add_option("--energy-threshold", ex_threshold,
                                        "Per-layer adaptive rank: smallest rank whose preserved "
                                        "energy reaches this fraction, in (0, 1]");
    rank_opt->excludes(thr_opt);
    thr_opt->excludes(rank_opt);
    extract->add_option("--target-pattern", ex_include,
                        "Glob of tensor names to extract (repeatable; default '*')");
    extract->add_option("--exclude-pattern", ex_exclude,
                        "Glob of tensor names to skip (repeatable)");
    extract->add_option("--min-dim", ex_min_dim, "Skip 2-D layers with min(d,k) below this");
    extract->add_option("--method", ex_method, "SVD kernel: auto|exact|randomized (default auto)");
    extract->add_option("--report", ex_report,
                        "Manifest path (default <out>/run_manifest.json)");
    extract->add_option("--jobs", ex_jobs, "Worker threads (default: hardware concurrency)");
    extract->add_option("--factor-dtype", ex_dtype, "Adapter tensor storage dtype (default F32)");

    // ---- merge ----
    std::string mg_base, mg_adapter, mg_out, mg_dtype, mg_report;
    auto* merge = app.add_subcommand("merge", "Apply an adapter to a base checkpoint offline");
    merge->add_option("--base", mg_base, "Base checkpoint path")->required();
    merge->add_option("--adapter", mg_adapter, "Adapter directory")->required();
    merge->add_option("--out", mg_out, "Merged checkpoint output path")->required();
    merge->add_option("--dtype", mg_dtype,
                      "Storage dtype for modified layers (default: keep each layer's dtype); "
                      "untouched tensors are always copied bit-exact");
    merge->add_option("--report", mg_report, "Manifest path (default <out>.manifest.json)");

    // ---- analyze ----
    std::string an_base, an_ft, an_csv, an_ranks = "32,64,512", an_report;
    std::vector<std::string> an_include, an_exclude;
    std::size_t an_min_dim = 1;
    unsigned an_jobs = 0;
    auto* analyze = app.add_subcommand(
        "analyze", "Report preserved energy per layer and rank without writing an adapter");
    analyze->add_option("--base", an_base, "Base checkpoint path")->required();
    analyze->add_option("--finetuned", an_ft, "Fine-tuned checkpoint path")->required();
    analyze->add_option("--ranks", an_ranks, "Comma-separated probe ranks (default 32,64,512)");
    analyze->add_option("--csv", an_csv, "Energy report CSV path (JSON mirror written beside it)")
        ->required();
    analyze->add_option("--target-pattern", an_include,
                        "Glob of tensor names to analyze (repeatable; default '*')");
    analyze->add_option("--exclude-pattern", an_exclude,
                        "Glob of tensor names to skip (repeatable)");
    analyze->add_option("--min-dim", an_min_dim, "Skip 2-D layers with min(d,k) below this");
    analyze->add_option("--report", an_report, "Manifest path (default <csv>.manifest.json)");
    analyze->add_option("--jobs", an_jobs, "Worker threads (default: hardware concurrency)");

    // ---- verify ----
    std::string vf_base, vf_ft, vf_adapter, vf_report;
    unsigned vf_jobs = 0;
    auto* verify = app.add_subcommand(
        "verify", "Check an adapter achieves the reconstruction error its rank dictates");
    verify->add_option("--base", vf_base, "Base checkpoint path")->required();
    verify->add_option("--finetuned", vf_ft, "Fine-tuned checkpoint path")->required();
    verify->add_option("--adapter", vf_adapter, "Adapter directory")->required();
    verify->add_option("--report", vf_report,
                       "Manifest path (default phlora_verify_manifest.json)");
    verify->add_option("--jobs", vf_jobs, "Worker threads (default: hardware concurrency)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // exit-code contract: 0 for --help/--version, 1 for every usage error
        const int code = app.exit(e);
        return code == 0 ? phlora::kExitOk : phlora::kExitHardError;
    }

    try {
        if (extract->parsed()) {
            if (rank_opt->count() && ex_rank < 1) {
                std::cerr << "phlora: --rank must be >= 1\n";
                return phlora::kExitHardError;
            }
            phlora::ExtractOptions opts;
            opts.base = ex_base;
            opts.finetuned = ex_ft;
            opts.out = ex_out;
            if (rank_opt->count()) opts.rank = static_cast<std::size_t>(ex_rank);
            if (thr_opt->count()) opts.energy_threshold = ex_threshold;
            opts.targets = make_target_spec(ex_include, ex_exclude, ex_min_dim);
            opts.method = phlora::method_choice_from_string(ex_method);
            opts.report = ex_report;
            opts.jobs = ex_jobs;
            opts.factor_dtype = phlora::dtype_from_string(ex_dtype);
            auto result = phlora::run_extract(opts);
            std::cout << "extracted " << result.layers.size() << " layers -> " << ex_out << "\n";
            return result.exit_code;
        }
        if (merge->parsed()) {
            phlora::MergeOptions opts;
            opts.base = mg_base;
            opts.adapter = mg_adapter;
            opts.out = mg_out;
            if (!mg_dtype.empty()) opts.dtype = phlora::dtype_from_string(mg_dtype);
            opts.report = mg_report;
            auto result = phlora::run_merge(opts);
            return result.exit_code;
        }
        if (analyze->parsed()) {
            phlora::AnalyzeOptions opts;
            opts.base = an_base;
            opts.finetuned = an_ft;
            opts.probe_ranks = parse_rank_list(an_ranks);
            opts.csv = an_csv;
            opts.targets = make_target_spec(an_include, an_exclude, an_min_dim);
            opts.report = an_report;
            opts.jobs = an_jobs;
            auto result = phlora::run_analyze(opts);
            std::cout << "energy report for " << result.energy.curves.size() << " layers -> "
                      << an_csv << "\n";
            return result.exit_code;
        }
        if (verify->parsed()) {
            phlora::VerifyOptions opts;
            opts.base = vf_base;
            opts.finetuned = vf_ft;
            opts.adapter = vf_adapter;
            opts.report = vf_report;
            opts.jobs = vf_jobs;
            auto result = phlora::run_verify(opts);
            std::size_t passed = 0;
            for (const auto& l : result.layers) passed += l.pass ? 1 : 0;
            std::cout << "verify: " << passed << "/" << result.layers.size()
                      << " layers pass\n";
            return result.exit_code;
        }
    } catch (const phlora::Error& e) {
        std::cerr << "phlora: " << e.what() << "\n";
        return phlora::kExitHardError;
    } catch (const std::exception& e) {
        std::cerr << "phlora: " << e.what() << "\n";
        return phlora::kExitHardError;
    }
    return phlora::kExitHardError;
}
