// Command-line interface: train, eval, experiment, grid, gradcheck.

#include <cstddef>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dact/config.hpp"
#include "dact/harness.hpp"
#include "dact/model.hpp"

namespace {

using namespace dact;

ReportFormat parse_format(const std::string& format) {
    if (format == "plain") return ReportFormat::plain;
    if (format == "csv") return ReportFormat::csv;
    throw ConfigError("format '" + format + "' is not plain or csv");
}

const SplitTriple& fixed_split(const ResolvedSplits& splits, const std::string& manifest_path) {
    if (splits.mode != SplitMode::fixed_splits) {
        throw ConfigError(manifest_path +
                          ": this command needs a fixed-split manifest; use `experiment` for "
                          "cross-validation manifests");
    }
    return splits.parts.front();
}

int cmd_train(const std::string& corpus_path, const std::string& manifest_path,
              const std::string& config_path, const std::string& out_checkpoint) {
    const ParsedModelConfig parsed = parse_model_config_file(config_path);
    const CorpusReadResult corpus = read_corpus(corpus_path);
    for (const std::string& w : corpus.warnings) std::cerr << "warning: " << w << "\n";
    const ResolvedSplits splits =
        resolve_splits(corpus.segments, parse_manifest(manifest_path));
    const SplitTriple& triple = fixed_split(splits, manifest_path);

    ExperimentSpec spec;
    spec.name = "train";
    spec.corpus_path = corpus_path;
    spec.manifest_path = manifest_path;
    spec.model = parsed.model;
    spec.preprocessing = parsed.preprocessing;
    spec.char_min_count = parsed.char_min_count;
    spec.word_min_count = parsed.word_min_count;

    std::optional<EmbeddingFile> embeddings;
    for (const BranchConfig& bc : spec.model.branches) {
        if (bc.kind == VocabKind::word &&
            bc.embedding_mode != EmbeddingMode::random_trainable) {
            embeddings = parse_embedding_file(bc.embedding_file);
        }
    }

    FoldRun run = run_fold(spec, triple, spec.model.seed, corpus.labels,
                           embeddings ? &*embeddings : nullptr);
    if (run.dropped > 0) {
        std::cerr << "warning: " << run.dropped
                  << " segments empty after preprocessing, dropped\n";
    }
    if (run.record.aborted) {
        std::cerr << "error: training aborted: " << run.record.abort_reason << "\n";
        return 1;
    }
    run.model.save(out_checkpoint);
    std::cout << "trained " << run.record.stop_epoch << " epochs (best epoch "
              << run.record.best_epoch << ", validation accuracy "
              << format_accuracy(run.validation.accuracy) << ", test accuracy "
              << format_accuracy(run.test.accuracy) << ")\n"
              << "checkpoint written to " << out_checkpoint << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& corpus_path,
             const std::string& manifest_path, const std::string& split,
             const std::string& context_source) {
    const Model model = Model::load(checkpoint_path);
    const CorpusReadResult corpus = read_corpus(corpus_path);
    for (const std::string& w : corpus.warnings) std::cerr << "warning: " << w << "\n";
    const ResolvedSplits splits =
        resolve_splits(corpus.segments, parse_manifest(manifest_path));
    const SplitTriple& triple = fixed_split(splits, manifest_path);

    const std::vector<Segment>* segments = nullptr;
    if (split == "train") {
        segments = &triple.train;
    } else if (split == "validation") {
        segments = &triple.validation;
    } else if (split == "test") {
        segments = &triple.test;
    } else {
        throw ConfigError("split '" + split + "' is not train, validation or test");
    }

    const ContextSource source = parse_context_source(context_source, "--context-source");
    const Vocabulary* cv = model.has_branch(VocabKind::character) ? &model.char_vocab() : nullptr;
    const Vocabulary* wv = model.has_branch(VocabKind::word) ? &model.word_vocab() : nullptr;
    const PreparedData data =
        prepare_data(*segments, cv, wv, model.encoding().flags, model.encoding().pad_to_char,
                     model.encoding().pad_to_word, model.labels());
    if (data.dropped > 0) {
        std::cerr << "warning: " << data.dropped << " segments empty after preprocessing, dropped\n";
    }
    const EvalResult result = evaluate(model, data, source);

    std::cout << "segments: " << result.total << "\n"
              << "accuracy: " << format_accuracy(result.accuracy) << " (" << result.correct
              << "/" << result.total << ")\n"
              << "confusion matrix (rows gold, columns predicted):\n";
    const std::size_t c = model.labels().size();
    for (std::size_t g = 0; g < c; ++g) {
        std::cout << model.labels().label(g);
        for (std::size_t p = 0; p < c; ++p) {
            std::cout << '\t' << static_cast<long long>(result.confusion(g, p));
        }
        std::cout << '\n';
    }
    return 0;
}

int cmd_experiment(const std::string& spec_path, const std::optional<std::string>& seeds,
                   const std::string& report_path, const std::string& format,
                   std::size_t jobs) {
    const ExperimentResult result = run_experiment_to_report(
        spec_path, seeds, report_path, parse_format(format), jobs);
    for (const std::string& note : result.notes) std::cerr << "notice: " << note << "\n";
    std::cout << "experiment '" << result.name << "': validation "
              << format_accuracy(result.validation.mean) << " +/- "
              << format_accuracy(result.validation.stddev) << ", test "
              << format_accuracy(result.test.mean) << " +/- "
              << format_accuracy(result.test.stddev) << " over " << result.test.runs()
              << " runs\n"
              << "report written to " << report_path << "\n";
    return 0;
}

int cmd_grid(const std::string& corpus_path, const std::string& manifest_path,
             const std::string& report_path, const std::string& format,
             const std::optional<std::string>& seeds, const std::string& embeddings,
             const std::optional<std::size_t>& max_epochs, std::size_t jobs) {
    GridOptions options;
    if (seeds) options.seeds = parse_seed_list(*seeds, "--seeds");
    options.embeddings_path = embeddings;
    options.max_epochs = max_epochs;
    options.jobs = jobs;
    const GridOutcome outcome = run_grid(corpus_path, manifest_path, options);
    for (const std::string& notice : outcome.notices) std::cerr << "notice: " << notice << "\n";
    for (const ExperimentResult& r : outcome.results) {
        for (const std::string& note : r.notes) std::cerr << "notice: " << note << "\n";
    }
    write_report_file(report_rows(outcome.results), report_path, parse_format(format));
    std::cout << outcome.results.size() << " grid experiments completed, report written to "
              << report_path << "\n";
    return 0;
}

int cmd_gradcheck(const std::string& config_path, double tolerance) {
    const ParsedModelConfig parsed = parse_model_config_file(config_path);
    if (parsed.model.dropout > 0.0) {
        std::cerr << "notice: dropout disabled for the gradient check\n";
    }
    const GradCheckReport report = model_gradient_check(parsed);
    for (const GradCheckEntry& entry : report.per_parameter) {
        std::cout << entry.parameter << ": max relative error " << entry.max_rel_error << " ("
                  << entry.checked << " elements)\n";
    }
    std::cout << "max relative error: " << report.max_rel_error << " (tolerance " << tolerance
              << ")\n";
    if (!report.passes(tolerance)) {
        std::cerr << "error: gradient check failed: max relative error "
                  << report.max_rel_error << " >= " << tolerance << "\n";
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dialog-act classification toolkit"};
    app.require_subcommand(1);

    std::string corpus_path, manifest_path, config_path, out_checkpoint;
    std::string checkpoint_path, split = "test", context_source = "gold";
    std::string spec_path, report_path, format = "plain", embeddings;
    std::optional<std::string> seeds;
    std::optional<std::size_t> max_epochs;
    std::size_t jobs = 1;
    double tolerance = 1e-4;

    CLI::App* train = app.add_subcommand("train", "train one model and write a checkpoint");
    train->add_option("--corpus", corpus_path, "corpus TSV path")->required();
    train->add_option("--manifest", manifest_path, "split manifest path")->required();
    train->add_option("--config", config_path, "model config path")->required();
    train->add_option("--out-checkpoint", out_checkpoint, "checkpoint output path")->required();

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on one split");
    eval->add_option("--checkpoint", checkpoint_path, "model checkpoint path")->required();
    eval->add_option("--corpus", corpus_path, "corpus TSV path")->required();
    eval->add_option("--manifest", manifest_path, "split manifest path")->required();
    eval->add_option("--split", split, "train, validation or test (default test)");
    eval->add_option("--context-source", context_source, "gold or predicted (default gold)");

    CLI::App* experiment =
        app.add_subcommand("experiment", "run a multi-seed experiment and write a report");
    experiment->add_option("--spec", spec_path, "experiment spec path")->required();
    experiment->add_option("--seeds", seeds, "comma-separated seed list override");
    experiment->add_option("--report", report_path, "report output path")->required();
    experiment->add_option("--format", format, "plain or csv (default plain)");
    experiment->add_option("--jobs", jobs, "parallel runs (default 1)");

    CLI::App* grid =
        app.add_subcommand("grid", "run the standard experiment grid and write a report");
    grid->add_option("--corpus", corpus_path, "corpus TSV path")->required();
    grid->add_option("--manifest", manifest_path, "split manifest path")->required();
    grid->add_option("--report", report_path, "report output path")->required();
    grid->add_option("--format", format, "plain or csv (default plain)");
    grid->add_option("--seeds", seeds, "comma-separated seed list (default 1..10)");
    grid->add_option("--embeddings", embeddings, "pre-trained word embedding file");
    grid->add_option("--max-epochs", max_epochs, "override the per-run epoch cap");
    grid->add_option("--jobs", jobs, "parallel runs (default 1)");

    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference check of the configured model");
    gradcheck->add_option("--config", config_path, "model config path")->required();
    gradcheck->add_option("--tolerance", tolerance, "max relative error (default 1e-4)");

    try {
        app.parse(argc, argv);
        if (app.got_subcommand(train)) {
            return cmd_train(corpus_path, manifest_path, config_path, out_checkpoint);
        }
        if (app.got_subcommand(eval)) {
            return cmd_eval(checkpoint_path, corpus_path, manifest_path, split, context_source);
        }
        if (app.got_subcommand(experiment)) {
            return cmd_experiment(spec_path, seeds, report_path, format, jobs);
        }
        if (app.got_subcommand(grid)) {
            return cmd_grid(corpus_path, manifest_path, report_path, format, seeds, embeddings,
                            max_epochs, jobs);
        }
        if (app.got_subcommand(gradcheck)) {
            return cmd_gradcheck(config_path, tolerance);
        }
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
