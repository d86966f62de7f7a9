#include "sglab/cli.hpp"

#include <CLI11.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <ostream>
#include <sstream>

#include "sglab/config.hpp"
#include "sglab/evaluation.hpp"
#include "sglab/gradcheck.hpp"
#include "sglab/hash.hpp"
#include "sglab/image_io.hpp"
#include "sglab/inference.hpp"
#include "sglab/toy_faces.hpp"

namespace sglab {

namespace fs = std::filesystem;

namespace {

std::uint64_t file_digest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return fnv1a64(buf.str());
}

LoadedModel load_model(const std::string& path) {
    LoadedModel model = LoadedModel::load(path);
    spdlog::info("checkpoint {} ({}, lr_size {}, digest {:016x})", path, to_string(model.arch.variant),
                 model.arch.lr_size, file_digest(path));
    return model;
}

int cmd_train(const std::string& config_path, std::ostream& out) {
    const TrainConfig config = parse_config(config_path);
    spdlog::info("resolved config (seed {}):\n{}", config.seed, config.to_text());
    if (config.data_root.empty()) throw std::invalid_argument("config needs data_root");
    const fs::path out_dir = config.out_dir.empty() ? fs::path("out") : fs::path(config.out_dir);
    const IdentityCatalog catalog = ingest_dataset(config.data_root, config.lr_size * kUpscaleFactor);
    spdlog::info("{} identities, {} images", catalog.num_identities, catalog.records.size());
    {
        fs::create_directories(out_dir);
        std::ofstream manifest(out_dir / "catalog.csv", std::ios::trunc);
        write_manifest(manifest, catalog);
    }
    const auto result = train(config, catalog, out_dir);
    const fs::path final_path = out_dir / "final.sgck";
    spdlog::info("final checkpoint digest {:016x}", file_digest(final_path));
    out << final_path.string() << '\n';
    return kExitOk;
}

int cmd_hallucinate(const std::string& checkpoint, const fs::path& input, const fs::path& output, std::ostream& out) {
    const LoadedModel model = load_model(checkpoint);
    if (fs::is_directory(input)) {
        const auto manifest = batch_hallucinate(model, input, output);
        out << manifest.size() << " images written to " << output.string() << '\n';
        return kExitOk;
    }
    const Tensor<float> lr = read_png(input);
    Tensor<float> sr;
    if (model.arch.variant == Variant::giegan) {
        const auto r = LabelSearch(model).run(lr, *model.arch.num_identities);
        out << "best_label=" << r.best_label << '\n';
        sr = r.sr_image;
    } else {
        sr = hallucinate(model, lr);
    }
    if (output.has_parent_path()) fs::create_directories(output.parent_path());
    write_png(output, sr);
    out << output.string() << '\n';
    return kExitOk;
}

int cmd_search(const std::string& checkpoint, const fs::path& input, int classes, bool literal,
               const std::string& output, std::ostream& out) {
    const LoadedModel model = load_model(checkpoint);
    const LabelSearch search(model, literal ? SearchScoring::literal_lr : SearchScoring::hallucinated);
    const auto r = search.run(read_png(input), classes);
    out << fmt::format("best_label={}\nconfidence={:.6f}\nevaluations={}\n", r.best_label, r.confidence,
                       search.evaluations());
    for (std::size_t i = 0; i < r.per_label_scores.size(); ++i)
        out << fmt::format("score[{}]={:.6f}\n", i, r.per_label_scores[i]);
    if (!output.empty()) write_png(output, r.sr_image);
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& report_path,
             const std::string& pairs, std::uint64_t seed, std::ostream& out) {
    const LoadedModel model = load_model(checkpoint);
    const IdentityCatalog catalog = ingest_dataset(data, model.arch.hr_size());
    EvalOptions options;
    options.seed = seed;
    if (!pairs.empty()) options.pairs_file = pairs;
    const EvalReport report = evaluate(model, catalog, options);
    emit_report(report, report_path);
    out << format_report(report);
    return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, std::ostream& out) {
    const GradcheckReport report = run_gradcheck_suite(seed);
    for (const auto& item : report.items)
        out << fmt::format("{} {} (n={}, kinks skipped {}, max rel err {:.3e}, tol {:.0e})\n",
                           item.passed() ? "PASS" : "FAIL", item.name, item.checked, item.kinks_skipped,
                           item.max_rel_error, item.tolerance);
    out << (report.passed() ? "gradcheck passed\n" : "gradcheck FAILED\n");
    return report.passed() ? kExitOk : kExitRuntime;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Identity-aware face hallucination: training, inference and evaluation"};
    app.require_subcommand(1);

    std::string config_path, checkpoint, input, output, data, report, pairs, toy_out;
    int classes = 0;
    bool literal = false;
    std::uint64_t seed = 1;
    ToyFaceOptions toy;

    auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
    train_cmd->add_option("--config", config_path, "key=value config file")->required();

    auto* hall_cmd = app.add_subcommand("hallucinate", "Super-resolve an LR image or a directory of images");
    hall_cmd->add_option("--checkpoint", checkpoint)->required();
    hall_cmd->add_option("--input", input, "PNG file or directory")->required();
    hall_cmd->add_option("--output", output, "PNG file, or directory for directory input")->required();

    auto* search_cmd = app.add_subcommand("search-label", "Label search with a GieGAN checkpoint");
    search_cmd->add_option("--checkpoint", checkpoint)->required();
    search_cmd->add_option("--input", input)->required();
    search_cmd->add_option("--num-identities", classes)->required()->check(CLI::PositiveNumber);
    search_cmd->add_flag("--literal", literal, "score the upsampled LR input instead of the hallucination");
    search_cmd->add_option("--output", output, "write the winning hallucination here");

    auto* eval_cmd = app.add_subcommand("eval", "Identification, verification and fidelity report");
    eval_cmd->add_option("--checkpoint", checkpoint)->required();
    eval_cmd->add_option("--data", data, "root/<identity>/<image>.png")->required();
    eval_cmd->add_option("--report", report)->required();
    eval_cmd->add_option("--pairs", pairs, "pair list: path1,path2,label");
    eval_cmd->add_option("--seed", seed);

    auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    grad_cmd->add_option("--seed", seed);

    auto* toy_cmd = app.add_subcommand("make-toy-data", "Write a procedural face dataset");
    toy_cmd->add_option("--out", toy_out)->required();
    toy_cmd->add_option("--identities", toy.identities);
    toy_cmd->add_option("--images", toy.images_per_identity);
    toy_cmd->add_option("--size", toy.size);
    toy_cmd->add_option("--seed", toy.seed);

    if (args.size() <= 1) {
        err << app.help();
        return kExitUsage;
    }
    std::vector<std::string> rest(args.rbegin(), args.rend() - 1);  // CLI11 consumes from the back
    try {
        app.parse(rest);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(config_path, out);
        if (hall_cmd->parsed()) return cmd_hallucinate(checkpoint, input, output, out);
        if (search_cmd->parsed()) return cmd_search(checkpoint, input, classes, literal, output, out);
        if (eval_cmd->parsed()) return cmd_eval(checkpoint, data, report, pairs, seed, out);
        if (grad_cmd->parsed()) return cmd_gradcheck(seed, out);
        if (toy_cmd->parsed()) {
            write_toy_dataset(toy_out, toy);
            out << toy.identities * toy.images_per_identity << " images written to " << toy_out << '\n';
            return kExitOk;
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    err << app.help();
    return kExitUsage;
}

}  // namespace sglab
