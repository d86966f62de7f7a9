#include "sglab/evaluation.hpp"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "sglab/image_io.hpp"
#include "sglab/parallel.hpp"

namespace sglab {

std::vector<float> embed(const LoadedModel& model, const Tensor<float>& image) {
    const auto n = static_cast<std::size_t>(model.arch.lr_size);
    Tensor<float> lr;
    if (image.shape() == Shape{n, n, 3})
        lr = image;
    else if (image.shape() == Shape{n * kUpscaleFactor, n * kUpscaleFactor, 3})
        lr = synthesize_lr(image);
    else
        throw std::invalid_argument("cannot embed a " + shape_string(image.shape()) + " image with a model for " +
                                    std::to_string(n) + "x" + std::to_string(n) + " inputs");
    Tensor<float> input = lr.reshaped({1, n, n, 3});
    if (model.arch.variant == Variant::giegan) input = concat_channels(input, Tensor<float>({1, n, n, 1}));
    const auto out = forward(model.generator_spec, model.generator, input, {Mode::inference, true});
    return out.features.storage();
}

double l1_distance(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw std::invalid_argument("embedding dimensions differ");
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(static_cast<double>(a[i]) - b[i]);
    return d;
}

std::map<int, double> identify_topk(const std::vector<Embedded>& gallery, const std::vector<Embedded>& probes,
                                    const std::vector<int>& ks) {
    if (gallery.empty()) throw std::invalid_argument("identify_topk: empty gallery");
    if (probes.empty()) throw std::invalid_argument("identify_topk: no probes");
    if (ks.empty()) throw std::invalid_argument("identify_topk: no k values");
    std::vector<int> ids;
    for (const auto& g : gallery) ids.push_back(g.identity);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    const int max_k = *std::max_element(ks.begin(), ks.end());
    if (*std::min_element(ks.begin(), ks.end()) < 1) throw std::invalid_argument("identify_topk: k must be >= 1");
    if (static_cast<std::size_t>(max_k) > ids.size())
        throw std::invalid_argument(fmt::format("identify_topk: gallery spans {} identities, k={} requested", ids.size(),
                                                max_k));

    std::map<int, std::size_t> hits;
    for (int k : ks) hits[k] = 0;
    for (const auto& probe : probes) {
        std::map<int, double> best;
        for (const auto& g : gallery) {
            const double d = l1_distance(probe.vector, g.vector);
            auto [it, fresh] = best.try_emplace(g.identity, d);
            if (!fresh) it->second = std::min(it->second, d);
        }
        std::vector<std::pair<double, int>> ranked;
        for (const auto& [id, d] : best) ranked.emplace_back(d, id);
        std::sort(ranked.begin(), ranked.end());
        const auto pos = std::find_if(ranked.begin(), ranked.end(),
                                      [&](const auto& r) { return r.second == probe.identity; });
        const auto rank = static_cast<std::size_t>(pos - ranked.begin());  // == size() if absent
        for (int k : ks)
            if (rank < static_cast<std::size_t>(k)) ++hits[k];
    }
    std::map<int, double> rates;
    for (const auto& [k, h] : hits) rates[k] = static_cast<double>(h) / static_cast<double>(probes.size());
    return rates;
}

double verification_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("verification_auc: scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double positive_rank_sum = 0;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) {
            const int y = labels[order[k]];
            if (y != 0 && y != 1) throw std::invalid_argument("verification_auc: labels must be 0 or 1");
            if (y == 1) {
                positive_rank_sum += midrank;
                ++positives;
            }
        }
        i = j;
    }
    const std::size_t negatives = scores.size() - positives;
    if (positives == 0 || negatives == 0)
        throw std::invalid_argument("verification_auc needs both genuine and impostor pairs");
    const double np = static_cast<double>(positives), nn = static_cast<double>(negatives);
    return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

Fidelity fidelity_metrics(const Tensor<float>& sr, const Tensor<float>& hr) {
    if (sr.shape() != hr.shape() || sr.empty())
        throw std::invalid_argument("fidelity_metrics: shape mismatch " + shape_string(sr.shape()) + " vs " +
                                    shape_string(hr.shape()));
    double abs_sum = 0, sq_sum = 0;
    for (std::size_t i = 0; i < sr.size(); ++i) {
        const double d = static_cast<double>(sr[i]) - hr[i];
        abs_sum += std::abs(d);
        sq_sum += d * d;
    }
    const double n = static_cast<double>(sr.size());
    const double mse = sq_sum / n;
    return {abs_sum / n, mse < 1e-10 ? kPsnrCap : 10.0 * std::log10(1.0 / mse)};
}

std::string format_report(const EvalReport& r) {
    std::string out;
    out += fmt::format("top1={:.6f}\ntop5={:.6f}\ntop10={:.6f}\nauc={:.6f}\nl1={:.6f}\npsnr={:.6f}\n", r.top1, r.top5,
                       r.top10, r.auc, r.l1, r.psnr);
    out += fmt::format("gallery_size={}\nprobe_count={}\npair_count={}\nconfig_digest={:016x}\n", r.gallery_size,
                       r.probe_count, r.pair_count, r.config_digest);
    out += "\nmethod,top1,top5,top10,auc\n";
    for (const auto& row : r.table)
        out += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f}\n", row.method, row.top1, row.top5, row.top10, row.auc);
    return out;
}

EvalReport parse_report(std::string_view text) {
    EvalReport r;
    std::istringstream in{std::string(text)};
    std::string line;
    std::set<std::string> seen;
    auto number = [](const std::string& key, const std::string& value) {
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(value, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != value.size() || value.empty()) throw std::invalid_argument("report: bad value for " + key);
        return v;
    };
    while (std::getline(in, line) && !line.empty()) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("report: malformed line '" + line + "'");
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        seen.insert(key);
        if (key == "top1") r.top1 = number(key, value);
        else if (key == "top5") r.top5 = number(key, value);
        else if (key == "top10") r.top10 = number(key, value);
        else if (key == "auc") r.auc = number(key, value);
        else if (key == "l1") r.l1 = number(key, value);
        else if (key == "psnr") r.psnr = number(key, value);
        else if (key == "gallery_size") r.gallery_size = static_cast<std::size_t>(std::stoull(value));
        else if (key == "probe_count") r.probe_count = static_cast<std::size_t>(std::stoull(value));
        else if (key == "pair_count") r.pair_count = static_cast<std::size_t>(std::stoull(value));
        else if (key == "config_digest") r.config_digest = std::stoull(value, nullptr, 16);
        else throw std::invalid_argument("report: unknown key '" + key + "'");
    }
    for (const char* key : {"top1", "top5", "top10", "auc", "l1", "psnr", "gallery_size", "probe_count", "pair_count"})
        if (!seen.count(key)) throw std::invalid_argument(std::string("report: missing ") + key);
    if (!std::getline(in, line) || line != "method,top1,top5,top10,auc")
        throw std::invalid_argument("report: missing method table header");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream row(line);
        for (std::string cell; std::getline(row, cell, ',');) cells.push_back(cell);
        if (cells.size() != 5) throw std::invalid_argument("report: malformed table row '" + line + "'");
        r.table.push_back({cells[0], number("top1", cells[1]), number("top5", cells[2]), number("top10", cells[3]),
                           number("auc", cells[4])});
    }
    return r;
}

void emit_report(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    out << format_report(report);
    out.flush();
    if (!out) throw std::runtime_error("cannot write report " + path.string());
}

namespace {

std::vector<Embedded> embed_records(const LoadedModel& model, const IdentityCatalog& catalog) {
    std::vector<Embedded> out(catalog.records.size());
    parallel_for(out.size(), [&](std::size_t i) {
        out[i] = {embed(model, catalog.records[i].image), catalog.records[i].identity};
    });
    return out;
}

Tensor<float> sr_for(const LoadedModel& model, const FaceRecord& record) {
    const Tensor<float> lr = synthesize_lr(record.image);
    if (model.arch.variant != Variant::giegan) return hallucinate(model, lr);
    // Fidelity uses the true label; label search is an identification tool.
    Tensor<float> sr;
    LabelSearch(model).score_label(lr, record.identity, *model.arch.num_identities, &sr);
    return sr;
}

std::vector<std::vector<std::string>> read_pairs(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read pairs file " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        std::istringstream row(line);
        for (std::string cell; std::getline(row, cell, ',');) cells.push_back(cell);
        if (cells.size() != 3 || (cells[2] != "0" && cells[2] != "1"))
            throw std::invalid_argument(fmt::format("pairs file {} line {}: expected path1,path2,label", path.string(), n));
        rows.push_back(std::move(cells));
    }
    return rows;
}

}  // namespace

EvalReport evaluate(const LoadedModel& model, const IdentityCatalog& data, const EvalOptions& options) {
    if (data.hr_size != model.arch.hr_size())
        throw std::invalid_argument(fmt::format("data hr_size {} does not match the checkpoint ({})", data.hr_size,
                                                model.arch.hr_size()));
    Rng rng(options.seed);
    const auto [gallery_cat, probe_cat] = split_catalog(data, options.gallery_fraction, rng);
    const auto gallery = embed_records(model, gallery_cat);
    const auto probes = embed_records(model, probe_cat);

    EvalReport report;
    report.config_digest = model.config_digest;
    report.gallery_size = gallery.size();
    report.probe_count = probes.size();

    std::set<int> ids;
    for (const auto& g : gallery) ids.insert(g.identity);
    std::vector<int> ks;
    for (int k : {1, 5, 10})
        if (static_cast<std::size_t>(k) <= ids.size()) ks.push_back(k);
    const auto rates = identify_topk(gallery, probes, ks);
    auto rate = [&](int k) { return rates.count(k) ? rates.at(k) : 1.0; };
    report.top1 = rate(1);
    report.top5 = rate(5);
    report.top10 = rate(10);

    std::vector<double> scores;
    std::vector<int> labels;
    if (options.pairs_file) {
        const auto base = options.pairs_file->parent_path();
        auto load = [&](const std::string& p) {
            std::filesystem::path path(p);
            if (path.is_relative()) path = base / path;
            return embed(model, resize_square(center_crop_square(read_png(path)),
                                              static_cast<std::size_t>(data.hr_size)));
        };
        for (const auto& row : read_pairs(*options.pairs_file)) {
            scores.push_back(-l1_distance(load(row[0]), load(row[1])));
            labels.push_back(row[2] == "1");
        }
    } else {
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (std::size_t i = 0; i < probes.size(); ++i)
            for (std::size_t j = i + 1; j < probes.size(); ++j) pairs.emplace_back(i, j);
        if (pairs.size() > options.max_pairs) {
            std::shuffle(pairs.begin(), pairs.end(), rng);
            pairs.resize(options.max_pairs);
            std::sort(pairs.begin(), pairs.end());
        }
        for (const auto& [i, j] : pairs) {
            scores.push_back(-l1_distance(probes[i].vector, probes[j].vector));
            labels.push_back(probes[i].identity == probes[j].identity);
        }
    }
    report.pair_count = scores.size();
    report.auc = verification_auc(scores, labels);

    std::vector<Fidelity> fid(probe_cat.records.size());
    parallel_for(fid.size(), [&](std::size_t i) {
        const auto& r = probe_cat.records[i];
        fid[i] = fidelity_metrics(sr_for(model, r), r.image);
    });
    for (const auto& f : fid) {
        report.l1 += f.mean_l1 / static_cast<double>(fid.size());
        report.psnr += f.psnr_db / static_cast<double>(fid.size());
    }
    report.table.push_back({std::string(to_string(model.arch.variant)), report.top1, report.top5, report.top10,
                            report.auc});
    spdlog::info("evaluated {} probes against {} gallery images, {} pairs", report.probe_count, report.gallery_size,
                 report.pair_count);
    return report;
}

}  // namespace sglab
