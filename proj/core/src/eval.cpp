#include "cbd/eval.hpp"

#include "cbd/errors.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>

namespace cbd {

namespace {

int argmax_row(const Tensor& logits, std::size_t row) {
    const std::size_t c = logits.cols();
    int best = 0;
    double best_val = logits.at(row, 0);
    for (std::size_t j = 1; j < c; ++j) {
        const double v = logits.at(row, j);
        if (v > best_val) {
            best_val = v;
            best = static_cast<int>(j);
        }
    }
    return best;
}

std::string format_acc(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9f", v);
    return buf;
}

} // namespace

std::vector<int> predict_classes(const Model& m, const Dataset& data) {
    Tensor logits = m.logits(data.all_features());
    std::vector<int> out(data.num_instances());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = argmax_row(logits, i);
    return out;
}

std::vector<int> predict_classes_mean_softmax(const std::vector<const Model*>& models,
                                              const Dataset& data) {
    if (models.empty()) throw config_error("ensemble prediction: no models");
    const std::size_t n = data.num_instances();
    Tensor x = data.all_features();
    std::vector<double> mean_probs;
    std::size_t c = 0;
    for (const Model* m : models) {
        Tensor probs = softmax(m->logits(x));
        if (mean_probs.empty()) {
            c = probs.cols();
            mean_probs.assign(n * c, 0.0);
        } else if (probs.cols() != c) {
            throw dimension_error("ensemble prediction: class counts disagree");
        }
        const auto& v = probs.values();
        for (std::size_t i = 0; i < v.size(); ++i) mean_probs[i] += v[i];
    }
    const double inv = 1.0 / static_cast<double>(models.size());
    for (double& p : mean_probs) p *= inv;

    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        int best = 0;
        double best_val = mean_probs[i * c];
        for (std::size_t j = 1; j < c; ++j) {
            if (mean_probs[i * c + j] > best_val) {
                best_val = mean_probs[i * c + j];
                best = static_cast<int>(j);
            }
        }
        out[i] = best;
    }
    return out;
}

SplitAccuracy split_accuracy(const std::vector<int>& predictions, const Dataset& test,
                             const std::vector<ShotTag>& class_tags) {
    if (predictions.size() != test.num_instances()) {
        throw dimension_error("split_accuracy: prediction count mismatch");
    }
    if (class_tags.size() != test.num_classes()) {
        throw dimension_error("split_accuracy: tag count mismatch");
    }
    std::size_t correct[3] = {0, 0, 0};
    std::size_t total[3] = {0, 0, 0};
    std::size_t correct_all = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const int y = test.labels[i];
        const auto bucket = static_cast<std::size_t>(class_tags[static_cast<std::size_t>(y)]);
        total[bucket]++;
        if (predictions[i] == y) {
            correct[bucket]++;
            correct_all++;
        }
    }
    auto ratio = [](std::size_t num, std::size_t den) {
        return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    SplitAccuracy acc;
    acc.overall = ratio(correct_all, predictions.size());
    acc.many = ratio(correct[0], total[0]);
    acc.mid = ratio(correct[1], total[1]);
    acc.few = ratio(correct[2], total[2]);
    acc.many_total = total[0];
    acc.mid_total = total[1];
    acc.few_total = total[2];
    return acc;
}

SplitAccuracy top1_accuracy(const Model& m, const Dataset& test,
                            const std::vector<ShotTag>& class_tags) {
    return split_accuracy(predict_classes(m, test), test, class_tags);
}

double overall_accuracy(const Model& m, const Dataset& data) {
    const auto preds = predict_classes(m, data);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == data.labels[i]) correct++;
    }
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double ncm_probe(const Model& m, const Dataset& train, const Dataset& test) {
    Tensor train_feats = m.features(train.all_features());
    NcmClassifier ncm = NcmClassifier::fit(train_feats.values(), train_feats.cols(), train.labels,
                                           train.num_classes());
    Tensor test_feats = m.features(test.all_features());
    const auto preds = ncm.predict_batch(test_feats.values(), test.num_instances());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == test.labels[i]) correct++;
    }
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

std::string report_csv_header() {
    return "method,seed,overall_acc,many_acc,mid_acc,few_acc,ncm_overall_acc";
}

std::string report_csv_row(const EvalReport& r) {
    std::string row = r.method + "," + std::to_string(r.seed) + "," + format_acc(r.overall_acc) +
                      "," + format_acc(r.many_acc) + "," + format_acc(r.mid_acc) + "," +
                      format_acc(r.few_acc) + ",";
    if (r.ncm_overall_acc) row += format_acc(*r.ncm_overall_acc);
    return row;
}

std::string report_json(const EvalReport& r) {
    nlohmann::json j;
    j["method"] = r.method;
    j["seed"] = r.seed;
    j["overall_acc"] = r.overall_acc;
    j["many_acc"] = r.many_acc;
    j["mid_acc"] = r.mid_acc;
    j["few_acc"] = r.few_acc;
    if (r.ncm_overall_acc) {
        j["ncm_overall_acc"] = *r.ncm_overall_acc;
    } else {
        j["ncm_overall_acc"] = nullptr;
    }
    j["config"] = nlohmann::json::parse(r.config_echo);
    j["split_thresholds"] = {{"many", r.thresholds.many_threshold},
                             {"few", r.thresholds.few_threshold}};
    j["timestamp"] = r.timestamp;
    return j.dump(2);
}

void emit_report(const EvalReport& r, const std::filesystem::path& json_path,
                 const std::filesystem::path& csv_path) {
    {
        std::ofstream out(json_path, std::ios::binary);
        if (!out) throw io_error("report: cannot open '" + json_path.string() + "' for writing");
        out << report_json(r) << "\n";
        if (!out) throw io_error("report: write failed for '" + json_path.string() + "'");
    }
    {
        std::ofstream out(csv_path, std::ios::binary);
        if (!out) throw io_error("report: cannot open '" + csv_path.string() + "' for writing");
        out << report_csv_header() << "\n" << report_csv_row(r) << "\n";
        if (!out) throw io_error("report: write failed for '" + csv_path.string() + "'");
    }
}

EvalReport parse_report_json(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("report: cannot open '" + path.string() + "' for reading");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw parse_error("report: invalid JSON in '" + path.string() + "': " + e.what());
    }
    EvalReport r;
    r.method = j.at("method").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.overall_acc = j.at("overall_acc").get<double>();
    r.many_acc = j.at("many_acc").get<double>();
    r.mid_acc = j.at("mid_acc").get<double>();
    r.few_acc = j.at("few_acc").get<double>();
    if (!j.at("ncm_overall_acc").is_null()) {
        r.ncm_overall_acc = j.at("ncm_overall_acc").get<double>();
    }
    r.config_echo = j.at("config").dump();
    r.thresholds.many_threshold = j.at("split_thresholds").at("many").get<std::size_t>();
    r.thresholds.few_threshold = j.at("split_thresholds").at("few").get<std::size_t>();
    r.timestamp = j.at("timestamp").get<std::string>();
    return r;
}

std::string current_timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

} // namespace cbd
