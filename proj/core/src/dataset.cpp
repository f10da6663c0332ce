#include "cbd/dataset.hpp"

#include "cbd/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>

namespace cbd {

namespace {

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

double parse_double(std::string_view text, std::size_t line) {
    double v = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
        throw parse_error("dataset: non-numeric feature value '" + std::string(text) + "'", line);
    }
    return v;
}

long parse_label(std::string_view text, std::size_t line) {
    long v = 0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || v < 0) {
        throw parse_error("dataset: invalid label '" + std::string(text) + "'", line);
    }
    return v;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

} // namespace

Tensor Dataset::gather(const std::vector<std::size_t>& indices) const {
    std::vector<double> out;
    out.reserve(indices.size() * feature_dim);
    for (std::size_t idx : indices) {
        const double* r = row(idx);
        out.insert(out.end(), r, r + feature_dim);
    }
    return Tensor::constant({indices.size(), feature_dim}, std::move(out));
}

Tensor Dataset::all_features() const {
    return Tensor::constant({num_instances(), feature_dim}, features);
}

std::vector<int> Dataset::gather_labels(const std::vector<std::size_t>& indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (std::size_t idx : indices) out.push_back(labels.at(idx));
    return out;
}

void Dataset::validate() const {
    if (feature_dim == 0) throw config_error("dataset: feature_dim must be positive");
    if (features.size() != labels.size() * feature_dim) {
        throw config_error("dataset: feature rows do not match label count");
    }
    std::vector<std::size_t> counts(class_counts.size(), 0);
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= class_counts.size()) {
            throw config_error("dataset: label " + std::to_string(y) +
                               " out of range for " + std::to_string(class_counts.size()) +
                               " classes");
        }
        counts[static_cast<std::size_t>(y)]++;
    }
    if (counts != class_counts) {
        throw config_error("dataset: class_counts disagree with labels");
    }
}

Dataset Dataset::from_rows(std::string name, std::size_t feature_dim,
                           std::vector<double> features, std::vector<int> labels,
                           std::size_t num_classes) {
    Dataset d;
    d.name = std::move(name);
    d.feature_dim = feature_dim;
    d.features = std::move(features);
    d.labels = std::move(labels);
    d.class_counts.assign(num_classes, 0);
    for (int y : d.labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw config_error("dataset: label " + std::to_string(y) + " out of range for " +
                               std::to_string(num_classes) + " classes");
        }
        d.class_counts[static_cast<std::size_t>(y)]++;
    }
    d.validate();
    return d;
}

std::vector<ShotTag> split_classes(const Dataset& d, const ShotSplit& s) {
    if (s.few_threshold > s.many_threshold) {
        throw config_error("shot split: few_threshold must not exceed many_threshold");
    }
    std::vector<ShotTag> tags(d.num_classes());
    for (std::size_t j = 0; j < d.num_classes(); ++j) {
        const std::size_t n_j = d.class_counts[j];
        tags[j] = n_j > s.many_threshold ? ShotTag::many
                : n_j < s.few_threshold  ? ShotTag::few
                                         : ShotTag::mid;
    }
    return tags;
}

const char* shot_tag_name(ShotTag tag) {
    switch (tag) {
        case ShotTag::many: return "many";
        case ShotTag::mid: return "mid";
        case ShotTag::few: return "few";
    }
    return "?";
}

void LongTailProfile::validate() const {
    if (num_classes < 2) throw config_error("profile: at least 2 classes required");
    if (tail_count < 1) throw config_error("profile: tail_count must be >= 1");
    if (head_count < tail_count) throw config_error("profile: head_count must be >= tail_count");
    if (feature_dim < 1) throw config_error("profile: feature_dim must be >= 1");
    if (test_per_class < 1) throw config_error("profile: test_per_class must be >= 1");
    if (noise_sigma < 0.0) throw config_error("profile: noise_sigma must be >= 0");
    if (class_separation < 0.0) throw config_error("profile: class_separation must be >= 0");
}

std::vector<std::size_t> decay_counts(const LongTailProfile& p) {
    p.validate();
    const std::size_t c = p.num_classes;
    std::vector<std::size_t> counts(c);
    const double head = static_cast<double>(p.head_count);
    const double tail = static_cast<double>(p.tail_count);
    if (p.decay == DecayKind::exponential) {
        // geometric interpolation head * (tail/head)^(j/(c-1))
        const double ratio = tail / head;
        for (std::size_t j = 0; j < c; ++j) {
            const double t = static_cast<double>(j) / static_cast<double>(c - 1);
            counts[j] = static_cast<std::size_t>(std::llround(head * std::pow(ratio, t)));
        }
    } else {
        // zipf: head * (j+1)^-s, floored at tail. With the derived exponent
        // the curve lands on tail_count at the last class by construction.
        const double s = p.zipf_s > 0.0 ? p.zipf_s
                                        : std::log(head / tail) / std::log(static_cast<double>(c));
        for (std::size_t j = 0; j < c; ++j) {
            const double raw = head * std::pow(static_cast<double>(j + 1), -s);
            counts[j] = std::max<std::size_t>(p.tail_count,
                                              static_cast<std::size_t>(std::llround(raw)));
        }
    }
    counts.front() = p.head_count;
    counts.back() = p.tail_count;
    for (std::size_t j = 1; j < c; ++j) counts[j] = std::min(counts[j], counts[j - 1]);
    return counts;
}

SynthesizedData synthesize(const LongTailProfile& p) {
    p.validate();
    const std::size_t c = p.num_classes;
    const std::size_t d = p.feature_dim;
    const std::vector<std::size_t> counts = decay_counts(p);

    Rng rng(derive_seed(p.seed, /*stream=*/7001));

    // Class means first, then train rows, then test rows: one stream, fixed
    // order, so any (profile, seed) pair regenerates identical data.
    std::vector<double> means(c * d);
    for (double& m : means) m = rng.gauss(0.0, 1.0) * p.class_separation;

    std::ostringstream name;
    name << "synthetic-c" << c << "-h" << p.head_count << "-t" << p.tail_count << "-seed"
         << p.seed;

    std::vector<double> train_features;
    std::vector<int> train_labels;
    for (std::size_t j = 0; j < c; ++j) {
        for (std::size_t i = 0; i < counts[j]; ++i) {
            for (std::size_t kk = 0; kk < d; ++kk) {
                train_features.push_back(means[j * d + kk] + rng.gauss(0.0, p.noise_sigma));
            }
            train_labels.push_back(static_cast<int>(j));
        }
    }

    std::vector<double> test_features;
    std::vector<int> test_labels;
    for (std::size_t j = 0; j < c; ++j) {
        for (std::size_t i = 0; i < p.test_per_class; ++i) {
            for (std::size_t kk = 0; kk < d; ++kk) {
                test_features.push_back(means[j * d + kk] + rng.gauss(0.0, p.noise_sigma));
            }
            test_labels.push_back(static_cast<int>(j));
        }
    }

    SynthesizedData out;
    out.train = Dataset::from_rows(name.str() + "-train", d, std::move(train_features),
                                   std::move(train_labels), c);
    out.test = Dataset::from_rows(name.str() + "-test", d, std::move(test_features),
                                  std::move(test_labels), c);
    return out;
}

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("dataset: cannot open '" + path.string() + "' for writing");
    out << "label";
    for (std::size_t j = 0; j < d.feature_dim; ++j) out << ",f" << j;
    out << "\n";
    for (std::size_t i = 0; i < d.num_instances(); ++i) {
        out << d.labels[i];
        const double* r = d.row(i);
        for (std::size_t j = 0; j < d.feature_dim; ++j) out << "," << format_double(r[j]);
        out << "\n";
    }
    if (!out) throw io_error("dataset: write failed for '" + path.string() + "'");
}

Dataset load_dataset(const std::filesystem::path& path,
                     std::optional<std::size_t> expected_classes) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("dataset: cannot open '" + path.string() + "' for reading");

    std::string line;
    if (!std::getline(in, line)) throw parse_error("dataset: empty file", 1);
    if (!line.empty() && line.back() == '\r') line.pop_back();

    const auto header = split_fields(line);
    if (header.empty() || header[0] != "label") {
        throw parse_error("dataset: header must start with 'label'", 1);
    }
    const std::size_t dim = header.size() - 1;
    if (dim == 0) throw parse_error("dataset: header declares no feature columns", 1);
    for (std::size_t j = 0; j < dim; ++j) {
        if (header[j + 1] != "f" + std::to_string(j)) {
            throw parse_error("dataset: unexpected header column '" + std::string(header[j + 1]) +
                                  "'",
                              1);
        }
    }

    std::vector<double> features;
    std::vector<int> labels;
    long max_label = -1;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != dim + 1) {
            throw parse_error("dataset: expected " + std::to_string(dim + 1) + " fields, got " +
                                  std::to_string(fields.size()),
                              line_no);
        }
        const long y = parse_label(fields[0], line_no);
        if (expected_classes && y >= static_cast<long>(*expected_classes)) {
            throw config_error("dataset: label " + std::to_string(y) + " out of range for " +
                               std::to_string(*expected_classes) + " classes (line " +
                               std::to_string(line_no) + ")");
        }
        max_label = std::max(max_label, y);
        labels.push_back(static_cast<int>(y));
        for (std::size_t j = 0; j < dim; ++j) features.push_back(parse_double(fields[j + 1], line_no));
    }
    if (labels.empty()) throw parse_error("dataset: no instance rows", line_no);

    const std::size_t classes = expected_classes ? *expected_classes
                                                 : static_cast<std::size_t>(max_label + 1);
    return Dataset::from_rows(path.stem().string(), dim, std::move(features), std::move(labels),
                              classes);
}

Tensor augment(const Tensor& x, double sigma, Rng& rng) {
    if (sigma < 0.0) throw config_error("augment: sigma must be >= 0");
    if (sigma == 0.0) return x;
    std::vector<double> out = x.values();
    for (double& v : out) v += rng.gauss(0.0, sigma);
    return Tensor::constant(x.shape(), std::move(out));
}

} // namespace cbd
