#include "cbd/model.hpp"

#include "cbd/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace cbd {

namespace {

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::vector<double> gaussian(Rng& rng, std::size_t n, double sigma) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.gauss(0.0, sigma);
    return v;
}

} // namespace

// ---------------------------------------------------------------------------
// FeatureExtractor
// ---------------------------------------------------------------------------

FeatureExtractor::FeatureExtractor(std::vector<std::size_t> widths, Rng& rng)
    : widths_(std::move(widths)) {
    if (widths_.size() < 2) throw config_error("extractor: need at least input and output widths");
    for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
        const std::size_t fan_in = widths_[i];
        const std::size_t fan_out = widths_[i + 1];
        const double sigma = std::sqrt(2.0 / static_cast<double>(fan_in));
        layers_.push_back({Tensor::parameter({fan_in, fan_out}, gaussian(rng, fan_in * fan_out, sigma)),
                           Tensor::parameter({fan_out}, std::vector<double>(fan_out, 0.0))});
    }
}

Tensor FeatureExtractor::forward(const Tensor& x) const {
    if (x.cols() != input_dim()) {
        throw dimension_error("extractor: input width " + std::to_string(x.cols()) +
                              " does not match d_in " + std::to_string(input_dim()));
    }
    Tensor h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = add_rowwise(matmul(h, layers_[i].weight), layers_[i].bias);
        if (i + 1 < layers_.size()) h = relu(h);
    }
    return h;
}

std::vector<Tensor> FeatureExtractor::parameters() const {
    std::vector<Tensor> out;
    for (const auto& layer : layers_) {
        out.push_back(layer.weight);
        out.push_back(layer.bias);
    }
    return out;
}

void FeatureExtractor::set_frozen(bool frozen) {
    for (auto& layer : layers_) {
        layer.weight.set_requires_grad(!frozen);
        layer.bias.set_requires_grad(!frozen);
    }
}

// ---------------------------------------------------------------------------
// CosineClassifier
// ---------------------------------------------------------------------------

CosineClassifier::CosineClassifier(std::size_t feature_dim, std::size_t num_classes, double gamma,
                                   Rng& rng)
    : gamma_(gamma) {
    if (!(gamma > 0.0)) throw config_error("classifier: gamma must be positive");
    std::vector<double> w = gaussian(rng, num_classes * feature_dim, 1.0);
    for (std::size_t j = 0; j < num_classes; ++j) {
        double sq = 0.0;
        for (std::size_t k = 0; k < feature_dim; ++k) sq += w[j * feature_dim + k] * w[j * feature_dim + k];
        const double denom = std::max(std::sqrt(sq), 1e-12);
        for (std::size_t k = 0; k < feature_dim; ++k) w[j * feature_dim + k] /= denom;
    }
    weight_ = Tensor::parameter({num_classes, feature_dim}, std::move(w));
}

Tensor CosineClassifier::forward(const Tensor& v) const {
    if (v.cols() != feature_dim()) {
        throw dimension_error("classifier: feature width " + std::to_string(v.cols()) +
                              " does not match W width " + std::to_string(feature_dim()));
    }
    return scale(matmul(l2_normalize(v), transpose(l2_normalize(weight_))), gamma_);
}

// ---------------------------------------------------------------------------
// ProjectionHead
// ---------------------------------------------------------------------------

ProjectionHead::ProjectionHead(std::size_t dim, std::size_t teacher_count) {
    if (dim == 0 || teacher_count == 0) throw config_error("projection: dim and K must be positive");
    const std::size_t out = dim * teacher_count;
    std::vector<double> w(dim * out, 0.0);
    for (std::size_t k = 0; k < teacher_count; ++k) {
        for (std::size_t i = 0; i < dim; ++i) w[i * out + k * dim + i] = 1.0;
    }
    weight_ = Tensor::parameter({dim, out}, std::move(w));
    bias_ = Tensor::parameter({out}, std::vector<double>(out, 0.0));
}

Tensor ProjectionHead::forward(const Tensor& v) const {
    if (v.cols() != input_dim()) {
        throw dimension_error("projection: feature width " + std::to_string(v.cols()) +
                              " does not match d " + std::to_string(input_dim()));
    }
    return add_rowwise(matmul(v, weight_), bias_);
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

Tensor Model::features(const Tensor& x) const {
    Tensor v = extractor.forward(x);
    return projection ? projection->forward(v) : v;
}

Tensor Model::logits(const Tensor& x) const { return classifier.forward(features(x)); }

std::size_t Model::effective_dim() const {
    return projection ? projection->output_dim() : extractor.output_dim();
}

std::vector<Tensor> Model::parameters() const {
    std::vector<Tensor> out = extractor.parameters();
    if (projection) {
        for (auto& t : projection->parameters()) out.push_back(t);
    }
    for (auto& t : classifier.parameters()) out.push_back(t);
    return out;
}

std::vector<Tensor> Model::trainable_parameters() const {
    std::vector<Tensor> out;
    for (auto& t : parameters()) {
        if (t.requires_grad()) out.push_back(t);
    }
    return out;
}

Model init_model(const ModelInit& init, std::uint64_t seed) {
    Rng rng(derive_seed(seed, /*stream=*/4201));
    Model m;
    m.extractor = FeatureExtractor(init.extractor_widths, rng);
    std::size_t d_eff = m.extractor.output_dim();
    if (init.projection_teachers > 0) {
        m.projection = ProjectionHead(d_eff, init.projection_teachers);
        d_eff = m.projection->output_dim();
    }
    m.classifier = CosineClassifier(d_eff, init.num_classes, init.gamma, rng);
    return m;
}

// ---------------------------------------------------------------------------
// NcmClassifier
// ---------------------------------------------------------------------------

NcmClassifier NcmClassifier::fit(const std::vector<double>& features, std::size_t dim,
                                 const std::vector<int>& labels, std::size_t num_classes) {
    if (dim == 0) throw config_error("ncm: dim must be positive");
    if (features.size() != labels.size() * dim) {
        throw config_error("ncm: features do not match labels");
    }
    NcmClassifier ncm;
    ncm.dim_ = dim;
    ncm.centroids_.assign(num_classes * dim, 0.0);
    std::vector<std::size_t> counts(num_classes, 0);

    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw config_error("ncm: label out of range");
        }
        const double* row = features.data() + i * dim;
        double sq = 0.0;
        for (std::size_t k = 0; k < dim; ++k) sq += row[k] * row[k];
        const double denom = std::max(std::sqrt(sq), 1e-12);
        for (std::size_t k = 0; k < dim; ++k) {
            ncm.centroids_[static_cast<std::size_t>(y) * dim + k] += row[k] / denom;
        }
        counts[static_cast<std::size_t>(y)]++;
    }
    for (std::size_t j = 0; j < num_classes; ++j) {
        if (counts[j] == 0) {
            throw config_error("ncm: class " + std::to_string(j) + " has no features");
        }
        double* cj = ncm.centroids_.data() + j * dim;
        double sq = 0.0;
        for (std::size_t k = 0; k < dim; ++k) sq += cj[k] * cj[k];
        const double denom = std::max(std::sqrt(sq), 1e-12);
        for (std::size_t k = 0; k < dim; ++k) cj[k] /= denom;
    }
    return ncm;
}

int NcmClassifier::predict(const double* v) const {
    // centroids are unit vectors, so the cosine ranking equals the dot
    // product ranking for any nonzero query
    const std::size_t c = num_classes();
    int best = 0;
    double best_dot = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
        double dot = 0.0;
        const double* cj = centroids_.data() + j * dim_;
        for (std::size_t k = 0; k < dim_; ++k) dot += v[k] * cj[k];
        if (dot > best_dot) {
            best_dot = dot;
            best = static_cast<int>(j);
        }
    }
    return best;
}

std::vector<int> NcmClassifier::predict_batch(const std::vector<double>& features,
                                              std::size_t count) const {
    std::vector<int> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = predict(features.data() + i * dim_);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

namespace {

void write_tensor(std::ofstream& out, const char* tag, const Tensor& t) {
    out << tag;
    for (std::size_t d : t.shape()) out << " " << d;
    out << "\n";
    const auto& vals = t.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        if (i) out << " ";
        out << format_double(vals[i]);
    }
    out << "\n";
}

class CheckpointReader {
public:
    explicit CheckpointReader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
        if (!in_) throw io_error("checkpoint: cannot open '" + path.string() + "' for reading");
    }

    std::string next_line() {
        std::string line;
        if (!std::getline(in_, line)) throw parse_error("checkpoint: unexpected end of file", line_no_);
        ++line_no_;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
    }

    Tensor read_tensor(const std::string& tag, bool requires_grad) {
        std::istringstream head(next_line());
        std::string got;
        head >> got;
        if (got != tag) throw parse_error("checkpoint: expected tensor '" + tag + "', got '" + got + "'", line_no_);
        std::vector<std::size_t> shape;
        std::size_t d;
        while (head >> d) shape.push_back(d);
        std::size_t n = 1;
        for (std::size_t s : shape) n *= s;

        std::istringstream body(next_line());
        std::vector<double> values;
        values.reserve(n);
        std::string tok;
        while (body >> tok) {
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            if (ec != std::errc() || ptr != tok.data() + tok.size()) {
                throw parse_error("checkpoint: bad value '" + tok + "'", line_no_);
            }
            values.push_back(v);
        }
        if (values.size() != n) {
            throw parse_error("checkpoint: expected " + std::to_string(n) + " values, got " +
                                  std::to_string(values.size()),
                              line_no_);
        }
        return requires_grad ? Tensor::parameter(shape, std::move(values))
                             : Tensor::constant(shape, std::move(values));
    }

    std::size_t line() const { return line_no_; }

private:
    std::ifstream in_;
    std::size_t line_no_ = 0;
};

} // namespace

void save_model(const Model& m, const std::filesystem::path& path, const std::string& config_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("checkpoint: cannot open '" + path.string() + "' for writing");
    out << "cbd-model 1\n";
    out << "config_hash " << (config_hash.empty() ? "-" : config_hash) << "\n";
    out << "gamma " << format_double(m.classifier.gamma()) << "\n";
    out << "extractor";
    for (std::size_t w : m.extractor.widths()) out << " " << w;
    out << "\n";
    const auto& layers = m.extractor.layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        write_tensor(out, ("W" + std::to_string(i)).c_str(), layers[i].weight);
        write_tensor(out, ("b" + std::to_string(i)).c_str(), layers[i].bias);
    }
    out << "projection " << (m.projection ? 1 : 0) << "\n";
    if (m.projection) {
        write_tensor(out, "PW", m.projection->weight());
        write_tensor(out, "Pb", m.projection->bias());
    }
    out << "classifier\n";
    write_tensor(out, "CW", m.classifier.weight());
    if (!out) throw io_error("checkpoint: write failed for '" + path.string() + "'");
}

LoadedModel load_model(const std::filesystem::path& path) {
    CheckpointReader reader(path);
    if (reader.next_line() != "cbd-model 1") {
        throw parse_error("checkpoint: unrecognized header", 1);
    }

    LoadedModel out;
    {
        std::istringstream is(reader.next_line());
        std::string key;
        is >> key >> out.config_hash;
        if (key != "config_hash") throw parse_error("checkpoint: missing config_hash", reader.line());
    }
    double gamma = 0.0;
    {
        std::istringstream is(reader.next_line());
        std::string key;
        is >> key >> gamma;
        if (key != "gamma" || !(gamma > 0.0)) throw parse_error("checkpoint: bad gamma", reader.line());
    }
    std::vector<std::size_t> widths;
    {
        std::istringstream is(reader.next_line());
        std::string key;
        is >> key;
        if (key != "extractor") throw parse_error("checkpoint: missing extractor widths", reader.line());
        std::size_t w;
        while (is >> w) widths.push_back(w);
        if (widths.size() < 2) throw parse_error("checkpoint: bad extractor widths", reader.line());
    }

    Model& m = out.model;
    Rng dummy(0);
    m.extractor = FeatureExtractor(widths, dummy);
    for (std::size_t i = 0; i < m.extractor.layers().size(); ++i) {
        m.extractor.layers()[i].weight = reader.read_tensor("W" + std::to_string(i), true);
        m.extractor.layers()[i].bias = reader.read_tensor("b" + std::to_string(i), true);
    }

    int has_projection = 0;
    {
        std::istringstream is(reader.next_line());
        std::string key;
        is >> key >> has_projection;
        if (key != "projection") throw parse_error("checkpoint: missing projection flag", reader.line());
    }
    if (has_projection) {
        ProjectionHead head(1, 1);
        head.weight() = reader.read_tensor("PW", true);
        head.bias() = reader.read_tensor("Pb", true);
        m.projection = std::move(head);
    }

    if (reader.next_line() != "classifier") {
        throw parse_error("checkpoint: missing classifier section", reader.line());
    }
    Tensor cw = reader.read_tensor("CW", true);
    CosineClassifier clf(cw.cols(), cw.rows(), gamma, dummy);
    clf.weight() = std::move(cw);
    m.classifier = std::move(clf);
    return out;
}

std::string config_hash_hex(const std::string& canonical_config) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : canonical_config) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

} // namespace cbd
