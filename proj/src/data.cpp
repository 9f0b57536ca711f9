#include "snowball/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <string>
#include <string_view>

#include "snowball/errors.hpp"

namespace snowball {

namespace {

void add_noise(Vector& x, double sigma, std::mt19937_64& rng)
{
    if (sigma <= 0.0) return;
    std::normal_distribution<double> noise(0.0, sigma);
    for (double& v : x) v += noise(rng);
}

void require_non_negative(double sigma, const char* what)
{
    if (!(sigma >= 0.0)) throw ConfigError(std::string(what) + ": noise must be >= 0");
}

} // namespace

RawDataset gen_two_moons(std::size_t n, double noise, std::uint64_t seed)
{
    if (n == 0) throw ConfigError("gen_two_moons: n must be positive");
    require_non_negative(noise, "gen_two_moons");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);

    RawDataset data;
    data.class_count = 2;
    const std::size_t outer = (n + 1) / 2;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = angle(rng);
        const bool upper = i < outer;
        Vector x = upper ? Vector{std::cos(t), std::sin(t)} : Vector{1.0 - std::cos(t), 0.5 - std::sin(t)};
        add_noise(x, noise, rng);
        data.features.push_back(std::move(x));
        data.labels.push_back(upper ? 0 : 1);
    }
    return data;
}

RawDataset gen_gaussian_blobs(std::size_t classes, std::size_t n_per_class, double sigma, double separation,
                              std::uint64_t seed, std::size_t dim)
{
    if (classes < 2) throw ConfigError("gen_gaussian_blobs: need at least 2 classes");
    if (n_per_class == 0) throw ConfigError("gen_gaussian_blobs: n_per_class must be positive");
    if (dim < 2) throw ConfigError("gen_gaussian_blobs: dim must be >= 2");
    require_non_negative(sigma, "gen_gaussian_blobs");
    if (!(separation >= 0.0)) throw ConfigError("gen_gaussian_blobs: separation must be >= 0");

    // Neighbouring centers on a circle of radius r are 2 r sin(pi / C) apart.
    const double radius = separation / (2.0 * std::sin(std::numbers::pi / static_cast<double>(classes)));
    std::mt19937_64 rng(seed);
    RawDataset data;
    data.class_count = classes;
    for (std::size_t c = 0; c < classes; ++c) {
        const double phi = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
        for (std::size_t i = 0; i < n_per_class; ++i) {
            Vector x(dim, 0.0);
            x[0] = radius * std::cos(phi);
            x[1] = radius * std::sin(phi);
            add_noise(x, sigma, rng);
            data.features.push_back(std::move(x));
            data.labels.push_back(static_cast<ClassId>(c));
        }
    }
    return data;
}

RawDataset gen_rings(std::size_t classes, std::size_t n_per_class, double sigma, std::uint64_t seed)
{
    if (classes < 2) throw ConfigError("gen_rings: need at least 2 classes");
    if (n_per_class == 0) throw ConfigError("gen_rings: n_per_class must be positive");
    require_non_negative(sigma, "gen_rings");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> radial(0.0, sigma > 0.0 ? sigma : 1.0);

    RawDataset data;
    data.class_count = classes;
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t i = 0; i < n_per_class; ++i) {
            const double t = angle(rng);
            const double r = static_cast<double>(c + 1) + (sigma > 0.0 ? radial(rng) : 0.0);
            data.features.push_back({r * std::cos(t), r * std::sin(t)});
            data.labels.push_back(static_cast<ClassId>(c));
        }
    }
    return data;
}

DatasetSplit split(const RawDataset& data, const SplitOptions& options)
{
    const std::size_t n = data.size();
    const std::size_t classes = data.class_count;
    if (n == 0) throw DataError("split: empty dataset");
    if (classes == 0) throw DataError("split: dataset has no classes");
    if (options.labels_per_class == 0) throw ConfigError("split: labels_per_class must be positive");
    if (!(options.test_fraction >= 0.0 && options.test_fraction < 1.0))
        throw ConfigError("split: test_fraction must be in [0, 1)");

    const std::size_t test_count = options.test_size
                                       ? *options.test_size
                                       : static_cast<std::size_t>(std::llround(options.test_fraction * n));
    if (test_count >= n) throw DataError("split: test set would consume the whole dataset");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(options.seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::size_t> test_ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test_count));
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t i = test_count; i < n; ++i) by_class.at(static_cast<std::size_t>(data.labels[order[i]])).push_back(order[i]);

    std::vector<std::size_t> labeled_ids;
    std::vector<std::size_t> unlabeled_ids;
    for (std::size_t c = 0; c < classes; ++c) {
        const auto& members = by_class[c];
        if (members.size() < options.labels_per_class)
            throw DataError("split: class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                            " training samples, need " + std::to_string(options.labels_per_class));
        labeled_ids.insert(labeled_ids.end(), members.begin(),
                           members.begin() + static_cast<std::ptrdiff_t>(options.labels_per_class));
        unlabeled_ids.insert(unlabeled_ids.end(),
                             members.begin() + static_cast<std::ptrdiff_t>(options.labels_per_class), members.end());
    }
    std::sort(labeled_ids.begin(), labeled_ids.end());
    std::sort(unlabeled_ids.begin(), unlabeled_ids.end());
    std::sort(test_ids.begin(), test_ids.end());

    // Normalization statistics from labeled + unlabeled only.
    const std::size_t dim = data.input_dim();
    Vector mean(dim, 0.0);
    Vector scale(dim, 0.0);
    const auto train_ids = [&] {
        std::vector<std::size_t> ids = labeled_ids;
        ids.insert(ids.end(), unlabeled_ids.begin(), unlabeled_ids.end());
        return ids;
    }();
    for (std::size_t id : train_ids)
        for (std::size_t d = 0; d < dim; ++d) mean[d] += data.features[id][d];
    for (double& m : mean) m /= static_cast<double>(train_ids.size());
    for (std::size_t id : train_ids)
        for (std::size_t d = 0; d < dim; ++d) {
            const double dev = data.features[id][d] - mean[d];
            scale[d] += dev * dev;
        }
    for (double& s : scale) {
        s = std::sqrt(s / static_cast<double>(train_ids.size()));
        if (!(s > 1e-12)) s = 1.0; // constant dimension
    }

    auto make = [&](std::size_t id, bool visible) {
        Sample s;
        s.id = id;
        s.x.resize(dim);
        for (std::size_t d = 0; d < dim; ++d) s.x[d] = (data.features[id][d] - mean[d]) / scale[d];
        s.true_label = data.labels[id];
        if (visible) s.label = data.labels[id];
        return s;
    };

    DatasetSplit out;
    out.class_count = classes;
    out.input_dim = dim;
    for (std::size_t id : labeled_ids) out.labeled.push_back(make(id, true));
    for (std::size_t id : unlabeled_ids) out.unlabeled.push_back(make(id, false));
    for (std::size_t id : test_ids) out.test.push_back(make(id, true));
    return out;
}

Vector augment(std::span<const double> x, double sigma, std::mt19937_64& rng)
{
    if (!(sigma >= 0.0)) throw ConfigError("augment: sigma must be >= 0");
    Vector out(x.begin(), x.end());
    add_noise(out, sigma, rng);
    return out;
}

namespace {

std::string_view trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

} // namespace

RawDataset parse_csv(std::istream& in, std::optional<std::size_t> class_count)
{
    RawDataset data;
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view row = trim(line);
        if (row.empty()) continue;

        std::vector<std::string_view> fields;
        for (std::size_t start = 0;;) {
            const auto comma = row.find(',', start);
            fields.push_back(trim(row.substr(start, comma == std::string_view::npos ? row.npos : comma - start)));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (fields.size() < 2) throw ParseError("expected at least one feature and a label", line_no);
        if (width == 0) width = fields.size();
        if (fields.size() != width)
            throw ParseError("expected " + std::to_string(width) + " fields, found " + std::to_string(fields.size()),
                             line_no);

        Vector x(width - 1);
        for (std::size_t i = 0; i + 1 < width; ++i) {
            const auto f = fields[i];
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), x[i]);
            if (ec != std::errc{} || ptr != f.data() + f.size() || !std::isfinite(x[i]))
                throw ParseError("field " + std::to_string(i + 1) + " is not a finite number: '" + std::string(f) + "'",
                                 line_no);
        }
        const auto lf = fields.back();
        long long label = 0;
        const auto [ptr, ec] = std::from_chars(lf.data(), lf.data() + lf.size(), label);
        if (ec != std::errc{} || ptr != lf.data() + lf.size())
            throw ParseError("label is not an integer: '" + std::string(lf) + "'", line_no);
        if (label < 0) throw ParseError("negative class label", line_no);
        if (class_count && static_cast<std::size_t>(label) >= *class_count)
            throw ParseError("label " + std::to_string(label) + " outside [0, " + std::to_string(*class_count) + ")",
                             line_no);

        data.features.push_back(std::move(x));
        data.labels.push_back(static_cast<ClassId>(label));
    }
    if (data.features.empty()) throw ParseError("no data rows", line_no == 0 ? 1 : line_no);

    if (class_count) {
        data.class_count = *class_count;
    } else {
        data.class_count = static_cast<std::size_t>(*std::max_element(data.labels.begin(), data.labels.end())) + 1;
    }
    return data;
}

RawDataset load_csv(const std::filesystem::path& path, std::optional<std::size_t> class_count)
{
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return parse_csv(in, class_count);
}

void write_csv(std::ostream& out, const RawDataset& data)
{
    char buf[32];
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (double v : data.features[i]) {
            const auto res = std::to_chars(buf, buf + sizeof buf, v);
            out.write(buf, res.ptr - buf);
            out << ',';
        }
        out << data.labels[i] << '\n';
    }
}

} // namespace snowball
