#include "pol/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "pol/errors.hpp"
#include "pol/rng.hpp"

namespace pol {

namespace {

void shuffle_rows(Dataset& d, rng::Stream& st) {
    const std::size_t n = d.n();
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = st.next_below(i);
        if (j == i - 1) continue;
        for (std::size_t c = 0; c < d.dim(); ++c)
            std::swap(d.features.at(i - 1, c), d.features.at(j, c));
        std::swap(d.labels[i - 1], d.labels[j]);
    }
}

}  // namespace

Dataset make_blobs(std::size_t n, std::size_t dim, std::size_t classes, double separation,
                   double spread, std::uint64_t seed) {
    if (classes == 0 || dim == 0 || n == 0) throw ConfigError("make_blobs: empty shape");
    Dataset d;
    d.features = Matrix(n, dim);
    d.labels.resize(n);

    // fixed unit directions per class
    std::vector<std::vector<double>> means(classes, std::vector<double>(dim));
    for (std::size_t c = 0; c < classes; ++c) {
        auto ms = rng::Stream::derive(seed, 0xB10B, c);
        double norm2 = 0.0;
        for (double& x : means[c]) {
            x = ms.next_normal();
            norm2 += x * x;
        }
        const double inv = separation / std::sqrt(norm2);
        for (double& x : means[c]) x *= inv;
    }

    auto st = rng::Stream::derive(seed, 0xB10B + 1);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % classes;  // exact balance
        d.labels[i] = static_cast<std::int64_t>(c);
        for (std::size_t j = 0; j < dim; ++j)
            d.features.at(i, j) = means[c][j] + spread * st.next_normal();
    }
    shuffle_rows(d, st);

    char buf[128];
    std::snprintf(buf, sizeof buf, "blobs-n%zu-d%zu-c%zu-s%llu", n, dim, classes,
                  static_cast<unsigned long long>(seed));
    d.id = buf;
    return d;
}

Dataset make_moons(std::size_t n, double noise, std::uint64_t seed) {
    if (n == 0) throw ConfigError("make_moons: empty");
    Dataset d;
    d.features = Matrix(n, 2);
    d.labels.resize(n);
    auto st = rng::Stream::derive(seed, 0x300u);
    for (std::size_t i = 0; i < n; ++i) {
        const bool outer = (i % 2) == 0;
        const double t = std::numbers::pi * st.next_double();
        double x, yv;
        if (outer) {
            x = std::cos(t);
            yv = std::sin(t);
        } else {
            x = 1.0 - std::cos(t);
            yv = 0.5 - std::sin(t);
        }
        d.features.at(i, 0) = x + noise * st.next_normal();
        d.features.at(i, 1) = yv + noise * st.next_normal();
        d.labels[i] = outer ? 0 : 1;
    }
    shuffle_rows(d, st);
    char buf[96];
    std::snprintf(buf, sizeof buf, "moons-n%zu-s%llu", n, static_cast<unsigned long long>(seed));
    d.id = buf;
    return d;
}

Dataset load_csv(const std::filesystem::path& p) {
    std::ifstream f(p);
    if (!f) throw Error("csv: cannot open " + p.string());
    std::string line;
    if (!std::getline(f, line)) throw Error("csv: empty file " + p.string());

    // header
    std::vector<std::string> cols;
    {
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) cols.push_back(tok);
    }
    std::size_t label_col = cols.size();
    for (std::size_t i = 0; i < cols.size(); ++i)
        if (cols[i] == "label") label_col = i;
    if (label_col == cols.size()) throw Error("csv: no 'label' column in " + p.string());
    const std::size_t d = cols.size() - 1;
    if (d == 0) throw Error("csv: no feature columns in " + p.string());

    std::vector<double> feats;
    std::vector<std::int64_t> labels;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        std::size_t i = 0;
        while (std::getline(ss, tok, ',')) {
            try {
                if (i == label_col)
                    labels.push_back(std::stoll(tok));
                else
                    feats.push_back(std::stod(tok));
            } catch (const std::exception&) {
                throw Error("csv: bad value '" + tok + "' at line " + std::to_string(lineno));
            }
            ++i;
        }
        if (i != cols.size())
            throw Error("csv: wrong column count at line " + std::to_string(lineno));
    }

    Dataset out;
    out.features = Matrix(labels.size(), d);
    out.features.v = std::move(feats);
    out.labels = std::move(labels);
    out.id = p.stem().string();
    return out;
}

void save_csv(const Dataset& d, const std::filesystem::path& p) {
    std::ofstream f(p);
    if (!f) throw Error("csv: cannot write " + p.string());
    for (std::size_t j = 0; j < d.dim(); ++j) f << "f" << j << ",";
    f << "label\n";
    char buf[64];
    for (std::size_t i = 0; i < d.n(); ++i) {
        for (std::size_t j = 0; j < d.dim(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", d.features.at(i, j));
            f << buf << ",";
        }
        f << d.labels[i] << "\n";
    }
    if (!f) throw Error("csv: write failed for " + p.string());
}

namespace {

constexpr char kMagic[4] = {'P', 'O', 'L', 'D'};
constexpr std::uint16_t kVersion = 1;

void put_u64(std::ofstream& f, std::uint64_t v) {
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    f.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::ifstream& f) {
    std::uint8_t b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_cache(const Dataset& d, const std::filesystem::path& p) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error("cache: cannot write " + p.string());
    f.write(kMagic, 4);
    const std::uint8_t ver[2] = {kVersion & 0xff, kVersion >> 8};
    f.write(reinterpret_cast<const char*>(ver), 2);
    put_u64(f, d.n());
    put_u64(f, d.dim());
    for (double x : d.features.v) {
        std::uint64_t u;
        std::memcpy(&u, &x, 8);
        put_u64(f, u);
    }
    for (std::int64_t l : d.labels) put_u64(f, static_cast<std::uint64_t>(l));
    if (!f) throw Error("cache: write failed for " + p.string());
}

Dataset load_cache(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw Error("cache: cannot open " + p.string());
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw Error("cache: bad magic in " + p.string());
    std::uint8_t ver[2];
    f.read(reinterpret_cast<char*>(ver), 2);
    const std::uint16_t v = static_cast<std::uint16_t>(ver[0] | (ver[1] << 8));
    if (v != kVersion) throw Error("cache: unsupported version " + std::to_string(v));
    const std::uint64_t n = get_u64(f);
    const std::uint64_t d = get_u64(f);
    if (!f) throw Error("cache: truncated header in " + p.string());
    Dataset out;
    out.features = Matrix(n, d);
    for (double& x : out.features.v) {
        const std::uint64_t u = get_u64(f);
        std::memcpy(&x, &u, 8);
    }
    out.labels.resize(n);
    for (auto& l : out.labels) l = static_cast<std::int64_t>(get_u64(f));
    if (!f) throw Error("cache: truncated data in " + p.string());
    out.id = p.stem().string();
    return out;
}

std::pair<Dataset, Dataset> split_disjoint(const Dataset& d, double fraction, std::uint64_t seed) {
    if (fraction <= 0.0 || fraction >= 1.0) throw ConfigError("split: fraction must be in (0,1)");
    // group rows per class, shuffle each group, cut at the fraction
    std::int64_t max_label = 0;
    for (auto l : d.labels) max_label = std::max(max_label, l);
    std::vector<std::vector<std::size_t>> per_class(static_cast<std::size_t>(max_label) + 1);
    for (std::size_t i = 0; i < d.n(); ++i)
        per_class[static_cast<std::size_t>(d.labels[i])].push_back(i);

    std::vector<std::size_t> first, second;
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        auto& rows = per_class[c];
        auto st = rng::Stream::derive(seed, 0x5B117, c);
        for (std::size_t i = rows.size(); i > 1; --i)
            std::swap(rows[i - 1], rows[st.next_below(i)]);
        const auto cut = static_cast<std::size_t>(
            std::llround(fraction * static_cast<double>(rows.size())));
        first.insert(first.end(), rows.begin(), rows.begin() + cut);
        second.insert(second.end(), rows.begin() + cut, rows.end());
    }
    std::sort(first.begin(), first.end());
    std::sort(second.begin(), second.end());

    auto take = [&](const std::vector<std::size_t>& rows, const char* tag) {
        Dataset out;
        out.features = gather_rows(d.features, rows);
        out.labels = gather_labels(d.labels, rows);
        out.id = d.id + tag;
        return out;
    };
    return {take(first, "-split0"), take(second, "-split1")};
}

std::vector<BatchIndex> get_batches(std::size_t n, std::size_t steps, std::size_t batch_size,
                                    std::uint64_t seed, std::uint64_t epoch) {
    if (steps * batch_size > n)
        throw ConfigError("get_batches: S*b exceeds dataset size (sampling w/o replacement)");
    // partial Fisher-Yates over [0, n): first steps*b entries of a fresh
    // permutation for this epoch
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    auto st = rng::Stream::derive(seed, 0xE90C4, epoch);
    const std::size_t need = steps * batch_size;
    for (std::size_t i = 0; i < need; ++i) {
        const std::size_t j = i + st.next_below(n - i);
        std::swap(idx[i], idx[j]);
    }
    std::vector<BatchIndex> out(steps);
    for (std::size_t s = 0; s < steps; ++s)
        out[s].rows.assign(idx.begin() + s * batch_size, idx.begin() + (s + 1) * batch_size);
    return out;
}

Matrix gather_rows(const Matrix& X, const std::vector<std::size_t>& rows) {
    Matrix out(rows.size(), X.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= X.rows) throw ConfigError("gather: row index out of range");
        std::memcpy(out.row(i), X.row(rows[i]), X.cols * sizeof(double));
    }
    return out;
}

std::vector<std::int64_t> gather_labels(const std::vector<std::int64_t>& y,
                                        const std::vector<std::size_t>& rows) {
    std::vector<std::int64_t> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= y.size()) throw ConfigError("gather: row index out of range");
        out[i] = y[rows[i]];
    }
    return out;
}

}  // namespace pol
