#include "pol/bundle.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "pol/errors.hpp"

namespace pol {

namespace {

using nlohmann::json;
constexpr int kFormatVersion = 1;

json manifest_json(const ProofBundle& b) {
    json aux;
    aux["epochs"] = b.aux.epochs;
    aux["steps_per_epoch"] = b.aux.steps_per_epoch;
    aux["checkpoint_interval"] = b.aux.checkpoint_interval;
    aux["batch_size"] = b.aux.batch_size;
    aux["learning_rate"] = b.aux.learning_rate;
    aux["batch_seed"] = b.aux.batch_seed;
    aux["noise"] = {{"amplitude", b.aux.noise.amplitude}, {"seed", b.aux.noise.seed}};
    aux["model"] = {{"widths", b.aux.model.widths},
                    {"activation", to_string(b.aux.model.activation)},
                    {"loss", to_string(b.aux.model.loss)},
                    {"use_bias", b.aux.model.use_bias}};
    aux["init"] = {{"seed", b.aux.init.seed}, {"scale", b.aux.init.scale}};

    json idx = json::array();
    for (const auto& bi : b.batch_indices) idx.push_back(bi.rows);
    json digs = json::array();
    for (const auto& d : b.digests) digs.push_back(to_hex(d));
    json ckpt = json::array();
    for (std::size_t t = 0; t < b.checkpoints.size(); ++t)
        if (b.checkpoints[t].has_value()) ckpt.push_back(t);

    return json{{"format_version", kFormatVersion},
                {"dataset_id", b.dataset_id},
                {"aux", aux},
                {"batch_indices", idx},
                {"digests", digs},
                {"checkpoint_steps", ckpt}};
}

std::filesystem::path weight_file(const std::filesystem::path& dir, std::size_t t) {
    return dir / "weights" / ("w_" + std::to_string(t) + ".bin");
}

void write_weights(const std::filesystem::path& p, const WeightVector& w) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error("bundle: cannot write " + p.string());
    const std::uint64_t n = w.size();
    std::uint8_t hdr[8];
    for (int i = 0; i < 8; ++i) hdr[i] = static_cast<std::uint8_t>(n >> (8 * i));
    f.write(reinterpret_cast<const char*>(hdr), 8);
    for (double x : w.values) {
        std::uint64_t u;
        std::memcpy(&u, &x, 8);
        std::uint8_t b8[8];
        for (int i = 0; i < 8; ++i) b8[i] = static_cast<std::uint8_t>(u >> (8 * i));
        f.write(reinterpret_cast<const char*>(b8), 8);
    }
    if (!f) throw Error("bundle: write failed for " + p.string());
}

std::vector<double> read_weights(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw MalformedBundle("bundle: missing weight file " + p.string());
    std::uint8_t hdr[8];
    f.read(reinterpret_cast<char*>(hdr), 8);
    if (!f) throw MalformedBundle("bundle: truncated weight file " + p.string());
    std::uint64_t n = 0;
    for (int i = 0; i < 8; ++i) n |= static_cast<std::uint64_t>(hdr[i]) << (8 * i);
    if (n > (1ull << 32)) throw MalformedBundle("bundle: absurd weight count in " + p.string());
    std::vector<double> out(n);
    for (auto& x : out) {
        std::uint8_t b8[8];
        f.read(reinterpret_cast<char*>(b8), 8);
        std::uint64_t u = 0;
        for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b8[i]) << (8 * i);
        std::memcpy(&x, &u, 8);
    }
    if (!f) throw MalformedBundle("bundle: truncated weight file " + p.string());
    return out;
}

}  // namespace

void validate_bundle(const ProofBundle& b) {
    const std::size_t T = b.aux.total_steps();
    const std::size_t k = b.aux.checkpoint_interval;
    if (T == 0 || k == 0) throw MalformedBundle("bundle: empty training schedule");
    if (b.aux.steps_per_epoch % k != 0)
        throw MalformedBundle("bundle: checkpoint interval does not divide steps per epoch");
    try {
        b.aux.model.validate();
    } catch (const ConfigError& e) {
        throw MalformedBundle(std::string("bundle: bad model spec: ") + e.what());
    }
    if (b.checkpoints.size() != T + 1)
        throw MalformedBundle("bundle: checkpoint list must have T+1 slots");
    if (b.batch_indices.size() != T) throw MalformedBundle("bundle: need T batch index entries");
    if (b.digests.size() != T) throw MalformedBundle("bundle: need T digests");
    const std::size_t dim = b.aux.model.dim();
    for (std::size_t t = 0; t <= T; ++t) {
        const bool expect = (t % k == 0) || t == T;
        if (b.checkpoints[t].has_value() != expect)
            throw MalformedBundle("bundle: checkpoint presence wrong at step " +
                                  std::to_string(t));
        if (expect && b.checkpoints[t]->size() != dim)
            throw MalformedBundle("bundle: checkpoint size != model dim at step " +
                                  std::to_string(t));
    }
    for (const auto& bi : b.batch_indices)
        if (bi.rows.size() != b.aux.batch_size)
            throw MalformedBundle("bundle: batch with wrong size");
    if (!(b.aux.learning_rate > 0.0)) throw MalformedBundle("bundle: non-positive learning rate");
}

void save_bundle(const ProofBundle& b, const std::filesystem::path& dir, CostLedger* ledger) {
    validate_bundle(b);
    std::filesystem::create_directories(dir / "weights");
    const std::string manifest = manifest_json(b).dump(1);
    {
        std::ofstream f(dir / "manifest.json");
        if (!f) throw Error("bundle: cannot write manifest in " + dir.string());
        f << manifest;
        if (!f) throw Error("bundle: manifest write failed");
    }
    std::uint64_t bytes = manifest.size();
    for (std::size_t t = 0; t < b.checkpoints.size(); ++t) {
        if (!b.checkpoints[t].has_value()) continue;
        write_weights(weight_file(dir, t), *b.checkpoints[t]);
        bytes += 8 + 8 * b.checkpoints[t]->size();
    }
    if (ledger) ledger->add_bytes(bytes);
}

ProofBundle load_bundle(const std::filesystem::path& dir) {
    json m;
    {
        std::ifstream f(dir / "manifest.json");
        if (!f) throw MalformedBundle("bundle: no manifest.json in " + dir.string());
        try {
            f >> m;
        } catch (const json::exception& e) {
            throw MalformedBundle(std::string("bundle: manifest parse error: ") + e.what());
        }
    }

    ProofBundle b;
    try {
        if (m.at("format_version").get<int>() != kFormatVersion)
            throw MalformedBundle("bundle: unsupported format version");
        b.dataset_id = m.at("dataset_id").get<std::string>();
        const json& aux = m.at("aux");
        b.aux.epochs = aux.at("epochs").get<std::size_t>();
        b.aux.steps_per_epoch = aux.at("steps_per_epoch").get<std::size_t>();
        b.aux.checkpoint_interval = aux.at("checkpoint_interval").get<std::size_t>();
        b.aux.batch_size = aux.at("batch_size").get<std::size_t>();
        b.aux.learning_rate = aux.at("learning_rate").get<double>();
        b.aux.batch_seed = aux.at("batch_seed").get<std::uint64_t>();
        b.aux.noise.amplitude = aux.at("noise").at("amplitude").get<double>();
        b.aux.noise.seed = aux.at("noise").at("seed").get<std::uint64_t>();
        b.aux.model.widths = aux.at("model").at("widths").get<std::vector<std::size_t>>();
        b.aux.model.activation =
            activation_from_string(aux.at("model").at("activation").get<std::string>());
        b.aux.model.loss = loss_from_string(aux.at("model").at("loss").get<std::string>());
        b.aux.model.use_bias = aux.at("model").at("use_bias").get<bool>();
        b.aux.init.seed = aux.at("init").at("seed").get<std::uint64_t>();
        b.aux.init.scale = aux.at("init").at("scale").get<double>();

        const std::size_t T = b.aux.total_steps();
        for (const auto& row : m.at("batch_indices")) {
            BatchIndex bi;
            bi.rows = row.get<std::vector<std::size_t>>();
            b.batch_indices.push_back(std::move(bi));
        }
        for (const auto& h : m.at("digests"))
            b.digests.push_back(digest_from_hex(h.get<std::string>()));

        b.checkpoints.assign(T + 1, std::nullopt);
        const auto layout = b.aux.model.layout();
        for (const auto& tj : m.at("checkpoint_steps")) {
            const auto t = tj.get<std::size_t>();
            if (t > T) throw MalformedBundle("bundle: checkpoint step beyond T");
            WeightVector w(layout);
            w.values = read_weights(weight_file(dir, t));
            b.checkpoints[t] = std::move(w);
        }
    } catch (const json::exception& e) {
        throw MalformedBundle(std::string("bundle: manifest field error: ") + e.what());
    } catch (const ConfigError& e) {
        throw MalformedBundle(std::string("bundle: ") + e.what());
    } catch (const Error& e) {
        throw MalformedBundle(e.what());
    }

    validate_bundle(b);
    return b;
}

std::uint64_t bundle_size(const ProofBundle& b) {
    std::uint64_t bytes = manifest_json(b).dump(1).size();
    for (const auto& c : b.checkpoints)
        if (c.has_value()) bytes += 8 + 8 * c->size();
    return bytes;
}

}  // namespace pol
