#include "nlicheck/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "nlicheck/errors.hpp"

namespace nli {

using json = nlohmann::json;

Adam::Adam(std::vector<std::pair<std::string, Parameter<float>*>>& params,
           AdamConfig cfg)
    : cfg_(cfg) {
    for (auto& [name, p] : params) {
        m_.emplace_back(p->value.shape);
        v_.emplace_back(p->value.shape);
    }
}

void Adam::step(std::vector<std::pair<std::string, Parameter<float>*>>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter<float>& p = *params[pi].second;
        if (!p.trainable) continue;
        float* w = p.value.data.data();
        const float* g = p.grad.data.data();
        float* m = m_[pi].data.data();
        float* v = v_[pi].data.data();
        const std::size_t n = p.count();
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = static_cast<float>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i]);
            v[i] = static_cast<float>(cfg_.beta2 * v[i] +
                                      (1.0 - cfg_.beta2) * double(g[i]) * double(g[i]));
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= static_cast<float>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
    }
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (adam.lr <= 0) throw ConfigError("learning rate must be positive");
}

std::string history_to_jsonl(const TrainHistory& h) {
    std::ostringstream os;
    for (const EpochMetrics& e : h) {
        json j;
        j["epoch"] = e.epoch;
        j["train_loss"] = e.train_loss;
        j["train_accuracy"] = e.train_accuracy;
        j["val_loss"] = e.val_loss;
        j["val_accuracy"] = e.val_accuracy;
        j["seconds"] = e.seconds;
        os << j.dump() << '\n';
    }
    return os.str();
}

EvalResult evaluate(Model<float>& model, const std::vector<NliExample>& dataset,
                    const Vocabulary& vocab, std::size_t batch_size) {
    if (dataset.empty()) throw DataError("evaluate: empty dataset");
    EvalResult r;
    double loss_sum = 0.0;
    // unshuffled deterministic batches: encode in dataset order
    for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, dataset.size() - start);
        std::vector<EncodedPair> pairs;
        std::vector<int> labels;
        for (std::size_t i = 0; i < n; ++i) {
            pairs.push_back(
                encode_example(dataset[start + i], vocab, model.config.max_len));
            labels.push_back(dataset[start + i].label);
        }
        PairBatch batch = PairBatch::from_pairs(pairs, model.config.max_len);
        Tensor<float> probs = model.forward(batch, false, nullptr, nullptr);
        loss_sum += static_cast<double>(cross_entropy(probs, labels)) *
                    static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t pred = 0;
            for (std::size_t j = 1; j < 3; ++j)
                if (probs.at(i, j) > probs.at(i, pred)) pred = j;
            r.confusion[static_cast<std::size_t>(labels[i])][pred] += 1;
            if (static_cast<int>(pred) == labels[i]) r.accuracy += 1.0;
        }
        r.count += n;
    }
    r.accuracy /= static_cast<double>(r.count);
    r.mean_loss = loss_sum / static_cast<double>(r.count);
    return r;
}

TrainResult train(Model<float>& model, const std::vector<NliExample>& train_set,
                  const std::vector<NliExample>& val_set, const Vocabulary& vocab,
                  const TrainConfig& config) {
    config.validate();
    if (train_set.empty()) throw DataError("train: empty training set");
    auto& params = model.parameters();
    Adam opt(params, config.adam);
    SeededRng dropout_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

    TrainResult result;
    result.best_val_accuracy = -1.0;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::uint64_t shuffle_seed =
            config.seed + 0x100000001b3ULL * static_cast<std::uint64_t>(epoch);
        std::vector<PairBatch> batches = make_batches(
            train_set, vocab, config.batch_size, config.max_len, shuffle_seed);
        double loss_sum = 0.0;
        std::size_t correct = 0, seen = 0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            PairBatch& batch = batches[bi];
            model.zero_grads();
            ForwardCache<float> cache;
            Tensor<float> probs = model.forward(batch, true, &dropout_rng, &cache);
            Tensor<float> dlogits;
            const float loss = cross_entropy(probs, batch.labels, &dlogits);
            if (!std::isfinite(loss)) {
                float max_grad = 0.f;
                for (auto& [name, p] : params)
                    for (float g : p->grad.data)
                        max_grad = std::max(max_grad, std::abs(g));
                throw NumericError("NaN loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(bi) +
                                   ", max |grad| " + std::to_string(max_grad));
            }
            model.backward(dlogits, cache);
            opt.step(params);
            loss_sum += static_cast<double>(loss) * static_cast<double>(batch.size);
            for (std::size_t i = 0; i < batch.size; ++i) {
                std::size_t pred = 0;
                for (std::size_t j = 1; j < 3; ++j)
                    if (probs.at(i, j) > probs.at(i, pred)) pred = j;
                if (static_cast<int>(pred) == batch.labels[i]) ++correct;
            }
            seen += batch.size;
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = loss_sum / static_cast<double>(seen);
        m.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
        if (!val_set.empty()) {
            EvalResult ev = evaluate(model, val_set, vocab, config.batch_size);
            m.val_loss = ev.mean_loss;
            m.val_accuracy = ev.accuracy;
        }
        m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                        .count();
        result.history.push_back(m);
        if (config.verbose)
            std::cerr << "epoch " << epoch << ": train_loss=" << m.train_loss
                      << " train_acc=" << m.train_accuracy
                      << " val_acc=" << m.val_accuracy << " (" << m.seconds << "s)\n";

        const double tracked = val_set.empty() ? m.train_accuracy : m.val_accuracy;
        if (tracked > result.best_val_accuracy) {
            result.best_val_accuracy = tracked;
            result.best_epoch = epoch;
            result.best_parameters.clear();
            for (auto& [name, p] : params) result.best_parameters.push_back(p->value);
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i)
        params[i].second->value = result.best_parameters[i];
    return result;
}

// ---------------------------------------------------------------------------
// checkpointing
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[5] = {'P', 'L', 'N', 'S', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
    // little-endian
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff),
                 static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw FormatError("checkpoint truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

json config_to_json(const ModelConfig& c) {
    json j;
    j["design"] = c.design;
    j["embed_dim"] = c.embed_dim;
    j["translate_dim"] = c.translate_dim;
    j["dense_dims"] = c.dense_dims;
    j["num_classes"] = c.num_classes;
    j["dropout_rate"] = c.dropout_rate;
    j["bilstm_units"] = c.bilstm_units;
    j["max_len"] = c.max_len;
    j["embedding_trainable"] = c.embedding_trainable;
    j["vocab_size"] = c.vocab_size;
    return j;
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.design = j.at("design").get<int>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.translate_dim = j.at("translate_dim").get<std::size_t>();
    c.dense_dims = j.at("dense_dims").get<std::vector<std::size_t>>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.bilstm_units = j.at("bilstm_units").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.embedding_trainable = j.at("embedding_trainable").get<bool>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    return c;
}

std::uint64_t fnv1a_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (f) {
        f.read(buf, sizeof(buf));
        const std::streamsize n = f.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

}  // namespace

void save_checkpoint(Model<float>& model, std::uint64_t vocab_hash,
                     const std::string& path) {
    auto& params = model.parameters();
    json header;
    header["config"] = config_to_json(model.config);
    header["vocab_hash"] = hex64(vocab_hash);
    header["class_order"] = std::vector<std::string>(class_order().begin(),
                                                    class_order().end());
    json plist = json::array();
    for (auto& [name, p] : params) {
        json pj;
        pj["name"] = name;
        pj["shape"] = p->value.shape;
        pj["trainable"] = p->trainable;
        plist.push_back(pj);
    }
    header["params"] = plist;
    const std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint to " + path);
    f.write(kMagic, 5);
    put_u32(f, static_cast<std::uint32_t>(hs.size()));
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (auto& [name, p] : params) {
        put_u32(f, static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(f, static_cast<std::uint32_t>(p->value.shape.size()));
        for (std::size_t d : p->value.shape) put_u32(f, static_cast<std::uint32_t>(d));
        f.write(reinterpret_cast<const char*>(p->value.data.data()),
                static_cast<std::streamsize>(p->value.data.size() * sizeof(float)));
    }
    if (!f) throw IoError("write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path);
    char magic[5];
    f.read(magic, 5);
    if (!f || std::memcmp(magic, kMagic, 5) != 0)
        throw FormatError(path + ": bad checkpoint magic");
    const std::uint32_t hlen = get_u32(f);
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    if (!f) throw FormatError(path + ": truncated header");
    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw FormatError(path + ": bad header json: " + e.what());
    }

    LoadedCheckpoint out;
    out.model.config = config_from_json(header.at("config"));
    out.model.config.validate();
    out.vocab_hash =
        std::stoull(header.at("vocab_hash").get<std::string>(), nullptr, 16);
    Model<float>::build_layers(out.model);
    auto& params = out.model.parameters();
    const json& plist = header.at("params");
    if (plist.size() != params.size())
        throw FormatError(path + ": parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::uint32_t nlen = get_u32(f);
        std::string name(nlen, '\0');
        f.read(name.data(), nlen);
        const std::uint32_t rank = get_u32(f);
        std::vector<std::size_t> shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) shape[d] = get_u32(f);
        if (name != params[i].first || shape != params[i].second->value.shape)
            throw FormatError(path + ": unexpected parameter '" + name + "'");
        params[i].second->trainable = plist[i].value("trainable", true);
        f.read(reinterpret_cast<char*>(params[i].second->value.data.data()),
               static_cast<std::streamsize>(params[i].second->value.data.size() *
                                            sizeof(float)));
        if (!f) throw FormatError(path + ": truncated parameter data");
    }
    out.model_id = hex64(fnv1a_file(path));
    return out;
}

LoadedCheckpoint load_checkpoint(const std::string& path,
                                 std::uint64_t expected_vocab_hash) {
    LoadedCheckpoint c = load_checkpoint(path);
    if (c.vocab_hash != expected_vocab_hash)
        throw CompatibilityError(path + ": checkpoint vocabulary hash " +
                                 hex64(c.vocab_hash) + " does not match supplied " +
                                 hex64(expected_vocab_hash));
    return c;
}

}  // namespace nli
