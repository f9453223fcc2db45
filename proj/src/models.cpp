#include "tsdr/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace tsdr::models {

using ad::Tape;
using ad::Value;

void ModelConfig::validate() const {
    if (n_concepts == 0) throw std::invalid_argument("model: n_concepts must be > 0");
    if (dim == 0) throw std::invalid_argument("model: dim must be > 0");
    if (!(dropout >= 0.0 && dropout < 1.0))
        throw std::invalid_argument("model: dropout must be in [0,1)");
    if (!(p_min > 0.0 && p_min < 1.0))
        throw std::invalid_argument("model: p_min must be in (0,1)");
}

SeqBatch build_seq_batch(const std::vector<const data::StudentSequence*>& seqs,
                         std::size_t n_concepts) {
    if (seqs.empty()) throw std::invalid_argument("build_seq_batch: empty batch");
    SeqBatch b;
    b.B = seqs.size();
    for (const data::StudentSequence* s : seqs) {
        b.lengths.push_back(s->size());
        b.T = std::max(b.T, s->size());
    }
    if (b.T < 2)
        throw std::invalid_argument("build_seq_batch: need at least one length-2 sequence");

    b.embed_idx.assign(b.T, std::vector<std::uint32_t>(b.B, 0));
    b.valid.assign(b.T, std::vector<double>(b.B, 0.0));
    for (std::size_t i = 0; i < b.B; ++i) {
        const data::StudentSequence& s = *seqs[i];
        for (std::size_t t = 0; t < s.size(); ++t) {
            const data::Interaction& it = s.steps[t];
            if (static_cast<std::size_t>(it.concept_id) >= n_concepts)
                throw std::invalid_argument("build_seq_batch: concept_id out of range");
            b.embed_idx[t][i] = static_cast<std::uint32_t>(
                static_cast<std::size_t>(it.concept_id) +
                static_cast<std::size_t>(it.response) * n_concepts);
            b.valid[t][i] = 1.0;
        }
    }
    return b;
}

SeqModel::SeqModel(ModelConfig cfg, Head head, std::uint64_t init_seed)
    : cfg_(cfg), head_(head) {
    cfg_.validate();
    const std::size_t d = cfg_.dim;
    const std::size_t C = cfg_.n_concepts;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));

    rng::Rng rng = rng::Rng::substream(init_seed, 0x90DE1u);
    auto init = [&](std::size_t r, std::size_t c) {
        Matrix m(r, c);
        for (double& x : m.data) x = rng.uniform(-bound, bound);
        return m;
    };

    embed_ = params_.add("embed", init(2 * C, d));
    wz_ = params_.add("cell.wz", init(d, d));
    uz_ = params_.add("cell.uz", init(d, d));
    bz_ = params_.add("cell.bz", init(1, d));
    wr_ = params_.add("cell.wr", init(d, d));
    ur_ = params_.add("cell.ur", init(d, d));
    br_ = params_.add("cell.br", init(1, d));
    wn_ = params_.add("cell.wn", init(d, d));
    un_ = params_.add("cell.un", init(d, d));
    bn_ = params_.add("cell.bn", init(1, d));
    wout_ = params_.add("head.w", init(d, C));
    bout_ = params_.add("head.b", init(1, C));
}

Value SeqModel::apply_head(Tape& tape, Value logits) const {
    switch (head_) {
    case Head::Sigmoid:
        return tape.sigmoid(logits);
    case Head::SigmoidClipped:
        return tape.clamp(tape.sigmoid(logits), cfg_.p_min, 1.0);
    case Head::Softplus:
        return tape.softplus(logits);
    }
    throw std::logic_error("apply_head: unknown head");
}

SeqModel::Encoded SeqModel::encode(Tape& tape, const SeqBatch& batch, bool trainable,
                                   rng::Rng* dropout_rng) const {
    if (batch.B == 0 || batch.T < 2)
        throw std::invalid_argument("encode: batch must hold sequences of length >= 2");

    Encoded enc;
    enc.batch = &batch;
    enc.leaves.reserve(params_.size());
    for (const Matrix& p : params_.values)
        enc.leaves.push_back(tape.leaf(p, trainable));

    const Value E = enc.leaves[embed_];
    const Value Wz = enc.leaves[wz_], Uz = enc.leaves[uz_], Bz = enc.leaves[bz_];
    const Value Wr = enc.leaves[wr_], Ur = enc.leaves[ur_], Br = enc.leaves[br_];
    const Value Wn = enc.leaves[wn_], Un = enc.leaves[un_], Bn = enc.leaves[bn_];

    const std::size_t B = batch.B;
    const std::size_t d = cfg_.dim;

    Value h = tape.constant(Matrix(B, d)); // initial state: zeros
    for (std::size_t t = 0; t + 1 < batch.T; ++t) {
        Value x = tape.select_rows(E, batch.embed_idx[t]);
        if (dropout_rng != nullptr && cfg_.dropout > 0.0) {
            // inverted dropout; mask drawn even for padded rows to keep the
            // stream layout independent of batch composition
            Matrix mask(B, d);
            const double keep = 1.0 - cfg_.dropout;
            for (double& m : mask.data)
                m = dropout_rng->bernoulli(keep) ? 1.0 / keep : 0.0;
            x = tape.mul(x, tape.constant(std::move(mask)));
        }

        const Value z = tape.sigmoid(tape.add_rowvec(
            tape.add(tape.matmul(x, Wz), tape.matmul(h, Uz)), Bz));
        const Value r = tape.sigmoid(tape.add_rowvec(
            tape.add(tape.matmul(x, Wr), tape.matmul(h, Ur)), Br));
        const Value n = tape.tanh_(tape.add_rowvec(
            tape.add(tape.matmul(x, Wn), tape.matmul(tape.mul(r, h), Un)), Bn));
        // h' = h + z*(n - h)
        Value h_new = tape.add(h, tape.mul(z, tape.sub(n, h)));

        // the state advances only when a next step exists to predict, so each
        // student ends with exactly length-1 state transitions
        bool any_pad = false;
        for (const double v : batch.valid[t + 1])
            if (v == 0.0) { any_pad = true; break; }
        if (any_pad) {
            Matrix keep(B, d), hold(B, d);
            for (std::size_t i = 0; i < B; ++i) {
                const double v = batch.valid[t + 1][i];
                for (std::size_t j = 0; j < d; ++j) {
                    keep.at(i, j) = v;
                    hold.at(i, j) = 1.0 - v;
                }
            }
            h_new = tape.add(tape.mul(h_new, tape.constant(std::move(keep))),
                             tape.mul(h, tape.constant(std::move(hold))));
        }
        h = h_new;
        enc.h.push_back(h);
    }
    return enc;
}

std::vector<Value> SeqModel::predict(Tape& tape, const Encoded& enc) const {
    const Value Wout = enc.leaves[wout_];
    const Value Bout = enc.leaves[bout_];
    std::vector<Value> grid;
    grid.reserve(enc.h.size());
    for (const Value h : enc.h)
        grid.push_back(apply_head(tape, tape.add_rowvec(tape.matmul(h, Wout), Bout)));
    return grid;
}

std::vector<Value> SeqModel::predict_logits(Tape& tape, const Encoded& enc) const {
    const Value Wout = enc.leaves[wout_];
    const Value Bout = enc.leaves[bout_];
    std::vector<Value> grid;
    grid.reserve(enc.h.size());
    for (const Value h : enc.h)
        grid.push_back(tape.add_rowvec(tape.matmul(h, Wout), Bout));
    return grid;
}

SeqModel::Encoded SeqModel::head_only(Tape& tape, const SeqBatch& batch,
                                      const std::vector<Matrix>& states,
                                      bool trainable) const {
    if (states.size() + 1 != batch.T)
        throw std::invalid_argument("head_only: need one state per prediction step");
    Encoded enc;
    enc.batch = &batch;
    enc.leaves.reserve(params_.size());
    for (const Matrix& p : params_.values) enc.leaves.push_back(tape.leaf(p, trainable));
    for (const Matrix& s : states) {
        if (s.rows != batch.B || s.cols != cfg_.dim)
            throw std::invalid_argument("head_only: state shape mismatch");
        enc.h.push_back(tape.constant(s));
    }
    return enc;
}

std::vector<std::vector<double>> SeqModel::counterfactual_rows(
    const data::StudentSequence& timeline) const {
    const std::size_t T = timeline.size();
    if (T < 2) throw std::invalid_argument("counterfactual_rows: need length >= 2");
    const std::size_t C = cfg_.n_concepts;
    const std::size_t d = cfg_.dim;

    Tape tape;
    std::vector<Value> leaves;
    leaves.reserve(params_.size());
    for (const Matrix& p : params_.values) leaves.push_back(tape.leaf(p, false));
    const Value E = leaves[embed_];
    const Value Wz = leaves[wz_], Uz = leaves[uz_], Bz = leaves[bz_];
    const Value Wr = leaves[wr_], Ur = leaves[ur_], Br = leaves[br_];
    const Value Wn = leaves[wn_], Un = leaves[un_], Bn = leaves[bn_];
    const Value Wout = leaves[wout_], Bout = leaves[bout_];

    Value h = tape.constant(Matrix(1, d));
    std::vector<std::vector<double>> rows;
    rows.reserve(T - 1);
    for (std::size_t i = 0; i + 1 < T; ++i) {
        const data::Interaction& it = timeline.steps[i];
        if (it.observed == 1) {
            const std::uint32_t idx = static_cast<std::uint32_t>(
                static_cast<std::size_t>(it.concept_id) +
                static_cast<std::size_t>(it.response) * C);
            const Value x = tape.select_rows(E, {idx});
            const Value z = tape.sigmoid(tape.add_rowvec(
                tape.add(tape.matmul(x, Wz), tape.matmul(h, Uz)), Bz));
            const Value r = tape.sigmoid(tape.add_rowvec(
                tape.add(tape.matmul(x, Wr), tape.matmul(h, Ur)), Br));
            const Value n = tape.tanh_(tape.add_rowvec(
                tape.add(tape.matmul(x, Wn), tape.matmul(tape.mul(r, h), Un)), Bn));
            h = tape.add(h, tape.mul(z, tape.sub(n, h)));
        }
        const Value y = apply_head(tape, tape.add_rowvec(tape.matmul(h, Wout), Bout));
        rows.push_back(y.val().data);
    }
    return rows;
}

std::vector<const Matrix*> SeqModel::grads_of(Tape& tape, const Encoded& enc) {
    std::vector<const Matrix*> out;
    out.reserve(enc.leaves.size());
    for (const Value v : enc.leaves) out.push_back(&tape.grad(v));
    return out;
}

// --- checkpoints -------------------------------------------------------------

namespace {
using ojson = nlohmann::ordered_json;
using json = nlohmann::json;
} // namespace

void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& models,
                     const std::string& config_hash, const std::string& meta_json) {
    ojson j;
    j["format_version"] = 1;
    j["config_hash"] = config_hash;
    j["meta"] = meta_json.empty() ? json::object() : json::parse(meta_json);
    ojson jm = ojson::object();
    for (const CheckpointEntry& entry : models) {
        ojson params = ojson::array();
        const ad::ParamStore& store = *entry.store;
        for (std::size_t i = 0; i < store.size(); ++i) {
            ojson p;
            p["name"] = store.names[i];
            p["rows"] = store.values[i].rows;
            p["cols"] = store.values[i].cols;
            p["data"] = store.values[i].data;
            params.push_back(std::move(p));
        }
        jm[entry.name] = std::move(params);
    }
    j["models"] = std::move(jm);

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << j.dump(2) << "\n";
}

std::string load_checkpoint(const std::string& path,
                            const std::vector<std::pair<std::string, ad::ParamStore*>>& models,
                            std::string* config_hash) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
    json j = json::parse(in);
    if (!j.contains("format_version") || j["format_version"].get<int>() != 1)
        throw std::runtime_error("checkpoint: unsupported format in " + path);
    if (config_hash != nullptr) *config_hash = j.value("config_hash", "");

    const json& jm = j.at("models");
    for (const auto& [name, store] : models) {
        if (!jm.contains(name))
            throw std::runtime_error("checkpoint: missing model '" + name + "' in " + path);
        const json& params = jm.at(name);
        if (params.size() != store->size())
            throw std::runtime_error("checkpoint: parameter count mismatch for '" + name + "'");
        for (std::size_t i = 0; i < store->size(); ++i) {
            const json& p = params.at(i);
            if (p.at("name").get<std::string>() != store->names[i])
                throw std::runtime_error("checkpoint: parameter order mismatch at '" +
                                         store->names[i] + "'");
            const std::size_t rows = p.at("rows").get<std::size_t>();
            const std::size_t cols = p.at("cols").get<std::size_t>();
            if (rows != store->values[i].rows || cols != store->values[i].cols)
                throw std::runtime_error("checkpoint: shape mismatch at '" +
                                         store->names[i] + "'");
            std::vector<double> data = p.at("data").get<std::vector<double>>();
            if (data.size() != rows * cols)
                throw std::runtime_error("checkpoint: data size mismatch at '" +
                                         store->names[i] + "'");
            store->values[i].data = std::move(data);
        }
    }
    return j.contains("meta") ? j["meta"].dump() : std::string("{}");
}

} // namespace tsdr::models
