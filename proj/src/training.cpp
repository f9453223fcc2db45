#include "tsdr/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

#include "tsdr/estimators.hpp"
#include "tsdr/metrics.hpp"

namespace tsdr::train {

using ad::Tape;
using ad::Value;
using models::SeqModel;

void TrainConfig::validate() const {
    if (max_len < 2) throw std::invalid_argument("train: max_len must be >= 2");
    if (min_len < 2) throw std::invalid_argument("train: min_len must be >= 2");
    if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
    if (batch_size == 0) throw std::invalid_argument("train: batch_size must be > 0");
    if (max_epochs == 0) throw std::invalid_argument("train: max_epochs must be > 0");
    if (mode != "tsdr" && mode != "naive")
        throw std::invalid_argument("train: mode must be tsdr or naive");
    if (!(lambda >= 0.0)) throw std::invalid_argument("train: lambda must be >= 0");
    if (ts_target != "imputation" && ts_target != "backbone" && ts_target != "none")
        throw std::invalid_argument("train: ts_target must be imputation, backbone or none");
    if (!(dropout >= 0.0 && dropout < 1.0))
        throw std::invalid_argument("train: dropout must be in [0,1)");
    if (!(p_min > 0.0 && p_min < 1.0))
        throw std::invalid_argument("train: p_min must be in (0,1)");
}

// --- prepared batches ----------------------------------------------------------

PreparedBatch prepare_batch(const std::vector<const data::StudentSequence*>& seqs,
                            std::size_t n_concepts) {
    PreparedBatch pb;
    pb.seq = models::build_seq_batch(seqs, n_concepts);
    const std::size_t B = pb.seq.B;
    const std::size_t C = n_concepts;

    for (std::size_t i = 0; i + 1 < pb.seq.T; ++i) {
        Matrix labels(B, C), obs(B, C);
        for (std::size_t b = 0; b < B; ++b) {
            if (pb.seq.valid[i + 1][b] != 1.0) continue; // no step i+2 for this student
            const data::Interaction& next = seqs[b]->steps[i + 1];
            labels.at(b, static_cast<std::size_t>(next.concept_id)) =
                static_cast<double>(next.response);
            obs.at(b, static_cast<std::size_t>(next.concept_id)) = 1.0;
            pb.n_obs += 1.0;
            pb.n_cells += static_cast<double>(C);
        }
        pb.labels.push_back(std::move(labels));
        pb.obs.push_back(std::move(obs));
    }
    return pb;
}

namespace {

// indicator of real grid rows, replicated across columns
Matrix row_mask(const PreparedBatch& b, std::size_t step, std::size_t cols) {
    const std::size_t B = b.seq.B;
    Matrix m(B, cols);
    for (std::size_t i = 0; i < B; ++i) {
        const double v = b.seq.valid[step + 1][i];
        for (std::size_t j = 0; j < cols; ++j) m.at(i, j) = v;
    }
    return m;
}

Value sum_steps(Tape& tape, const std::vector<Value>& terms) {
    if (terms.empty()) throw std::logic_error("sum_steps: empty");
    Value acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = tape.add(acc, terms[i]);
    return acc;
}

} // namespace

// --- loss builders ---------------------------------------------------------------

LossBuild build_naive_loss(Tape& tape, const SeqModel& backbone, const PreparedBatch& b,
                           rng::Rng* dropout_rng) {
    if (b.n_obs <= 0.0) throw std::invalid_argument("naive loss: no observed cells");
    auto enc = backbone.encode(tape, b.seq, true, dropout_rng);
    const std::vector<Value> grid = backbone.predict(tape, enc);

    std::vector<Value> terms;
    terms.reserve(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Value err = tape.bce(tape.constant(b.labels[i]), grid[i]);
        terms.push_back(tape.sum_all(tape.mul(tape.constant(b.obs[i]), err)));
    }
    const Value loss = tape.scale(sum_steps(tape, terms), 1.0 / b.n_obs);
    return LossBuild{loss, std::move(enc)};
}

LossBuild build_dr_loss(Tape& tape, const SeqModel& backbone, const PreparedBatch& b,
                        const std::vector<Matrix>& e_hat, const std::vector<Matrix>& w,
                        double smooth_weight, const std::vector<double>& col_weight,
                        rng::Rng* dropout_rng) {
    if (e_hat.size() != b.obs.size() || w.size() != b.obs.size())
        throw std::invalid_argument("dr loss: grid count mismatch");
    const std::size_t C = b.obs[0].cols;
    if (!col_weight.empty() && col_weight.size() != C)
        throw std::invalid_argument("dr loss: col_weight size mismatch");

    auto enc = backbone.encode(tape, b.seq, true, dropout_rng);
    const std::vector<Value> grid = backbone.predict(tape, enc);

    // the imputed baseline enters only as a constant: its total is a plain
    // number, and inside the correction it is a gradient-free leaf
    double ehat_total = 0.0;
    std::vector<Value> terms;
    terms.reserve(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        Matrix wi = w[i];
        if (!col_weight.empty()) {
            for (std::size_t r = 0; r < wi.rows; ++r)
                for (std::size_t c = 0; c < C; ++c) wi.at(r, c) *= col_weight[c];
        }
        for (std::size_t r = 0; r < e_hat[i].rows; ++r) {
            for (std::size_t c = 0; c < C; ++c) {
                const double cw = col_weight.empty() ? 1.0 : col_weight[c];
                ehat_total += e_hat[i].at(r, c) * cw;
            }
        }
        const Value err = tape.bce(tape.constant(b.labels[i]), grid[i]);
        const Value corr = tape.sub(err, tape.constant(e_hat[i]));
        terms.push_back(tape.sum_all(tape.mul(tape.constant(std::move(wi)), corr)));
    }
    Value loss = tape.scale(tape.add_scalar(sum_steps(tape, terms), ehat_total),
                            1.0 / b.n_cells);
    if (smooth_weight > 0.0)
        loss = tape.add(loss, tape.scale(smoothness_penalty(tape, enc), smooth_weight));
    return LossBuild{loss, std::move(enc)};
}

LossBuild build_propensity_loss(Tape& tape, const SeqModel& prop, const PreparedBatch& b,
                                rng::Rng* dropout_rng) {
    auto enc = prop.encode(tape, b.seq, true, dropout_rng);
    const std::vector<Value> logits = prop.predict_logits(tape, enc);

    std::vector<Value> terms;
    terms.reserve(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        // raw sigmoid here: the p_min clip is an inverse-weighting guard, not
        // part of the likelihood
        const Value p = tape.sigmoid(logits[i]);
        const Value err = tape.bce(tape.constant(b.obs[i]), p);
        terms.push_back(
            tape.sum_all(tape.mul(tape.constant(row_mask(b, i, b.obs[i].cols)), err)));
    }
    const Value loss = tape.scale(sum_steps(tape, terms), 1.0 / b.n_cells);
    return LossBuild{loss, std::move(enc)};
}

LossBuild build_propensity_head_loss(Tape& tape, const SeqModel& prop,
                                     const PreparedBatch& b,
                                     const std::vector<Matrix>& kt_states) {
    if (kt_states.size() != b.obs.size())
        throw std::invalid_argument("propensity head loss: state count mismatch");
    auto enc = prop.head_only(tape, b.seq, kt_states, true);
    const std::vector<Value> logits = prop.predict_logits(tape, enc);

    std::vector<Value> terms;
    terms.reserve(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const Value p = tape.sigmoid(logits[i]);
        const Value err = tape.bce(tape.constant(b.obs[i]), p);
        terms.push_back(
            tape.sum_all(tape.mul(tape.constant(row_mask(b, i, b.obs[i].cols)), err)));
    }
    const Value loss = tape.scale(sum_steps(tape, terms), 1.0 / b.n_cells);
    return LossBuild{loss, std::move(enc)};
}

LossBuild build_imputation_loss(Tape& tape, const SeqModel& imp, const PreparedBatch& b,
                                const std::vector<Matrix>& e_target,
                                const std::vector<Matrix>& w, double lambda,
                                rng::Rng* dropout_rng) {
    if (b.n_obs <= 0.0) throw std::invalid_argument("imputation loss: no observed cells");
    if (e_target.size() != b.obs.size() || w.size() != b.obs.size())
        throw std::invalid_argument("imputation loss: grid count mismatch");

    auto enc = imp.encode(tape, b.seq, true, dropout_rng);
    const std::vector<Value> grid = imp.predict(tape, enc);

    std::vector<Value> terms;
    terms.reserve(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Value resid = tape.square(tape.sub(grid[i], tape.constant(e_target[i])));
        terms.push_back(tape.sum_all(tape.mul(tape.constant(w[i]), resid)));
    }
    Value loss = tape.scale(sum_steps(tape, terms), 1.0 / b.n_obs);
    if (lambda > 0.0)
        loss = tape.add(loss, tape.scale(smoothness_penalty(tape, enc), lambda));
    return LossBuild{loss, std::move(enc)};
}

Value smoothness_penalty(Tape& tape, const SeqModel::Encoded& enc) {
    if (enc.h.empty()) throw std::invalid_argument("smoothness_penalty: empty trajectory");
    const models::SeqBatch& batch = *enc.batch;
    const std::size_t B = batch.B;
    const std::size_t d = enc.h[0].val().cols;

    // per-student 1/(T_b - 1); padded diffs are exactly zero, so one weight
    // matrix serves every step
    Matrix rw(B, d);
    for (std::size_t i = 0; i < B; ++i) {
        const std::size_t len = batch.lengths[i];
        const double wi = len >= 2 ? 1.0 / static_cast<double>(len - 1) : 0.0;
        for (std::size_t j = 0; j < d; ++j) rw.at(i, j) = wi;
    }
    const Value weights = tape.constant(std::move(rw));

    Value h_prev = tape.constant(Matrix(B, d)); // initial state: zeros
    std::vector<Value> terms;
    terms.reserve(enc.h.size());
    for (const Value h : enc.h) {
        const Value diff = tape.sub(h, h_prev);
        terms.push_back(tape.sum_all(tape.mul(weights, tape.square(diff))));
        h_prev = h;
    }
    return tape.scale(sum_steps(tape, terms), 1.0 / static_cast<double>(B));
}

// --- constant-grid forwards -------------------------------------------------------

namespace {

struct EvalForward {
    Tape tape;
    SeqModel::Encoded enc;
    std::vector<Value> grid;
};

EvalForward eval_forward(const SeqModel& m, const PreparedBatch& b) {
    EvalForward f;
    f.enc = m.encode(f.tape, b.seq, false, nullptr);
    f.grid = m.predict(f.tape, f.enc);
    return f;
}

} // namespace

std::vector<Matrix> forward_error_grids(const SeqModel& backbone, const PreparedBatch& b) {
    EvalForward f = eval_forward(backbone, b);
    std::vector<Matrix> out;
    out.reserve(f.grid.size());
    for (std::size_t i = 0; i < f.grid.size(); ++i) {
        const Matrix& pred = f.grid[i].val();
        Matrix e(pred.rows, pred.cols);
        for (std::size_t r = 0; r < pred.rows; ++r) {
            for (std::size_t c = 0; c < pred.cols; ++c) {
                if (b.obs[i].at(r, c) == 1.0) {
                    const int y = static_cast<int>(b.labels[i].at(r, c));
                    e.at(r, c) = est::bce_error(y, pred.at(r, c));
                }
            }
        }
        out.push_back(std::move(e));
    }
    return out;
}

namespace {

// head grids masked to real rows
std::vector<Matrix> masked_grids(const std::vector<Value>& grid, const PreparedBatch& b) {
    std::vector<Matrix> out;
    out.reserve(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        Matrix g = grid[i].val();
        for (std::size_t r = 0; r < g.rows; ++r) {
            if (b.seq.valid[i + 1][r] != 1.0) {
                for (std::size_t c = 0; c < g.cols; ++c) g.at(r, c) = 0.0;
            }
        }
        out.push_back(std::move(g));
    }
    return out;
}

} // namespace

std::vector<Matrix> forward_phat_grids(const SeqModel& prop, const PreparedBatch& b) {
    EvalForward f = eval_forward(prop, b);
    return masked_grids(f.grid, b);
}

std::vector<Matrix> forward_phat_from_states(const SeqModel& prop, const PreparedBatch& b,
                                             const std::vector<Matrix>& kt_states) {
    Tape tape;
    auto enc = prop.head_only(tape, b.seq, kt_states, false);
    const std::vector<Value> grid = prop.predict(tape, enc);
    return masked_grids(grid, b);
}

std::vector<Matrix> forward_ehat_grids(const SeqModel& imp, const PreparedBatch& b) {
    EvalForward f = eval_forward(imp, b);
    return masked_grids(f.grid, b);
}

std::vector<Matrix> forward_state_grids(const SeqModel& backbone, const PreparedBatch& b) {
    Tape tape;
    auto enc = backbone.encode(tape, b.seq, false, nullptr);
    std::vector<Matrix> out;
    out.reserve(enc.h.size());
    for (const Value h : enc.h) out.push_back(h.val());
    return out;
}

// --- evaluation helpers ------------------------------------------------------------

PooledPreds predict_observed(const SeqModel& m,
                             const std::vector<const data::StudentSequence*>& seqs,
                             std::size_t batch_size) {
    PooledPreds out;
    for (std::size_t start = 0; start < seqs.size(); start += batch_size) {
        const std::size_t end = std::min(seqs.size(), start + batch_size);
        std::vector<const data::StudentSequence*> chunk(seqs.begin() + start,
                                                        seqs.begin() + end);
        // drop sequences too short to predict anything
        chunk.erase(std::remove_if(chunk.begin(), chunk.end(),
                                   [](const data::StudentSequence* s) {
                                       return s->size() < 2;
                                   }),
                    chunk.end());
        if (chunk.empty()) continue;
        const PreparedBatch pb = prepare_batch(chunk, m.config().n_concepts);
        EvalForward f = eval_forward(m, pb);
        for (std::size_t i = 0; i < f.grid.size(); ++i) {
            const Matrix& pred = f.grid[i].val();
            for (std::size_t r = 0; r < pred.rows; ++r) {
                for (std::size_t c = 0; c < pred.cols; ++c) {
                    if (pb.obs[i].at(r, c) == 1.0) {
                        out.labels.push_back(static_cast<int>(pb.labels[i].at(r, c)));
                        out.scores.push_back(pred.at(r, c));
                    }
                }
            }
        }
    }
    return out;
}

double mean_squared_step(const SeqModel& m,
                         const std::vector<const data::StudentSequence*>& seqs,
                         std::size_t batch_size) {
    double total = 0.0;
    double n_diffs = 0.0;
    for (std::size_t start = 0; start < seqs.size(); start += batch_size) {
        const std::size_t end = std::min(seqs.size(), start + batch_size);
        std::vector<const data::StudentSequence*> chunk(seqs.begin() + start,
                                                        seqs.begin() + end);
        chunk.erase(std::remove_if(chunk.begin(), chunk.end(),
                                   [](const data::StudentSequence* s) {
                                       return s->size() < 2;
                                   }),
                    chunk.end());
        if (chunk.empty()) continue;
        const PreparedBatch pb = prepare_batch(chunk, m.config().n_concepts);
        Tape tape;
        auto enc = m.encode(tape, pb.seq, false, nullptr);
        const std::size_t d = m.config().dim;
        Matrix prev(pb.seq.B, d);
        for (const Value hv : enc.h) {
            const Matrix& h = hv.val();
            for (std::size_t r = 0; r < h.rows; ++r) {
                for (std::size_t c = 0; c < d; ++c) {
                    const double diff = h.at(r, c) - prev.at(r, c);
                    total += diff * diff;
                }
            }
            prev = h;
        }
        for (const std::size_t len : pb.seq.lengths)
            if (len >= 2) n_diffs += static_cast<double>(len - 1);
    }
    if (n_diffs == 0.0) throw std::invalid_argument("mean_squared_step: no trajectories");
    return total / n_diffs;
}

// --- history -----------------------------------------------------------------------

void TrainHistory::save_jsonl(const std::string& path, const std::string& run_id) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write history: " + path);
    for (const EpochStats& e : epochs) {
        nlohmann::ordered_json j;
        j["run_id"] = run_id;
        j["epoch"] = e.epoch;
        j["loss"] = e.loss_main;
        j["imp_loss"] = e.loss_imp;
        j["prop_loss"] = e.loss_prop;
        j["val_auc"] = e.val_auc;
        j["val_acc"] = e.val_acc;
        j["val_rmse"] = e.val_rmse;
        j["best"] = e.is_best;
        out << j.dump() << "\n";
    }
}

// --- training ------------------------------------------------------------------------

namespace {

std::vector<Matrix> inverse_weights(const PreparedBatch& b,
                                    const std::vector<Matrix>& phat) {
    std::vector<Matrix> w;
    w.reserve(b.obs.size());
    for (std::size_t i = 0; i < b.obs.size(); ++i) {
        Matrix wi(b.obs[i].rows, b.obs[i].cols);
        for (std::size_t r = 0; r < wi.rows; ++r) {
            for (std::size_t c = 0; c < wi.cols; ++c) {
                if (b.obs[i].at(r, c) == 1.0) {
                    const double p = phat[i].at(r, c);
                    if (!(p > 0.0))
                        throw std::runtime_error("inverse_weights: nonpositive propensity");
                    wi.at(r, c) = 1.0 / p;
                }
            }
        }
        w.push_back(std::move(wi));
    }
    return w;
}

void require_finite(double loss, const char* phase, std::size_t epoch, std::size_t batch) {
    if (!std::isfinite(loss))
        throw std::runtime_error(std::string("training diverged: non-finite ") + phase +
                                 " loss at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(batch));
}

double safe_val_auc(const PooledPreds& preds, std::ostream* log) {
    try {
        return metrics::auc(preds.labels, preds.scores);
    } catch (const std::invalid_argument&) {
        if (log != nullptr)
            *log << "warning: validation AUC undefined (single class); using 0.5\n";
        return 0.5;
    }
}

std::vector<Matrix> snapshot(const ad::ParamStore& s) { return s.values; }

void restore(ad::ParamStore& s, const std::vector<Matrix>& snap) { s.values = snap; }

} // namespace

TrainResult train(const TrainConfig& cfg,
                  const std::vector<const data::StudentSequence*>& train_seqs,
                  const std::vector<const data::StudentSequence*>& val_seqs,
                  std::size_t n_concepts, std::ostream* log) {
    cfg.validate();
    if (train_seqs.empty()) throw std::invalid_argument("train: no training sequences");
    if (val_seqs.empty()) throw std::invalid_argument("train: no validation sequences");
    for (const data::StudentSequence* s : train_seqs)
        for (const data::Interaction& it : s->steps)
            if (it.observed != 1)
                throw std::invalid_argument(
                    "train: sequences must be observed views (student " + s->student_id + ")");

    const bool is_tsdr = cfg.mode == "tsdr";
    models::ModelConfig mc;
    mc.n_concepts = n_concepts;
    mc.dim = cfg.dim;
    mc.dropout = cfg.dropout;
    mc.p_min = cfg.p_min;

    TrainResult res{
        SeqModel(mc, models::Head::Sigmoid, rng::substream_seed(cfg.seed, 101)),
        std::nullopt,
        std::nullopt,
        {},
        0.0,
        0,
        0,
    };
    if (is_tsdr) {
        res.propensity.emplace(mc, models::Head::SigmoidClipped,
                               rng::substream_seed(cfg.seed, 102));
        res.imputation.emplace(mc, models::Head::Softplus,
                               rng::substream_seed(cfg.seed, 103));
    }

    ad::Adam opt_b(res.backbone.params());
    std::optional<ad::Adam> opt_p, opt_i;
    if (is_tsdr) {
        opt_p.emplace(res.propensity->params());
        opt_i.emplace(res.imputation->params());
    }

    rng::Rng shuffle_rng = rng::Rng::substream(cfg.seed, 201);
    rng::Rng drop_b = rng::Rng::substream(cfg.seed, 202);
    rng::Rng drop_p = rng::Rng::substream(cfg.seed, 203);
    rng::Rng drop_i = rng::Rng::substream(cfg.seed, 204);
    rng::Rng concept_rng = rng::Rng::substream(cfg.seed, 205);

    const double lambda_imp = cfg.ts_target == "imputation" ? cfg.lambda : 0.0;
    const double lambda_backbone = cfg.ts_target == "backbone" ? cfg.lambda : 0.0;

    std::vector<std::size_t> order(train_seqs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    auto make_batches = [&](rng::Rng& r) {
        r.shuffle(order);
        std::vector<std::vector<const data::StudentSequence*>> batches;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<const data::StudentSequence*> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(train_seqs[order[i]]);
            batches.push_back(std::move(batch));
        }
        return batches;
    };

    auto current_phat = [&](const PreparedBatch& pb) {
        if (cfg.prop_use_kt_state)
            return forward_phat_from_states(*res.propensity, pb,
                                            forward_state_grids(res.backbone, pb));
        return forward_phat_grids(*res.propensity, pb);
    };

    // ablation arm: bring psi/omega to convergence against the initial
    // backbone, then freeze them for the main loop
    if (is_tsdr && !cfg.joint_learning) {
        rng::Rng pre_shuffle = rng::Rng::substream(cfg.seed, 206);
        rng::Rng pre_drop_p = rng::Rng::substream(cfg.seed, 207);
        rng::Rng pre_drop_i = rng::Rng::substream(cfg.seed, 208);
        double prev_loss = std::numeric_limits<double>::infinity();
        std::size_t flat_epochs = 0;
        const std::size_t pre_cap = 30;
        for (std::size_t epoch = 1; epoch <= pre_cap; ++epoch) {
            double loss_sum = 0.0;
            std::size_t n_batches = 0;
            for (const auto& batch : make_batches(pre_shuffle)) {
                const PreparedBatch pb = prepare_batch(batch, n_concepts);
                if (pb.n_obs == 0.0) continue;
                const auto e_grids = forward_error_grids(res.backbone, pb);
                const auto phat = current_phat(pb);
                const auto w = inverse_weights(pb, phat);
                {
                    Tape tape;
                    LossBuild lb = build_imputation_loss(tape, *res.imputation, pb,
                                                         e_grids, w, lambda_imp,
                                                         &pre_drop_i);
                    require_finite(lb.loss.scalar(), "pre-train imputation", epoch, n_batches);
                    loss_sum += lb.loss.scalar();
                    tape.backward(lb.loss);
                    opt_i->step(res.imputation->params(),
                                SeqModel::grads_of(tape, lb.enc), cfg.lr);
                }
                {
                    Tape tape;
                    LossBuild lb =
                        cfg.prop_use_kt_state
                            ? build_propensity_head_loss(tape, *res.propensity, pb,
                                                         forward_state_grids(res.backbone, pb))
                            : build_propensity_loss(tape, *res.propensity, pb, &pre_drop_p);
                    require_finite(lb.loss.scalar(), "pre-train propensity", epoch, n_batches);
                    loss_sum += lb.loss.scalar();
                    tape.backward(lb.loss);
                    opt_p->step(res.propensity->params(),
                                SeqModel::grads_of(tape, lb.enc), cfg.lr);
                }
                ++n_batches;
            }
            if (n_batches == 0) break;
            const double mean_loss = loss_sum / static_cast<double>(n_batches);
            if (log != nullptr)
                *log << "pretrain epoch " << epoch << " aux loss " << mean_loss << "\n";
            if (prev_loss - mean_loss < 1e-4 * std::max(1.0, std::fabs(prev_loss))) {
                if (++flat_epochs >= 3) break;
            } else {
                flat_epochs = 0;
            }
            prev_loss = mean_loss;
        }
    }

    double best_auc = -1.0;
    std::size_t since_best = 0;
    std::vector<Matrix> best_b, best_p, best_i;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        double main_sum = 0.0, imp_sum = 0.0, prop_sum = 0.0;
        std::size_t n_batches = 0, batch_no = 0;

        for (const auto& batch : make_batches(shuffle_rng)) {
            ++batch_no;
            const PreparedBatch pb = prepare_batch(batch, n_concepts);
            if (pb.n_obs == 0.0) {
                ++res.skipped_batches;
                if (log != nullptr)
                    *log << "warning: batch " << batch_no << " has no observed cells; skipped\n";
                continue;
            }

            if (!is_tsdr) {
                Tape tape;
                LossBuild lb = build_naive_loss(tape, res.backbone, pb, &drop_b);
                require_finite(lb.loss.scalar(), "naive", epoch, batch_no);
                main_sum += lb.loss.scalar();
                tape.backward(lb.loss);
                opt_b.step(res.backbone.params(), SeqModel::grads_of(tape, lb.enc), cfg.lr);
                ++n_batches;
                continue;
            }

            // constants from the current models
            const auto e_grids = forward_error_grids(res.backbone, pb);

            if (cfg.joint_learning) {
                // phase 1: imputation step against current errors and weights
                {
                    const auto phat = current_phat(pb);
                    const auto w = inverse_weights(pb, phat);
                    Tape tape;
                    LossBuild lb = build_imputation_loss(tape, *res.imputation, pb,
                                                         e_grids, w, lambda_imp, &drop_i);
                    require_finite(lb.loss.scalar(), "imputation", epoch, batch_no);
                    imp_sum += lb.loss.scalar();
                    tape.backward(lb.loss);
                    opt_i->step(res.imputation->params(),
                                SeqModel::grads_of(tape, lb.enc), cfg.lr);
                }
                // phase 2: propensity step
                {
                    Tape tape;
                    LossBuild lb =
                        cfg.prop_use_kt_state
                            ? build_propensity_head_loss(tape, *res.propensity, pb,
                                                         forward_state_grids(res.backbone, pb))
                            : build_propensity_loss(tape, *res.propensity, pb, &drop_p);
                    require_finite(lb.loss.scalar(), "propensity", epoch, batch_no);
                    prop_sum += lb.loss.scalar();
                    tape.backward(lb.loss);
                    opt_p->step(res.propensity->params(),
                                SeqModel::grads_of(tape, lb.enc), cfg.lr);
                }
            }

            // phase 3: backbone on the DR objective with fresh constants
            {
                const auto phat = current_phat(pb);
                const auto w = inverse_weights(pb, phat);
                const auto ehat = forward_ehat_grids(*res.imputation, pb);

                std::vector<double> col_weight;
                if (cfg.dr_concept_sample > 0 && cfg.dr_concept_sample < n_concepts) {
                    std::vector<std::size_t> cols(n_concepts);
                    for (std::size_t i = 0; i < cols.size(); ++i) cols[i] = i;
                    concept_rng.shuffle(cols);
                    col_weight.assign(n_concepts, 0.0);
                    const double rescale = static_cast<double>(n_concepts) /
                                           static_cast<double>(cfg.dr_concept_sample);
                    for (std::size_t i = 0; i < cfg.dr_concept_sample; ++i)
                        col_weight[cols[i]] = rescale;
                }

                Tape tape;
                LossBuild lb = build_dr_loss(tape, res.backbone, pb, ehat, w,
                                             lambda_backbone, col_weight, &drop_b);
                require_finite(lb.loss.scalar(), "dr", epoch, batch_no);
                main_sum += lb.loss.scalar();
                tape.backward(lb.loss);
                opt_b.step(res.backbone.params(), SeqModel::grads_of(tape, lb.enc), cfg.lr);
            }
            ++n_batches;
        }

        if (n_batches == 0)
            throw std::runtime_error("train: every batch was skipped (no observed cells)");

        const PooledPreds val = predict_observed(res.backbone, val_seqs, cfg.batch_size);
        if (val.labels.empty()) throw std::runtime_error("train: empty validation predictions");

        EpochStats st;
        st.epoch = epoch;
        st.loss_main = main_sum / static_cast<double>(n_batches);
        st.loss_imp = is_tsdr && cfg.joint_learning
                          ? imp_sum / static_cast<double>(n_batches)
                          : 0.0;
        st.loss_prop = is_tsdr && cfg.joint_learning
                           ? prop_sum / static_cast<double>(n_batches)
                           : 0.0;
        st.val_auc = safe_val_auc(val, log);
        st.val_acc = metrics::accuracy(val.labels, val.scores);
        st.val_rmse = metrics::rmse(val.labels, val.scores);

        if (st.val_auc > best_auc) {
            best_auc = st.val_auc;
            res.best_epoch = epoch;
            since_best = 0;
            st.is_best = true;
            best_b = snapshot(res.backbone.params());
            if (is_tsdr) {
                best_p = snapshot(res.propensity->params());
                best_i = snapshot(res.imputation->params());
            }
        } else {
            ++since_best;
        }
        res.history.epochs.push_back(st);

        if (log != nullptr) {
            *log << "epoch " << epoch << " loss " << st.loss_main << " val_auc "
                 << st.val_auc << (st.is_best ? " *" : "") << "\n";
        }
        if (since_best >= cfg.patience) break;
    }

    res.best_val_auc = best_auc;
    restore(res.backbone.params(), best_b);
    if (is_tsdr) {
        restore(res.propensity->params(), best_p);
        restore(res.imputation->params(), best_i);
    }
    return res;
}

} // namespace tsdr::train
