#include "ordiformer/inference.hpp"

#include "ordiformer/metrics.hpp"
#include "ordiformer/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

namespace ordiformer {

std::string TtaView::name() const {
    std::string out = flip ? "hflip" : "";
    if (angle != 0.0f) {
        std::ostringstream os;
        os << (out.empty() ? "" : "+") << "rot" << (angle > 0.0f ? "+" : "-") << std::abs(angle);
        out += os.str();
    }
    return out.empty() ? "identity" : out;
}

Image TtaView::apply(const Image& image) const {
    Image out = flip ? hflip(image) : image;
    return rotate(out, angle);
}

TtaView parse_tta_view(const std::string& s) {
    if (s == "identity") return {};
    if (s == "hflip") return {true, 0.0f};
    if (s.size() > 4 && s.rfind("rot", 0) == 0 && (s[3] == '+' || s[3] == '-')) {
        float deg = 0.0f;
        const char* first = s.data() + 4;
        const char* last = s.data() + s.size();
        auto [ptr, ec] = std::from_chars(first, last, deg);
        if (ec == std::errc() && ptr == last && deg > 0.0f) return {false, s[3] == '+' ? deg : -deg};
    }
    throw ConfigError("unknown TTA view '" + s + "' (expected identity|hflip|rot+<deg>|rot-<deg>)");
}

TtaPolicy TtaPolicy::standard() { return TtaPolicy{{{}, {true, 0.0f}, {false, 10.0f}, {false, -10.0f}}}; }

TtaPolicy TtaPolicy::identity_only() { return TtaPolicy{{{}}}; }

void TtaPolicy::validate() const {
    if (std::find(views.begin(), views.end(), TtaView{}) == views.end()) {
        throw ConfigError("TTA policy must include the identity view");
    }
}

std::vector<std::string> TtaPolicy::names() const {
    std::vector<std::string> out;
    for (const auto& v : views) out.push_back(v.name());
    return out;
}

CombineMode parse_combine_mode(const std::string& s) {
    if (s == "logit_mean") return CombineMode::logit_mean;
    if (s == "majority_vote") return CombineMode::majority_vote;
    throw ConfigError("unknown combine mode '" + s + "' (expected logit_mean|majority_vote)");
}

std::string to_string(CombineMode m) { return m == CombineMode::logit_mean ? "logit_mean" : "majority_vote"; }

void TauGrid::validate() const {
    if (!(lo < hi) || !(step > 0.0)) throw ConfigError("tau grid: need lo < hi and step > 0");
    if (lo <= 0.0 || hi >= 1.0) throw ConfigError("tau grid: bounds must lie inside (0, 1)");
}

std::vector<double> TauGrid::points() const {
    validate();
    const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
    std::vector<double> out;
    for (long i = 0; i <= n; ++i) out.push_back(std::round((lo + static_cast<double>(i) * step) * 1e9) / 1e9);
    return out;
}

Matrix mean_logits(std::span<const Matrix> per_member) {
    if (per_member.empty()) throw ConfigError("mean_logits: no members");
    Eigen::MatrixXd acc = per_member.front().cast<double>();
    for (std::size_t i = 1; i < per_member.size(); ++i) {
        if (per_member[i].rows() != acc.rows() || per_member[i].cols() != acc.cols()) {
            throw ConfigError("mean_logits: member output shapes differ");
        }
        acc += per_member[i].cast<double>();
    }
    return (acc / static_cast<double>(per_member.size())).cast<float>();
}

Matrix tta_logits(Model& model, std::span<const Image> images, const TtaPolicy& policy) {
    policy.validate();
    constexpr std::size_t kChunk = 64;
    std::vector<Matrix> per_view;
    for (const auto& view : policy.views) {
        Matrix logits(static_cast<Eigen::Index>(images.size()), model.num_outputs());
        for (std::size_t start = 0; start < images.size(); start += kChunk) {
            const std::size_t count = std::min(kChunk, images.size() - start);
            std::vector<Image> batch;
            for (std::size_t i = start; i < start + count; ++i) batch.push_back(view.apply(images[i]));
            logits.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) =
                model.predict_logits(batch);
        }
        per_view.push_back(std::move(logits));
    }
    return mean_logits(per_view);
}

RowVector tta_logits(Model& model, const Image& image, const TtaPolicy& policy) {
    return tta_logits(model, std::span<const Image>(&image, 1), policy).row(0);
}

Matrix ensemble_logits(std::span<Model* const> members, std::span<const Image> images, const TtaPolicy& policy) {
    if (members.empty()) throw ConfigError("ensemble: no members");
    const auto& ref = members.front()->config();
    std::vector<Matrix> per_member;
    for (Model* m : members) {
        const auto& c = m->config();
        if (c.num_grades != ref.num_grades || c.head != ref.head || c.image_height() != ref.image_height() ||
            c.image_width() != ref.image_width() || m->num_outputs() != members.front()->num_outputs()) {
            throw ConfigError("ensemble: members disagree on grades, head mode or input geometry");
        }
        per_member.push_back(tta_logits(*m, images, policy));
    }
    return mean_logits(per_member);
}

RowVector ensemble_logits(std::span<Model* const> members, const Image& image, const TtaPolicy& policy) {
    return ensemble_logits(members, std::span<const Image>(&image, 1), policy).row(0);
}

int majority_vote(std::span<const int> votes) {
    if (votes.empty()) throw InputError("majority_vote: no votes");
    std::map<int, int> tally;
    for (int v : votes) ++tally[v];
    int best = tally.begin()->first;
    int best_count = 0;
    for (const auto& [grade, count] : tally) {
        if (count > best_count) {
            best = grade;
            best_count = count;
        }
    }
    return best;
}

TauResult tune_tau(const Matrix& val_logits, std::span<const int> val_labels, const TauGrid& grid) {
    if (val_logits.rows() == 0) throw InputError("tune_tau: empty validation set");
    if (static_cast<Eigen::Index>(val_labels.size()) != val_logits.rows()) {
        throw InputError("tune_tau: label count differs from logit rows");
    }
    const int k = static_cast<int>(val_logits.cols()) + 1;
    Matrix probs = val_logits.unaryExpr(
        [](float z) { return z >= 0.0f ? 1.0f / (1.0f + std::exp(-z)) : std::exp(z) / (1.0f + std::exp(z)); });
    TauResult best;
    bool first = true;
    std::vector<int> pred(val_labels.size());
    for (double tau : grid.points()) {
        for (Eigen::Index i = 0; i < probs.rows(); ++i) pred[static_cast<std::size_t>(i)] = decode(probs.row(i), tau);
        const double f1 = macro_f1(val_labels, pred, k);
        if (first || f1 > best.macro_f1) {
            best = {tau, f1};
            first = false;
        }
    }
    return best;
}

Matrix class_distributions(const Matrix& logits, HeadMode mode) {
    Tape tape;
    Tensor z = tape.constant(logits);
    if (mode == HeadMode::ce) return softmax(z, 1).value();
    Matrix out(logits.rows(), logits.cols() + 1);
    const Matrix probs = sigmoid(z).value();
    for (Eigen::Index i = 0; i < logits.rows(); ++i) out.row(i) = coral_probs_to_class_dist(probs.row(i));
    return out;
}

std::string logit_dump_csv(std::span<const std::string> ids, std::span<const int> labels, const Matrix& logits) {
    if (ids.size() != labels.size() || static_cast<Eigen::Index>(ids.size()) != logits.rows()) {
        throw InputError("logit dump: ids, labels and logits disagree in length");
    }
    std::ostringstream os;
    os.precision(9);
    os << "id,label";
    for (Eigen::Index k = 0; k < logits.cols(); ++k) os << ",z" << k;
    os << '\n';
    for (std::size_t i = 0; i < ids.size(); ++i) {
        os << ids[i] << ',' << labels[i];
        for (Eigen::Index k = 0; k < logits.cols(); ++k) os << ',' << logits(static_cast<Eigen::Index>(i), k);
        os << '\n';
    }
    return os.str();
}

LogitDump parse_logit_dump_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("id,label", 0) != 0) throw InputError("logit dump: bad header");
    const auto cols = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',')) - 1;
    if (cols < 1) throw InputError("logit dump: no logit columns");
    LogitDump d;
    std::vector<std::vector<float>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::getline(ls, cell, ',');
        d.ids.push_back(cell);
        std::getline(ls, cell, ',');
        d.labels.push_back(std::stoi(cell));
        std::vector<float> z;
        while (std::getline(ls, cell, ',')) z.push_back(std::stof(cell));
        if (static_cast<Eigen::Index>(z.size()) != cols) throw InputError("logit dump: ragged row for " + d.ids.back());
        rows.push_back(std::move(z));
    }
    d.logits.resize(static_cast<Eigen::Index>(rows.size()), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (Eigen::Index k = 0; k < cols; ++k) d.logits(static_cast<Eigen::Index>(i), k) = rows[i][static_cast<std::size_t>(k)];
    }
    return d;
}

}  // namespace ordiformer
