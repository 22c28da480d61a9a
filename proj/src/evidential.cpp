#include "eviseg/evidential.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "eviseg/special.hpp"
#include "eviseg/tensor_io.hpp"

namespace eviseg {

Tensor evidence_from_logits(const Tensor& logits) {
    if (logits.rank() != 4) {
        throw std::invalid_argument("evidence_from_logits: expected [N,C,H,W], got " +
                                    shape_str(logits.shape()));
    }
    return softplus(logits);
}

Opinion opinion_from_evidence(const Tensor& evidence, std::size_t num_classes) {
    if (evidence.rank() != 4 || evidence.dim(1) != num_classes) {
        throw std::invalid_argument("opinion_from_evidence: evidence shape " +
                                    shape_str(evidence.shape()) + " does not carry " +
                                    std::to_string(num_classes) + " classes");
    }
    if (num_classes < 2) {
        throw std::invalid_argument("opinion_from_evidence: need at least 2 classes");
    }
    for (double e : evidence.values()) {
        if (e < 0.0) throw std::invalid_argument("opinion_from_evidence: negative evidence");
    }

    Opinion op;
    op.num_classes = num_classes;
    op.evidence = evidence;
    op.alpha = evidence + 1.0;
    op.strength = sum_channels(op.alpha);
    Tensor strength_c = repeat_channels(op.strength, num_classes);
    op.belief = (op.alpha - 1.0) / strength_c;
    op.uncertainty = div(Tensor::full(op.strength.shape(), static_cast<double>(num_classes)),
                         op.strength);
    op.projected_prob =
        op.belief + repeat_channels(op.uncertainty * (1.0 / num_classes), num_classes);
    return op;
}

double dirichlet_log_density(const SimplexPoint& point, const std::vector<double>& alpha) {
    if (point.probs.size() != alpha.size()) {
        throw std::invalid_argument("dirichlet_log_density: dimension mismatch");
    }
    if (alpha.empty()) {
        throw std::invalid_argument("dirichlet_log_density: empty alpha");
    }
    double alpha0 = 0.0, log_beta = 0.0;
    for (double a : alpha) {
        if (!(a > 0.0)) {
            throw std::domain_error("dirichlet_log_density: alpha must be positive");
        }
        alpha0 += a;
        log_beta += lgamma(a);
    }
    log_beta -= lgamma(alpha0);

    // density is defined on the open simplex; boundary and exterior points
    // take the zero branch, i.e. -inf in log space
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    double psum = 0.0;
    for (double p : point.probs) {
        if (p <= 0.0) return kNegInf;
        psum += p;
    }
    if (std::abs(psum - 1.0) > 1e-12) return kNegInf;

    double log_prod = 0.0;
    for (std::size_t c = 0; c < alpha.size(); ++c) {
        log_prod += (alpha[c] - 1.0) * std::log(point.probs[c]);
    }
    return -log_beta + log_prod;
}

Tensor predict(const Opinion& opinion) {
    return argmax_channels(opinion.belief);
}

void save_opinion(const Opinion& opinion, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    write_tns1(opinion.evidence.detach(), dir + "/evidence.tns");
    write_tns1(opinion.alpha.detach(), dir + "/alpha.tns");
    write_tns1(opinion.belief.detach(), dir + "/belief.tns");
    write_tns1(opinion.uncertainty.detach(), dir + "/uncertainty.tns");
    nlohmann::json meta;
    meta["schema_version"] = 1;
    meta["num_classes"] = opinion.num_classes;
    meta["shape"] = opinion.evidence.shape();
    std::ofstream os(dir + "/opinion.json");
    if (!os) throw std::runtime_error("save_opinion: cannot write " + dir + "/opinion.json");
    os << meta.dump(2) << "\n";
}

Opinion load_opinion(const std::string& dir) {
    std::ifstream is(dir + "/opinion.json");
    if (!is) throw std::runtime_error("load_opinion: cannot open " + dir + "/opinion.json");
    nlohmann::json meta = nlohmann::json::parse(is);
    const std::size_t c = meta.at("num_classes").get<std::size_t>();
    Tensor evidence = read_tns1(dir + "/evidence.tns");
    return opinion_from_evidence(evidence, c);
}

}  // namespace eviseg
