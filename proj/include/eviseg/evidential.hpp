#pragma once

#include <string>
#include <vector>

#include "eviseg/tensor.hpp"

namespace eviseg {

// Per-pixel subjective-logic opinion derived from non-negative evidence.
// All tensors are [batch, class, H, W] except strength/uncertainty, which
// collapse the class axis to 1. Satisfies, per pixel:
//   alpha = evidence + 1,  strength = sum_c alpha_c,
//   belief = (alpha - 1) / strength,  uncertainty = C / strength,
//   projected_prob = belief + uncertainty / C  (uniform base rate),
//   uncertainty + sum_c belief_c = 1.
struct Opinion {
    Tensor evidence;
    Tensor alpha;
    Tensor strength;        // [N,1,H,W]
    Tensor belief;
    Tensor uncertainty;     // [N,1,H,W]
    Tensor projected_prob;
    std::size_t num_classes = 0;
};

// Point on the C-dimensional unit simplex (entries >= 0, sum == 1).
struct SimplexPoint {
    std::vector<double> probs;
};

// Softplus evidence head: logits [N,C,H,W] -> strictly positive evidence.
Tensor evidence_from_logits(const Tensor& logits);

// Builds the full opinion from evidence. Throws if evidence is negative or
// the class axis does not match num_classes.
Opinion opinion_from_evidence(const Tensor& evidence, std::size_t num_classes);

// ln D(p | alpha) for p inside the open simplex; -inf for points outside
// (including boundary coordinates where alpha_c > 1).
double dirichlet_log_density(const SimplexPoint& point, const std::vector<double>& alpha);

// Per-pixel argmax over belief; ties resolve to the lowest class index.
// Returns class labels as [N,1,H,W].
Tensor predict(const Opinion& opinion);

// Opinion bundle on disk: e/alpha/belief/uncertainty as TNS1 files plus a
// JSON sidecar carrying num_classes and the shape.
void save_opinion(const Opinion& opinion, const std::string& dir);
Opinion load_opinion(const std::string& dir);

}  // namespace eviseg
