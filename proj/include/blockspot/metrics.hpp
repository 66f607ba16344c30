#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "blockspot/blockgen.hpp"
#include "blockspot/errors.hpp"
#include "blockspot/geometry.hpp"

namespace blockspot::metrics {

struct InvalidThreshold : InputError {
    using InputError::InputError;
};

using blockgen::TextInstance;

struct SpottingResult {
    geometry::Polygon polygon;
    std::string text;
};

struct MatchPair {
    std::optional<int> gt_index;
    std::optional<int> pred_index;
};

struct MatchGroup {
    std::vector<int> gt_indices;    // reading order
    std::vector<int> pred_indices;  // reading order
    std::string gt_text;
    std::string pred_text;
};

struct ImagePair {
    std::vector<TextInstance> gt;
    std::vector<SpottingResult> pred;
};

struct NormalizeConfig {
    bool enabled = true;
};

// Protocol text normalization: uppercase fold and strip of leading/trailing
// characters outside [A-Z0-9], applied per transcription token. Operates on
// Unicode scalar values; ASCII-complete (the protocols' vocabulary), other
// code points pass through unchanged.
std::string normalize_text(const std::string& s, const NormalizeConfig& cfg = {});

std::vector<char32_t> utf8_decode(const std::string& s);

// Plain Levenshtein distance over Unicode scalar values; unit costs.
int edit_distance(const std::string& a, const std::string& b);

// Nearest-pair matching by overlap score; ties by centroid distance then
// index. Unmatched entries come back one-sided.
std::vector<MatchPair> pair_match(const std::vector<TextInstance>& gt,
                                  const std::vector<SpottingResult>& pred);

// Union-find merge of pairs sharing a gt or pred index; texts joined by
// single spaces in reading order.
std::vector<MatchGroup> merge_matches(const std::vector<MatchPair>& pairs,
                                      const std::vector<TextInstance>& gt,
                                      const std::vector<SpottingResult>& pred,
                                      const NormalizeConfig& norm = {});

struct NsBreakdown {
    std::int64_t edit_sum = 0;
    std::int64_t len_sum = 0;
    double score() const {
        return len_sum == 0 ? 1.0 : 1.0 - static_cast<double>(edit_sum) / static_cast<double>(len_sum);
    }
};

// Normalized Score pooled over the whole dataset. Empty dataset scores 1.0.
// Note: NS depends on a dataset's own labels and predictions, so values are
// not comparable across datasets.
double normalized_score(const std::vector<ImagePair>& dataset, const NormalizeConfig& norm = {});
NsBreakdown normalized_score_breakdown(const std::vector<ImagePair>& dataset,
                                       const NormalizeConfig& norm = {});

struct GfResult {
    double precision = 0.0;
    double recall = 0.0;
    double gf = 0.0;
    std::int64_t correct = 0;
    std::int64_t gt_words = 0;
    std::int64_t pred_tokens = 0;
};

// Generalized F-measure at overlap threshold T (default 0.4). A GT word is
// spotted when a geometrically matched prediction has an unconsumed
// whitespace token equal to it after normalization.
GfResult generalized_f(const std::vector<ImagePair>& dataset, double threshold = 0.4,
                       const NormalizeConfig& norm = {});

struct PerImageDiagnostics {
    std::int64_t ns_edit = 0;
    std::int64_t ns_len = 0;
    std::int64_t gf_correct = 0;
    std::int64_t gf_gt_words = 0;
    std::int64_t gf_pred_tokens = 0;
    int groups = 0;
};

struct EvalReport {
    double ns = 1.0;
    double gf_precision = 0.0;
    double gf_recall = 0.0;
    double gf = 0.0;
    std::vector<PerImageDiagnostics> per_image;
};

EvalReport evaluate(const std::vector<ImagePair>& dataset, double threshold = 0.4,
                    const NormalizeConfig& norm = {});

std::string report_to_json(const EvalReport& report);
std::string report_to_text(const EvalReport& report);

}  // namespace blockspot::metrics
