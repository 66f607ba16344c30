#include "blockspot/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "blockspot/reading_order.hpp"
#include "json.hpp"

namespace blockspot::metrics {

std::vector<char32_t> utf8_decode(const std::string& s) {
    std::vector<char32_t> out;
    std::size_t i = 0;
    while (i < s.size()) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        char32_t cp = 0;
        int extra = 0;
        if (c < 0x80) {
            cp = c;
        } else if ((c >> 5) == 0x6) {
            cp = c & 0x1F;
            extra = 1;
        } else if ((c >> 4) == 0xE) {
            cp = c & 0x0F;
            extra = 2;
        } else if ((c >> 3) == 0x1E) {
            cp = c & 0x07;
            extra = 3;
        } else {
            cp = 0xFFFD;  // stray continuation byte
        }
        ++i;
        for (int k = 0; k < extra && i < s.size(); ++k, ++i) {
            cp = (cp << 6) | (static_cast<unsigned char>(s[i]) & 0x3F);
        }
        out.push_back(cp);
    }
    return out;
}

namespace {

std::string utf8_encode(const std::vector<char32_t>& cps) {
    std::string out;
    for (char32_t cp : cps) {
        if (cp < 0x80) {
            out.push_back(static_cast<char>(cp));
        } else if (cp < 0x800) {
            out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        } else if (cp < 0x10000) {
            out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        } else {
            out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        }
    }
    return out;
}

bool keep_edge_char(char32_t c) { return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9'); }

std::vector<std::string> whitespace_tokens(const std::string& s) {
    std::vector<std::string> tokens;
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) tokens.push_back(tok);
    return tokens;
}

}  // namespace

std::string normalize_text(const std::string& s, const NormalizeConfig& cfg) {
    if (!cfg.enabled) return s;
    std::vector<char32_t> cps = utf8_decode(s);
    for (char32_t& c : cps) {
        if (c >= 'a' && c <= 'z') c = c - 'a' + 'A';
    }
    std::size_t b = 0, e = cps.size();
    while (b < e && !keep_edge_char(cps[b])) ++b;
    while (e > b && !keep_edge_char(cps[e - 1])) --e;
    return utf8_encode(std::vector<char32_t>(cps.begin() + static_cast<std::ptrdiff_t>(b),
                                             cps.begin() + static_cast<std::ptrdiff_t>(e)));
}

int edit_distance(const std::string& a, const std::string& b) {
    std::vector<char32_t> ua = utf8_decode(a);
    std::vector<char32_t> ub = utf8_decode(b);
    const std::size_t n = ua.size(), m = ub.size();
    std::vector<int> prev(m + 1), cur(m + 1);
    std::iota(prev.begin(), prev.end(), 0);
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= m; ++j) {
            int sub = prev[j - 1] + (ua[i - 1] == ub[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

namespace {

struct Candidate {
    double score;
    double centroid_dist;
    int index;
};

bool better(const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.centroid_dist != b.centroid_dist) return a.centroid_dist < b.centroid_dist;
    return a.index < b.index;
}

double centroid_dist(const geometry::Polygon& a, const geometry::Polygon& b) {
    geometry::Point ca = a.centroid(), cb = b.centroid();
    return std::hypot(ca.x - cb.x, ca.y - cb.y);
}

}  // namespace

std::vector<MatchPair> pair_match(const std::vector<TextInstance>& gt,
                                  const std::vector<SpottingResult>& pred) {
    const int ng = static_cast<int>(gt.size());
    const int np = static_cast<int>(pred.size());

    // Overlap score (max containment ratio) for every gt/pred pair.
    std::vector<std::vector<double>> score(static_cast<std::size_t>(ng),
                                           std::vector<double>(static_cast<std::size_t>(np), 0.0));
    for (int g = 0; g < ng; ++g) {
        for (int p = 0; p < np; ++p) {
            score[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)] =
                geometry::geometric_match(gt[static_cast<std::size_t>(g)].polygon,
                                          pred[static_cast<std::size_t>(p)].polygon, 0.5)
                    .score;
        }
    }

    std::vector<MatchPair> pairs;
    std::vector<std::vector<bool>> seen(static_cast<std::size_t>(ng),
                                        std::vector<bool>(static_cast<std::size_t>(np), false));
    std::vector<bool> g_matched(static_cast<std::size_t>(ng), false);
    std::vector<bool> p_matched(static_cast<std::size_t>(np), false);

    for (int g = 0; g < ng; ++g) {
        std::optional<Candidate> best;
        for (int p = 0; p < np; ++p) {
            double s = score[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)];
            if (s <= 0.0) continue;
            Candidate c{s, centroid_dist(gt[static_cast<std::size_t>(g)].polygon,
                                         pred[static_cast<std::size_t>(p)].polygon),
                        p};
            if (!best || better(c, *best)) best = c;
        }
        if (best) {
            pairs.push_back(MatchPair{g, best->index});
            seen[static_cast<std::size_t>(g)][static_cast<std::size_t>(best->index)] = true;
            g_matched[static_cast<std::size_t>(g)] = true;
            p_matched[static_cast<std::size_t>(best->index)] = true;
        }
    }
    for (int p = 0; p < np; ++p) {
        std::optional<Candidate> best;
        for (int g = 0; g < ng; ++g) {
            double s = score[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)];
            if (s <= 0.0) continue;
            Candidate c{s, centroid_dist(gt[static_cast<std::size_t>(g)].polygon,
                                         pred[static_cast<std::size_t>(p)].polygon),
                        g};
            if (!best || better(c, *best)) best = c;
        }
        if (best) {
            if (!seen[static_cast<std::size_t>(best->index)][static_cast<std::size_t>(p)]) {
                pairs.push_back(MatchPair{best->index, p});
                seen[static_cast<std::size_t>(best->index)][static_cast<std::size_t>(p)] = true;
            }
            g_matched[static_cast<std::size_t>(best->index)] = true;
            p_matched[static_cast<std::size_t>(p)] = true;
        }
    }
    for (int g = 0; g < ng; ++g) {
        if (!g_matched[static_cast<std::size_t>(g)]) pairs.push_back(MatchPair{g, std::nullopt});
    }
    for (int p = 0; p < np; ++p) {
        if (!p_matched[static_cast<std::size_t>(p)]) pairs.push_back(MatchPair{std::nullopt, p});
    }
    return pairs;
}

namespace {

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(static_cast<std::size_t>(n)) {
        std::iota(parent.begin(), parent.end(), 0);
    }
    int find(int i) {
        while (parent[static_cast<std::size_t>(i)] != i) {
            parent[static_cast<std::size_t>(i)] =
                parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])];
            i = parent[static_cast<std::size_t>(i)];
        }
        return i;
    }
    void unite(int a, int b) { parent[static_cast<std::size_t>(find(a))] = find(b); }
};

std::string join_in_reading_order(const std::vector<int>& indices,
                                  const std::vector<geometry::Polygon>& polys,
                                  const std::vector<std::string>& texts,
                                  std::vector<int>* ordered_out) {
    std::vector<geometry::Polygon> members;
    for (int idx : indices) members.push_back(polys[static_cast<std::size_t>(idx)]);
    std::vector<std::size_t> order = reading_order(members);
    std::string joined;
    for (std::size_t k : order) {
        int idx = indices[k];
        if (ordered_out) ordered_out->push_back(idx);
        const std::string& t = texts[static_cast<std::size_t>(idx)];
        if (t.empty()) continue;
        if (!joined.empty()) joined += ' ';
        joined += t;
    }
    return joined;
}

}  // namespace

std::vector<MatchGroup> merge_matches(const std::vector<MatchPair>& pairs,
                                      const std::vector<TextInstance>& gt,
                                      const std::vector<SpottingResult>& pred,
                                      const NormalizeConfig& norm) {
    const int ng = static_cast<int>(gt.size());
    const int np = static_cast<int>(pred.size());
    // Nodes 0..ng-1 are GT, ng..ng+np-1 are predictions.
    UnionFind uf(ng + np);
    for (const MatchPair& pair : pairs) {
        if (pair.gt_index && pair.pred_index) uf.unite(*pair.gt_index, ng + *pair.pred_index);
    }

    std::vector<geometry::Polygon> gt_polys, pred_polys;
    std::vector<std::string> gt_texts, pred_texts;
    for (const TextInstance& g : gt) {
        gt_polys.push_back(g.polygon);
        gt_texts.push_back(normalize_text(g.text, norm));
    }
    for (const SpottingResult& p : pred) {
        pred_polys.push_back(p.polygon);
        pred_texts.push_back(normalize_text(p.text, norm));
    }

    // Collect components in pair order so output is deterministic.
    std::vector<int> root_to_group(static_cast<std::size_t>(ng + np), -1);
    std::vector<MatchGroup> groups;
    std::vector<std::vector<int>> group_gt, group_pred;
    auto touch = [&](int node) -> int {
        int r = uf.find(node);
        if (root_to_group[static_cast<std::size_t>(r)] < 0) {
            root_to_group[static_cast<std::size_t>(r)] = static_cast<int>(groups.size());
            groups.emplace_back();
            group_gt.emplace_back();
            group_pred.emplace_back();
        }
        return root_to_group[static_cast<std::size_t>(r)];
    };
    for (const MatchPair& pair : pairs) {
        if (pair.gt_index) {
            int gi = touch(*pair.gt_index);
            if (std::find(group_gt[static_cast<std::size_t>(gi)].begin(),
                          group_gt[static_cast<std::size_t>(gi)].end(),
                          *pair.gt_index) == group_gt[static_cast<std::size_t>(gi)].end()) {
                group_gt[static_cast<std::size_t>(gi)].push_back(*pair.gt_index);
            }
        }
        if (pair.pred_index) {
            int gi = touch(ng + *pair.pred_index);
            if (std::find(group_pred[static_cast<std::size_t>(gi)].begin(),
                          group_pred[static_cast<std::size_t>(gi)].end(),
                          *pair.pred_index) == group_pred[static_cast<std::size_t>(gi)].end()) {
                group_pred[static_cast<std::size_t>(gi)].push_back(*pair.pred_index);
            }
        }
    }
    for (std::size_t i = 0; i < groups.size(); ++i) {
        MatchGroup& grp = groups[i];
        grp.gt_text = join_in_reading_order(group_gt[i], gt_polys, gt_texts, &grp.gt_indices);
        grp.pred_text = join_in_reading_order(group_pred[i], pred_polys, pred_texts, &grp.pred_indices);
    }
    return groups;
}

namespace {

// Shared ignore handling: drop ignore-flagged GT, and drop predictions whose
// only geometric matches are ignored GT.
ImagePair filter_ignored(const ImagePair& image, double threshold) {
    ImagePair out;
    std::vector<const TextInstance*> ignored;
    for (const TextInstance& g : image.gt) {
        if (g.ignore) {
            ignored.push_back(&g);
        } else {
            out.gt.push_back(g);
        }
    }
    for (const SpottingResult& p : image.pred) {
        bool matches_kept = false;
        for (const TextInstance& g : out.gt) {
            if (geometry::geometric_match(g.polygon, p.polygon, threshold).matched) {
                matches_kept = true;
                break;
            }
        }
        bool matches_ignored = false;
        if (!matches_kept) {
            for (const TextInstance* g : ignored) {
                if (geometry::geometric_match(g->polygon, p.polygon, threshold).matched) {
                    matches_ignored = true;
                    break;
                }
            }
        }
        if (!(matches_ignored && !matches_kept)) out.pred.push_back(p);
    }
    return out;
}

int cp_length(const std::string& s) { return static_cast<int>(utf8_decode(s).size()); }

}  // namespace

NsBreakdown normalized_score_breakdown(const std::vector<ImagePair>& dataset,
                                       const NormalizeConfig& norm) {
    NsBreakdown total;
    for (const ImagePair& image : dataset) {
        ImagePair kept = filter_ignored(image, 0.4);
        std::vector<MatchPair> pairs = pair_match(kept.gt, kept.pred);
        std::vector<MatchGroup> groups = merge_matches(pairs, kept.gt, kept.pred, norm);
        for (const MatchGroup& grp : groups) {
            total.edit_sum += edit_distance(grp.gt_text, grp.pred_text);
            total.len_sum += std::max(cp_length(grp.gt_text), cp_length(grp.pred_text));
        }
    }
    return total;
}

double normalized_score(const std::vector<ImagePair>& dataset, const NormalizeConfig& norm) {
    return normalized_score_breakdown(dataset, norm).score();
}

GfResult generalized_f(const std::vector<ImagePair>& dataset, double threshold,
                       const NormalizeConfig& norm) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw InvalidThreshold("GF threshold must lie in (0,1)");
    }
    GfResult total;
    for (const ImagePair& image : dataset) {
        ImagePair kept = filter_ignored(image, threshold);

        // Prediction tokens, normalized; empty tokens (pure punctuation)
        // are not counted.
        std::vector<std::vector<std::string>> pred_tokens;
        std::vector<std::vector<bool>> consumed;
        for (const SpottingResult& p : kept.pred) {
            std::vector<std::string> toks;
            for (const std::string& t : whitespace_tokens(p.text)) {
                std::string n = normalize_text(t, norm);
                if (!n.empty()) toks.push_back(n);
            }
            consumed.emplace_back(toks.size(), false);
            pred_tokens.push_back(std::move(toks));
            total.pred_tokens += static_cast<std::int64_t>(pred_tokens.back().size());
        }

        // GT words in reading order; predictions examined in reading order;
        // each prediction token consumable once.
        std::vector<geometry::Polygon> gt_polys, pred_polys;
        for (const TextInstance& g : kept.gt) gt_polys.push_back(g.polygon);
        for (const SpottingResult& p : kept.pred) pred_polys.push_back(p.polygon);
        std::vector<std::size_t> gt_order = reading_order(gt_polys);
        std::vector<std::size_t> pred_order = reading_order(pred_polys);

        total.gt_words += static_cast<std::int64_t>(kept.gt.size());
        for (std::size_t gi : gt_order) {
            const TextInstance& g = kept.gt[gi];
            std::string g_norm = normalize_text(g.text, norm);
            bool spotted = false;
            for (std::size_t pi : pred_order) {
                if (!geometry::geometric_match(g.polygon, pred_polys[pi], threshold).matched) {
                    continue;
                }
                std::vector<std::string>& toks = pred_tokens[pi];
                for (std::size_t t = 0; t < toks.size(); ++t) {
                    if (!consumed[pi][t] && toks[t] == g_norm) {
                        consumed[pi][t] = true;
                        spotted = true;
                        break;
                    }
                }
                if (spotted) break;
            }
            if (spotted) ++total.correct;
        }
    }
    total.recall = total.gt_words == 0 ? 0.0
                                       : static_cast<double>(total.correct) /
                                             static_cast<double>(total.gt_words);
    total.precision = total.pred_tokens == 0 ? 0.0
                                             : static_cast<double>(total.correct) /
                                                   static_cast<double>(total.pred_tokens);
    total.gf = (total.precision + total.recall) > 0.0
                   ? 2.0 * total.precision * total.recall / (total.precision + total.recall)
                   : 0.0;
    return total;
}

EvalReport evaluate(const std::vector<ImagePair>& dataset, double threshold,
                    const NormalizeConfig& norm) {
    EvalReport report;
    NsBreakdown ns_total;
    GfResult gf_total = generalized_f(dataset, threshold, norm);
    for (const ImagePair& image : dataset) {
        std::vector<ImagePair> one{image};
        NsBreakdown ns = normalized_score_breakdown(one, norm);
        GfResult gf = generalized_f(one, threshold, norm);
        ImagePair kept = filter_ignored(image, threshold);
        std::vector<MatchGroup> groups =
            merge_matches(pair_match(kept.gt, kept.pred), kept.gt, kept.pred, norm);
        report.per_image.push_back(PerImageDiagnostics{ns.edit_sum, ns.len_sum, gf.correct,
                                                       gf.gt_words, gf.pred_tokens,
                                                       static_cast<int>(groups.size())});
        ns_total.edit_sum += ns.edit_sum;
        ns_total.len_sum += ns.len_sum;
    }
    report.ns = ns_total.score();
    report.gf_precision = gf_total.precision;
    report.gf_recall = gf_total.recall;
    report.gf = gf_total.gf;
    return report;
}

std::string report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["ns"] = report.ns;
    j["gf_precision"] = report.gf_precision;
    j["gf_recall"] = report.gf_recall;
    j["gf"] = report.gf;
    nlohmann::json per = nlohmann::json::array();
    for (const PerImageDiagnostics& d : report.per_image) {
        per.push_back({{"ns_edit", d.ns_edit},
                       {"ns_len", d.ns_len},
                       {"gf_correct", d.gf_correct},
                       {"gf_gt_words", d.gf_gt_words},
                       {"gf_pred_tokens", d.gf_pred_tokens},
                       {"groups", d.groups}});
    }
    j["per_image"] = std::move(per);
    return j.dump(2);
}

std::string report_to_text(const EvalReport& report) {
    std::ostringstream out;
    out << "NS:           " << report.ns << "\n";
    out << "GF precision: " << report.gf_precision << "\n";
    out << "GF recall:    " << report.gf_recall << "\n";
    out << "GF:           " << report.gf << "\n";
    out << "images:       " << report.per_image.size() << "\n";
    out << "\nNote: NS pools edit distances against this dataset's own labels and\n"
           "predictions, so NS values are not comparable across datasets.\n";
    return out.str();
}

}  // namespace blockspot::metrics
