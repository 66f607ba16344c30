#include "blockspot/blockgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "blockspot/reading_order.hpp"
#include "blockspot/tokenizer.hpp"

namespace blockspot::blockgen {

PositionFeature position_features(const TextInstance& inst, const ImageDims& dims, int k) {
    std::vector<geometry::Point> verts = inst.polygon.vertices();
    for (geometry::Point& p : verts) {
        p.x = std::clamp(p.x, 0.0, static_cast<double>(dims.width));
        p.y = std::clamp(p.y, 0.0, static_cast<double>(dims.height));
    }

    // K samples uniform in the boundary's vertex parameterization, starting
    // at vertex 0 (sample i sits at vertex index i*n/k, interpolated). This
    // keeps the original vertices among the samples whenever k is a multiple
    // of the vertex count.
    const std::size_t n = verts.size();
    PositionFeature feat;
    feat.reserve(static_cast<std::size_t>(2 * k));
    for (int i = 0; i < k; ++i) {
        double u = static_cast<double>(i) * static_cast<double>(n) / k;
        std::size_t a = static_cast<std::size_t>(u) % n;
        std::size_t b = (a + 1) % n;
        double t = u - std::floor(u);
        double x = verts[a].x + t * (verts[b].x - verts[a].x);
        double y = verts[a].y + t * (verts[b].y - verts[a].y);
        feat.push_back(x / dims.width);
        feat.push_back(y / dims.height);
    }
    return feat;
}

namespace {

class BuiltinExtractor final : public FeatureExtractor {
  public:
    explicit BuiltinExtractor(const BuiltinExtractorConfig& cfg) : cfg_(cfg) {}

    int feature_dim() const override { return 3 * cfg_.color_bins + cfg_.orientation_bins; }
    int input_height() const override { return cfg_.input_size; }
    int input_width() const override { return cfg_.input_size; }

    FeatureMap extract(const RasterImage& img) const override {
        FeatureMap map;
        map.cells_h = cfg_.grid;
        map.cells_w = cfg_.grid;
        map.dim = feature_dim();
        map.data.assign(static_cast<std::size_t>(map.cells_h) * map.cells_w * map.dim, 0.0);

        const int cell_h = img.height / cfg_.grid;
        const int cell_w = img.width / cfg_.grid;
        for (int cy = 0; cy < cfg_.grid; ++cy) {
            for (int cx = 0; cx < cfg_.grid; ++cx) {
                double* cell = &map.data[(static_cast<std::size_t>(cy) * map.cells_w + cx) * map.dim];
                int y0 = cy * cell_h, y1 = (cy + 1) * cell_h;
                int x0 = cx * cell_w, x1 = (cx + 1) * cell_w;
                int npix = (y1 - y0) * (x1 - x0);
                for (int y = y0; y < y1; ++y) {
                    for (int x = x0; x < x1; ++x) {
                        for (int c = 0; c < 3; ++c) {
                            float v = img.channels == 3 ? img.at(y, x, c) : img.at(y, x, 0);
                            int bin = std::min(cfg_.color_bins - 1,
                                               static_cast<int>(v * cfg_.color_bins));
                            cell[c * cfg_.color_bins + bin] += 1.0;
                        }
                    }
                }
                // Gradient-orientation histogram, magnitude-weighted, over
                // the cell's interior (central differences on luminance).
                double* grad = cell + 3 * cfg_.color_bins;
                for (int y = std::max(1, y0); y < std::min(img.height - 1, y1); ++y) {
                    for (int x = std::max(1, x0); x < std::min(img.width - 1, x1); ++x) {
                        double gx = luminance(img, y, x + 1) - luminance(img, y, x - 1);
                        double gy = luminance(img, y + 1, x) - luminance(img, y - 1, x);
                        double mag = std::hypot(gx, gy);
                        if (mag <= 0.0) continue;
                        double theta = std::atan2(gy, gx);
                        if (theta < 0) theta += 3.14159265358979323846;  // unsigned orientation
                        int bin = std::min(cfg_.orientation_bins - 1,
                                           static_cast<int>(theta / 3.14159265358979323846 *
                                                            cfg_.orientation_bins));
                        grad[bin] += mag;
                    }
                }
                for (int d = 0; d < map.dim; ++d) cell[d] /= npix;
            }
        }
        return map;
    }

  private:
    static double luminance(const RasterImage& img, int y, int x) {
        if (img.channels == 1) return img.at(y, x, 0);
        return 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
    }

    BuiltinExtractorConfig cfg_;
};

}  // namespace

std::unique_ptr<FeatureExtractor> make_builtin_extractor(const BuiltinExtractorConfig& cfg) {
    return std::make_unique<BuiltinExtractor>(cfg);
}

VisualFeature visual_features(const RasterImage& crop, const FeatureExtractor& extractor) {
    if (crop.empty()) throw EmptyCrop("cannot extract features from an empty crop");
    RasterImage pre = tok::resize(crop, extractor.input_height(), extractor.input_width());
    FeatureMap map = extractor.extract(pre);
    VisualFeature feat(static_cast<std::size_t>(map.dim), 0.0);
    for (int cy = 0; cy < map.cells_h; ++cy) {
        for (int cx = 0; cx < map.cells_w; ++cx) {
            for (int d = 0; d < map.dim; ++d) feat[static_cast<std::size_t>(d)] += map.at(cy, cx, d);
        }
    }
    double cells = static_cast<double>(map.cells_h) * map.cells_w;
    for (double& v : feat) v /= cells;
    return feat;
}

namespace {

double dist2(const FeatureVector& a, const FeatureVector& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// Lexicographic comparison used only to break exact distance ties so the
// border assignment cannot depend on input order.
bool lex_less(const FeatureVector& a, const FeatureVector& b) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

std::size_t uf_find(std::vector<std::size_t>& parent, std::size_t i) {
    while (parent[i] != i) {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    return i;
}

}  // namespace

std::vector<ClusterLabel> dbscan(const std::vector<FeatureVector>& features, double eps,
                                 int min_pts) {
    const std::size_t n = features.size();
    if (n == 0) return {};
    for (const FeatureVector& f : features) {
        if (f.size() != features[0].size()) {
            throw DimensionMismatch("feature vectors must share one dimension");
        }
    }
    const double eps2 = eps * eps;

    std::vector<int> neighbor_count(n, 0);
    std::vector<std::vector<std::size_t>> neighbors(n);
    for (std::size_t i = 0; i < n; ++i) neighbors[i].push_back(i);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (dist2(features[i], features[j]) <= eps2) {
                neighbors[i].push_back(j);
                neighbors[j].push_back(i);
            }
        }
    }
    std::vector<bool> core(n, false);
    for (std::size_t i = 0; i < n; ++i) core[i] = static_cast<int>(neighbors[i].size()) >= min_pts;

    // Clusters are the connected components of the core-point graph.
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
        if (!core[i]) continue;
        for (std::size_t j : neighbors[i]) {
            if (core[j]) parent[uf_find(parent, i)] = uf_find(parent, j);
        }
    }

    // Border points join the cluster of their nearest core neighbor; ties
    // are broken by the lexicographically smallest core feature vector.
    std::vector<std::size_t> owner(n);
    std::iota(owner.begin(), owner.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
        if (core[i]) continue;
        bool found = false;
        double best = 0.0;
        std::size_t best_core = 0;
        for (std::size_t j : neighbors[i]) {
            if (!core[j]) continue;
            double d = dist2(features[i], features[j]);
            if (!found || d < best ||
                (d == best && lex_less(features[j], features[best_core]))) {
                found = true;
                best = d;
                best_core = j;
            }
        }
        if (found) owner[i] = best_core;
        // else: noise, keeps itself as owner -> singleton label
    }

    // Dense labels in first-occurrence order.
    std::vector<ClusterLabel> labels(n, -1);
    std::vector<int> rep_label(n, -1);
    int next_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t rep = core[owner[i]] ? uf_find(parent, owner[i]) : owner[i];
        if (rep_label[rep] < 0) rep_label[rep] = next_label++;
        labels[i] = rep_label[rep];
    }
    return labels;
}

std::vector<TextBlock> merge_blocks(const std::vector<TextInstance>& instances,
                                    const std::vector<ClusterLabel>& labels) {
    if (instances.size() != labels.size()) {
        throw DimensionMismatch("instances and labels must have equal length");
    }
    std::vector<std::vector<int>> groups;
    std::vector<int> label_to_group;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        int lbl = labels[i];
        if (lbl >= static_cast<int>(label_to_group.size())) {
            label_to_group.resize(static_cast<std::size_t>(lbl) + 1, -1);
        }
        if (label_to_group[static_cast<std::size_t>(lbl)] < 0) {
            label_to_group[static_cast<std::size_t>(lbl)] = static_cast<int>(groups.size());
            groups.emplace_back();
        }
        groups[static_cast<std::size_t>(label_to_group[static_cast<std::size_t>(lbl)])].push_back(
            static_cast<int>(i));
    }

    std::vector<TextBlock> blocks;
    blocks.reserve(groups.size());
    for (const std::vector<int>& members : groups) {
        std::vector<geometry::Point> all_vertices;
        std::vector<geometry::Polygon> member_polys;
        for (int idx : members) {
            const auto& vs = instances[static_cast<std::size_t>(idx)].polygon.vertices();
            all_vertices.insert(all_vertices.end(), vs.begin(), vs.end());
            member_polys.push_back(instances[static_cast<std::size_t>(idx)].polygon);
        }
        std::vector<std::size_t> order = reading_order(member_polys);
        std::vector<int> ordered_members;
        std::string text;
        bool all_ignore = true;
        for (std::size_t k : order) {
            int idx = members[k];
            ordered_members.push_back(idx);
            if (!text.empty()) text += ' ';
            text += instances[static_cast<std::size_t>(idx)].text;
            all_ignore = all_ignore && instances[static_cast<std::size_t>(idx)].ignore;
        }
        blocks.push_back(TextBlock{geometry::convex_hull(all_vertices), std::move(ordered_members),
                                   std::move(text), all_ignore});
    }
    return blocks;
}

FeatureVector instance_features(const TextInstance& inst, const ImageDims& dims,
                                const RasterImage& image, const FeatureExtractor& extractor,
                                const BlockGenConfig& cfg) {
    PositionFeature pos = position_features(inst, dims, cfg.resample_points);
    RasterImage crop = io::crop_axis_aligned(image, inst.polygon);
    VisualFeature vis = visual_features(crop, extractor);

    auto l2_normalize = [](std::vector<double>& v) {
        double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
        if (norm > 0) {
            for (double& x : v) x /= norm;
        }
    };
    l2_normalize(pos);
    l2_normalize(vis);
    for (double& x : pos) x *= cfg.position_weight;

    FeatureVector feat;
    feat.reserve(pos.size() + vis.size());
    feat.insert(feat.end(), pos.begin(), pos.end());
    feat.insert(feat.end(), vis.begin(), vis.end());
    return feat;
}

io::AnnotationRecord generate_blocks(const io::AnnotationRecord& annotation,
                                     const RasterImage& image, const BlockGenConfig& cfg) {
    ImageDims dims{annotation.width, annotation.height, image.channels};
    BuiltinExtractorConfig ext_cfg = cfg.extractor;
    // Keep the extractor dim consistent with the configured d.
    if (3 * ext_cfg.color_bins + ext_cfg.orientation_bins != cfg.visual_dim) {
        ext_cfg.color_bins = std::max(1, (cfg.visual_dim - ext_cfg.orientation_bins) / 3);
        ext_cfg.orientation_bins = cfg.visual_dim - 3 * ext_cfg.color_bins;
    }
    std::unique_ptr<FeatureExtractor> extractor = make_builtin_extractor(ext_cfg);

    std::vector<TextInstance> clustered;
    std::vector<int> clustered_idx;
    std::vector<int> ignored_idx;
    for (std::size_t i = 0; i < annotation.instances.size(); ++i) {
        const io::InstanceRecord& rec = annotation.instances[i];
        TextInstance inst{geometry::Polygon(rec.polygon), rec.text, rec.ignore};
        if (rec.ignore) {
            ignored_idx.push_back(static_cast<int>(i));
        } else {
            clustered.push_back(std::move(inst));
            clustered_idx.push_back(static_cast<int>(i));
        }
    }

    std::vector<TextBlock> blocks;
    if (!clustered.empty()) {
        std::vector<FeatureVector> features;
        features.reserve(clustered.size());
        for (const TextInstance& inst : clustered) {
            features.push_back(instance_features(inst, dims, image, *extractor, cfg));
        }
        std::vector<ClusterLabel> labels = dbscan(features, cfg.eps, cfg.min_pts);
        blocks = merge_blocks(clustered, labels);
    }

    io::AnnotationRecord out = annotation;
    std::vector<io::BlockRecord> out_blocks;
    for (const TextBlock& blk : blocks) {
        io::BlockRecord br;
        br.polygon = blk.polygon.vertices();
        for (int local : blk.members) br.members.push_back(clustered_idx[static_cast<std::size_t>(local)]);
        br.text = blk.text;
        out_blocks.push_back(std::move(br));
    }
    // Ignore instances pass through unchanged as their own blocks.
    for (int idx : ignored_idx) {
        const io::InstanceRecord& rec = annotation.instances[static_cast<std::size_t>(idx)];
        io::BlockRecord br;
        br.polygon = rec.polygon;
        br.members = {idx};
        br.text = rec.text;
        out_blocks.push_back(std::move(br));
    }
    out.blocks = std::move(out_blocks);
    return out;
}

}  // namespace blockspot::blockgen
