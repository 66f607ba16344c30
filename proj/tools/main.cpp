#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "blockspot/blockgen.hpp"
#include "blockspot/dataset_io.hpp"
#include "blockspot/errors.hpp"
#include "blockspot/metrics.hpp"
#include "blockspot/parallel.hpp"
#include "blockspot/tokenizer.hpp"
#include "blockspot/toy.hpp"
#include "blockspot/uvlm/checkpoint.hpp"
#include "blockspot/uvlm/decode.hpp"
#include "blockspot/uvlm/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace blockspot;

namespace {

// Flags override config-file values; config values override defaults.
json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw InputError(std::string("invalid config JSON: ") + e.what());
    }
    if (!j.is_object()) throw InputError("config must be a JSON object");
    return j;
}

template <typename T>
void merge(const json& cfg, const char* key, const CLI::Option* opt, T& value) {
    if (opt->count() == 0 && cfg.contains(key)) value = cfg.at(key).get<T>();
}

template <typename T>
void merge_nested(const json& cfg, const char* section, const char* key, const CLI::Option* opt,
                  T& value) {
    if (opt->count() == 0 && cfg.contains(section) && cfg.at(section).contains(key)) {
        value = cfg.at(section).at(key).get<T>();
    }
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// blockgen

struct BlockgenArgs {
    std::string in, images, out, config;
    double eps = 0.3;
    int min_pts = 1;
    double lambda = 1.0;
    int resample_points = 8;
    int visual_dim = 64;
};

int run_blockgen(const BlockgenArgs& args) {
    blockgen::BlockGenConfig cfg;
    cfg.eps = args.eps;
    cfg.min_pts = args.min_pts;
    cfg.position_weight = args.lambda;
    cfg.resample_points = args.resample_points;
    cfg.visual_dim = args.visual_dim;
    if (cfg.eps <= 0) throw InputError("--eps must be > 0");
    if (cfg.min_pts < 1) throw InputError("--min-pts must be >= 1");
    if (cfg.resample_points < 4) throw InputError("--resample-k must be >= 4");

    std::vector<io::AnnotationRecord> records = io::load_annotations(args.in);
    std::vector<io::AnnotationRecord> out(records.size());
    std::vector<std::string> failures(records.size());
    parallel_for(static_cast<int>(records.size()), [&](int i) {
        const io::AnnotationRecord& rec = records[static_cast<std::size_t>(i)];
        try {
            RasterImage img = io::load_image((fs::path(args.images) / rec.image).string());
            out[static_cast<std::size_t>(i)] = blockgen::generate_blocks(rec, img, cfg);
        } catch (const std::exception& e) {
            failures[static_cast<std::size_t>(i)] = e.what();
        }
    });
    for (std::size_t i = 0; i < failures.size(); ++i) {
        if (!failures[i].empty()) {
            throw InputError("record " + std::to_string(i) + " (" + records[i].image +
                             "): " + failures[i]);
        }
    }
    io::save_annotations(out, args.out);
    std::cerr << "wrote " << out.size() << " block-annotated records to " << args.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string gt, pred, protocol = "both", report_dir = ".", config;
    double threshold = 0.4;
    bool no_normalize = false;
};

std::vector<metrics::ImagePair> build_dataset(const std::vector<io::AnnotationRecord>& gt,
                                              const std::vector<io::AnnotationRecord>& pred) {
    std::map<std::string, metrics::ImagePair> by_image;
    for (const io::AnnotationRecord& rec : gt) {
        metrics::ImagePair& pair = by_image[rec.image];
        for (const io::InstanceRecord& inst : rec.instances) {
            pair.gt.push_back(
                metrics::TextInstance{geometry::Polygon(inst.polygon), inst.text, inst.ignore});
        }
    }
    for (const io::AnnotationRecord& rec : pred) {
        metrics::ImagePair& pair = by_image[rec.image];
        // Block-level prediction files carry their results in `blocks`;
        // plain spotting output uses `instances`.
        if (rec.blocks && !rec.blocks->empty()) {
            for (const io::BlockRecord& blk : *rec.blocks) {
                pair.pred.push_back(metrics::SpottingResult{geometry::Polygon(blk.polygon), blk.text});
            }
        } else {
            for (const io::InstanceRecord& inst : rec.instances) {
                pair.pred.push_back(
                    metrics::SpottingResult{geometry::Polygon(inst.polygon), inst.text});
            }
        }
    }
    std::vector<metrics::ImagePair> dataset;
    dataset.reserve(by_image.size());
    for (auto& [key, pair] : by_image) dataset.push_back(std::move(pair));
    return dataset;
}

int run_eval(const EvalArgs& args) {
    if (!(args.threshold > 0.0 && args.threshold < 1.0)) {
        throw InputError("--threshold must lie in (0,1)");
    }
    std::vector<io::AnnotationRecord> gt = io::load_annotations(args.gt);
    std::vector<io::AnnotationRecord> pred = io::load_annotations(args.pred);
    std::vector<metrics::ImagePair> dataset = build_dataset(gt, pred);

    metrics::NormalizeConfig norm{!args.no_normalize};
    metrics::EvalReport report = metrics::evaluate(dataset, args.threshold, norm);

    json out;
    if (args.protocol == "ns" || args.protocol == "both") out["ns"] = report.ns;
    if (args.protocol == "gf" || args.protocol == "both") {
        out["gf"] = report.gf;
        out["gf_precision"] = report.gf_precision;
        out["gf_recall"] = report.gf_recall;
    }

    fs::create_directories(args.report_dir);
    {
        std::ofstream jf(fs::path(args.report_dir) / "report.json");
        jf << metrics::report_to_json(report) << "\n";
    }
    {
        std::ofstream tf(fs::path(args.report_dir) / "report.txt");
        tf << metrics::report_to_text(report);
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train-toy

struct TrainArgs {
    int samples = 64;
    int steps = 2000;
    std::string mask = "uvlm";
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    std::string config;
    int batch = 32;
    double lr = 1.5e-3;
    int layers = 2;
    int heads = 2;
    int dim = 64;
    int ffn = 128;
    int max_len = 320;
    int eval_every = 50;
    double stop_at_acc = 0.0;
    double weight_decay = 0.0;
    double grad_clip = 1.0;
    int crop_rows = 2;  // synth text never leaves the top two glyph rows
};

int run_train_toy(const TrainArgs& args) {
    if (args.mask != "uvlm" && args.mask != "causal") {
        throw InputError("--mask must be 'uvlm' or 'causal'");
    }
    if (args.samples < 1 || args.steps < 1) throw InputError("--samples and --steps must be >= 1");
    if (args.dim % args.heads != 0) throw InputError("--dim must be divisible by --heads");

    tok::Vocab vocab = tok::Vocab::toy_default();
    std::vector<uvlm::SampleTokens> data =
        toy::build_corpus(args.samples, args.seed, vocab, args.crop_rows);

    uvlm::Hyper hyper;
    hyper.layers = args.layers;
    hyper.heads = args.heads;
    hyper.dim = args.dim;
    hyper.ffn = args.ffn;
    hyper.max_len = args.max_len;
    hyper.vocab = vocab.size();
    hyper.patch_dim = io::kGlyphSize * io::kGlyphSize * 3;
    for (const uvlm::SampleTokens& s : data) {
        if (s.total_len() > hyper.max_len) {
            throw InputError("corpus sequence length exceeds --max-len");
        }
    }

    uvlm::TrainConfig cfg;
    cfg.steps = args.steps;
    cfg.batch_size = args.batch;
    cfg.lr = args.lr;
    cfg.seed = args.seed;
    cfg.mask = args.mask == "uvlm" ? uvlm::MaskKind::Unified : uvlm::MaskKind::Causal;
    cfg.eval_every = args.eval_every;
    cfg.stop_at_accuracy = args.stop_at_acc;
    cfg.weight_decay = args.weight_decay;
    cfg.grad_clip = args.grad_clip;

    uvlm::ModelParams<float> params = uvlm::init_params<float>(hyper, args.seed);
    uvlm::TrainResult<float> result = uvlm::train(std::move(params), data, cfg, vocab.sep_id(),
                                                  vocab.eos_id());

    fs::create_directories(args.out_dir);
    {
        std::ofstream csv(fs::path(args.out_dir) / "loss_curve.csv", std::ios::binary);
        csv << "step,loss,accuracy\n";
        for (const uvlm::CurvePoint& p : result.curve) {
            csv << p.step << "," << format_double(p.loss) << "," << format_double(p.accuracy)
                << "\n";
        }
    }
    uvlm::CheckpointMeta meta;
    meta.hyper = hyper;
    meta.vocab_symbols = vocab.symbols();
    meta.patch_h = io::kGlyphSize;
    meta.patch_w = io::kGlyphSize;
    meta.img_h = io::kCropHeight;
    meta.img_w = io::kCropWidth;
    meta.crop_h = args.crop_rows > 0 ? args.crop_rows * io::kGlyphSize : 0;
    meta.channels = 3;
    uvlm::save_checkpoint((fs::path(args.out_dir) / "checkpoint.bin").string(), result.params,
                          meta);

    std::cerr << "trained " << result.curve.size() << " steps (mask=" << args.mask << ")";
    if (!result.evals.empty()) {
        std::cerr << ", final train accuracy " << result.evals.back().accuracy;
    }
    std::cerr << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// decode

struct DecodeArgs {
    std::string checkpoint, image;
    int beam = 4;
    int max_new = 64;
};

int run_decode(const DecodeArgs& args) {
    if (args.beam < 1) throw InputError("--beam must be >= 1");
    auto [params, meta] = uvlm::load_checkpoint<double>(args.checkpoint);
    tok::Vocab vocab = tok::Vocab::from_symbols(meta.vocab_symbols);

    RasterImage img = io::load_image(args.image);
    img = tok::resize(img, meta.img_h, meta.img_w);
    img = toy::crop_top(img, meta.crop_h);
    tok::PatchGrid grid = tok::patch_image(img, meta.patch_h, meta.patch_w);
    if (grid.patch_dim() != params.hyper.patch_dim) {
        throw InputError("image channels do not match the checkpoint");
    }

    uvlm::DecodeConfig cfg;
    cfg.beam_width = args.beam;
    cfg.max_new_tokens = args.max_new;
    uvlm::DecodeResult result = uvlm::decode(params, grid.patches, vocab, cfg);
    std::cout << result.text << "\n";
    std::cerr << "log_prob=" << result.log_prob << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    int count = 16;
    std::uint64_t seed = 0;
    std::string out_dir;
};

int run_synth(const SynthArgs& args) {
    if (args.count < 1) throw InputError("--count must be >= 1");
    fs::create_directories(fs::path(args.out_dir) / "images");

    std::vector<io::AnnotationRecord> records(static_cast<std::size_t>(args.count));
    parallel_for(args.count, [&](int i) {
        io::SynthSample s = io::synth_sample(args.seed * 1000003ull + static_cast<std::uint64_t>(i));
        char name[64];
        std::snprintf(name, sizeof(name), "images/synth_%06d.png", i);
        io::save_png(s.image, (fs::path(args.out_dir) / name).string());

        io::AnnotationRecord rec;
        rec.image = name;
        rec.width = s.image.width;
        rec.height = s.image.height;
        std::size_t word_start = 0;
        auto boxes = io::synth_word_boxes(s.text);
        std::size_t b = 0;
        std::string word;
        for (std::size_t k = 0; k <= s.text.size(); ++k) {
            if (k < s.text.size() && s.text[k] != ' ') {
                word.push_back(s.text[k]);
                continue;
            }
            if (!word.empty() && b < boxes.size()) {
                rec.instances.push_back(io::InstanceRecord{boxes[b], word, false});
                ++b;
            }
            word.clear();
            word_start = k + 1;
        }
        (void)word_start;
        records[static_cast<std::size_t>(i)] = std::move(rec);
    });
    io::save_annotations(records, (fs::path(args.out_dir) / "synth.jsonl").string());
    std::cerr << "wrote " << args.count << " samples to " << args.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Block-level scene text spotting toolkit"};
    app.require_subcommand(1);

    BlockgenArgs bg;
    CLI::App* cmd_bg = app.add_subcommand("blockgen", "Cluster instance annotations into blocks");
    cmd_bg->add_option("--in", bg.in, "instance-level JSONL")->required();
    cmd_bg->add_option("--images", bg.images, "image directory")->required();
    cmd_bg->add_option("--out", bg.out, "output JSONL")->required();
    cmd_bg->add_option("--config", bg.config, "JSON config file");
    auto* bg_eps = cmd_bg->add_option("--eps", bg.eps, "DBSCAN radius");
    auto* bg_minpts = cmd_bg->add_option("--min-pts", bg.min_pts, "DBSCAN core threshold");
    auto* bg_lambda = cmd_bg->add_option("--lambda", bg.lambda, "position feature weight");
    auto* bg_k = cmd_bg->add_option("--resample-k", bg.resample_points, "boundary sample count");
    auto* bg_d = cmd_bg->add_option("--visual-dim", bg.visual_dim, "visual feature dim");

    EvalArgs ev;
    CLI::App* cmd_ev = app.add_subcommand("eval", "Score predictions against ground truth");
    cmd_ev->add_option("--gt", ev.gt, "ground-truth JSONL")->required();
    cmd_ev->add_option("--pred", ev.pred, "prediction JSONL")->required();
    cmd_ev->add_option("--protocol", ev.protocol, "ns|gf|both")
        ->check(CLI::IsMember({"ns", "gf", "both"}));
    cmd_ev->add_option("--report-dir", ev.report_dir, "directory for report files");
    cmd_ev->add_option("--config", ev.config, "JSON config file");
    auto* ev_thr = cmd_ev->add_option("--threshold", ev.threshold, "overlap threshold");
    cmd_ev->add_flag("--no-normalize", ev.no_normalize, "disable text normalization");

    TrainArgs tr;
    CLI::App* cmd_tr = app.add_subcommand("train-toy", "Train the toy recognizer on synth data");
    auto* tr_samples = cmd_tr->add_option("--samples", tr.samples, "corpus size");
    auto* tr_steps = cmd_tr->add_option("--steps", tr.steps, "training steps");
    cmd_tr->add_option("--mask", tr.mask, "uvlm|causal")->check(CLI::IsMember({"uvlm", "causal"}));
    cmd_tr->add_option("--seed", tr.seed, "run seed");
    cmd_tr->add_option("--out-dir", tr.out_dir, "output directory");
    cmd_tr->add_option("--config", tr.config, "JSON config file");
    auto* tr_batch = cmd_tr->add_option("--batch", tr.batch, "batch size");
    auto* tr_lr = cmd_tr->add_option("--lr", tr.lr, "learning rate");
    auto* tr_layers = cmd_tr->add_option("--layers", tr.layers, "decoder layers");
    auto* tr_heads = cmd_tr->add_option("--heads", tr.heads, "attention heads");
    auto* tr_dim = cmd_tr->add_option("--dim", tr.dim, "hidden size");
    auto* tr_ffn = cmd_tr->add_option("--ffn", tr.ffn, "FFN size");
    auto* tr_maxlen = cmd_tr->add_option("--max-len", tr.max_len, "max sequence length");
    auto* tr_evev = cmd_tr->add_option("--eval-every", tr.eval_every, "train-set eval interval");
    cmd_tr->add_option("--stop-at-acc", tr.stop_at_acc, "early stop accuracy (0=off)");
    auto* tr_wd = cmd_tr->add_option("--wd", tr.weight_decay, "weight decay");
    auto* tr_clip = cmd_tr->add_option("--clip", tr.grad_clip, "gradient clip norm (0=off)");
    cmd_tr->add_option("--crop-rows", tr.crop_rows,
                       "glyph rows of the canvas fed to the model (0 = full canvas)");

    DecodeArgs de;
    CLI::App* cmd_de = app.add_subcommand("decode", "Transcribe one image with a checkpoint");
    cmd_de->add_option("--checkpoint", de.checkpoint, "checkpoint file")->required();
    cmd_de->add_option("--image", de.image, "PNG or PPM image")->required();
    cmd_de->add_option("--beam", de.beam, "beam width");
    cmd_de->add_option("--max-new", de.max_new, "max generated tokens");

    SynthArgs sy;
    CLI::App* cmd_sy = app.add_subcommand("synth", "Generate deterministic synthetic data");
    cmd_sy->add_option("--count", sy.count, "sample count");
    cmd_sy->add_option("--seed", sy.seed, "generator seed");
    cmd_sy->add_option("--out-dir", sy.out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (cmd_bg->parsed()) {
            json cfg = load_config(bg.config);
            merge(cfg, "eps", bg_eps, bg.eps);
            merge(cfg, "min_pts", bg_minpts, bg.min_pts);
            merge(cfg, "lambda", bg_lambda, bg.lambda);
            merge(cfg, "resample_points", bg_k, bg.resample_points);
            merge(cfg, "visual_dim", bg_d, bg.visual_dim);
            return run_blockgen(bg);
        }
        if (cmd_ev->parsed()) {
            json cfg = load_config(ev.config);
            merge(cfg, "threshold", ev_thr, ev.threshold);
            return run_eval(ev);
        }
        if (cmd_tr->parsed()) {
            json cfg = load_config(tr.config);
            merge_nested(cfg, "train", "samples", tr_samples, tr.samples);
            merge_nested(cfg, "train", "steps", tr_steps, tr.steps);
            merge_nested(cfg, "train", "batch", tr_batch, tr.batch);
            merge_nested(cfg, "train", "lr", tr_lr, tr.lr);
            merge_nested(cfg, "train", "eval_every", tr_evev, tr.eval_every);
            merge_nested(cfg, "train", "weight_decay", tr_wd, tr.weight_decay);
            merge_nested(cfg, "train", "grad_clip", tr_clip, tr.grad_clip);
            merge_nested(cfg, "model", "layers", tr_layers, tr.layers);
            merge_nested(cfg, "model", "heads", tr_heads, tr.heads);
            merge_nested(cfg, "model", "dim", tr_dim, tr.dim);
            merge_nested(cfg, "model", "ffn", tr_ffn, tr.ffn);
            merge_nested(cfg, "model", "max_len", tr_maxlen, tr.max_len);
            return run_train_toy(tr);
        }
        if (cmd_de->parsed()) return run_decode(de);
        if (cmd_sy->parsed()) return run_synth(sy);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
