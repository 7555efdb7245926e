// texfield — operator CLI for the textured shape completion pipeline.
//
// Subcommands: prepare (synthesize partial scans + training point sets),
// train (fit the geometry or texture model), reconstruct (complete a partial
// scan into a colored PLY), selftest (built-in diagnostics).
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "texfield/manifest.hpp"
#include "texfield/mesh.hpp"
#include "texfield/reconstruct.hpp"
#include "texfield/sampling.hpp"
#include "texfield/selfcheck.hpp"
#include "texfield/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace texfield;

namespace {

// Post-parse validation problems that are the caller's fault, not ours.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Optional key=value config file: keys mirror the long flag names of the
// invoked subcommand (steps=2000, bbox=unit, resume=true). Values from the
// file are injected as trailing --key=value tokens, skipping any key already
// given on the command line — so explicit flags always win. Unknown keys fail
// parsing the same way an unknown flag would.
std::vector<std::string> apply_config_file(std::vector<std::string> args) {
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            break;
        }
    }
    if (path.empty()) return args;

    std::ifstream is(path);
    if (!is) throw UsageError("cannot read config file: " + path);

    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    auto given = [&](const std::string& flag) {
        for (const std::string& a : args)
            if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
        return false;
    };

    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos || eq == 0)
            throw UsageError(path + ":" + std::to_string(lineno) +
                             ": expected key=value, got '" + t + "'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key == "config")
            throw UsageError(path + ":" + std::to_string(lineno) +
                             ": config files cannot chain further config files");
        if (!given("--" + key)) args.push_back("--" + key + "=" + value);
    }
    return args;
}

double now_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// --bbox accepts "human", "unit", or six comma/space separated numbers
// (xmin,ymin,zmin,xmax,ymax,zmax). "unit" additionally means: normalize the
// input into the centered unit cube and undo that on the way out.
struct ResolvedBox {
    BBox box;
    bool unit_frame = false;
};

ResolvedBox resolve_bbox(const std::vector<std::string>& tokens) {
    std::string joined;
    for (const std::string& t : tokens) {
        if (!joined.empty()) joined += ',';
        joined += t;
    }
    std::vector<std::string> fields;
    std::string cur;
    for (char c : joined) {
        if (c == ',') {
            if (!cur.empty()) fields.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur += c;
        } else if (!cur.empty()) {
            fields.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) fields.push_back(cur);

    ResolvedBox r;
    if (fields.size() == 1 && fields[0] == "human") {
        r.box = human_bbox();
        return r;
    }
    if (fields.size() == 1 && fields[0] == "unit") {
        r.box = unit_bbox();
        r.unit_frame = true;
        return r;
    }
    if (fields.size() == 6) {
        double v[6];
        for (int i = 0; i < 6; ++i) {
            std::size_t pos = 0;
            try {
                v[i] = std::stod(fields[static_cast<std::size_t>(i)], &pos);
            } catch (const std::exception&) {
                pos = 0;
            }
            if (pos != fields[static_cast<std::size_t>(i)].size())
                throw UsageError("--bbox: '" + fields[static_cast<std::size_t>(i)] +
                                 "' is not a number");
        }
        r.box.min = {v[0], v[1], v[2]};
        r.box.max = {v[3], v[4], v[5]};
        if (!r.box.valid())
            throw UsageError("--bbox: min must be strictly below max on every axis");
        return r;
    }
    throw UsageError("--bbox: expected 'human', 'unit', or six numbers "
                     "xmin,ymin,zmin,xmax,ymax,zmax");
}

json bbox_json(const BBox& b) {
    return {b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z};
}

void write_json_atomic(const std::string& path, const json& j) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp);
        if (!os) throw std::runtime_error("cannot open for writing: " + tmp);
        os << j.dump(2) << '\n';
        os.flush();
        if (!os) throw std::runtime_error("write failed: " + tmp);
    }
    fs::rename(tmp, path);
}

std::size_t worker_count(std::size_t jobs) {
    std::size_t n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("TEXFIELD_THREADS")) {
        char* end = nullptr;
        const unsigned long cap = std::strtoul(env, &end, 10);
        if (end && *end == '\0' && cap > 0) n = std::min<std::size_t>(n, cap);
    }
    return std::max<std::size_t>(1, std::min(n, jobs));
}

// ---------------------------------------------------------------------------
// prepare

struct PrepareOptions {
    std::string input_dir;
    std::string out_dir;
    int holes = 1;
    double radius_min = 0.1;
    double radius_max = 0.3;
    int variants = 4;
    std::uint64_t seed = 0;
    std::size_t points = 100000;       // occupancy + surface supervision pools
    std::size_t vox_samples = 100000;  // observed-surface points for the input grid
    bool normalize = true;
};

int run_prepare(const PrepareOptions& o) {
    if (o.holes < 1) throw UsageError("--holes must be at least 1");
    if (o.variants < 1) throw UsageError("--variants must be at least 1");
    if (!(o.radius_min > 0.0) || o.radius_max < o.radius_min)
        throw UsageError("need 0 < --radius-min <= --radius-max");
    if (o.points == 0 || o.vox_samples == 0)
        throw UsageError("--points and --vox-samples must be positive");
    if (!fs::is_directory(o.input_dir))
        throw UsageError("--input-dir: not a directory: " + o.input_dir);

    const double t0 = now_s();
    std::vector<fs::path> shapes;
    for (const auto& e : fs::recursive_directory_iterator(o.input_dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (ext == ".obj") shapes.push_back(e.path());
    }
    std::sort(shapes.begin(), shapes.end());
    if (shapes.empty()) throw std::runtime_error("no .obj meshes under " + o.input_dir);

    fs::create_directories(o.out_dir);

    // item directory names: mesh stem, disambiguated by index when stems repeat
    std::map<std::string, int> stem_count;
    for (const auto& s : shapes) ++stem_count[s.stem().string()];
    std::vector<std::string> shape_names(shapes.size());
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const std::string stem = shapes[i].stem().string();
        shape_names[i] = stem_count[stem] > 1 ? stem + "_" + std::to_string(i) : stem;
    }

    std::mutex log_mu;
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> ok_variants{0};
    std::vector<std::string> item_dirs(shapes.size() * static_cast<std::size_t>(o.variants));

    auto log_line = [&](const std::string& line) {
        std::lock_guard<std::mutex> lock(log_mu);
        std::cerr << line << '\n';
    };

    auto process_shape = [&](std::size_t si) {
        TexturedMesh mesh;
        try {
            mesh = load_obj(shapes[si].string());
            if (o.normalize) mesh = normalize_object(mesh).first;
        } catch (const std::exception& e) {
            log_line("skip " + shapes[si].string() + ": " + e.what());
            return;
        }
        OccupancySamplingConfig occ_cfg;
        occ_cfg.total_points = o.points;
        occ_cfg.sub_sample = std::min<std::size_t>(occ_cfg.sub_sample, o.points);
        const OccupancyTester tester(mesh);

        for (int v = 0; v < o.variants; ++v) {
            const std::uint64_t job_seed = mix_seed(o.seed, si, static_cast<std::uint64_t>(v));
            char suffix[16];
            std::snprintf(suffix, sizeof suffix, "_v%02d", v);
            const fs::path dir = fs::path(o.out_dir) / (shape_names[si] + suffix);
            try {
                Rng rng(job_seed);
                const PartialScan partial =
                    synthesize_partial(mesh, o.holes, o.radius_min, o.radius_max, rng);

                ColoredPoints input_pts;
                if (partial.mesh.has_texture()) {
                    input_pts = sample_colored_surface(partial.mesh, o.vox_samples, rng);
                } else {
                    input_pts.points = sample_surface_points(partial.mesh, o.vox_samples, rng);
                    input_pts.colors.assign(input_pts.points.size(), {0.0, 0.0, 0.0});
                }
                const OccupancyPoints occ = sample_occupancy(mesh, tester, occ_cfg, rng);
                ColoredPoints surface;
                if (mesh.has_texture()) surface = sample_colored_surface(mesh, o.points, rng);

                fs::create_directories(dir);
                save_textured_obj((dir / kPartialObjFile).string(), partial.mesh);
                save_colored_pset((dir / kInputPsetFile).string(), input_pts);
                save_occupancy_pset((dir / kOccupancyPsetFile).string(), occ);
                if (mesh.has_texture())
                    save_colored_pset((dir / kSurfacePsetFile).string(), surface);

                json holes_j = json::array();
                for (const Hole& h : partial.holes)
                    holes_j.push_back({{"center", {h.center.x, h.center.y, h.center.z}},
                                       {"radius", h.radius}});
                write_json_atomic((dir / kItemMeta).string(),
                                  {{"name", dir.filename().string()},
                                   {"source", shapes[si].string()},
                                   {"variant", v},
                                   {"seed", job_seed},
                                   {"normalized", o.normalize},
                                   {"textured", mesh.has_texture()},
                                   {"holes", holes_j},
                                   {"faces_kept", partial.mesh.faces.size()},
                                   {"counts",
                                    {{"input", input_pts.points.size()},
                                     {"occupancy", occ.points.size()},
                                     {"surface", surface.points.size()}}}});

                item_dirs[si * static_cast<std::size_t>(o.variants) +
                          static_cast<std::size_t>(v)] = dir.string();
                ok_variants.fetch_add(1);
                log_line("prepared " + dir.string() + " (" +
                         std::to_string(partial.mesh.faces.size()) + "/" +
                         std::to_string(mesh.faces.size()) + " faces kept)");
            } catch (const std::exception& e) {
                log_line("skip " + dir.string() + ": " + e.what());
            }
        }
    };

    const std::size_t threads = worker_count(shapes.size());
    if (threads <= 1) {
        for (std::size_t i = 0; i < shapes.size(); ++i) process_shape(i);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= shapes.size()) return;
                    process_shape(i);
                }
            });
        for (std::thread& t : pool) t.join();
    }

    RunManifest man;
    man.command = "prepare";
    man.seed = o.seed;
    man.config = {{"input-dir", o.input_dir}, {"out-dir", o.out_dir},
                  {"holes", o.holes},         {"radius-min", o.radius_min},
                  {"radius-max", o.radius_max}, {"variants", o.variants},
                  {"seed", o.seed},           {"points", o.points},
                  {"vox-samples", o.vox_samples}, {"normalize", o.normalize}};
    for (const auto& s : shapes) man.inputs.push_back(s.string());
    for (const auto& d : item_dirs)
        if (!d.empty()) man.outputs.push_back(d);
    man.wall_time_s = now_s() - t0;
    write_manifest((fs::path(o.out_dir) / "prepare_manifest.json").string(), man);

    const std::size_t total = shapes.size() * static_cast<std::size_t>(o.variants);
    std::cerr << "prepared " << ok_variants.load() << "/" << total << " items\n";
    if (ok_variants.load() == 0) throw std::runtime_error("every input shape failed to prepare");
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
    std::string mode = "geometry";
    std::string data;
    int res = 32;
    std::uint64_t steps = 1000;
    std::uint64_t seed = 0;
    std::string ckpt_out;
    int batch_size = 1;
    int points_per_item = 1024;
    double lr = 1e-4;
    std::vector<std::string> bbox{"unit"};
    std::string trace_out;
    std::uint64_t checkpoint_every = 0;
    std::size_t subsample = 50000;
    bool resume = false;
};

int run_train(const TrainOptions& o) {
    if (o.res < kMinGridRes || o.res > kMaxGridRes)
        throw UsageError("--res must lie in [" + std::to_string(kMinGridRes) + ", " +
                         std::to_string(kMaxGridRes) + "]");
    if (o.batch_size < 1) throw UsageError("--batch-size must be at least 1");
    if (o.points_per_item < 1) throw UsageError("--points-per-item must be at least 1");
    if (!(o.lr > 0.0)) throw UsageError("--lr must be positive");
    if (o.subsample == 0) throw UsageError("--subsample must be positive");

    const double t0 = now_s();
    TrainConfig cfg;
    cfg.mode = train_mode_from_string(o.mode);
    cfg.res = o.res;
    cfg.batch_size = o.batch_size;
    cfg.points_per_item = o.points_per_item;
    cfg.steps = o.steps;
    cfg.lr = o.lr;
    cfg.seed = o.seed;
    cfg.subsample = o.subsample;
    cfg.checkpoint_every = o.checkpoint_every;
    cfg.box = resolve_bbox(o.bbox).box;
    cfg.ckpt_path = o.ckpt_out;
    cfg.trace_path = o.trace_out;

    ModelConfig mcfg =
        cfg.mode == TrainMode::geometry ? geometry_model_config() : texture_model_config();
    ModelParams params;
    AdamState adam;
    if (o.resume) {
        const Checkpoint ck = load_checkpoint(o.ckpt_out);
        const std::string ck_mode = ck.meta.value("mode", "");
        if (ck_mode != o.mode)
            throw std::runtime_error("--resume: checkpoint was trained with mode '" + ck_mode +
                                     "', not '" + o.mode + "'");
        if (!ck.has_adam)
            throw std::runtime_error("--resume: checkpoint carries no optimizer state");
        mcfg = model_config_from_json(ck.meta.at("model"));
        cfg.res = ck.meta.at("res").get<int>();
        cfg.box = bbox_from_meta(ck.meta.at("bbox"));
        cfg.seed = ck.meta.at("seed").get<std::uint64_t>();
        params = ck.params;
        adam = ck.adam;
        std::cerr << "resuming " << o.ckpt_out << " at step " << adam.step_count
                  << " (res/bbox/seed restored from the checkpoint)\n";
    } else {
        params = init_model(mcfg, cfg.seed);
    }

    const std::vector<TrainItem> items = load_train_items(o.data, cfg.mode, cfg.res, cfg.box);
    std::cerr << "training " << o.mode << " on " << items.size() << " item(s), res " << cfg.res
              << ", to step " << cfg.steps << '\n';
    const TrainResult result = train(mcfg, cfg, params, adam, items, &std::cerr);

    RunManifest man;
    man.command = "train";
    man.seed = cfg.seed;
    man.config = {{"mode", o.mode},
                  {"data", o.data},
                  {"res", cfg.res},
                  {"steps", cfg.steps},
                  {"seed", cfg.seed},
                  {"ckpt-out", o.ckpt_out},
                  {"batch-size", cfg.batch_size},
                  {"points-per-item", cfg.points_per_item},
                  {"lr", cfg.lr},
                  {"bbox", bbox_json(cfg.box)},
                  {"trace-out", o.trace_out},
                  {"checkpoint-every", cfg.checkpoint_every},
                  {"subsample", cfg.subsample},
                  {"resume", o.resume}};
    man.inputs.push_back(o.data);
    if (o.resume) man.inputs.push_back(o.ckpt_out);
    man.outputs.push_back(o.ckpt_out);
    if (!o.trace_out.empty()) man.outputs.push_back(o.trace_out);
    man.wall_time_s = now_s() - t0;
    write_manifest(o.ckpt_out + ".manifest.json", man);

    std::cerr << "ran " << result.steps_run << " step(s); final loss " << result.last.loss
              << " (mean " << result.last.mean_loss << "); wrote " << o.ckpt_out << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// reconstruct

struct ReconstructCliOptions {
    std::string partial;
    std::string geo_ckpt;
    std::string tex_ckpt;
    int res_eval = 64;
    std::vector<std::string> bbox{"unit"};
    std::string out;
    std::string field_out;
    std::size_t vox_samples = 100000;
    std::uint64_t seed = 0;
    double iso = kIsoLevel;
};

int run_reconstruct(const ReconstructCliOptions& o) {
    if (o.res_eval < 2) throw UsageError("--res-eval must be at least 2");
    if (o.vox_samples == 0) throw UsageError("--vox-samples must be positive");
    if (!(o.iso > 0.0) || !(o.iso < 1.0)) throw UsageError("--iso must lie in (0,1)");

    const double t0 = now_s();
    const ResolvedBox rb = resolve_bbox(o.bbox);
    const TexturedMesh partial = load_obj(o.partial);
    const Checkpoint geo = load_checkpoint(o.geo_ckpt);
    Checkpoint tex;
    const bool with_tex = !o.tex_ckpt.empty();
    if (with_tex) tex = load_checkpoint(o.tex_ckpt);

    ReconstructOptions opt;
    opt.res_eval = o.res_eval;
    opt.vox_samples = o.vox_samples;
    opt.seed = o.seed;
    opt.iso = o.iso;
    opt.box = rb.box;
    opt.unit_frame = rb.unit_frame;

    const ReconstructResult result =
        reconstruct_full(partial, geo, with_tex ? &tex : nullptr, opt);
    save_colored_ply(o.out, result.mesh);
    if (!o.field_out.empty()) save_field(o.field_out, result.field);

    RunManifest man;
    man.command = "reconstruct";
    man.seed = o.seed;
    man.config = {{"partial", o.partial},
                  {"geo-ckpt", o.geo_ckpt},
                  {"tex-ckpt", o.tex_ckpt},
                  {"res-eval", o.res_eval},
                  {"bbox", bbox_json(rb.box)},
                  {"unit-frame", rb.unit_frame},
                  {"out", o.out},
                  {"field-out", o.field_out},
                  {"vox-samples", o.vox_samples},
                  {"seed", o.seed},
                  {"iso", o.iso}};
    man.inputs = {o.partial, o.geo_ckpt};
    if (with_tex) man.inputs.push_back(o.tex_ckpt);
    man.outputs.push_back(o.out);
    if (!o.field_out.empty()) man.outputs.push_back(o.field_out);
    man.wall_time_s = now_s() - t0;
    write_manifest(o.out + ".manifest.json", man);

    std::cerr << "reconstructed " << result.mesh.vertices.size() << " vertices, "
              << result.mesh.faces.size() << " faces"
              << (with_tex ? " (colored)" : " (geometry only)") << "; dropped "
              << result.dropped_input_points << " out-of-box input point(s); wrote " << o.out
              << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// selftest

int run_selftest_cmd(const std::string& inject_fault) {
    const auto results = run_selftest(inject_fault);
    int failures = 0;
    for (const auto& r : results) {
        std::cout << (r.ok ? "ok   " : "FAIL ") << r.name << "  —  " << r.detail << '\n';
        if (!r.ok) ++failures;
    }
    if (failures == 0) {
        std::cout << "all " << results.size() << " checks passed\n";
        return 0;
    }
    std::cout << failures << " of " << results.size() << " checks failed\n";
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"textured shape completion: prepare data, train implicit models, "
                 "reconstruct colored meshes"};
    app.require_subcommand(1);
    app.set_version_flag("--version", TEXFIELD_GIT_DESCRIBE);

    PrepareOptions po;
    CLI::App* prep = app.add_subcommand(
        "prepare", "synthesize partial scans and training point sets from OBJ meshes");
    std::string prep_config;
    prep->add_option("--config", prep_config, "key=value file mirroring these flags; flags win");
    prep->add_option("--input-dir", po.input_dir, "directory scanned recursively for .obj meshes")
        ->required();
    prep->add_option("--out-dir", po.out_dir, "output dataset directory")->required();
    prep->add_option("--holes", po.holes, "holes per variant");
    prep->add_option("--radius-min", po.radius_min, "smallest hole radius");
    prep->add_option("--radius-max", po.radius_max, "largest hole radius");
    prep->add_option("--variants", po.variants, "partial scans per shape");
    prep->add_option("--seed", po.seed, "global seed; per-shape seeds are derived");
    prep->add_option("--points", po.points, "occupancy/surface supervision points per item");
    prep->add_option("--vox-samples", po.vox_samples, "observed-surface points per item");
    prep->add_flag("--normalize,!--no-normalize", po.normalize,
                   "center each shape and scale its longest edge to 1 first");

    TrainOptions to;
    CLI::App* tr = app.add_subcommand("train", "fit a geometry or texture model");
    std::string tr_config;
    tr->add_option("--config", tr_config, "key=value file mirroring these flags; flags win");
    tr->add_option("--mode", to.mode, "geometry or texture")
        ->required()
        ->check(CLI::IsMember({"geometry", "texture"}));
    tr->add_option("--data", to.data, "prepared dataset directory")->required();
    tr->add_option("--res", to.res, "input voxel grid resolution");
    tr->add_option("--steps", to.steps, "total optimization steps (resume counts prior steps)");
    tr->add_option("--seed", to.seed, "training seed");
    tr->add_option("--ckpt-out", to.ckpt_out, "checkpoint path to write (and resume from)")
        ->required();
    tr->add_option("--batch-size", to.batch_size, "items per step");
    tr->add_option("--points-per-item", to.points_per_item, "supervision points per item per step");
    tr->add_option("--lr", to.lr, "learning rate");
    tr->add_option("--bbox", to.bbox, "working volume: human, unit, or 6 numbers")
        ->expected(1, 6);
    tr->add_option("--trace-out", to.trace_out, "loss trace csv path");
    tr->add_option("--checkpoint-every", to.checkpoint_every,
                   "also snapshot every N steps (0 = final only)");
    tr->add_option("--subsample", to.subsample, "per-epoch pool subsample per item");
    tr->add_flag("--resume", to.resume, "continue from --ckpt-out");

    ReconstructCliOptions ro;
    CLI::App* rc = app.add_subcommand("reconstruct",
                                      "complete a partial textured scan into a colored PLY");
    std::string rc_config;
    rc->add_option("--config", rc_config, "key=value file mirroring these flags; flags win");
    rc->add_option("--partial", ro.partial, "partial scan OBJ")->required();
    rc->add_option("--geo-ckpt", ro.geo_ckpt, "geometry model checkpoint")->required();
    rc->add_option("--tex-ckpt", ro.tex_ckpt, "texture model checkpoint (omit for bare geometry)");
    rc->add_option("--res-eval", ro.res_eval, "dense field evaluation resolution");
    rc->add_option("--bbox", ro.bbox, "working volume: human, unit, or 6 numbers")
        ->expected(1, 6);
    rc->add_option("--out", ro.out, "output PLY path")->required();
    rc->add_option("--field-out", ro.field_out, "also dump the occupancy field");
    rc->add_option("--vox-samples", ro.vox_samples, "surface points drawn for voxelization");
    rc->add_option("--seed", ro.seed, "sampling seed");
    rc->add_option("--iso", ro.iso, "iso level for surface extraction");

    std::string inject_fault;
    CLI::App* st = app.add_subcommand("selftest", "run built-in diagnostics (< 60 s)");
    std::string st_config;
    st->add_option("--config", st_config, "key=value file mirroring these flags; flags win");
    st->add_option("--inject-fault", inject_fault,
                   "corrupt one layer's gradient to prove the checks bite")
        ->check(CLI::IsMember({"conv3d", "linear", "trilinear"}));

    try {
        std::vector<std::string> args =
            apply_config_file(std::vector<std::string>(argv + 1, argv + argc));
        std::reverse(args.begin(), args.end());  // the vector overload wants them reversed
        app.parse(std::move(args));
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);  // prints help or the parse problem
        return code == 0 ? 0 : 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    }

    try {
        if (*prep) return run_prepare(po);
        if (*tr) return run_train(to);
        if (*rc) return run_reconstruct(ro);
        if (*st) return run_selftest_cmd(inject_fault);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
