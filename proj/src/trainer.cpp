// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#include "wildsplat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "wildsplat/image_io.hpp"
#include "wildsplat/rasterizer.hpp"

namespace fs = std::filesystem;

namespace wildsplat {

void TrainConfig::validate() const {
    if (total_steps <= 0) throw std::invalid_argument("config: total_steps must be positive");
    for (float lr : {lr_pos, lr_sh, lr_opacity, lr_scale, lr_rot, lr_net})
        if (!(lr > 0.0f)) throw std::invalid_argument("config: learning rates must be positive");
    if (degree < 0 || degree > 3)
        throw std::invalid_argument("config: degree must be in [0,3]");
    if (sh_unlock_every <= 0 || densify_every <= 0 || opacity_reset_every <= 0)
        throw std::invalid_argument("config: schedule periods must be positive");
    if (!(loss.mask_eps > 0.0f && loss.mask_eps < 1.0f))
        throw std::invalid_argument("config: mask_eps must be in (0,1)");
    for (float w : {loss.w_l1, loss.w_ssim, loss.w_regM, loss.w_regSH, loss.w_regTS, w_embed,
                    wd_net})
        if (w < 0.0f) throw std::invalid_argument("config: loss weights must be nonnegative");
}

TrainConfig parse_train_config(const std::string& text) {
    TrainConfig cfg;
    std::istringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos)
                throw std::invalid_argument("config line " + std::to_string(line_no) +
                                            ": expected key = value");
            continue;
        }
        auto trim = [](std::string s) {
            const size_t a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            const size_t b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        auto as_int = [&] { return std::stoi(val); };
        auto as_float = [&] { return std::stof(val); };
        if (key == "total_steps") cfg.total_steps = as_int();
        else if (key == "seed") cfg.seed = std::stoull(val);
        else if (key == "checkpoint_every") cfg.checkpoint_every = as_int();
        else if (key == "checkpoint_dir") cfg.checkpoint_dir = val;
        else if (key == "metrics_path") cfg.metrics_path = val;
        else if (key == "degree") cfg.degree = as_int();
        else if (key == "sh_unlock_every") cfg.sh_unlock_every = as_int();
        else if (key == "vanilla") cfg.vanilla = (val == "1" || val == "true");
        else if (key == "lr_pos") cfg.lr_pos = as_float();
        else if (key == "lr_pos_final_mult") cfg.lr_pos_final_mult = as_float();
        else if (key == "lr_sh") cfg.lr_sh = as_float();
        else if (key == "lr_opacity") cfg.lr_opacity = as_float();
        else if (key == "lr_scale") cfg.lr_scale = as_float();
        else if (key == "lr_rot") cfg.lr_rot = as_float();
        else if (key == "lr_net") cfg.lr_net = as_float();
        else if (key == "wd_net") cfg.wd_net = as_float();
        else if (key == "densify_from") cfg.densify_from = as_int();
        else if (key == "densify_until") cfg.densify_until = as_int();
        else if (key == "densify_every") cfg.densify_every = as_int();
        else if (key == "opacity_reset_every") cfg.opacity_reset_every = as_int();
        else if (key == "densify_grad_threshold") cfg.densify.grad_threshold = as_float();
        else if (key == "densify_min_opacity") cfg.densify.min_opacity = as_float();
        else if (key == "w_l1") cfg.loss.w_l1 = as_float();
        else if (key == "w_ssim") cfg.loss.w_ssim = as_float();
        else if (key == "w_regM") cfg.loss.w_regM = as_float();
        else if (key == "w_regSH") cfg.loss.w_regSH = as_float();
        else if (key == "w_regTS") cfg.loss.w_regTS = as_float();
        else if (key == "mask_eps") cfg.loss.mask_eps = as_float();
        else if (key == "w_embed") cfg.w_embed = as_float();
        else if (key == "background") {
            std::istringstream bs(val);
            bs >> cfg.background[0] >> cfg.background[1] >> cfg.background[2];
            if (!bs) throw std::invalid_argument("config: background needs three values");
        } else
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

std::string train_config_to_text(const TrainConfig& cfg) {
    std::ostringstream ss;
    ss.precision(9);
    ss << "total_steps = " << cfg.total_steps << "\nseed = " << cfg.seed
       << "\ncheckpoint_every = " << cfg.checkpoint_every << "\ndegree = " << cfg.degree
       << "\nsh_unlock_every = " << cfg.sh_unlock_every
       << "\nvanilla = " << (cfg.vanilla ? 1 : 0) << "\nlr_pos = " << cfg.lr_pos
       << "\nlr_pos_final_mult = " << cfg.lr_pos_final_mult << "\nlr_sh = " << cfg.lr_sh
       << "\nlr_opacity = " << cfg.lr_opacity << "\nlr_scale = " << cfg.lr_scale
       << "\nlr_rot = " << cfg.lr_rot << "\nlr_net = " << cfg.lr_net
       << "\nwd_net = " << cfg.wd_net
       << "\ndensify_from = " << cfg.densify_from << "\ndensify_until = " << cfg.densify_until
       << "\ndensify_every = " << cfg.densify_every
       << "\nopacity_reset_every = " << cfg.opacity_reset_every
       << "\ndensify_grad_threshold = " << cfg.densify.grad_threshold
       << "\ndensify_min_opacity = " << cfg.densify.min_opacity << "\nw_l1 = " << cfg.loss.w_l1
       << "\nw_ssim = " << cfg.loss.w_ssim << "\nw_regM = " << cfg.loss.w_regM
       << "\nw_regSH = " << cfg.loss.w_regSH << "\nw_regTS = " << cfg.loss.w_regTS
       << "\nmask_eps = " << cfg.loss.mask_eps << "\nw_embed = " << cfg.w_embed
       << "\nbackground = " << cfg.background[0] << ' '
       << cfg.background[1] << ' ' << cfg.background[2] << '\n';
    return ss.str();
}

float position_lr(const TrainConfig& cfg, int step) {
    const float t = std::clamp(static_cast<float>(step) / cfg.total_steps, 0.0f, 1.0f);
    return cfg.lr_pos * std::pow(cfg.lr_pos_final_mult, t);
}

int active_sh_degree(const TrainConfig& cfg, int step) {
    return std::min(cfg.degree, step / cfg.sh_unlock_every);
}

namespace {

Param param_from_cloud_field(const GaussianCloud& c, const char* which) {
    const int n = c.count();
    const std::string w = which;
    if (w == "pos" || w == "log_scales") {
        Tensor t({n, 3});
        for (int i = 0; i < n; ++i) {
            const Eigen::Vector3f& v =
                w == "pos" ? c.positions[static_cast<size_t>(i)] : c.log_scales[static_cast<size_t>(i)];
            for (int d = 0; d < 3; ++d) t.at2(i, d) = v[d];
        }
        return Param(std::move(t), std::string("cloud.") + which);
    }
    if (w == "rot") {
        Tensor t({n, 4});
        for (int i = 0; i < n; ++i)
            for (int d = 0; d < 4; ++d) t.at2(i, d) = c.rotations[static_cast<size_t>(i)][d];
        return Param(std::move(t), "cloud.rot");
    }
    if (w == "opacity") {
        Tensor t({n});
        for (int i = 0; i < n; ++i) t[i] = c.opacity_logits[static_cast<size_t>(i)];
        return Param(std::move(t), "cloud.opacity");
    }
    // sh
    Tensor t({n, c.sh_stride()});
    std::copy(c.sh.begin(), c.sh.end(), t.data.begin());
    return Param(std::move(t), "cloud.sh");
}

void copy_moment_rows(Param& p, const Param& old, const std::vector<int>& kept_src,
                      int row_width) {
    for (size_t i = 0; i < kept_src.size(); ++i) {
        const int src = kept_src[i];
        if (src < 0) continue;
        for (int d = 0; d < row_width; ++d) {
            p.m.data[i * row_width + d] = old.m.data[static_cast<size_t>(src) * row_width + d];
            p.v.data[i * row_width + d] = old.v.data[static_cast<size_t>(src) * row_width + d];
        }
    }
    p.t = old.t;
}

std::mt19937 step_rng(uint64_t seed, uint64_t salt) {
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                      static_cast<uint32_t>(salt), static_cast<uint32_t>(salt >> 32)};
    return std::mt19937(seq);
}

}  // namespace

TrainState TrainState::init(const TrainConfig& cfg, const SparsePointSet& points) {
    cfg.validate();
    if (points.points.empty()) throw std::invalid_argument("train: empty point set");
    TrainState s;
    s.config = cfg;
    s.cloud = init_from_points(points, cfg.degree);
    s.rebuild_params({});
    std::mt19937 rng(static_cast<uint32_t>(cfg.seed) ^ 0x5eedu);
    s.encoder = EncoderParams::init(rng);
    s.transfer = TransferParams::init(rng, cfg.degree);
    return s;
}

void TrainState::rebuild_params(const std::vector<int>& kept_src) {
    Param old_pos = std::move(pos), old_rot = std::move(rot), old_ls = std::move(log_scales),
          old_op = std::move(opacity_logits), old_sh = std::move(sh);
    pos = param_from_cloud_field(cloud, "pos");
    rot = param_from_cloud_field(cloud, "rot");
    log_scales = param_from_cloud_field(cloud, "log_scales");
    opacity_logits = param_from_cloud_field(cloud, "opacity");
    sh = param_from_cloud_field(cloud, "sh");
    if (!kept_src.empty() && old_pos.value.numel() > 0) {
        copy_moment_rows(pos, old_pos, kept_src, 3);
        copy_moment_rows(rot, old_rot, kept_src, 4);
        copy_moment_rows(log_scales, old_ls, kept_src, 3);
        copy_moment_rows(opacity_logits, old_op, kept_src, 1);
        copy_moment_rows(sh, old_sh, kept_src, cloud.sh_stride());
    }
}

void TrainState::sync_cloud_from_params() {
    const int n = cloud.count();
    for (int i = 0; i < n; ++i) {
        for (int d = 0; d < 3; ++d) {
            cloud.positions[static_cast<size_t>(i)][d] = pos.value.at2(i, d);
            cloud.log_scales[static_cast<size_t>(i)][d] = log_scales.value.at2(i, d);
        }
        for (int d = 0; d < 4; ++d)
            cloud.rotations[static_cast<size_t>(i)][d] = rot.value.at2(i, d);
        cloud.opacity_logits[static_cast<size_t>(i)] = opacity_logits.value[i];
    }
    std::copy(sh.value.data.begin(), sh.value.data.end(), cloud.sh.begin());
}

std::vector<Param*> TrainState::cloud_params() {
    return {&pos, &rot, &log_scales, &opacity_logits, &sh};
}

std::vector<Param*> TrainState::network_params() {
    std::vector<Param*> out = encoder.all();
    const auto xf = transfer.all();
    out.insert(out.end(), xf.begin(), xf.end());
    return out;
}

StepMetrics train_step(TrainState& state, const WildImage& img) {
    const TrainConfig& cfg = state.config;
    const Camera& cam = img.camera;
    Tape tape;
    Var vpos = tape.param(state.pos);
    Var vrot = tape.param(state.rot);
    Var vls = tape.param(state.log_scales);
    Var vop = tape.param(state.opacity_logits);
    Var vsh = tape.param(state.sh);

    Var mask, delta, sh_final, embedding;
    bool have_delta = false;
    if (cfg.vanilla) {
        mask = tape.constant(Tensor::full({cam.height, cam.width}, 1.0f));
        sh_final = vsh;
    } else {
        const EncodeResult enc = encode(tape, img.pixels, state.encoder);
        embedding = enc.embedding;
        mask = enc.mask_resized;
        delta = delta_sh(tape, vsh, vpos, enc.embedding, state.transfer);
        sh_final = transferred_sh(vsh, delta);
        have_delta = true;
    }

    const Tensor dirs = view_directions(state.cloud.positions, cam);
    Var colors = sh_colors_op(sh_final, dirs, cfg.degree, active_sh_degree(cfg, state.step));
    Var render = render_op(vpos, vrot, vls, vop, colors, cam, cfg.degree, cfg.background,
                           &state.cloud);
    const Tensor gt = chw_to_hwc(img.pixels);
    Var gt_var = tape.constant(gt);

    Var l_c = masked_photometric(render, gt_var, mask, cfg.loss.w_l1, cfg.loss.w_ssim);
    Var zero = tape.constant(Tensor::scalar(0.0f));
    Var l_rm = cfg.vanilla ? zero : reg_mask(mask);
    Var l_rsh = have_delta ? regularize_delta(delta) : zero;
    Var l_rts = cfg.vanilla ? zero
                            : reg_transient_gaussians(vop, state.cloud.positions, cam,
                                                      tape.value(mask), cfg.loss.mask_eps);
    Var total;
    try {
        total = total_loss(l_c, l_rm, l_rsh, l_rts, cfg.loss);
        if (!cfg.vanilla && cfg.w_embed > 0.0f)
            total = add(total, scale(sum(square(embedding)), cfg.w_embed));
    } catch (const std::exception& e) {
        throw std::runtime_error("step " + std::to_string(state.step) + ", image " +
                                 std::to_string(img.id) + ": " + e.what());
    }

    StepMetrics m;
    m.total = tape.value(total)[0];
    m.l_c = tape.value(l_c)[0];
    m.l_reg_mask = tape.value(l_rm)[0];
    m.l_reg_sh = tape.value(l_rsh)[0];
    m.l_reg_transient = tape.value(l_rts)[0];
    m.psnr_masked = psnr_masked(tape.value(render), gt, tape.value(mask));

    tape.backward(total);

    AdamConfig ac;
    ac.lr = position_lr(cfg, state.step);
    adam_step(state.pos, ac);
    ac.lr = cfg.lr_rot;
    adam_step(state.rot, ac);
    ac.lr = cfg.lr_scale;
    adam_step(state.log_scales, ac);
    ac.lr = cfg.lr_opacity;
    adam_step(state.opacity_logits, ac);
    ac.lr = cfg.lr_sh;
    adam_step(state.sh, ac);
    if (!cfg.vanilla) {
        ac.lr = cfg.lr_net;
        ac.weight_decay = cfg.wd_net;
        for (Param* p : state.network_params()) adam_step(*p, ac);
        state.embeddings.put(img.id, tape.value(embedding));
    }
    state.sync_cloud_from_params();
    m.n_gaussians = state.cloud.count();
    return m;
}

void train_continue(TrainState& state, const Dataset& dataset,
                    const std::function<void(int, const StepMetrics&)>& on_step) {
    const TrainConfig& cfg = state.config;
    if (dataset.images.empty()) throw std::invalid_argument("train: empty dataset");
    const int n_img = static_cast<int>(dataset.images.size());

    std::ofstream metrics;
    if (!cfg.metrics_path.empty()) {
        const bool fresh = !fs::exists(cfg.metrics_path);
        metrics.open(cfg.metrics_path, std::ios::app);
        if (!metrics) throw std::runtime_error("cannot write " + cfg.metrics_path);
        if (fresh)
            metrics << "step,loss,l_c,l_reg_mask,l_reg_sh,l_reg_transient,psnr_masked,n\n";
    }

    std::vector<int> order(static_cast<size_t>(n_img));
    int order_epoch = -1;
    while (state.step < cfg.total_steps) {
        const int epoch = state.step / n_img;
        if (epoch != order_epoch) {
            std::iota(order.begin(), order.end(), 0);
            auto rng = step_rng(cfg.seed, 0xe90cull * static_cast<uint64_t>(epoch) + 1);
            std::shuffle(order.begin(), order.end(), rng);
            order_epoch = epoch;
        }
        const WildImage& img = dataset.images[static_cast<size_t>(order[static_cast<size_t>(
            state.step % n_img)])];
        const StepMetrics m = train_step(state, img);
        state.step += 1;

        if (metrics.is_open())
            metrics << state.step << ',' << m.total << ',' << m.l_c << ',' << m.l_reg_mask
                    << ',' << m.l_reg_sh << ',' << m.l_reg_transient << ',' << m.psnr_masked
                    << ',' << m.n_gaussians << '\n';
        if (on_step) on_step(state.step, m);

        const int s = state.step;
        if (s >= cfg.densify_from && s <= cfg.densify_until && s % cfg.densify_every == 0) {
            auto rng = step_rng(cfg.seed, 0xd3e5ull * static_cast<uint64_t>(s) + 7);
            std::vector<int> kept_src;
            state.cloud = densify_and_prune(state.cloud, cfg.densify,
                                            state.cloud.scene_extent(), rng, &kept_src);
            state.rebuild_params(kept_src);
        }
        if (s > 0 && s <= cfg.densify_until && s % cfg.opacity_reset_every == 0) {
            reset_opacity(state.cloud);
            std::vector<int> identity(static_cast<size_t>(state.cloud.count()));
            std::iota(identity.begin(), identity.end(), 0);
            state.rebuild_params(identity);
            // fresh Adam moments for the clamped logits only
            state.opacity_logits.m.fill(0.0f);
            state.opacity_logits.v.fill(0.0f);
        }
        if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() &&
            s % cfg.checkpoint_every == 0 && s < cfg.total_steps)
            save_checkpoint(state, cfg.checkpoint_dir);
    }
    if (!cfg.checkpoint_dir.empty()) save_checkpoint(state, cfg.checkpoint_dir);
}

TrainState train(const TrainConfig& cfg, const Dataset& dataset,
                 const std::function<void(int, const StepMetrics&)>& on_step) {
    TrainState state = TrainState::init(cfg, dataset.points);
    train_continue(state, dataset, on_step);
    return state;
}

void save_checkpoint(const TrainState& state, const std::string& dir) {
    fs::create_directories(dir);
    write_ply_file(state.cloud, dir + "/cloud.ply");
    TrainState& s = const_cast<TrainState&>(state);  // params_to_blocks reads only
    std::vector<Param*> params = s.cloud_params();
    const auto nets = s.network_params();
    params.insert(params.end(), nets.begin(), nets.end());
    std::vector<NamedBlock> blocks = params_to_blocks(params);
    const int n = state.cloud.count();
    Tensor stats({n, 2}), tags({n});
    for (int i = 0; i < n; ++i) {
        stats.at2(i, 0) = state.cloud.grad2d_accum[static_cast<size_t>(i)];
        stats.at2(i, 1) = static_cast<float>(state.cloud.obs_count[static_cast<size_t>(i)]);
        tags[i] = static_cast<float>(state.cloud.tags[static_cast<size_t>(i)]);
    }
    blocks.push_back({"cloud.densify_stats", std::move(stats)});
    blocks.push_back({"cloud.tags", std::move(tags)});
    write_blocks_file(blocks, dir + "/params.bin");
    write_appearance_library(state.embeddings, dir + "/embeddings.bin");
    write_text_file(dir + "/config.txt", train_config_to_text(state.config));
    write_text_file(dir + "/meta.txt", "step = " + std::to_string(state.step) + "\n");
}

TrainState load_checkpoint(const std::string& dir) {
    TrainState s;
    s.config = parse_train_config(read_text_file(dir + "/config.txt"));
    s.cloud = read_ply_file(dir + "/cloud.ply");
    s.rebuild_params({});
    std::mt19937 rng(0);  // overwritten below by the stored parameters
    s.encoder = EncoderParams::init(rng);
    s.transfer = TransferParams::init(rng, s.config.degree);
    const std::vector<NamedBlock> blocks = read_blocks_file(dir + "/params.bin");
    std::vector<Param*> params = s.cloud_params();
    const auto nets = s.network_params();
    params.insert(params.end(), nets.begin(), nets.end());
    params_from_blocks(blocks, params);
    s.sync_cloud_from_params();
    for (const NamedBlock& blk : blocks) {
        if (blk.name == "cloud.densify_stats") {
            for (int i = 0; i < s.cloud.count(); ++i) {
                s.cloud.grad2d_accum[static_cast<size_t>(i)] = blk.tensor.at2(i, 0);
                s.cloud.obs_count[static_cast<size_t>(i)] =
                    static_cast<int>(blk.tensor.at2(i, 1));
            }
        } else if (blk.name == "cloud.tags") {
            for (int i = 0; i < s.cloud.count(); ++i)
                s.cloud.tags[static_cast<size_t>(i)] = static_cast<uint8_t>(blk.tensor[i]);
        }
    }
    s.embeddings = read_appearance_library(dir + "/embeddings.bin");
    const std::string meta = read_text_file(dir + "/meta.txt");
    const size_t eq = meta.find('=');
    if (eq == std::string::npos) throw std::runtime_error(dir + "/meta.txt: malformed");
    s.step = std::stoi(meta.substr(eq + 1));
    return s;
}

}  // namespace wildsplat
