// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface: synthetic data generation, training, rendering,
// baking, appearance interpolation, evaluation, and mask inspection.
#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "wildsplat/checkpoint.hpp"
#include "wildsplat/harness.hpp"
#include "wildsplat/image_io.hpp"
#include "wildsplat/trainer.hpp"

namespace fs = std::filesystem;
using namespace wildsplat;

namespace {

Camera camera_from_file(const std::string& cameras_path, int camera_id) {
    for (const auto& [id, cam] : read_cameras_text(cameras_path))
        if (id == camera_id) return cam;
    throw std::runtime_error(cameras_path + ": no camera with id " +
                             std::to_string(camera_id));
}

Tensor embedding_for(const TrainState& state, int image_id, const std::string& embedding_file,
                     int embedding_id) {
    if (!embedding_file.empty()) {
        const AppearanceLibrary lib = read_appearance_library(embedding_file);
        const Tensor* e = lib.find(embedding_id);
        if (!e)
            throw std::runtime_error(embedding_file + ": no embedding with id " +
                                     std::to_string(embedding_id));
        return *e;
    }
    const Tensor* e = state.embeddings.find(image_id);
    if (!e)
        throw std::runtime_error("checkpoint has no embedding for image id " +
                                 std::to_string(image_id));
    return *e;
}

std::string frame_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%03d.png", i);
    return buf;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Differentiable Gaussian-splat renderer with per-image appearance "
                 "and transient masking"};
    app.require_subcommand(1);

    // --- synth ---
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
    std::string synth_out;
    SyntheticSceneSpec spec;
    synth_cmd->add_option("--out", synth_out, "Output dataset directory")->required();
    synth_cmd->add_option("--seed", spec.seed);
    synth_cmd->add_option("--gaussians", spec.n_gaussians);
    synth_cmd->add_option("--cameras", spec.n_cameras);
    synth_cmd->add_option("--appearances", spec.n_appearances);
    synth_cmd->add_option("--width", spec.width);
    synth_cmd->add_option("--height", spec.height);
    synth_cmd->add_option("--occluder-fraction", spec.occluder_fraction);

    // --- train ---
    auto* train_cmd = app.add_subcommand("train", "Train from a config file");
    std::string train_config_path, train_dataset, train_out;
    bool train_resume = false;
    train_cmd->add_option("--config", train_config_path, "key = value config file")
        ->required();
    train_cmd->add_option("--dataset", train_dataset, "Dataset directory")->required();
    train_cmd->add_option("--out", train_out, "Checkpoint directory")->required();
    train_cmd->add_flag("--resume", train_resume, "Continue from --out");

    // --- render ---
    auto* render_cmd = app.add_subcommand("render", "Render one view to PNG");
    std::string r_ckpt, r_cams, r_out, r_embedding_file;
    int r_camera_id = 0, r_image_id = -1, r_embedding_id = -1;
    render_cmd->add_option("--checkpoint", r_ckpt)->required();
    render_cmd->add_option("--cameras", r_cams, "cameras.txt")->required();
    render_cmd->add_option("--camera-id", r_camera_id)->required();
    render_cmd->add_option("--image-id", r_image_id, "Use this training image's embedding");
    render_cmd->add_option("--embedding-file", r_embedding_file, "Appearance library file");
    render_cmd->add_option("--embedding-id", r_embedding_id);
    render_cmd->add_option("--out", r_out)->required();

    // --- bake ---
    auto* bake_cmd = app.add_subcommand("bake", "Freeze one appearance into a PLY");
    std::string b_ckpt, b_out, b_embedding_file;
    int b_image_id = -1, b_embedding_id = -1;
    bake_cmd->add_option("--checkpoint", b_ckpt)->required();
    bake_cmd->add_option("--image-id", b_image_id);
    bake_cmd->add_option("--embedding-file", b_embedding_file);
    bake_cmd->add_option("--embedding-id", b_embedding_id);
    bake_cmd->add_option("--out", b_out)->required();

    // --- interp ---
    auto* interp_cmd = app.add_subcommand("interp", "Interpolate two appearances");
    std::string i_ckpt, i_cams, i_out_dir;
    int i_camera_id = 0, i_image_a = 0, i_image_b = 0, i_frames = 8;
    interp_cmd->add_option("--checkpoint", i_ckpt)->required();
    interp_cmd->add_option("--cameras", i_cams)->required();
    interp_cmd->add_option("--camera-id", i_camera_id)->required();
    interp_cmd->add_option("--image-a", i_image_a)->required();
    interp_cmd->add_option("--image-b", i_image_b)->required();
    interp_cmd->add_option("--frames", i_frames);
    interp_cmd->add_option("--out-dir", i_out_dir)->required();

    // --- eval ---
    auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a dataset");
    std::string e_ckpt, e_dataset, e_out;
    eval_cmd->add_option("--checkpoint", e_ckpt)->required();
    eval_cmd->add_option("--dataset", e_dataset)->required();
    eval_cmd->add_option("--out", e_out, "Per-image CSV path")->required();

    // --- mask-dump ---
    auto* mask_cmd = app.add_subcommand("mask-dump", "Write predicted masks as PNGs");
    std::string m_ckpt, m_dataset, m_out_dir;
    mask_cmd->add_option("--checkpoint", m_ckpt)->required();
    mask_cmd->add_option("--dataset", m_dataset)->required();
    mask_cmd->add_option("--out-dir", m_out_dir)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth_cmd) {
            save_dataset(synth(spec).dataset, synth_out);
            std::cout << "wrote dataset to " << synth_out << "\n";
        } else if (*train_cmd) {
            TrainConfig cfg = parse_train_config(read_text_file(train_config_path));
            cfg.checkpoint_dir = train_out;
            const Dataset ds = load_dataset(train_dataset);
            if (train_resume) {
                TrainState state = load_checkpoint(train_out);
                state.config.total_steps = cfg.total_steps;
                state.config.checkpoint_dir = train_out;
                train_continue(state, ds);
            } else {
                train(cfg, ds);
            }
            std::cout << "checkpoint written to " << train_out << "\n";
        } else if (*render_cmd) {
            TrainState state = load_checkpoint(r_ckpt);
            const Camera cam = camera_from_file(r_cams, r_camera_id);
            Tensor img;
            if (state.config.vanilla || (r_image_id < 0 && r_embedding_file.empty())) {
                img = render_cloud(state.cloud, cam, state.config.background);
            } else {
                img = render_with_embedding(
                    state, embedding_for(state, r_image_id, r_embedding_file, r_embedding_id),
                    cam);
            }
            write_png_rgb(img, r_out);
        } else if (*bake_cmd) {
            TrainState state = load_checkpoint(b_ckpt);
            const Tensor e = embedding_for(state, b_image_id, b_embedding_file, b_embedding_id);
            write_ply_file(bake(state.cloud, e, state.transfer), b_out);
        } else if (*interp_cmd) {
            TrainState state = load_checkpoint(i_ckpt);
            const Camera cam = camera_from_file(i_cams, i_camera_id);
            const Tensor la = embedding_for(state, i_image_a, "", -1);
            const Tensor lb = embedding_for(state, i_image_b, "", -1);
            if (i_frames < 2) throw CLI::ValidationError("--frames", "need at least 2");
            fs::create_directories(i_out_dir);
            for (int f = 0; f < i_frames; ++f) {
                const float t = static_cast<float>(f) / (i_frames - 1);
                const Tensor img =
                    render_with_embedding(state, interpolate_appearance(la, lb, t), cam);
                write_png_rgb(img, i_out_dir + "/" + frame_name(f));
            }
        } else if (*eval_cmd) {
            TrainState state = load_checkpoint(e_ckpt);
            const Dataset ds = load_dataset(e_dataset);
            const EvalReport rep = evaluate(state, ds);
            write_text_file(e_out, rep.to_csv());
            std::cout << "mean_psnr=" << rep.mean_psnr << " mean_ssim=" << rep.mean_ssim
                      << " mean_psnr_masked=" << rep.mean_psnr_masked
                      << " mask_separation=" << rep.mask_separation << "\n";
        } else if (*mask_cmd) {
            TrainState state = load_checkpoint(m_ckpt);
            if (state.config.vanilla)
                throw std::runtime_error("mask-dump: baseline checkpoints have no mask module");
            const Dataset ds = load_dataset(m_dataset);
            fs::create_directories(m_out_dir);
            for (const WildImage& img : ds.images) {
                const AppearanceOutput enc = encode_values(img.pixels, state.encoder);
                write_png_gray(enc.mask_resized, m_out_dir + "/" + image_file_name(img.id));
            }
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
