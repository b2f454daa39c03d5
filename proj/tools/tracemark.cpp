// Command-line surface for the two-trace deepfake defense pipeline.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "tracemark/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tracemark;

namespace {

std::vector<Image> load_dir_images(const fs::path& dir) {
    if (!fs::is_directory(dir))
        throw std::runtime_error("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string ext = e.path().extension().string();
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp")
            files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Image> out;
    for (const auto& f : files) out.push_back(load_image(f));
    if (out.empty()) throw std::runtime_error("no images in " + dir.string());
    return out;
}

void save_images(const std::vector<Image>& imgs, const fs::path& dir, const char* prefix) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < imgs.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s_%05zu.png", prefix, i);
        save_png(imgs[i], dir / name);
    }
}

nlohmann::json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::json j;
    in >> j;
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-trace deepfake defense pipeline"};
    app.require_subcommand(1);

    // ---- synth-dataset
    auto* c_synth = app.add_subcommand("synth-dataset",
                                       "generate a procedural per-identity face corpus");
    std::string sy_out;
    int sy_identities = 2, sy_faces = 600, sy_res = 64;
    std::uint64_t sy_seed = 0;
    c_synth->add_option("--out", sy_out, "output directory")->required();
    c_synth->add_option("--identities", sy_identities);
    c_synth->add_option("--faces", sy_faces, "faces per identity");
    c_synth->add_option("--resolution", sy_res);
    c_synth->add_option("--seed", sy_seed);
    c_synth->callback([&] {
        Rng rng(sy_seed);
        for (int i = 0; i < sy_identities; ++i) {
            char id[32];
            std::snprintf(id, sizeof(id), "id%03d", i);
            auto faces = synth_identity_set(rng.next_u32(), static_cast<std::size_t>(sy_faces),
                                            sy_res, static_cast<std::uint64_t>(i));
            save_images(faces, fs::path(sy_out) / id, "face");
        }
        std::cout << "wrote " << sy_identities << " identities under " << sy_out << "\n";
    });

    // ---- ingest
    auto* c_ingest = app.add_subcommand("ingest", "normalize a face corpus and write a manifest");
    std::string in_source, in_out;
    int in_res = 64;
    double in_ratio = 0.5;
    std::uint64_t in_seed = 0;
    c_ingest->add_option("--source", in_source, "directory of per-identity folders")->required();
    c_ingest->add_option("--out", in_out)->required();
    c_ingest->add_option("--resolution", in_res);
    c_ingest->add_option("--train-ratio", in_ratio);
    c_ingest->add_option("--seed", in_seed);
    c_ingest->callback([&] {
        DatasetManifest m = ingest(in_source, in_res, in_out, in_ratio, in_seed);
        std::cout << "ingested " << m.identities.size() << " identities, skipped "
                  << m.skipped.size() << " files; manifest at " << in_out << "/manifest.json\n";
    });

    // ---- train-simulator
    auto* c_sim = app.add_subcommand("train-simulator",
                                     "pretrain the reconstruction autoencoder on clean faces");
    std::string ts_manifest, ts_out;
    SimulatorTrainConfig ts_cfg;
    c_sim->add_option("--manifest", ts_manifest, "dataset manifest")->required();
    c_sim->add_option("--out", ts_out, "checkpoint directory")->required();
    c_sim->add_option("--iterations", ts_cfg.max_iterations);
    c_sim->add_option("--base-width", ts_cfg.base_width);
    c_sim->add_option("--bottleneck", ts_cfg.bottleneck_dim);
    c_sim->add_option("--lr", ts_cfg.learning_rate);
    c_sim->add_option("--resolution", ts_cfg.resolution);
    c_sim->add_option("--min-faces", ts_cfg.min_faces);
    c_sim->add_option("--holdout", ts_cfg.holdout);
    c_sim->add_option("--stop-psnr", ts_cfg.stop_psnr);
    c_sim->add_option("--seed", ts_cfg.seed);
    c_sim->callback([&] {
        DatasetManifest m = DatasetManifest::load(ts_manifest);
        std::vector<Image> faces;
        for (const auto& [id, entries] : m.identities) {
            auto imgs = m.load_split(id, Split::Train);
            faces.insert(faces.end(), imgs.begin(), imgs.end());
        }
        SimulatorTrainResult r = pretrain_simulator(faces, ts_cfg);
        save_checkpoint(r.simulator->params(), ts_out, "reconstruction_simulator",
                        {{"resolution", ts_cfg.resolution},
                         {"base_width", ts_cfg.base_width},
                         {"bottleneck_dim", ts_cfg.bottleneck_dim},
                         {"holdout_psnr", r.final_psnr}});
        std::cout << "held-out psnr " << r.final_psnr << " dB; checkpoint at " << ts_out << "\n";
    });

    // ---- train-tracer
    auto* c_tr = app.add_subcommand("train-tracer",
                                    "jointly train the trace generator and identifier");
    std::string tr_manifest, tr_identity, tr_sim, tr_out;
    TrainerConfig tr_cfg;
    c_tr->add_option("--manifest", tr_manifest)->required();
    c_tr->add_option("--identity", tr_identity, "protected identity id")->required();
    c_tr->add_option("--simulator", tr_sim, "pretrained simulator checkpoint")->required();
    c_tr->add_option("--out", tr_out, "run directory")->required();
    c_tr->add_option("--iterations", tr_cfg.max_iterations);
    c_tr->add_option("--batch", tr_cfg.batch_size);
    c_tr->add_option("--lr", tr_cfg.learning_rate);
    c_tr->add_option("--eval-interval", tr_cfg.eval_interval);
    c_tr->add_option("--gen-width", tr_cfg.gen_base_width);
    c_tr->add_option("--idn-width", tr_cfg.idn_base_width);
    c_tr->add_option("--embed-dim", tr_cfg.idn_embed_dim);
    c_tr->add_option("--bits", tr_cfg.sequence_length, "sequence length");
    c_tr->add_option("--val-samples", tr_cfg.validation_samples);
    c_tr->add_option("--negative-fraction", tr_cfg.negative_fraction);
    c_tr->add_option("--mismatch-fraction", tr_cfg.mismatch_fraction);
    c_tr->add_option("--negative-warmup", tr_cfg.negative_warmup_iterations);
    c_tr->add_option("--stop-bacc", tr_cfg.stop_bacc);
    c_tr->add_option("--stop-ssim", tr_cfg.stop_ssim);
    c_tr->add_option("--stop-clean-bacc", tr_cfg.stop_clean_bacc);
    c_tr->add_option("--resolution", tr_cfg.resolution);
    c_tr->add_option("--seed", tr_cfg.seed);
    c_tr->callback([&] {
        DatasetManifest m = DatasetManifest::load(tr_manifest);
        std::vector<Image> faces = m.load_split(tr_identity, Split::Train);
        AnchorFace anchor = compute_anchor(faces);
        auto sim = load_simulator(tr_sim);
        TracerTrainResult r = train_tracer(faces, anchor, *sim, tr_cfg);
        fs::create_directories(tr_out);
        save_png(anchor.image, fs::path(tr_out) / "anchor.png");
        r.log.save(fs::path(tr_out) / "tracer_log.jsonl");
        save_checkpoint(r.generator->params(), fs::path(tr_out) / "generator", "trace_generator",
                        {{"sequence_length", tr_cfg.sequence_length},
                         {"base_width", tr_cfg.gen_base_width}});
        save_checkpoint(r.identifier->params(), fs::path(tr_out) / "identifier",
                        "trace_identifier",
                        {{"sequence_length", tr_cfg.sequence_length},
                         {"resolution", tr_cfg.resolution},
                         {"base_width", tr_cfg.idn_base_width},
                         {"embed_dim", tr_cfg.idn_embed_dim}});
        // mint the deployment profile: fixed identity bits plus an etrace key
        Rng deploy_rng = Rng(tr_cfg.seed).fork(4);
        IdentityProfile profile;
        profile.identity_id = tr_identity;
        profile.bits = BitSequence::random(
            static_cast<std::size_t>(tr_cfg.sequence_length), deploy_rng);
        profile.etrace_key = derive_key(deploy_rng.next_u32(), tr_cfg.resolution,
                                        tr_cfg.resolution, 64, 128);
        profile.tracer_checkpoint = (fs::path(tr_out) / "generator").string();
        profile.anchor_file = (fs::path(tr_out) / "anchor.png").string();
        profile.save(fs::path(tr_out) / "identity_profile.json");

        const auto& last = r.log.records.back();
        std::cout << "final decode accuracy " << last.accuracy << ", ssim "
                  << last.ssim_traced << "; checkpoints under " << tr_out << "\n";
    });

    // ---- protect
    auto* c_prot = app.add_subcommand("protect", "implant both traces into an identity's faces");
    std::string pr_faces, pr_profile, pr_out;
    double pr_fraction = 1.0;
    std::uint64_t pr_seed = 0;
    c_prot->add_option("--faces", pr_faces, "directory of face images")->required();
    c_prot->add_option("--profile", pr_profile, "identity profile json")->required();
    c_prot->add_option("--out", pr_out)->required();
    c_prot->add_option("--fraction", pr_fraction, "fraction of faces to trace");
    c_prot->add_option("--seed", pr_seed);
    c_prot->callback([&] {
        IdentityProfile profile = IdentityProfile::load(pr_profile);
        auto gen = load_generator(profile.tracer_checkpoint);
        AnchorFace anchor{load_image(profile.anchor_file), 0};
        std::vector<Image> faces = load_dir_images(pr_faces);
        ProtectResult r = protect(faces, *gen, anchor, profile.bits, profile.etrace_key,
                                  pr_fraction, pr_out, pr_seed);
        const auto traced = std::count(r.traced.begin(), r.traced.end(), true);
        std::cout << "wrote " << r.files.size() << " images (" << traced << " traced) to "
                  << pr_out << "\n";
    });

    // ---- train-attacker
    auto* c_atk = app.add_subcommand("train-attacker",
                                     "train the face-swap model on two identity sets");
    std::string at_src, at_tgt, at_out;
    std::int64_t at_in = 64, at_outres = 64;
    FaceSwapTrainConfig at_cfg;
    c_atk->add_option("--src", at_src, "source identity face directory")->required();
    c_atk->add_option("--tgt", at_tgt, "target identity face directory")->required();
    c_atk->add_option("--out", at_out, "checkpoint directory")->required();
    c_atk->add_option("--encoder-input", at_in, "one of 64/128/256");
    c_atk->add_option("--decoder-output", at_outres, "one of 64/128/256");
    c_atk->add_option("--iterations", at_cfg.max_iterations);
    c_atk->add_option("--base-width", at_cfg.base_width);
    c_atk->add_option("--bottleneck", at_cfg.bottleneck_dim);
    c_atk->add_option("--lr", at_cfg.learning_rate);
    c_atk->add_option("--seed", at_cfg.seed);
    c_atk->callback([&] {
        ArchVariant variant{at_in, at_outres};
        FaceSwapTrainResult r = train_faceswap(load_dir_images(at_src), load_dir_images(at_tgt),
                                               variant, at_cfg);
        save_checkpoint(r.model->params(), at_out, "faceswap",
                        {{"encoder_input", variant.encoder_input},
                         {"decoder_output", variant.decoder_output},
                         {"base_width", at_cfg.base_width},
                         {"bottleneck_dim", at_cfg.bottleneck_dim},
                         {"identities", {"src", "tgt"}}});
        const auto& [it, lsrc, ltgt] = r.loss_log.back();
        std::cout << "final reconstruction L1 src " << lsrc << ", tgt " << ltgt
                  << "; checkpoint at " << at_out << "\n";
    });

    // ---- swap
    auto* c_swap = app.add_subcommand("swap", "route source faces through the target decoder");
    std::string sw_model, sw_in, sw_out, sw_id = "tgt";
    c_swap->add_option("--model", sw_model, "face-swap checkpoint")->required();
    c_swap->add_option("--input", sw_in, "source face image or directory")->required();
    c_swap->add_option("--out", sw_out, "output directory")->required();
    c_swap->add_option("--target-id", sw_id);
    c_swap->callback([&] {
        auto model = load_faceswap(sw_model);
        std::vector<Image> sources = fs::is_directory(sw_in)
                                         ? load_dir_images(sw_in)
                                         : std::vector<Image>{load_image(sw_in)};
        std::vector<Image> outputs;
        for (const auto& s : sources) outputs.push_back(quantize8(swap(*model, s, sw_id)));
        save_images(outputs, sw_out, "swap");
        std::cout << "wrote " << outputs.size() << " swapped faces to " << sw_out << "\n";
    });

    // ---- classify
    auto* c_cls = app.add_subcommand("classify", "verdict for one face given identity priors");
    std::string cl_face, cl_profile, cl_idn;
    double cl_threshold = 0.75;
    c_cls->add_option("--face", cl_face)->required();
    c_cls->add_option("--profile", cl_profile)->required();
    c_cls->add_option("--identifier", cl_idn, "identifier checkpoint")->required();
    c_cls->add_option("--threshold", cl_threshold, "bit-accuracy threshold");
    c_cls->callback([&] {
        IdentityProfile profile = IdentityProfile::load(cl_profile);
        auto gen = load_generator(profile.tracer_checkpoint);
        auto idn = load_identifier(cl_idn);
        AnchorFace anchor{load_image(profile.anchor_file), 0};
        TraceMap trace = generate_trace(*gen, anchor, profile.bits);
        Image face = load_image(cl_face);
        if (face.dim(0) != idn->resolution())
            face = resize_image(face, static_cast<int>(idn->resolution()),
                                static_cast<int>(idn->resolution()));
        Verdict v = classify(face, *idn, trace, profile.bits, profile.etrace_key, cl_threshold);
        std::cout << "verdict " << to_string(v.value) << " (strace bacc " << v.strace_bacc
                  << ", etrace " << (v.etrace_present ? "present" : "absent") << ")\n";
    });

    // ---- evaluate
    auto* c_eval = app.add_subcommand("evaluate", "score generated faces against real mixes");
    std::string ev_gen, ev_clean, ev_prot, ev_profile, ev_idn, ev_out;
    double ev_threshold = 0.75;
    c_eval->add_option("--generated", ev_gen)->required();
    c_eval->add_option("--clean", ev_clean)->required();
    c_eval->add_option("--protected", ev_prot)->required();
    c_eval->add_option("--profile", ev_profile)->required();
    c_eval->add_option("--identifier", ev_idn)->required();
    c_eval->add_option("--out", ev_out, "report directory")->required();
    c_eval->add_option("--threshold", ev_threshold);
    c_eval->callback([&] {
        IdentityProfile profile = IdentityProfile::load(ev_profile);
        auto gen = load_generator(profile.tracer_checkpoint);
        auto idn = load_identifier(ev_idn);
        AnchorFace anchor{load_image(profile.anchor_file), 0};
        VerifierPriors priors;
        priors.identifier = idn.get();
        priors.trace = generate_trace(*gen, anchor, profile.bits);
        priors.expected_bits = profile.bits;
        priors.key = profile.etrace_key;
        priors.bacc_threshold = ev_threshold;
        const int res = static_cast<int>(idn->resolution());
        std::vector<Image> generated;
        for (auto& g : load_dir_images(ev_gen))
            generated.push_back(g.dim(0) == res ? g : resize_image(g, res, res));
        std::vector<Image> clean = load_dir_images(ev_clean);
        std::vector<Image> prot = load_dir_images(ev_prot);
        std::vector<std::pair<Image, Image>> pairs;
        for (std::size_t i = 0; i < std::min(clean.size(), prot.size()); ++i)
            pairs.emplace_back(clean[i], prot[i]);
        EvalReport rep = evaluate_sets(generated, clean, prot, priors, pairs);
        fs::create_directories(ev_out);
        rep.save(fs::path(ev_out) / "report.txt", fs::path(ev_out) / "report.csv");
        std::cout << rep.to_text();
    });

    // ---- robustness
    auto* c_rob = app.add_subcommand("robustness",
                                     "re-score under post-processing of generated faces");
    std::string ro_gen, ro_clean, ro_prot, ro_profile, ro_idn, ro_out;
    std::vector<std::string> ro_perts{"none", "jpeg", "gaussian_blur", "gaussian_noise"};
    std::uint64_t ro_seed = 0;
    double ro_threshold = 0.75;
    c_rob->add_option("--generated", ro_gen)->required();
    c_rob->add_option("--clean", ro_clean)->required();
    c_rob->add_option("--protected", ro_prot)->required();
    c_rob->add_option("--profile", ro_profile)->required();
    c_rob->add_option("--identifier", ro_idn)->required();
    c_rob->add_option("--out", ro_out)->required();
    c_rob->add_option("--perturbations", ro_perts)->delimiter(',');
    c_rob->add_option("--threshold", ro_threshold);
    c_rob->add_option("--seed", ro_seed);
    c_rob->callback([&] {
        IdentityProfile profile = IdentityProfile::load(ro_profile);
        auto gen = load_generator(profile.tracer_checkpoint);
        auto idn = load_identifier(ro_idn);
        AnchorFace anchor{load_image(profile.anchor_file), 0};
        VerifierPriors priors;
        priors.identifier = idn.get();
        priors.trace = generate_trace(*gen, anchor, profile.bits);
        priors.expected_bits = profile.bits;
        priors.key = profile.etrace_key;
        priors.bacc_threshold = ro_threshold;
        const int res = static_cast<int>(idn->resolution());
        std::vector<Image> generated;
        for (auto& g : load_dir_images(ro_gen))
            generated.push_back(g.dim(0) == res ? g : resize_image(g, res, res));
        std::vector<Perturbation> perts;
        for (const auto& p : ro_perts) perts.push_back(Perturbation::parse(p));
        Rng rng(ro_seed);
        auto rows = robustness_sweep(generated, load_dir_images(ro_clean),
                                     load_dir_images(ro_prot), priors, perts,
                                     RobustnessMode::OnGenerated, rng);
        fs::create_directories(ro_out);
        std::ofstream csv(fs::path(ro_out) / "robustness.csv");
        csv << "perturbation,d_acc_on_generated,d_acc_on_real\n";
        for (const auto& r : rows) {
            csv << r.perturbation << "," << r.d_acc_on_generated << "," << r.d_acc_on_real
                << "\n";
            std::cout << r.perturbation << "  d_acc_on_g " << r.d_acc_on_generated
                      << "  d_acc_on_r " << r.d_acc_on_real << "\n";
        }
    });

    // ---- demo-circles
    auto* c_demo = app.add_subcommand(
        "demo-circles", "toy validation: fixed blue disc survives swapping, random red disc dies");
    std::string dc_out;
    int dc_faces = 300, dc_res = 64;
    std::int64_t dc_iters = 3000, dc_width = 16;
    std::uint64_t dc_seed = 0;
    c_demo->add_option("--out", dc_out)->required();
    c_demo->add_option("--faces", dc_faces);
    c_demo->add_option("--resolution", dc_res);
    c_demo->add_option("--iterations", dc_iters);
    c_demo->add_option("--base-width", dc_width);
    c_demo->add_option("--seed", dc_seed);
    c_demo->callback([&] {
        Rng rng(dc_seed);
        auto src = synth_identity_set(rng.next_u32(), static_cast<std::size_t>(dc_faces), dc_res, 1);
        auto tgt = synth_identity_set(rng.next_u32(), static_cast<std::size_t>(dc_faces), dc_res, 2);
        CircleMarkConfig mark;
        for (auto& f : tgt) f = add_circle_marks(f, rng, mark);

        FaceSwapTrainConfig cfg;
        cfg.max_iterations = dc_iters;
        cfg.base_width = dc_width;
        cfg.seed = rng.next_u32();
        ArchVariant variant{dc_res, dc_res};
        FaceSwapTrainResult r = train_faceswap(src, tgt, variant, cfg);

        auto test_src = synth_identity_set(rng.next_u32(), 16, dc_res, 3);
        const double radius = mark.radius_frac * dc_res;
        double blue_excess = 0.0, red_peak = 0.0;
        std::vector<Image> swapped;
        for (const auto& s : test_src) {
            Image g = swap(*r.model, s, "tgt");
            swapped.push_back(g);
            blue_excess += disc_mean_channel(g, mark.blue_row * dc_res, mark.blue_col * dc_res,
                                             radius, 2) -
                           channel_mean(g, 2);
            // strongest red response over a coarse grid of candidate centers
            double best = 0.0;
            for (int i = 2; i < dc_res - 2; i += 4)
                for (int j = 2; j < dc_res - 2; j += 4)
                    best = std::max(best, disc_mean_channel(g, i, j, radius, 0) -
                                              channel_mean(g, 0));
            red_peak = std::max(red_peak, best);
        }
        blue_excess /= static_cast<double>(test_src.size());
        save_images(swapped, dc_out, "swap");
        std::cout << "blue disc mean excess " << blue_excess << " (want >= 0.2), max red excess "
                  << red_peak << "\n";
    });

    // ---- run
    auto* c_run = app.add_subcommand("run", "full experiment from a config file");
    std::string rn_config, rn_out;
    c_run->add_option("--config", rn_config, "experiment config json")->required();
    c_run->add_option("--out", rn_out, "run directory")->required();
    c_run->callback([&] {
        ExperimentResult r = run_experiment(load_json(rn_config), rn_out);
        std::cout << r.report.to_text();
    });

    try {
        CLI11_PARSE(app, argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
