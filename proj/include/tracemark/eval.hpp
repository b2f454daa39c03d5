#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tracemark/core.hpp"
#include "tracemark/etrace.hpp"
#include "tracemark/metrics.hpp"
#include "tracemark/nets.hpp"

namespace tracemark {

// ----------------------------------------------------------------------------
// Authenticity criterion over the two-trace presence pattern.

enum class VerdictKind { CleanReal, ProtectedReal, Fake, Anomaly };

inline std::string to_string(VerdictKind v) {
    switch (v) {
        case VerdictKind::CleanReal: return "clean_real";
        case VerdictKind::ProtectedReal: return "protected_real";
        case VerdictKind::Fake: return "fake";
        case VerdictKind::Anomaly: return "anomaly";
    }
    return "?";
}

struct Verdict {
    VerdictKind value = VerdictKind::CleanReal;
    double strace_bacc = 0.0;
    bool strace_present = false;
    bool etrace_present = false;
};

inline VerdictKind verdict_from_presence(bool strace_present, bool etrace_present) {
    if (strace_present) return etrace_present ? VerdictKind::ProtectedReal : VerdictKind::Fake;
    // A surviving erasable trace proves the image never went through a
    // generator; with no sustainable trace it reads as an anomaly, scored
    // as real.
    return etrace_present ? VerdictKind::Anomaly : VerdictKind::CleanReal;
}

// The verifier holds the protected identity's priors: deployment trace map,
// expected bit sequence, and the erasable-trace key.
inline Verdict classify(const Image& face, const TraceIdentifier& idn, const TraceMap& trace,
                        const BitSequence& expected_bits, const ETraceKey& key,
                        double bacc_threshold = 0.75) {
    Verdict v;
    v.strace_bacc = bit_accuracy(harden(identify_trace(idn, face, trace)), expected_bits);
    v.strace_present = v.strace_bacc >= bacc_threshold;
    v.etrace_present = detect_etrace(face, key).present;
    v.value = verdict_from_presence(v.strace_present, v.etrace_present);
    return v;
}

enum class GroundTruth { Real, Generated };

inline bool verdict_says_generated(VerdictKind v) { return v == VerdictKind::Fake; }

inline double detection_accuracy(const std::vector<Verdict>& verdicts,
                                 const std::vector<GroundTruth>& ground_truth) {
    if (verdicts.size() != ground_truth.size())
        throw std::invalid_argument("detection_accuracy: length mismatch");
    if (verdicts.empty()) throw std::invalid_argument("detection_accuracy: empty input");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < verdicts.size(); ++i) {
        const bool said_generated = verdict_says_generated(verdicts[i].value);
        const bool is_generated = ground_truth[i] == GroundTruth::Generated;
        if (said_generated == is_generated) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(verdicts.size());
}

// ----------------------------------------------------------------------------
// Aggregate evaluation report.

struct EvalReport {
    double b_acc_on_generated = 0.0;
    double d_acc_on_generated = 0.0;
    double d_acc_on_real = 0.0;
    double ssim_traced = 0.0;
    double psnr_traced = 0.0;
    std::optional<double> fid_traced;
    // failure decomposition on protected real faces
    double protected_missed_strace = 0.0;
    double protected_missed_etrace = 0.0;

    std::string to_text() const {
        std::ostringstream os;
        os << "evaluation report\n"
           << "  (D-Acc on R mixes clean and protected real faces 50/50)\n"
           << "  b_acc_on_generated  " << b_acc_on_generated << "\n"
           << "  d_acc_on_generated  " << d_acc_on_generated << "\n"
           << "  d_acc_on_real       " << d_acc_on_real << "\n"
           << "  ssim                " << ssim_traced << "\n"
           << "  psnr_db             " << psnr_traced << "\n"
           << "  fid                 "
           << (fid_traced ? std::to_string(*fid_traced) : std::string("unavailable")) << "\n"
           << "  protected_missed_strace " << protected_missed_strace << "\n"
           << "  protected_missed_etrace " << protected_missed_etrace << "\n";
        return os.str();
    }

    static std::string csv_header() {
        return "b_acc_on_generated,d_acc_on_generated,d_acc_on_real,ssim,psnr_db,fid,"
               "protected_missed_strace,protected_missed_etrace";
    }

    std::string csv_row() const {
        std::ostringstream os;
        os << b_acc_on_generated << "," << d_acc_on_generated << "," << d_acc_on_real << ","
           << ssim_traced << "," << psnr_traced << ","
           << (fid_traced ? std::to_string(*fid_traced) : std::string("")) << ","
           << protected_missed_strace << "," << protected_missed_etrace;
        return os.str();
    }

    void save(const std::filesystem::path& text_path,
              const std::filesystem::path& csv_path) const {
        std::ofstream t(text_path);
        t << to_text();
        std::ofstream c(csv_path);
        c << csv_header() << "\n" << csv_row() << "\n";
    }
};

// Priors the verifier needs for classification.
struct VerifierPriors {
    const TraceIdentifier* identifier = nullptr;
    TraceMap trace;
    BitSequence expected_bits = BitSequence::zeros(8);
    ETraceKey key;
    double bacc_threshold = 0.75;
};

// Scores generated faces against a 50/50 mix of clean and protected real
// faces; quality metrics compare clean faces with their traced versions.
inline EvalReport evaluate_sets(const std::vector<Image>& generated,
                                const std::vector<Image>& clean_real,
                                const std::vector<Image>& protected_real,
                                const VerifierPriors& priors,
                                const std::vector<std::pair<Image, Image>>& quality_pairs = {},
                                const EmbeddingBackend& fid_backend = nullptr) {
    if (!priors.identifier) throw std::invalid_argument("evaluate_sets: missing identifier");
    EvalReport rep;

    std::vector<Verdict> gen_verdicts;
    double bacc_sum = 0.0;
    for (const auto& f : generated) {
        Verdict v = classify(f, *priors.identifier, priors.trace, priors.expected_bits,
                             priors.key, priors.bacc_threshold);
        bacc_sum += v.strace_bacc;
        gen_verdicts.push_back(v);
    }
    if (!generated.empty()) {
        rep.b_acc_on_generated = bacc_sum / static_cast<double>(generated.size());
        rep.d_acc_on_generated = detection_accuracy(
            gen_verdicts, std::vector<GroundTruth>(generated.size(), GroundTruth::Generated));
    }

    // 50/50 real mix: truncate both sides to the smaller set
    const std::size_t real_n = std::min(clean_real.size(), protected_real.size());
    if (real_n > 0) {
        std::vector<Verdict> verdicts;
        std::size_t missed_s = 0, missed_e = 0;
        for (std::size_t i = 0; i < real_n; ++i) {
            verdicts.push_back(classify(clean_real[i], *priors.identifier, priors.trace,
                                        priors.expected_bits, priors.key, priors.bacc_threshold));
            Verdict pv = classify(protected_real[i], *priors.identifier, priors.trace,
                                  priors.expected_bits, priors.key, priors.bacc_threshold);
            if (!pv.strace_present) ++missed_s;
            if (!pv.etrace_present) ++missed_e;
            verdicts.push_back(pv);
        }
        rep.d_acc_on_real = detection_accuracy(
            verdicts, std::vector<GroundTruth>(verdicts.size(), GroundTruth::Real));
        rep.protected_missed_strace = static_cast<double>(missed_s) / static_cast<double>(real_n);
        rep.protected_missed_etrace = static_cast<double>(missed_e) / static_cast<double>(real_n);
    }

    if (!quality_pairs.empty()) {
        double s = 0.0, p = 0.0;
        for (const auto& [clean, traced] : quality_pairs) {
            s += ssim(clean, traced);
            p += psnr(clean, traced);
        }
        rep.ssim_traced = s / static_cast<double>(quality_pairs.size());
        rep.psnr_traced = p / static_cast<double>(quality_pairs.size());
        if (fid_backend) {
            std::vector<Image> cleans, traceds;
            for (const auto& [c, t] : quality_pairs) {
                cleans.push_back(c);
                traceds.push_back(t);
            }
            rep.fid_traced = fid(cleans, traceds, fid_backend);
        }
    }
    return rep;
}

// ----------------------------------------------------------------------------
// Robustness sweep.

struct RobustnessRow {
    std::string perturbation;
    double d_acc_on_generated = 0.0;
    double d_acc_on_real = 0.0;
};

enum class RobustnessMode { OnGenerated, OnTraining };

// OnGenerated: perturb the swap outputs before classification; the real-face
// paths are untouched. OnTraining: the caller supplies a retrain callback
// that rebuilds the attacker on perturbed traced data and returns fresh swap
// outputs; jobs run sequentially.
inline std::vector<RobustnessRow> robustness_sweep(
    const std::vector<Image>& generated, const std::vector<Image>& clean_real,
    const std::vector<Image>& protected_real, const VerifierPriors& priors,
    const std::vector<Perturbation>& perturbations, RobustnessMode mode, Rng& rng,
    const std::function<std::vector<Image>(const Perturbation&)>& retrain_and_generate = nullptr) {
    if (mode == RobustnessMode::OnTraining && !retrain_and_generate)
        throw std::invalid_argument("robustness_sweep: OnTraining needs a retrain callback");
    std::vector<RobustnessRow> rows;
    for (const auto& p : perturbations) {
        std::vector<Image> gen;
        if (mode == RobustnessMode::OnGenerated) {
            for (const auto& f : generated) gen.push_back(apply_perturbation(f, p, rng));
        } else {
            gen = p.kind == PerturbationKind::None ? generated : retrain_and_generate(p);
        }
        EvalReport rep = evaluate_sets(gen, clean_real, protected_real, priors);
        rows.push_back({p.name(), rep.d_acc_on_generated, rep.d_acc_on_real});
    }
    return rows;
}

}  // namespace tracemark
