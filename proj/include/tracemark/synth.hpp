#pragma once

#include <opencv2/imgproc.hpp>
#include <vector>

#include "tracemark/core.hpp"
#include "tracemark/image_io.hpp"
#include "tracemark/rng.hpp"

namespace tracemark {

// Procedural face-like images for desk-scale runs: an identity seed fixes
// skin tone, geometry and hair, a per-image seed varies pose, expression and
// lighting. Low-complexity by design so small autoencoders learn them fast.

struct SyntheticIdentity {
    cv::Scalar skin, hair, eye, background;
    double face_w, face_h;       // ellipse semi-axes as fraction of image
    double eye_dx, eye_y;        // eye spacing and height
    double mouth_y, mouth_w;
    double nose_len;

    static SyntheticIdentity from_seed(std::uint64_t seed) {
        Rng rng(seed ^ 0xFACE5EEDull);
        SyntheticIdentity id;
        id.skin = cv::Scalar(rng.uniform(110, 160), rng.uniform(140, 190), rng.uniform(180, 235));
        id.hair = cv::Scalar(rng.uniform(10, 120), rng.uniform(10, 110), rng.uniform(10, 110));
        id.eye = cv::Scalar(rng.uniform(60, 200), rng.uniform(40, 140), rng.uniform(20, 90));
        id.background = cv::Scalar(rng.uniform(40, 210), rng.uniform(40, 210), rng.uniform(40, 210));
        id.face_w = rng.uniform(0.26, 0.34);
        id.face_h = rng.uniform(0.34, 0.42);
        id.eye_dx = rng.uniform(0.10, 0.15);
        id.eye_y = rng.uniform(0.40, 0.46);
        id.mouth_y = rng.uniform(0.66, 0.72);
        id.mouth_w = rng.uniform(0.10, 0.16);
        id.nose_len = rng.uniform(0.06, 0.10);
        return id;
    }
};

inline Image synth_face(const SyntheticIdentity& id, std::uint64_t image_seed, int size = 64) {
    Rng rng(image_seed * 0x9E3779B97F4A7C15ull + 1);
    const double cx = size * (0.5 + rng.uniform(-0.03, 0.03));
    const double cy = size * (0.5 + rng.uniform(-0.03, 0.03));
    const double light = rng.uniform(0.85, 1.15);
    const double smile = rng.uniform(-0.5, 1.0);  // mouth curvature

    const auto lit = [&](const cv::Scalar& c) {
        return cv::Scalar(std::clamp(c[0] * light, 0.0, 255.0),
                          std::clamp(c[1] * light, 0.0, 255.0),
                          std::clamp(c[2] * light, 0.0, 255.0));
    };

    cv::Mat m(size, size, CV_8UC3, lit(id.background));

    // hair: larger ellipse behind the face
    cv::ellipse(m, cv::Point2d(cx, cy - size * 0.04),
                cv::Size2d(size * id.face_w * 1.25, size * id.face_h * 1.2), 0, 0, 360,
                lit(id.hair), cv::FILLED, cv::LINE_AA);
    // face
    cv::ellipse(m, cv::Point2d(cx, cy), cv::Size2d(size * id.face_w, size * id.face_h), 0, 0,
                360, lit(id.skin), cv::FILLED, cv::LINE_AA);
    // eyes
    const double ey = cy + size * (id.eye_y - 0.5);
    for (int s : {-1, 1}) {
        const double ex = cx + s * size * id.eye_dx;
        cv::ellipse(m, cv::Point2d(ex, ey), cv::Size2d(size * 0.045, size * 0.028), 0, 0, 360,
                    cv::Scalar(245, 245, 245), cv::FILLED, cv::LINE_AA);
        cv::circle(m, cv::Point2d(ex + rng.uniform(-0.8, 0.8), ey), size * 0.016, lit(id.eye),
                   cv::FILLED, cv::LINE_AA);
    }
    // nose
    cv::line(m, cv::Point2d(cx, cy), cv::Point2d(cx - size * 0.015, cy + size * id.nose_len),
             lit(cv::Scalar(id.skin[0] * 0.7, id.skin[1] * 0.7, id.skin[2] * 0.7)), 1,
             cv::LINE_AA);
    // mouth: curvature from the expression draw
    const double my = cy + size * (id.mouth_y - 0.5);
    const double mw = size * id.mouth_w;
    cv::ellipse(m, cv::Point2d(cx, my), cv::Size2d(mw, size * 0.02 * (1.0 + 0.6 * smile)),
                0, 0, 180, cv::Scalar(90, 70, 170), cv::FILLED, cv::LINE_AA);

    return from_mat_bgr8(m);
}

inline std::vector<Image> synth_identity_set(std::uint64_t identity_seed, std::size_t count,
                                             int size = 64, std::uint64_t salt = 0) {
    SyntheticIdentity id = SyntheticIdentity::from_seed(identity_seed);
    std::vector<Image> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        out.push_back(synth_face(id, salt * 1000003ull + i, size));
    return out;
}

}  // namespace tracemark
