#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rvdet/nms.hpp"

using namespace rvdet;
using Catch::Matchers::WithinAbs;

namespace {

Detection make_detection(Vec2 center, double yaw, double length, double width, double sigma,
                         double alpha, int class_id = 1) {
    Detection d;
    d.class_id = class_id;
    d.corners = corners({center, yaw, length, width});
    d.sigma = sigma;
    d.alpha = alpha;
    d.refresh();
    return d;
}

NmsConfig vehicle_config(NmsMode mode, std::optional<double> fixed = std::nullopt) {
    NmsConfig cfg;
    cfg.mode = mode;
    cfg.mean_width = {0.0, 2.0};
    cfg.fixed_iou_threshold = fixed;
    return cfg;
}

// The worst-case side-by-side pair: two 4.5 x 2 vehicle boxes whose
// predictions lean 0.35 m toward each other. Observed IoU is exactly 1/7.
std::vector<Detection> side_by_side_pair(double sigma) {
    return {make_detection({20.0, +0.75}, 0.0, 4.5, 2.0, sigma, 0.9),
            make_detection({20.0, -0.75}, 0.0, 4.5, 2.0, sigma, 0.8)};
}

std::vector<Detection> random_detections(SeededRng& rng, int count) {
    std::vector<Detection> dets;
    for (int i = 0; i < count; ++i)
        dets.push_back(make_detection({rng.uniform(-4, 4), rng.uniform(-4, 4)},
                                      rng.uniform(-kPi, kPi), rng.uniform(2.5, 5.0),
                                      rng.uniform(1.5, 2.2), rng.uniform(0.05, 0.9),
                                      rng.uniform(0.1, 1.0)));
    return dets;
}

bool contains_detection(const std::vector<Detection>& dets, const Detection& needle) {
    for (const Detection& d : dets) {
        bool same = true;
        for (int n = 0; n < 8; ++n) same &= d.corners.flat(n) == needle.corners.flat(n);
        if (same) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("adaptive threshold", "[nms]") {
    CHECK_THAT(adaptive_threshold(0.2, 0.2, 2.0), WithinAbs(0.1111111111111111, 1e-4));
    CHECK_THAT(adaptive_threshold(0.2, 0.2, 2.0), WithinAbs(0.4 / 3.6, 1e-12));
    SECTION("otherwise branch returns 1") {
        CHECK(adaptive_threshold(1.0, 1.0, 2.0) == 1.0);
        CHECK(adaptive_threshold(1.5, 0.8, 2.0) == 1.0);
    }
    SECTION("zero uncertainty tolerates no overlap") {
        CHECK(adaptive_threshold(0.0, 0.0, 2.0) == 0.0);
    }
    SECTION("bad arguments rejected") {
        CHECK_THROWS_AS(adaptive_threshold(-0.1, 0.2, 2.0), std::invalid_argument);
        CHECK_THROWS_AS(adaptive_threshold(0.1, 0.2, 0.0), std::invalid_argument);
    }
}

TEST_CASE("hard NMS basics", "[nms]") {
    const NmsConfig cfg = vehicle_config(NmsMode::Hard);
    SECTION("disjoint detections both survive unchanged") {
        std::vector<Detection> dets{make_detection({0, 0}, 0.0, 4.0, 2.0, 0.2, 0.9),
                                    make_detection({20, 0}, 0.3, 4.0, 2.0, 0.3, 0.7)};
        const auto out = run_nms(dets, cfg);
        REQUIRE(out.size() == 2);
        CHECK(contains_detection(out, dets[0]));
        CHECK(contains_detection(out, dets[1]));
    }
    SECTION("exact duplicates keep only the higher score") {
        const Detection high = make_detection({5, 1}, 0.2, 4.2, 1.9, 0.2, 0.9);
        const Detection low = make_detection({5, 1}, 0.2, 4.2, 1.9, 0.2, 0.4);
        const auto out = run_nms({low, high}, cfg);
        REQUIRE(out.size() == 1);
        CHECK_THAT(out[0].alpha, WithinAbs(0.9, 1e-12));
    }
    SECTION("different classes never suppress each other") {
        NmsConfig two_class = cfg;
        two_class.mean_width = {0.0, 2.0, 2.0};
        const Detection a = make_detection({5, 1}, 0.2, 4.2, 1.9, 0.2, 0.9, 1);
        const Detection b = make_detection({5, 1}, 0.2, 4.2, 1.9, 0.2, 0.4, 2);
        CHECK(run_nms({a, b}, two_class).size() == 2);
    }
}

TEST_CASE("the side-by-side scenario separates adaptive from fixed thresholds", "[nms]") {
    const auto pair = side_by_side_pair(0.3);
    const double iou = quad_iou(pair[0].corners, pair[1].corners);
    CHECK_THAT(iou, WithinAbs(1.0 / 7.0, 1e-9));
    CHECK(iou < adaptive_threshold(0.3, 0.3, 2.0));  // 0.6/3.4
    CHECK(iou > 0.1);

    const auto adaptive_out = run_nms(pair, vehicle_config(NmsMode::Hard));
    CHECK(adaptive_out.size() == 2);

    const auto fixed_out = run_nms(pair, vehicle_config(NmsMode::Hard, 0.1));
    REQUIRE(fixed_out.size() == 1);
    CHECK_THAT(fixed_out[0].alpha, WithinAbs(0.9, 1e-12));
}

TEST_CASE("soft NMS inflates scale instead of removing", "[nms]") {
    SECTION("hand-evaluated inflation") {
        const auto pair = side_by_side_pair(0.05);
        const double iou = 1.0 / 7.0;
        REQUIRE(iou > adaptive_threshold(0.05, 0.05, 2.0));
        const auto out = run_nms(pair, vehicle_config(NmsMode::Soft));
        REQUIRE(out.size() == 2);
        // lower-score box: sigma raised to 2*w*o/(1+o) - sigma_keep = 0.5 - 0.05
        const Detection& inflated = out[0].alpha < out[1].alpha ? out[0] : out[1];
        const Detection& kept = out[0].alpha < out[1].alpha ? out[1] : out[0];
        CHECK_THAT(inflated.sigma, WithinAbs(0.45, 1e-9));
        CHECK_THAT(inflated.score, WithinAbs(0.8 / (2.0 * 0.45), 1e-9));
        CHECK_THAT(kept.sigma, WithinAbs(0.05, 1e-12));
    }
    SECTION("all detections survive, corners untouched, scores never rise") {
        SeededRng rng(7);
        for (int trial = 0; trial < 30; ++trial) {
            const auto dets = random_detections(rng, 12);
            const auto out = run_nms(dets, vehicle_config(NmsMode::Soft));
            REQUIRE(out.size() == dets.size());
            for (const Detection& d : dets) {
                bool found = false;
                for (const Detection& o : out) {
                    bool same = true;
                    for (int n = 0; n < 8; ++n) same &= o.corners.flat(n) == d.corners.flat(n);
                    if (!same) continue;
                    found = true;
                    CHECK(o.sigma >= d.sigma - 1e-15);
                    CHECK(o.score <= d.score + 1e-15);
                }
                CHECK(found);
            }
        }
    }
}

TEST_CASE("fixed threshold 1 makes NMS the identity", "[nms][property]") {
    SeededRng rng(11);
    const auto dets = random_detections(rng, 15);
    const auto hard = run_nms(dets, vehicle_config(NmsMode::Hard, 1.0));
    CHECK(hard.size() == dets.size());
    const auto soft = run_nms(dets, vehicle_config(NmsMode::Soft, 1.0));
    for (const Detection& d : soft) {
        bool unchanged = false;
        for (const Detection& src : dets)
            if (src.sigma == d.sigma && src.alpha == d.alpha) unchanged = true;
        CHECK(unchanged);
    }
}

TEST_CASE("hard NMS survivors respect their pairwise thresholds", "[nms][property]") {
    SeededRng rng(13);
    for (int trial = 0; trial < 30; ++trial) {
        const auto out = run_nms(random_detections(rng, 14), vehicle_config(NmsMode::Hard));
        for (std::size_t i = 0; i < out.size(); ++i) {
            for (std::size_t j = i + 1; j < out.size(); ++j) {
                const double iou = quad_iou(out[i].corners, out[j].corners);
                const double t = adaptive_threshold(out[i].sigma, out[j].sigma, 2.0);
                CHECK(iou <= t + 1e-12);
            }
        }
    }
}

TEST_CASE("raising a survivor's score never suppresses it", "[nms][property]") {
    SeededRng rng(17);
    const NmsConfig cfg = vehicle_config(NmsMode::Hard);
    for (int trial = 0; trial < 40; ++trial) {
        auto dets = random_detections(rng, 10);
        const auto out = run_nms(dets, cfg);
        if (out.empty()) continue;
        const Detection& survivor = out[rng.bounded(out.size())];
        for (Detection& d : dets) {
            bool same = true;
            for (int n = 0; n < 8; ++n) same &= d.corners.flat(n) == survivor.corners.flat(n);
            if (same) {
                d.alpha = std::min(1.0, d.alpha * 1.5 + 0.05);
                d.refresh();
            }
        }
        const auto again = run_nms(dets, cfg);
        bool still_there = false;
        for (const Detection& d : again) {
            bool same = true;
            for (int n = 0; n < 8; ++n) same &= d.corners.flat(n) == survivor.corners.flat(n);
            still_there |= same;
        }
        CHECK(still_there);
    }
}

TEST_CASE("output is sorted by score descending", "[nms]") {
    SeededRng rng(19);
    for (NmsMode mode : {NmsMode::Hard, NmsMode::Soft}) {
        const auto out = run_nms(random_detections(rng, 20), vehicle_config(mode));
        for (std::size_t i = 1; i < out.size(); ++i) CHECK(out[i - 1].score >= out[i].score);
    }
}
