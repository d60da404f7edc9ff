#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tialign/cache.hpp"
#include "tialign/core.hpp"
#include "tialign/errors.hpp"
#include "tialign/hash.hpp"
#include "tialign/image.hpp"

namespace tialign {

struct DecompositionConfig {
    double confidence_threshold = 0.25;
    int max_entity_boxes = 10;      // caps relational pairs at C(10,2) = 45
    int min_region_side = 32;

    bool operator==(const DecompositionConfig&) const = default;

    void validate() const {
        if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0))
            throw InputError("confidence_threshold must be in [0,1]");
        if (max_entity_boxes < 1) throw InputError("max_entity_boxes must be >= 1");
        if (min_region_side < 1) throw InputError("min_region_side must be >= 1");
    }
};

inline void to_json(json& j, const DecompositionConfig& c) {
    j = json{{"confidence_threshold", c.confidence_threshold},
             {"max_entity_boxes", c.max_entity_boxes},
             {"min_region_side", c.min_region_side}};
}

inline void from_json(const json& j, DecompositionConfig& c) {
    j.at("confidence_threshold").get_to(c.confidence_threshold);
    j.at("max_entity_boxes").get_to(c.max_entity_boxes);
    j.at("min_region_side").get_to(c.min_region_side);
}

/// Object detector. detect() returns raw entity candidates (kind=entity, no
/// parents); filtering, ordering and truncation happen in detect_entities.
class DetectorBackend {
public:
    virtual ~DetectorBackend() = default;
    virtual std::string backend_id() const = 0;
    virtual std::string model_version() const = 0;
    virtual std::vector<Box> detect(const ImageBuffer& image) = 0;
};

inline std::string detection_cache_key(const DetectorBackend& backend, const ImageBuffer& image,
                                       const DecompositionConfig& config) {
    return hash_key({"detect", backend.backend_id(), backend.model_version(), image.bytes,
                     json(config).dump()});
}

/// Runs the detector and normalizes its output: confidence filter, descending
/// confidence order (stable, so backend order breaks ties), truncation to
/// max_entity_boxes, coordinates clamped to image bounds. Boxes left empty by
/// the clamp are discarded. Results are cached on (backend, model, image bytes,
/// config); a warm cache never touches the backend.
inline std::vector<Box> detect_entities(const ImageBuffer& image, DetectorBackend& backend,
                                        const DecompositionConfig& config,
                                        FileCache* cache = nullptr) {
    config.validate();
    const std::string key = detection_cache_key(backend, image, config);
    if (cache) {
        if (auto payload = cache->get("detect", key))
            return json::parse(*payload).get<std::vector<Box>>();
    }

    std::vector<Box> kept;
    for (Box b : backend.detect(image)) {
        if (!(b.confidence >= 0.0 && b.confidence <= 1.0))
            throw BackendError("detector returned confidence outside [0,1] for label \"" +
                                   b.label + "\"",
                               /*retryable=*/false);
        if (b.confidence < config.confidence_threshold) continue;
        b.x0 = std::clamp(b.x0, 0, image.width());
        b.x1 = std::clamp(b.x1, 0, image.width());
        b.y0 = std::clamp(b.y0, 0, image.height());
        b.y1 = std::clamp(b.y1, 0, image.height());
        if (!(b.x1 > b.x0 && b.y1 > b.y0)) continue;
        b.kind = BoxKind::Entity;
        b.parents.reset();
        kept.push_back(std::move(b));
    }
    std::stable_sort(kept.begin(), kept.end(),
                     [](const Box& a, const Box& b) { return a.confidence > b.confidence; });
    if (kept.size() > static_cast<std::size_t>(config.max_entity_boxes))
        kept.resize(static_cast<std::size_t>(config.max_entity_boxes));

    if (cache) cache->put("detect", key, json(kept).dump());
    return kept;
}

/// One relational box per unordered pair (i<j): the union rectangle of the two
/// parents, parents recorded, confidence = min of the parents'. Same-label
/// pairs are kept and identical unions are not deduplicated; max-scoring
/// downstream makes duplicates harmless.
inline std::vector<Box> pair_relational_boxes(const std::vector<Box>& entity_boxes) {
    std::vector<Box> out;
    const std::size_t n = entity_boxes.size();
    if (n >= 2) out.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const Box& a = entity_boxes[i];
            const Box& b = entity_boxes[j];
            Box r;
            r.x0 = std::min(a.x0, b.x0);
            r.y0 = std::min(a.y0, b.y0);
            r.x1 = std::max(a.x1, b.x1);
            r.y1 = std::max(a.y1, b.y1);
            r.label = a.label + "+" + b.label;
            r.confidence = std::min(a.confidence, b.confidence);
            r.kind = BoxKind::Relational;
            r.parents = std::make_pair(static_cast<int>(i), static_cast<int>(j));
            out.push_back(std::move(r));
        }
    }
    return out;
}

/// detect_entities + pair_relational_boxes with whole-image fallbacks so that
/// neither list is ever empty: no detections puts a whole_image box in the
/// entity list, fewer than two puts one in the relational list. Fallback flags
/// record which substitutions happened (they surface as degeneracy flags in
/// evaluation results).
inline BoxSet build_box_set(const ImageBuffer& image, DetectorBackend& backend,
                            const DecompositionConfig& config, FileCache* cache = nullptr) {
    BoxSet set;
    set.image_id = image.id;
    set.image_width = image.width();
    set.image_height = image.height();
    set.entity_boxes = detect_entities(image, backend, config, cache);
    set.relational_boxes = pair_relational_boxes(set.entity_boxes);
    if (set.entity_boxes.empty()) {
        set.entity_boxes.push_back(image.whole_image_box());
        set.entity_fallback_used = true;
    }
    if (set.relational_boxes.empty()) {
        set.relational_boxes.push_back(image.whole_image_box());
        set.relational_fallback_used = true;
    }
    return set;
}

namespace detail {

/// Expands [lo,hi) to min_side about its center, then shifts the window back
/// inside [0,limit]; the window only shrinks if the image itself is smaller.
inline void expand_axis(double& lo, double& hi, int min_side, int limit) {
    const double target = std::min(static_cast<double>(min_side), static_cast<double>(limit));
    if (hi - lo < target) {
        const double center = (lo + hi) / 2.0;
        lo = center - target / 2.0;
        hi = center + target / 2.0;
    }
    if (lo < 0.0) {
        hi -= lo;
        lo = 0.0;
    }
    if (hi > limit) {
        lo -= hi - limit;
        hi = limit;
    }
    if (lo < 0.0) lo = 0.0;
}

} // namespace detail

/// Crops the box out of the image, first growing any side below
/// min_region_side symmetrically about the box center and sliding the window
/// back into bounds. whole_image boxes return the full image. A box with zero
/// area once clamped to the image is an input error.
inline ImageRegion crop_region(const ImageBuffer& image, const Box& box, int min_region_side) {
    if (min_region_side < 1) throw InputError("min_region_side must be >= 1");
    const int W = image.width();
    const int H = image.height();

    ImageRegion region;
    region.image_id = image.id;
    region.image_path = image.path;

    if (box.kind == BoxKind::WholeImage) {
        region.box = image.whole_image_box();
        region.pixels = image.pixels;
        return region;
    }

    double x0 = std::clamp(box.x0, 0, W);
    double x1 = std::clamp(box.x1, 0, W);
    double y0 = std::clamp(box.y0, 0, H);
    double y1 = std::clamp(box.y1, 0, H);
    if (!(x1 > x0 && y1 > y0))
        throw InputError("box \"" + box.label + "\" has zero area within the image");

    detail::expand_axis(x0, x1, min_region_side, W);
    detail::expand_axis(y0, y1, min_region_side, H);

    int ix0 = static_cast<int>(std::lround(x0));
    int iy0 = static_cast<int>(std::lround(y0));
    int ix1 = static_cast<int>(std::lround(x1));
    int iy1 = static_cast<int>(std::lround(y1));
    ix0 = std::clamp(ix0, 0, W - 1);
    iy0 = std::clamp(iy0, 0, H - 1);
    ix1 = std::clamp(ix1, ix0 + 1, W);
    iy1 = std::clamp(iy1, iy0 + 1, H);

    region.box = box;
    region.box.x0 = ix0;
    region.box.y0 = iy0;
    region.box.x1 = ix1;
    region.box.y1 = iy1;
    region.pixels = image.pixels(cv::Rect(ix0, iy0, ix1 - ix0, iy1 - iy0)).clone();
    return region;
}

} // namespace tialign
