#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "tialign/core.hpp"
#include "tialign/errors.hpp"

namespace tialign {

/// A decoded raster image plus the encoded file bytes it came from.
/// The encoded bytes are what cache keys hash; pixels are BGR8 (OpenCV order).
struct ImageBuffer {
    std::string id;       // filename stem by convention
    std::string path;     // source file, empty for in-memory images
    std::string bytes;    // encoded file content
    cv::Mat pixels;       // 8-bit 3-channel BGR

    int width() const { return pixels.cols; }
    int height() const { return pixels.rows; }

    Box whole_image_box() const {
        Box b;
        b.x0 = 0;
        b.y0 = 0;
        b.x1 = width();
        b.y1 = height();
        b.label = "image";
        b.confidence = 1.0;
        b.kind = BoxKind::WholeImage;
        return b;
    }

    static ImageBuffer load(const std::filesystem::path& file) {
        std::ifstream in(file, std::ios::binary);
        if (!in) throw InputError("cannot open image file: " + file.string());
        std::ostringstream buf;
        buf << in.rdbuf();
        ImageBuffer img;
        img.bytes = buf.str();
        img.path = file.string();
        img.id = file.stem().string();
        std::vector<unsigned char> raw(img.bytes.begin(), img.bytes.end());
        img.pixels = cv::imdecode(raw, cv::IMREAD_COLOR);
        if (img.pixels.empty()) throw InputError("undecodable image: " + file.string());
        return img;
    }
};

/// A cropped scoring region. Carries provenance (source image id/path and the
/// crop rectangle in source coordinates) alongside the pixels; oracle backends
/// answer from provenance, real backends from pixels.
struct ImageRegion {
    std::string image_id;
    std::string image_path;
    Box box;              // crop rectangle in source-image coordinates
    cv::Mat pixels;       // BGR8 crop

    int width() const { return pixels.cols; }
    int height() const { return pixels.rows; }

    /// Canonical raw encoding of the crop, used for VQA cache keys:
    /// "rgb8:<w>x<h>:" followed by row-major RGB triplets.
    std::string canonical_bytes() const {
        std::string out = "rgb8:" + std::to_string(width()) + "x" + std::to_string(height()) + ":";
        out.reserve(out.size() + static_cast<std::size_t>(width()) * height() * 3);
        for (int y = 0; y < pixels.rows; ++y) {
            const cv::Vec3b* row = pixels.ptr<cv::Vec3b>(y);
            for (int x = 0; x < pixels.cols; ++x) {
                out.push_back(static_cast<char>(row[x][2]));   // R
                out.push_back(static_cast<char>(row[x][1]));   // G
                out.push_back(static_cast<char>(row[x][0]));   // B
            }
        }
        return out;
    }
};

} // namespace tialign
