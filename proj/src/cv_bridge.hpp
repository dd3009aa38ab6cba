#pragma once

#include "profact/datamodel.hpp"

#include <opencv2/core.hpp>

namespace profact::cvb {

/// CV_32FC3 in RGB order (not OpenCV's BGR), values copied.
inline cv::Mat to_mat(const Image& image) {
    cv::Mat m(image.height(), image.width(), CV_32FC3);
    std::copy(image.pixels().begin(), image.pixels().end(), m.ptr<float>());
    return m;
}

/// Clamps to [0,1] so interpolation overshoot never escapes the Image invariant.
inline Image from_mat(const cv::Mat& m) {
    cv::Mat f;
    m.convertTo(f, CV_32FC3);
    if (!f.isContinuous()) {
        f = f.clone();
    }
    std::vector<float> px(f.ptr<float>(), f.ptr<float>() + f.total() * 3);
    for (float& v : px) {
        v = std::min(1.0f, std::max(0.0f, v));
    }
    return Image(f.rows, f.cols, std::move(px));
}

inline cv::Mat to_mat(const BinaryMask& mask) {
    cv::Mat m(mask.height(), mask.width(), CV_8UC1);
    std::copy(mask.labels().begin(), mask.labels().end(), m.ptr<uint8_t>());
    return m;
}

inline BinaryMask mask_from_mat(const cv::Mat& m) {
    cv::Mat c = m.isContinuous() ? m : m.clone();
    std::vector<uint8_t> labels(c.ptr<uint8_t>(), c.ptr<uint8_t>() + c.total());
    for (auto& v : labels) {
        v = v ? 1 : 0;
    }
    return BinaryMask(c.rows, c.cols, std::move(labels));
}

/// Single-channel float matrix of an [H,W] float buffer.
inline cv::Mat to_mat(const std::vector<float>& values, int height, int width) {
    cv::Mat m(height, width, CV_32FC1);
    std::copy(values.begin(), values.end(), m.ptr<float>());
    return m;
}

inline std::vector<float> values_from_mat(const cv::Mat& m) {
    cv::Mat f;
    m.convertTo(f, CV_32FC1);
    if (!f.isContinuous()) {
        f = f.clone();
    }
    return std::vector<float>(f.ptr<float>(), f.ptr<float>() + f.total());
}

} // namespace profact::cvb
