#include "profact/image_io.hpp"

#include "cv_bridge.hpp"
#include "profact/error.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>

#include <jpeglib.h>

namespace profact {

namespace fs = std::filesystem;

namespace {

cv::Mat load(const fs::path& path, int flags) {
    if (!fs::exists(path)) {
        throw FileNotFound("no such file: " + path.string());
    }
    cv::Mat m = cv::imread(path.string(), flags);
    if (m.empty()) {
        throw DataUnavailable("cannot decode image: " + path.string());
    }
    if (m.depth() != CV_8U) {
        cv::Mat conv;
        m.convertTo(conv, CV_8U, m.depth() == CV_16U ? 1.0 / 257.0 : 1.0);
        m = conv;
    }
    return m;
}

void store(const fs::path& path, const cv::Mat& m) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    if (!cv::imwrite(path.string(), m)) {
        throw DataUnavailable("cannot write image: " + path.string());
    }
}

cv::Mat to_bgr8(const Image& image) {
    cv::Mat rgb = cvb::to_mat(image);
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    cv::Mat out;
    bgr.convertTo(out, CV_8UC3, 255.0);
    return out;
}

cv::Mat to_gray8(const BinaryMask& mask) {
    cv::Mat m = cvb::to_mat(mask);
    return m * 255;
}

struct JpegError {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void on_jpeg_error(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegError*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

// Full-resolution chroma (4:4:4) at every quality.
std::vector<unsigned char> encode_jpeg(const cv::Mat& rgb8, int quality) {
    jpeg_compress_struct cinfo{};
    JpegError err{};
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = on_jpeg_error;
    unsigned char* buf = nullptr;
    unsigned long size = 0;
    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        std::free(buf);
        throw DataUnavailable(std::string("JPEG encoding failed: ") + err.message);
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &buf, &size);
    cinfo.image_width = static_cast<JDIMENSION>(rgb8.cols);
    cinfo.image_height = static_cast<JDIMENSION>(rgb8.rows);
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    for (int c = 0; c < cinfo.num_components; ++c) {
        cinfo.comp_info[c].h_samp_factor = 1;
        cinfo.comp_info[c].v_samp_factor = 1;
    }
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = const_cast<JSAMPROW>(rgb8.ptr<unsigned char>(static_cast<int>(cinfo.next_scanline)));
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
    std::vector<unsigned char> out(buf, buf + size);
    std::free(buf);
    return out;
}

} // namespace

Image read_image(const fs::path& path) {
    cv::Mat bgr = load(path, cv::IMREAD_COLOR);
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    cv::Mat f;
    rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
    return cvb::from_mat(f);
}

void write_image(const fs::path& path, const Image& image) { store(path, to_bgr8(image)); }

BinaryMask read_mask(const fs::path& path) {
    cv::Mat g = load(path, cv::IMREAD_GRAYSCALE);
    cv::Mat bin = g >= 128;
    return cvb::mask_from_mat(bin);
}

void write_mask(const fs::path& path, const BinaryMask& mask) { store(path, to_gray8(mask)); }

void write_probmap(const fs::path& path, const ProbMap& map) {
    cv::Mat m(map.height(), map.width(), CV_8UC1);
    const auto p = map.probs();
    for (size_t i = 0; i < p.size(); ++i) {
        m.data[i] = static_cast<uint8_t>(std::lround(std::clamp(p[i], 0.0f, 1.0f) * 255.0f));
    }
    store(path, m);
}

ProbMap read_gray(const fs::path& path) {
    cv::Mat g = load(path, cv::IMREAD_GRAYSCALE);
    std::vector<float> v(g.total());
    for (size_t i = 0; i < v.size(); ++i) {
        v[i] = static_cast<float>(g.data[i]) / 255.0f;
    }
    return ProbMap(g.rows, g.cols, std::move(v));
}

std::vector<unsigned char> encode_png(const Image& image) {
    std::vector<unsigned char> buf;
    cv::imencode(".png", to_bgr8(image), buf);
    return buf;
}

std::vector<unsigned char> encode_png(const BinaryMask& mask) {
    std::vector<unsigned char> buf;
    cv::imencode(".png", to_gray8(mask), buf);
    return buf;
}

Image jpeg_roundtrip(const Image& image, int quality) {
    if (quality < 1 || quality > 100) {
        throw ParamOutOfRange("JPEG quality must lie in [1,100], got " + std::to_string(quality));
    }
    cv::Mat rgb8;
    cvb::to_mat(image).convertTo(rgb8, CV_8UC3, 255.0);
    cv::Mat bgr = cv::imdecode(encode_jpeg(rgb8, quality), cv::IMREAD_COLOR);
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    cv::Mat f;
    rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
    return cvb::from_mat(f);
}

Image quantize_8bit(const Image& image) {
    // Same conversions as write_image followed by read_image.
    cv::Mat u8;
    cvb::to_mat(image).convertTo(u8, CV_8UC3, 255.0);
    cv::Mat f;
    u8.convertTo(f, CV_32FC3, 1.0 / 255.0);
    return cvb::from_mat(f);
}

bool has_image_extension(const fs::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" ||
           ext == ".tiff";
}

} // namespace profact
