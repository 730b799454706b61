#include "fseg/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace fseg {

RawImage read_image(const std::string& path) {
    cv::Mat img = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (img.empty()) throw DataError("undecodable image file: " + path);
    if (img.depth() != CV_8U) throw DataError("unsupported bit depth (expected 8-bit): " + path);
    RawImage out;
    out.height = (size_t)img.rows;
    out.width = (size_t)img.cols;
    if (img.channels() == 1) {
        out.channels = 1;
        out.pixels.assign(img.datastart, img.datastart + out.height * out.width);
        if (!img.isContinuous()) {
            out.pixels.resize(out.height * out.width);
            for (size_t y = 0; y < out.height; ++y)
                std::copy(img.ptr<uint8_t>((int)y), img.ptr<uint8_t>((int)y) + out.width,
                          out.pixels.begin() + y * out.width);
        }
    } else {
        cv::Mat rgb;
        if (img.channels() == 4)
            cv::cvtColor(img, rgb, cv::COLOR_BGRA2RGB);
        else if (img.channels() == 3)
            cv::cvtColor(img, rgb, cv::COLOR_BGR2RGB);
        else
            throw DataError("unsupported channel count: " + path);
        out.channels = 3;
        out.pixels.resize(out.height * out.width * 3);
        for (size_t y = 0; y < out.height; ++y)
            std::copy(rgb.ptr<uint8_t>((int)y), rgb.ptr<uint8_t>((int)y) + out.width * 3,
                      out.pixels.begin() + y * out.width * 3);
    }
    return out;
}

void write_gray_png(const std::string& path, size_t height, size_t width,
                    const std::vector<uint8_t>& pixels) {
    if (pixels.size() != height * width) throw DataError("pixel buffer size mismatch");
    cv::Mat img((int)height, (int)width, CV_8UC1, const_cast<uint8_t*>(pixels.data()));
    if (!cv::imwrite(path, img)) throw DataError("cannot write PNG: " + path);
}

void write_rgb_png(const std::string& path, size_t height, size_t width,
                   const std::vector<uint8_t>& pixels) {
    if (pixels.size() != height * width * 3) throw DataError("pixel buffer size mismatch");
    cv::Mat rgb((int)height, (int)width, CV_8UC3, const_cast<uint8_t*>(pixels.data()));
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(path, bgr)) throw DataError("cannot write PNG: " + path);
}

}  // namespace fseg
