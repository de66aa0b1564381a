#include "regrowth/svg.hpp"

#include <array>

#include "text.hpp"

namespace regrowth {

namespace {
std::string n(double v) { return text::num(static_cast<float>(v)); }
}  // namespace

SvgWriter::SvgWriter(double width, double height) : width_(width), height_(height) {}

void SvgWriter::rect(double x, double y, double w, double h, std::string_view fill, std::string_view stroke) {
  body_ << "<rect x=\"" << n(x) << "\" y=\"" << n(y) << "\" width=\"" << n(w) << "\" height=\"" << n(h)
        << "\" fill=\"" << fill << "\" stroke=\"" << stroke << "\"/>\n";
}

void SvgWriter::line(double x1, double y1, double x2, double y2, std::string_view stroke, double width,
                     std::string_view dash) {
  body_ << "<line x1=\"" << n(x1) << "\" y1=\"" << n(y1) << "\" x2=\"" << n(x2) << "\" y2=\"" << n(y2)
        << "\" stroke=\"" << stroke << "\" stroke-width=\"" << n(width) << '"';
  if (!dash.empty()) body_ << " stroke-dasharray=\"" << dash << '"';
  body_ << "/>\n";
}

void SvgWriter::circle(double cx, double cy, double r, std::string_view fill, double opacity) {
  body_ << "<circle cx=\"" << n(cx) << "\" cy=\"" << n(cy) << "\" r=\"" << n(r) << "\" fill=\"" << fill
        << "\" fill-opacity=\"" << n(opacity) << "\"/>\n";
}

void SvgWriter::text(double x, double y, std::string_view content, double size, std::string_view anchor) {
  body_ << "<text x=\"" << n(x) << "\" y=\"" << n(y) << "\" font-size=\"" << n(size)
        << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\">" << svg_escape(content) << "</text>\n";
}

std::string SvgWriter::str() const {
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << n(width_) << "\" height=\"" << n(height_)
      << "\" viewBox=\"0 0 " << n(width_) << ' ' << n(height_) << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << body_.str() << "</svg>\n";
  return out.str();
}

std::string_view palette_color(std::size_t i) {
  static constexpr std::array<std::string_view, 10> kPalette = {
      "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
      "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return kPalette[i % kPalette.size()];
}

std::string svg_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace regrowth
