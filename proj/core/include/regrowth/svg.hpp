#pragma once

// Minimal SVG emitter for the report figures.

#include <sstream>
#include <string>
#include <string_view>

namespace regrowth {

class SvgWriter {
 public:
  SvgWriter(double width, double height);

  void rect(double x, double y, double w, double h, std::string_view fill, std::string_view stroke = "none");
  void line(double x1, double y1, double x2, double y2, std::string_view stroke, double width = 1.0,
            std::string_view dash = "");
  void circle(double cx, double cy, double r, std::string_view fill, double opacity = 1.0);
  void text(double x, double y, std::string_view content, double size = 12.0, std::string_view anchor = "start");

  std::string str() const;

 private:
  double width_;
  double height_;
  std::ostringstream body_;
};

// Categorical palette, cycled.
std::string_view palette_color(std::size_t i);

std::string svg_escape(std::string_view s);

}  // namespace regrowth
