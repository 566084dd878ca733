#include "ventseg/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <array>
#include <map>
#include <sstream>
#include <stdexcept>

namespace ventseg {

namespace {

const char* kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(s);
    while (std::getline(is, field, sep)) out.push_back(field);
    return out;
}

// "0.605 +- 0.008" -> {0.605, 0.008}
std::pair<double, double> mean_pm(const std::string& s) {
    const auto pos = s.find("+-");
    if (pos == std::string::npos) return {std::stod(s), 0};
    return {std::stod(s.substr(0, pos)), std::stod(s.substr(pos + 2))};
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series) {
    const double W = 640, H = 420, L = 70, R = 160, T = 40, B = 60;
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double e = i < s.err.size() && std::isfinite(s.err[i]) ? s.err[i] : 0;
            if (!std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i] - e);
            y1 = std::max(y1, s.y[i] + e);
        }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x0 -= 1, x1 += 1;
    if (y1 == y0) y0 -= 0.05, y1 += 0.05;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = x0 + (x1 - x0) * k / 4, yv = y0 + (y1 - y0) * k / 4;
        os << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << num(xv) << "</text>\n";
        os << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << num(yv) << "</text>\n";
    }
    os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">" << x_label
       << "</text>\n";
    os << "<text transform=\"translate(18," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << y_label
       << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        const auto& sr = series[s];
        const char* c = kColours[s % 6];
        os << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < sr.x.size(); ++i)
            if (std::isfinite(sr.y[i])) os << px(sr.x[i]) << ',' << py(sr.y[i]) << ' ';
        os << "\"/>\n";
        for (std::size_t i = 0; i < sr.x.size(); ++i) {
            if (!std::isfinite(sr.y[i])) continue;
            os << "<circle cx=\"" << px(sr.x[i]) << "\" cy=\"" << py(sr.y[i]) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
            if (i < sr.err.size() && sr.err[i] > 0)
                os << "<line x1=\"" << px(sr.x[i]) << "\" y1=\"" << py(sr.y[i] - sr.err[i]) << "\" x2=\"" << px(sr.x[i])
                   << "\" y2=\"" << py(sr.y[i] + sr.err[i]) << "\" stroke=\"" << c << "\"/>\n";
        }
        os << "<text x=\"" << W - R + 12 << "\" y=\"" << T + 16 * (s + 1) << "\" fill=\"" << c << "\">" << sr.name
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string sweep_svg(const std::vector<SweepPoint>& points) {
    Series train{"train Dice", {}, {}, {}}, test{"test Dice", {}, {}, {}};
    for (const auto& p : points) {
        train.x.push_back(static_cast<double>(p.size));
        train.y.push_back(p.train_dice.mean);
        train.err.push_back(p.train_dice.std);
        test.x.push_back(static_cast<double>(p.size));
        test.y.push_back(p.test_dice.mean);
        test.err.push_back(p.test_dice.std);
    }
    return line_chart_svg("Dice vs training-set size", "training volumes", "Dice", {train, test});
}

std::string sweep_svg_from_csv(const std::string& csv) {
    std::istringstream is(csv);
    std::string line;
    std::getline(is, line);
    if (line.rfind("size,", 0) != 0) throw std::invalid_argument("not a sweep CSV");
    std::vector<SweepPoint> pts;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() < 5) throw std::invalid_argument("malformed sweep row: " + line);
        SweepPoint p;
        p.size = std::stoll(f[0]);
        p.train_dice = {std::stod(f[1]), std::stod(f[2]), 0};
        p.test_dice = {std::stod(f[3]), std::stod(f[4]), 0};
        pts.push_back(p);
    }
    return sweep_svg(pts);
}

namespace {

std::string ablation_chart(const std::map<std::string, std::vector<std::array<double, 3>>>& rows) {
    std::vector<Series> series;
    for (const auto& [name, pts] : rows) {
        Series s{name, {}, {}, {}};
        auto sorted = pts;
        std::sort(sorted.begin(), sorted.end());
        for (const auto& p : sorted) {
            s.x.push_back(p[0]);
            s.y.push_back(p[1]);
            s.err.push_back(p[2]);
        }
        series.push_back(s);
    }
    return line_chart_svg("Test Dice vs depth", "layers", "Dice", series);
}

}  // namespace

std::string ablation_svg(const AblationGrid& grid) {
    std::map<std::string, std::vector<std::array<double, 3>>> rows;
    for (const auto& r : grid.rows) {
        const auto fam = r.spec.family == Family::unet2d ? std::string("U-net") : std::string("V-net");
        const double layers = r.spec.nominal_layers();
        const auto a = mean_std(r.no_cppn.test_dice()), b = mean_std(r.cppn.test_dice());
        rows[fam].push_back({layers, a.mean, a.std});
        rows[fam + "+CPPN"].push_back({layers, b.mean, b.std});
    }
    return ablation_chart(rows);
}

std::string ablation_svg_from_csv(const std::string& csv) {
    std::istringstream is(csv);
    std::string line;
    std::getline(is, line);
    if (line.rfind("network,layers", 0) != 0) throw std::invalid_argument("not an ablation CSV");
    std::map<std::string, std::vector<std::array<double, 3>>> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 8) throw std::invalid_argument("malformed ablation row: " + line);
        const double layers = std::stod(f[1]);
        const auto a = mean_pm(f[2]), b = mean_pm(f[3]);
        rows[f[0]].push_back({layers, a.first, a.second});
        rows[f[0] + "+CPPN"].push_back({layers, b.first, b.second});
    }
    return ablation_chart(rows);
}

void write_pgm(const std::filesystem::path& path, std::span<const Real> values, std::int64_t height,
               std::int64_t width) {
    if (static_cast<std::int64_t>(values.size()) != height * width) throw std::invalid_argument("PGM size mismatch");
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double span = static_cast<double>(*hi - *lo);
    std::ofstream os(path, std::ios::binary);
    os << "P5\n" << width << ' ' << height << "\n255\n";
    for (Real v : values) {
        const double t = span > 0 ? (static_cast<double>(v) - static_cast<double>(*lo)) / span : 0.0;
        os.put(static_cast<char>(static_cast<unsigned char>(std::lround(255 * t))));
    }
    if (!os) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace ventseg
