// Generates the committed fixture weights and content images.
//
// The two denoisers are hand-built toy-unet-v1 networks rather than trained
// ones. Each splits the input into a low band (3x3 box blur) and a high band
// (the remainder) and predicts eps per band with the posterior-optimal gain
// of a zero-mean Gaussian source,
//
//   g(t) = sqrt(1 - abar_t) / (abar_t * snr + 1 - abar_t),
//
// where snr is the band's signal-to-noise variance ratio. The time
// dependence is realised by gating: for a small input scale s,
//   silu(s a + b(t)) - silu(b(t)) ~= silu'(b(t)) s a,
// with b(t) produced by the embedding layer from the sinusoidal timestep
// features (fit by least squares) and a reference channel carrying b(t)
// alone. The "natural" model uses band statistics measured on the fixture
// content images; the "artistic" model treats high frequencies as signal.
//
// usage: make_fixtures <output-dir>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "dualstyle/denoiser.hpp"
#include "dualstyle/image_io.hpp"
#include "dualstyle/rng.hpp"
#include "dualstyle/schedule.hpp"
#include "dualstyle/weights.hpp"

namespace fs = std::filesystem;
using namespace dualstyle;

namespace {

constexpr int kSide = 32;
constexpr int kChannels = 3;
constexpr int kEmbedWidth = 16;
constexpr int kHidden = kToyUnetHidden;
constexpr double kInputScale = 0.01;
constexpr double kMinSnr = 0.05;
const char* const kVocabulary = "oil-painting,watercolor,sketch,flat-color,stripes,stippled,swirl";

// --- content images --------------------------------------------------------

ImageTensor content_disc() {
    ImageTensor x(kSide, kSide, kChannels);
    for (int r = 0; r < kSide; ++r) {
        for (int c = 0; c < kSide; ++c) {
            const double dy = r - 13.5, dx = c - 17.5;
            const double inside = 1.0 / (1.0 + std::exp((std::sqrt(dx * dx + dy * dy) - 9.0) * 1.5));
            const double sky = -0.2 + 0.8 * r / (kSide - 1.0);
            x.at(r, c, 0) = sky * (1 - inside) + 0.85 * inside;
            x.at(r, c, 1) = (sky - 0.3) * (1 - inside) + 0.55 * inside;
            x.at(r, c, 2) = (0.6 - 0.5 * r / (kSide - 1.0)) * (1 - inside) - 0.4 * inside;
        }
    }
    return x;
}

ImageTensor content_blocks() {
    ImageTensor x(kSide, kSide, kChannels);
    for (int r = 0; r < kSide; ++r) {
        for (int c = 0; c < kSide; ++c) {
            double v[3] = {-0.5, -0.3, 0.1};
            if (r > 6 && r < 22 && c > 4 && c < 14) { v[0] = 0.7; v[1] = 0.2; v[2] = -0.4; }
            if (r > 14 && r < 29 && c > 16 && c < 28) { v[0] = -0.1; v[1] = 0.6; v[2] = 0.5; }
            if (r > 26) { v[0] = 0.1; v[1] = -0.1; v[2] = -0.6; }
            for (int ch = 0; ch < 3; ++ch) x.at(r, c, ch) = v[ch];
        }
    }
    return x;
}

ImageTensor content_waves() {
    ImageTensor x(kSide, kSide, kChannels);
    for (int r = 0; r < kSide; ++r) {
        for (int c = 0; c < kSide; ++c) {
            const double u = std::sin(0.25 * c + 0.1 * r);
            const double v = std::cos(0.18 * r - 0.05 * c);
            x.at(r, c, 0) = 0.6 * u;
            x.at(r, c, 1) = 0.4 * v - 0.1;
            x.at(r, c, 2) = 0.3 * (u * v) + 0.2;
        }
    }
    return x;
}

ImageTensor box3(const ImageTensor& x) {
    ImageTensor y(x.shape());
    for (int r = 0; r < x.height(); ++r) {
        for (int c = 0; c < x.width(); ++c) {
            for (int ch = 0; ch < x.channels(); ++ch) {
                double s = 0.0;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int rr = r + dy, cc = c + dx;
                        if (rr >= 0 && rr < x.height() && cc >= 0 && cc < x.width()) s += x.at(rr, cc, ch);
                    }
                }
                y.at(r, c, ch) = s / 9.0;
            }
        }
    }
    return y;
}

struct BandStats {
    double low = 0.0;
    double high = 0.0;
};

// Per-band signal variance of the images divided by the per-band variance of
// white noise (1/9 after the box blur, 8/9 for the remainder), measured on
// interior pixels.
BandStats band_snr(const std::vector<ImageTensor>& images) {
    double sl = 0.0, sh = 0.0;
    long n = 0;
    for (const auto& x : images) {
        const ImageTensor lo = box3(x);
        double mean[3] = {0, 0, 0};
        int count = 0;
        for (int r = 1; r < kSide - 1; ++r)
            for (int c = 1; c < kSide - 1; ++c, ++count)
                for (int ch = 0; ch < 3; ++ch) mean[ch] += lo.at(r, c, ch);
        for (double& m : mean) m /= count;
        for (int r = 1; r < kSide - 1; ++r) {
            for (int c = 1; c < kSide - 1; ++c) {
                for (int ch = 0; ch < 3; ++ch) {
                    const double l = lo.at(r, c, ch) - mean[ch];
                    const double h = x.at(r, c, ch) - lo.at(r, c, ch);
                    sl += l * l;
                    sh += h * h;
                    ++n;
                }
            }
        }
    }
    // Floored: a very small ratio gives a gain peak too narrow for the
    // sinusoidal timestep features to follow.
    return {std::max(kMinSnr, (sl / n) / (1.0 / 9.0)), std::max(kMinSnr, (sh / n) / (8.0 / 9.0))};
}

// --- gate fitting ----------------------------------------------------------

double silu_grad(double z) {
    const double s = 1.0 / (1.0 + std::exp(-z));
    return s * (1.0 + z * (1.0 - s));
}

// Inverse of silu' on its increasing branch [-2.3994, 1.5].
double silu_grad_inverse(double g) {
    double lo = -2.3994, hi = 1.5;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (silu_grad(mid) < g ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

double optimal_gain(double abar, double snr) {
    return std::sqrt(1.0 - abar) / (abar * snr + 1.0 - abar);
}

struct GateFit {
    std::vector<double> weight;  // over the timestep embedding
    double bias = 0.0;
    double readout = 0.0;        // G_max / s
    double max_gain_error = 0.0;
};

// Fits b(t) = silu'^{-1}(g(t) / G_max) as an affine function of the timestep
// embedding, weighting the early (low-noise) part of the horizon more.
GateFit fit_gate(const NoiseSchedule& s, double snr) {
    const int n = s.t_train();
    std::vector<double> gain(n);
    for (int t = 0; t < n; ++t) gain[t] = optimal_gain(s.alpha_bar(t), snr);
    const double gmax = *std::max_element(gain.begin(), gain.end()) * 1.05;

    Eigen::MatrixXd A(n, kTimeEmbedWidth + 1);
    Eigen::VectorXd y(n);
    for (int t = 0; t < n; ++t) {
        const double wt = t < 400 ? 4.0 : 1.0;
        const auto e = timestep_embedding(t);
        for (int k = 0; k < kTimeEmbedWidth; ++k) A(t, k) = wt * e[k];
        A(t, kTimeEmbedWidth) = wt;
        y(t) = wt * silu_grad_inverse(gain[t] / gmax);
    }
    const double ridge = 1e-6;
    Eigen::MatrixXd AtA = A.transpose() * A;
    AtA.diagonal().array() += ridge;
    const Eigen::VectorXd coef = AtA.ldlt().solve(A.transpose() * y);

    GateFit fit;
    fit.weight.assign(coef.data(), coef.data() + kTimeEmbedWidth);
    fit.bias = coef(kTimeEmbedWidth);
    fit.readout = gmax / kInputScale;
    for (int t = 0; t < n; ++t) {
        const auto e = timestep_embedding(t);
        double b = fit.bias;
        for (int k = 0; k < kTimeEmbedWidth; ++k) b += fit.weight[k] * e[k];
        fit.max_gain_error = std::max(fit.max_gain_error, std::abs(silu_grad(b) * gmax - gain[t]));
    }
    return fit;
}

// --- networks --------------------------------------------------------------

std::vector<float> random_values(Rng& rng, std::size_t n, double scale) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(scale * rng.normal());
    return v;
}

// Channel layout of the hidden state:
//   0-2   low band of R, G, B (scaled input, gated by b_low)
//   3-5   high band of R, G, B (gated by b_high)
//   6, 7  gate references (b_low, b_high only)
//   8-13  gated band signals written by block1
//   14,15 prompt-dependent offsets
WeightBundle make_denoiser(const NoiseSchedule& s, BandStats snr, std::uint64_t seed) {
    const int C = kChannels;
    const int H = kHidden;
    const int cond = kTimeEmbedWidth + kEmbedWidth;
    const GateFit low = fit_gate(s, snr.low);
    const GateFit high = fit_gate(s, snr.high);
    std::printf("  snr low %.4f high %.4f | max gain error low %.4f high %.4f\n", snr.low, snr.high,
                low.max_gain_error, high.max_gain_error);

    auto idx4 = [](int o, int i, int ky, int kx, int in) { return ((o * in + i) * 3 + ky) * 3 + kx; };

    std::vector<float> conv_in(H * C * 9, 0.0f), conv_in_b(H, 0.0f);
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const double box = kInputScale / 9.0;
                conv_in[idx4(c, c, ky, kx, C)] = static_cast<float>(box);
                conv_in[idx4(3 + c, c, ky, kx, C)] =
                    static_cast<float>((ky == 1 && kx == 1 ? kInputScale : 0.0) - box);
            }
        }
    }

    Rng rng(seed);
    std::vector<float> emb(H * cond, 0.0f), emb_b(H, 0.0f);
    auto set_gate_row = [&](int row, const GateFit& g) {
        for (int k = 0; k < kTimeEmbedWidth; ++k) emb[row * cond + k] = static_cast<float>(g.weight[k]);
        emb_b[row] = static_cast<float>(g.bias);
    };
    for (int c = 0; c < C; ++c) {
        set_gate_row(c, low);
        set_gate_row(3 + c, high);
    }
    set_gate_row(6, low);
    set_gate_row(7, high);
    for (int row = 14; row < 16; ++row) {
        for (int k = 0; k < kEmbedWidth; ++k) {
            emb[row * cond + kTimeEmbedWidth + k] = static_cast<float>(0.15 * rng.normal());
        }
    }

    std::vector<float> block1(H * H * 9, 0.0f), block1_b(H, 0.0f);
    for (int m = 0; m < 6; ++m) {
        const int ref = m < 3 ? 6 : 7;
        block1[idx4(8 + m, m, 1, 1, H)] = 1.0f;
        block1[idx4(8 + m, ref, 1, 1, H)] = -1.0f;
    }

    std::vector<float> block2(H * H * 9, 0.0f), block2_b(H, 0.0f);
    for (int o = 14; o < 16; ++o) {
        for (int i = 14; i < 16; ++i) {
            for (int k = 0; k < 9; ++k) block2[(o * H + i) * 9 + k] = static_cast<float>(0.05 * rng.normal());
        }
    }

    std::vector<float> conv_out(C * H * 9, 0.0f), conv_out_b(C, 0.0f);
    for (int c = 0; c < C; ++c) {
        conv_out[idx4(c, 8 + c, 1, 1, H)] = static_cast<float>(low.readout);
        conv_out[idx4(c, 11 + c, 1, 1, H)] = static_cast<float>(high.readout);
        for (int i = 14; i < 16; ++i) conv_out[idx4(c, i, 1, 1, H)] = static_cast<float>(0.1 * rng.normal());
    }

    WeightBundle w;
    w.architecture = std::string(kToyUnetArchitecture);
    w.embed_width = kEmbedWidth;
    w.attributes["t_train"] = std::to_string(s.t_train());
    w.add("conv_in.weight", {H, C, 3, 3}, conv_in);
    w.add("conv_in.bias", {H}, conv_in_b);
    w.add("emb.weight", {H, cond}, emb);
    w.add("emb.bias", {H}, emb_b);
    w.add("block1.weight", {H, H, 3, 3}, block1);
    w.add("block1.bias", {H}, block1_b);
    w.add("block2.weight", {H, H, 3, 3}, block2);
    w.add("block2.bias", {H}, block2_b);
    w.add("conv_out.weight", {C, H, 3, 3}, conv_out);
    w.add("conv_out.bias", {C}, conv_out_b);
    return w;
}

WeightBundle make_embedder(std::uint64_t seed) {
    Rng rng(seed);
    const int pooled = 8 * (kSide / 4) * (kSide / 4);
    const int vocab = static_cast<int>(std::count(kVocabulary, kVocabulary + std::strlen(kVocabulary), ',')) + 1;
    WeightBundle w;
    w.architecture = "toy-embed-v1";
    w.embed_width = kEmbedWidth;
    w.attributes["vocabulary"] = kVocabulary;
    w.add("img.conv.weight", {8, kChannels, 3, 3}, random_values(rng, 8 * kChannels * 9, 0.4));
    w.add("img.conv.bias", {8}, random_values(rng, 8, 0.1));
    w.add("img.proj.weight", {kEmbedWidth, pooled}, random_values(rng, kEmbedWidth * pooled, 1.0 / std::sqrt(pooled)));
    w.add("img.proj.bias", {kEmbedWidth}, random_values(rng, kEmbedWidth, 0.05));
    w.add("tag.weight", {kEmbedWidth, vocab}, random_values(rng, kEmbedWidth * vocab, 1.0));
    w.add("tag.bias", {kEmbedWidth}, std::vector<float>(kEmbedWidth, 0.0f));
    return w;
}

WeightBundle make_features(std::uint64_t seed) {
    Rng rng(seed);
    const int K = 8;
    const int P = 4;
    const int D = 16;
    WeightBundle w;
    w.architecture = "toy-features-v1";
    w.embed_width = 0;
    w.attributes["patch_size"] = std::to_string(P);
    w.attributes["channels"] = std::to_string(kChannels);
    for (int i = 0; i < 3; ++i) {
        const std::string base = "layer" + std::to_string(i);
        w.add(base + ".weight", {K, kChannels, 3, 3}, random_values(rng, K * kChannels * 9, 1.0 / std::sqrt(27.0)));
        w.add(base + ".bias", {K}, random_values(rng, K, 0.05));
    }
    w.add("patch.weight", {D, P * P * kChannels}, random_values(rng, D * P * P * kChannels, 1.0 / std::sqrt(48.0)));
    return w;
}

WeightBundle make_aesthetic(std::uint64_t seed) {
    Rng rng(seed);
    WeightBundle w;
    w.architecture = "toy-aesthetic-v1";
    w.embed_width = kEmbedWidth;
    w.add("head.weight", {kEmbedWidth}, random_values(rng, kEmbedWidth, 0.5));
    w.add("prompt.gain", {1}, {1.0f});
    w.add("head.bias", {1}, {0.0f});
    return w;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::fprintf(stderr, "usage: %s <output-dir>\n", argv[0]);
        return 2;
    }
    const fs::path out = argv[1];
    fs::create_directories(out);

    const std::vector<std::pair<std::string, ImageTensor>> contents{
        {"content_disc.png", content_disc()}, {"content_blocks.png", content_blocks()}, {"content_waves.png", content_waves()}};
    std::vector<ImageTensor> decoded;
    for (const auto& [name, img] : contents) {
        write_png(img, out / name);
        decoded.push_back(read_png(out / name));
    }

    const NoiseSchedule s = default_schedule();
    const BandStats natural = band_snr(decoded);
    std::printf("natural denoiser\n");
    write_weight_file(make_denoiser(s, natural, 101), out / "denoiser_natural.dsw");
    std::printf("artistic denoiser\n");
    write_weight_file(make_denoiser(s, {1.0, 0.25}, 202), out / "denoiser_artistic.dsw");
    write_weight_file(make_embedder(303), out / "embedder.dsw");
    write_weight_file(make_features(404), out / "features.dsw");
    write_weight_file(make_aesthetic(505), out / "aesthetic.dsw");
    std::printf("wrote fixtures to %s\n", out.c_str());
    return 0;
}
