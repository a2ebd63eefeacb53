#include "ecloss/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ecloss/parallel.hpp"
#include "ecloss/rng.hpp"

namespace ecloss {

namespace {

constexpr std::size_t kSampleChunk = 4;  // samples per work unit, thread-independent

struct ShapeCHW {
  std::size_t c = 0, h = 0, w = 0;
  std::size_t count() const { return c * h * w; }
};

// Output shape of every layer; index 0 is the input. Throws on any
// inconsistent chaining so validate() and the runtime share one code path.
std::vector<ShapeCHW> chain_shapes(const NetworkSpec& spec) {
  if (spec.in_channels == 0 || spec.in_height == 0 || spec.in_width == 0)
    throw std::invalid_argument("network: empty input shape");
  if (spec.layers.empty()) throw std::invalid_argument("network: no layers");

  std::vector<ShapeCHW> shapes;
  shapes.reserve(spec.layers.size() + 1);
  shapes.push_back({spec.in_channels, spec.in_height, spec.in_width});

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const ShapeCHW& s = shapes.back();
    const LayerSpec& layer = spec.layers[i];
    if (const auto* cv = std::get_if<ConvSpec>(&layer)) {
      if (cv->kernel == 0 || cv->stride == 0 || cv->out_ch == 0)
        throw std::invalid_argument("conv: zero kernel, stride, or channels");
      if (cv->in_ch != s.c)
        throw std::invalid_argument("conv: input channel mismatch at layer " +
                                    std::to_string(i));
      if (s.h + 2 * cv->pad < cv->kernel || s.w + 2 * cv->pad < cv->kernel)
        throw std::invalid_argument("conv: kernel larger than padded input");
      shapes.push_back({cv->out_ch, (s.h + 2 * cv->pad - cv->kernel) / cv->stride + 1,
                        (s.w + 2 * cv->pad - cv->kernel) / cv->stride + 1});
    } else if (std::holds_alternative<ReluSpec>(layer)) {
      shapes.push_back(s);
    } else if (const auto* mp = std::get_if<MaxPoolSpec>(&layer)) {
      if (mp->kernel == 0 || mp->stride == 0)
        throw std::invalid_argument("maxpool: zero kernel or stride");
      if (s.h < mp->kernel || s.w < mp->kernel)
        throw std::invalid_argument("maxpool: window larger than input");
      shapes.push_back({s.c, (s.h - mp->kernel) / mp->stride + 1,
                        (s.w - mp->kernel) / mp->stride + 1});
    } else if (std::holds_alternative<FlattenSpec>(layer)) {
      shapes.push_back({s.count(), 1, 1});
    } else if (const auto* d = std::get_if<DenseSpec>(&layer)) {
      if (s.h != 1 || s.w != 1)
        throw std::invalid_argument("dense: input not flattened at layer " +
                                    std::to_string(i));
      if (d->in != s.c)
        throw std::invalid_argument("dense: input size mismatch at layer " +
                                    std::to_string(i));
      if (d->out == 0) throw std::invalid_argument("dense: zero outputs");
      shapes.push_back({d->out, 1, 1});
    }
  }
  return shapes;
}

std::size_t layer_params(const LayerSpec& layer) {
  if (const auto* cv = std::get_if<ConvSpec>(&layer))
    return cv->out_ch * cv->in_ch * cv->kernel * cv->kernel + cv->out_ch;
  if (const auto* d = std::get_if<DenseSpec>(&layer)) return d->out * d->in + d->out;
  return 0;
}

struct Runtime {
  std::vector<ShapeCHW> shapes;      // layers + 1, index 0 = input
  std::vector<std::size_t> offsets;  // parameter offset per layer
  std::size_t total_params = 0;
  std::size_t feature_index = 0;  // shapes index of the post-target-relu activation
};

Runtime make_runtime(const NetworkSpec& spec) {
  spec.validate();
  Runtime rt;
  rt.shapes = chain_shapes(spec);
  rt.offsets.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    rt.offsets[i] = rt.total_params;
    rt.total_params += layer_params(spec.layers[i]);
  }
  rt.feature_index = spec.target_layer + 2;  // past conv and its relu
  return rt;
}

void conv_fwd(const double* in, ShapeCHW is, const ConvSpec& cv, const double* wgt,
              const double* bias, double* out, ShapeCHW os) {
  const std::size_t k = cv.kernel;
  for (std::size_t o = 0; o < os.c; ++o) {
    const double b = bias[o];
    for (std::size_t y = 0; y < os.h; ++y)
      for (std::size_t x = 0; x < os.w; ++x) {
        double acc = b;
        for (std::size_t ci = 0; ci < is.c; ++ci) {
          const double* ip = in + ci * is.h * is.w;
          const double* wp = wgt + (o * is.c + ci) * k * k;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const long long iy =
                (long long)(y * cv.stride + ky) - (long long)cv.pad;
            if (iy < 0 || iy >= (long long)is.h) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long long ix =
                  (long long)(x * cv.stride + kx) - (long long)cv.pad;
              if (ix < 0 || ix >= (long long)is.w) continue;
              acc += ip[iy * is.w + ix] * wp[ky * k + kx];
            }
          }
        }
        out[(o * os.h + y) * os.w + x] = acc;
      }
  }
}

void conv_bwd(const double* in, ShapeCHW is, const ConvSpec& cv, const double* wgt,
              const double* dout, ShapeCHW os, double* din, double* dwgt,
              double* dbias) {
  const std::size_t k = cv.kernel;
  std::fill(din, din + is.count(), 0.0);
  for (std::size_t o = 0; o < os.c; ++o) {
    for (std::size_t y = 0; y < os.h; ++y)
      for (std::size_t x = 0; x < os.w; ++x) {
        const double g = dout[(o * os.h + y) * os.w + x];
        if (g == 0.0) continue;
        dbias[o] += g;
        for (std::size_t ci = 0; ci < is.c; ++ci) {
          const double* ip = in + ci * is.h * is.w;
          double* dip = din + ci * is.h * is.w;
          const double* wp = wgt + (o * is.c + ci) * k * k;
          double* dwp = dwgt + (o * is.c + ci) * k * k;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const long long iy =
                (long long)(y * cv.stride + ky) - (long long)cv.pad;
            if (iy < 0 || iy >= (long long)is.h) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long long ix =
                  (long long)(x * cv.stride + kx) - (long long)cv.pad;
              if (ix < 0 || ix >= (long long)is.w) continue;
              dwp[ky * k + kx] += g * ip[iy * is.w + ix];
              dip[iy * is.w + ix] += g * wp[ky * k + kx];
            }
          }
        }
      }
  }
}

void maxpool_fwd(const double* in, ShapeCHW is, const MaxPoolSpec& mp, double* out,
                 ShapeCHW os) {
  for (std::size_t c = 0; c < is.c; ++c) {
    const double* ip = in + c * is.h * is.w;
    for (std::size_t y = 0; y < os.h; ++y)
      for (std::size_t x = 0; x < os.w; ++x) {
        double best = ip[y * mp.stride * is.w + x * mp.stride];
        for (std::size_t ky = 0; ky < mp.kernel; ++ky)
          for (std::size_t kx = 0; kx < mp.kernel; ++kx)
            best = std::max(best,
                            ip[(y * mp.stride + ky) * is.w + x * mp.stride + kx]);
        out[(c * os.h + y) * os.w + x] = best;
      }
  }
}

// gradient routed to the first maximum in scan order, recomputed from the input
void maxpool_bwd(const double* in, ShapeCHW is, const MaxPoolSpec& mp,
                 const double* dout, ShapeCHW os, double* din) {
  std::fill(din, din + is.count(), 0.0);
  for (std::size_t c = 0; c < is.c; ++c) {
    const double* ip = in + c * is.h * is.w;
    double* dip = din + c * is.h * is.w;
    for (std::size_t y = 0; y < os.h; ++y)
      for (std::size_t x = 0; x < os.w; ++x) {
        std::size_t arg = y * mp.stride * is.w + x * mp.stride;
        double best = ip[arg];
        for (std::size_t ky = 0; ky < mp.kernel; ++ky)
          for (std::size_t kx = 0; kx < mp.kernel; ++kx) {
            const std::size_t idx = (y * mp.stride + ky) * is.w + x * mp.stride + kx;
            if (ip[idx] > best) {
              best = ip[idx];
              arg = idx;
            }
          }
        dip[arg] += dout[(c * os.h + y) * os.w + x];
      }
  }
}

void dense_fwd(const double* in, const DenseSpec& d, const double* wgt,
               const double* bias, double* out) {
  for (std::size_t o = 0; o < d.out; ++o) {
    double acc = bias[o];
    const double* wp = wgt + o * d.in;
    for (std::size_t i = 0; i < d.in; ++i) acc += in[i] * wp[i];
    out[o] = acc;
  }
}

void dense_bwd(const double* in, const DenseSpec& d, const double* wgt,
               const double* dout, double* din, double* dwgt, double* dbias) {
  std::fill(din, din + d.in, 0.0);
  for (std::size_t o = 0; o < d.out; ++o) {
    const double g = dout[o];
    dbias[o] += g;
    const double* wp = wgt + o * d.in;
    double* dwp = dwgt + o * d.in;
    for (std::size_t i = 0; i < d.in; ++i) {
      dwp[i] += g * in[i];
      din[i] += g * wp[i];
    }
  }
}

// one activation tensor per chain position, batch-major
std::vector<Tensor> alloc_acts(const Runtime& rt, std::size_t b) {
  std::vector<Tensor> acts;
  acts.reserve(rt.shapes.size());
  for (const auto& s : rt.shapes) acts.emplace_back(std::vector<std::size_t>{b, s.c, s.h, s.w});
  return acts;
}

void forward_sample(const NetworkSpec& spec, const Runtime& rt,
                    std::span<const double> params, std::vector<Tensor>& acts,
                    std::size_t sample) {
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const ShapeCHW is = rt.shapes[i];
    const ShapeCHW os = rt.shapes[i + 1];
    const double* in = acts[i].data() + sample * is.count();
    double* out = acts[i + 1].data() + sample * os.count();
    const double* p = params.data() + rt.offsets[i];
    const LayerSpec& layer = spec.layers[i];
    if (const auto* cv = std::get_if<ConvSpec>(&layer)) {
      conv_fwd(in, is, *cv, p, p + cv->out_ch * cv->in_ch * cv->kernel * cv->kernel,
               out, os);
    } else if (std::holds_alternative<ReluSpec>(layer)) {
      for (std::size_t j = 0; j < is.count(); ++j) out[j] = std::max(0.0, in[j]);
    } else if (const auto* mp = std::get_if<MaxPoolSpec>(&layer)) {
      maxpool_fwd(in, is, *mp, out, os);
    } else if (std::holds_alternative<FlattenSpec>(layer)) {
      std::copy(in, in + is.count(), out);
    } else if (const auto* d = std::get_if<DenseSpec>(&layer)) {
      dense_fwd(in, *d, p, p + d->out * d->in, out);
    }
  }
}

std::vector<Tensor> run_forward(const NetworkSpec& spec, const Runtime& rt,
                                std::span<const double> params, const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != spec.in_channels ||
      images.dim(2) != spec.in_height || images.dim(3) != spec.in_width)
    throw std::invalid_argument("forward: image tensor does not match network input");
  if (images.dim(0) == 0) throw std::invalid_argument("forward: empty batch");
  if (params.size() != rt.total_params)
    throw std::invalid_argument("forward: parameter vector has wrong length");

  const std::size_t b = images.dim(0);
  auto acts = alloc_acts(rt, b);
  acts[0] = images;
  for_chunks(b, kSampleChunk, [&](std::size_t, std::size_t lo, std::size_t hi) {
    for (std::size_t s = lo; s < hi; ++s) forward_sample(spec, rt, params, acts, s);
  });
  return acts;
}

FeatureBatch features_from(const std::vector<Tensor>& acts, const Runtime& rt) {
  const Tensor& t = acts[rt.feature_index];
  FeatureBatch fb;
  fb.batch = t.dim(0);
  fb.channels = t.dim(1);
  fb.height = t.dim(2);
  fb.width = t.dim(3);
  fb.values = t.values();
  return fb;
}

}  // namespace

void NetworkSpec::validate() const {
  const auto shapes = chain_shapes(*this);
  if (!std::holds_alternative<DenseSpec>(layers.back()))
    throw std::invalid_argument("network: last layer must be dense");
  if (shapes.back().c < 2)
    throw std::invalid_argument("network: need at least two classes");
  if (target_layer + 1 >= layers.size())
    throw std::invalid_argument("network: target layer index out of range");
  if (!std::holds_alternative<ConvSpec>(layers[target_layer]))
    throw std::invalid_argument("network: target layer is not convolutional");
  if (!std::holds_alternative<ReluSpec>(layers[target_layer + 1]))
    throw std::invalid_argument("network: target conv must be followed by relu");
}

std::size_t NetworkSpec::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += layer_params(l);
  return n;
}

std::array<std::size_t, 3> NetworkSpec::target_shape() const {
  const auto shapes = chain_shapes(*this);
  const ShapeCHW s = shapes[target_layer + 2];
  return {s.c, s.h, s.w};
}

std::size_t NetworkSpec::n_classes() const { return chain_shapes(*this).back().c; }

std::string NetworkSpec::describe() const {
  std::ostringstream out;
  out << "in " << in_channels << ' ' << in_height << ' ' << in_width << " target "
      << target_layer << " layers";
  for (const auto& layer : layers) {
    if (const auto* cv = std::get_if<ConvSpec>(&layer))
      out << " conv " << cv->kernel << ' ' << cv->in_ch << ' ' << cv->out_ch << ' '
          << cv->stride << ' ' << cv->pad;
    else if (std::holds_alternative<ReluSpec>(layer))
      out << " relu";
    else if (const auto* mp = std::get_if<MaxPoolSpec>(&layer))
      out << " maxpool " << mp->kernel << ' ' << mp->stride;
    else if (std::holds_alternative<FlattenSpec>(layer))
      out << " flatten";
    else if (const auto* d = std::get_if<DenseSpec>(&layer))
      out << " dense " << d->in << ' ' << d->out;
  }
  return out.str();
}

NetworkSpec NetworkSpec::parse(const std::string& line) {
  std::istringstream in(line);
  auto fail = [&](const std::string& why) {
    throw std::runtime_error("bad network description: " + why);
  };
  auto num = [&]() {
    std::size_t v = 0;
    if (!(in >> v)) fail("expected a number");
    return v;
  };

  NetworkSpec spec;
  std::string tok;
  if (!(in >> tok) || tok != "in") fail("missing 'in'");
  spec.in_channels = num();
  spec.in_height = num();
  spec.in_width = num();
  if (!(in >> tok) || tok != "target") fail("missing 'target'");
  spec.target_layer = num();
  if (!(in >> tok) || tok != "layers") fail("missing 'layers'");
  while (in >> tok) {
    if (tok == "conv") {
      ConvSpec cv;
      cv.kernel = num();
      cv.in_ch = num();
      cv.out_ch = num();
      cv.stride = num();
      cv.pad = num();
      spec.layers.emplace_back(cv);
    } else if (tok == "relu") {
      spec.layers.emplace_back(ReluSpec{});
    } else if (tok == "maxpool") {
      MaxPoolSpec mp;
      mp.kernel = num();
      mp.stride = num();
      spec.layers.emplace_back(mp);
    } else if (tok == "flatten") {
      spec.layers.emplace_back(FlattenSpec{});
    } else if (tok == "dense") {
      DenseSpec d;
      d.in = num();
      d.out = num();
      spec.layers.emplace_back(d);
    } else {
      fail("unknown layer tag '" + tok + "'");
    }
  }
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  return spec;
}

NetworkSpec reference_network(std::size_t image_size, std::size_t n_classes,
                              std::size_t channels) {
  if (image_size % 4 != 0 || image_size < 8)
    throw std::invalid_argument("reference network: image size must be a multiple of 4, >= 8");
  if (n_classes < 2) throw std::invalid_argument("reference network: need >= 2 classes");
  if (channels == 0) throw std::invalid_argument("reference network: zero channels");

  NetworkSpec spec;
  spec.in_channels = 1;
  spec.in_height = spec.in_width = image_size;
  spec.layers = {ConvSpec{3, 1, 8, 1, 1},  ReluSpec{}, MaxPoolSpec{2, 2},
                 ConvSpec{3, 8, 16, 1, 1}, ReluSpec{}, MaxPoolSpec{2, 2},
                 ConvSpec{3, 16, channels, 1, 1}, ReluSpec{}, FlattenSpec{},
                 DenseSpec{channels * (image_size / 4) * (image_size / 4), n_classes}};
  spec.target_layer = 6;
  spec.validate();
  return spec;
}

std::vector<double> init_parameters(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<double> params(spec.parameter_count(), 0.0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    if (const auto* cv = std::get_if<ConvSpec>(&layer)) {
      Rng rng(derive_seed(seed, "init", i));
      const std::size_t fan = cv->kernel * cv->kernel;
      const double a = std::sqrt(6.0 / double(cv->in_ch * fan + cv->out_ch * fan));
      const std::size_t n = cv->out_ch * cv->in_ch * fan;
      for (std::size_t j = 0; j < n; ++j) params[off + j] = rng.uniform(-a, a);
      off += n + cv->out_ch;  // biases stay zero
    } else if (const auto* d = std::get_if<DenseSpec>(&layer)) {
      Rng rng(derive_seed(seed, "init", i));
      const double a = std::sqrt(6.0 / double(d->in + d->out));
      for (std::size_t j = 0; j < d->out * d->in; ++j)
        params[off + j] = rng.uniform(-a, a);
      off += d->out * d->in + d->out;
    }
  }
  return params;
}

std::vector<double> zero_parameters(const NetworkSpec& spec) {
  return std::vector<double>(spec.parameter_count(), 0.0);
}

ForwardResult forward(const NetworkSpec& spec, std::span<const double> params,
                      const Tensor& images) {
  const Runtime rt = make_runtime(spec);
  auto acts = run_forward(spec, rt, params, images);
  ForwardResult res;
  const Tensor& last = acts.back();
  res.logits = Tensor::from_data({last.dim(0), last.dim(1)}, last.values());
  res.target_features = features_from(acts, rt);
  return res;
}

CrossEntropyResult softmax_cross_entropy(const Tensor& logits,
                                         std::span<const std::size_t> labels) {
  if (logits.rank() != 2) throw std::invalid_argument("cross entropy: logits not 2-D");
  const std::size_t b = logits.dim(0);
  const std::size_t n = logits.dim(1);
  if (labels.size() != b)
    throw std::invalid_argument("cross entropy: label count mismatch");
  for (std::size_t i = 0; i < b; ++i)
    if (labels[i] >= n) throw std::invalid_argument("cross entropy: label out of range");

  CrossEntropyResult res;
  res.dlogits = Tensor({b, n}, 0.0);
  long double total = 0.0L;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = logits.data() + i * n;
    double m = row[0];
    for (std::size_t j = 1; j < n; ++j) m = std::max(m, row[j]);
    long double z = 0.0L;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - m);
    const double lse = std::log(static_cast<double>(z));
    total += lse - (row[labels[i]] - m);
    double* drow = res.dlogits.data() + i * n;
    for (std::size_t j = 0; j < n; ++j)
      drow[j] = (std::exp(row[j] - m - lse) - (j == labels[i] ? 1.0 : 0.0)) /
                static_cast<double>(b);
  }
  res.loss = static_cast<double>(total / static_cast<long double>(b));
  return res;
}

BackwardResult backward(const NetworkSpec& spec, std::span<const double> params,
                        const Tensor& images, std::span<const std::size_t> labels,
                        const TemplateSet& set, const LossConfig& config) {
  const Runtime rt = make_runtime(spec);
  const auto ts = spec.target_shape();
  if (ts[1] != static_cast<std::size_t>(set.params.height) ||
      ts[2] != static_cast<std::size_t>(set.params.width))
    throw std::invalid_argument("backward: target grid does not match template grid");

  auto acts = run_forward(spec, rt, params, images);
  const std::size_t b = images.dim(0);

  const Tensor& last = acts.back();
  auto ce = softmax_cross_entropy(
      Tensor::from_data({last.dim(0), last.dim(1)}, last.values()), labels);

  const FeatureBatch features = features_from(acts, rt);
  bool finite = true;
  for (double v : features.values) finite = finite && std::isfinite(v);

  double mi = 0.0;
  Tensor ec_grad;
  if (!finite) {
    // diverged forward pass: surface NaN through the loss instead of
    // throwing, so the trainer can abort with its step index
    mi = std::numeric_limits<double>::quiet_NaN();
  } else if (config.beta != 0.0) {
    auto [ec, g] = ecloss_and_gradient(features, set);
    mi = -ec;
    ec_grad = std::move(g);
  } else {
    mi = mutual_information_value(features, set);
  }

  BackwardResult res;
  res.cls_loss = ce.loss;
  res.mi = mi;
  // total_loss() inlined so NaN from a diverged pass propagates instead
  // of tripping the validating public entry point
  res.total = config.alpha * ce.loss - config.beta * mi;

  const std::size_t n_chunks = (b + kSampleChunk - 1) / kSampleChunk;
  std::vector<std::vector<double>> chunk_grads(n_chunks);

  for_chunks(b, kSampleChunk, [&](std::size_t chunk, std::size_t lo, std::size_t hi) {
    auto& grad = chunk_grads[chunk];
    grad.assign(rt.total_params, 0.0);
    std::size_t max_count = 0;
    for (const auto& s : rt.shapes) max_count = std::max(max_count, s.count());
    std::vector<double> dcur(max_count), dprev(max_count);

    for (std::size_t s = lo; s < hi; ++s) {
      const std::size_t n_out = rt.shapes.back().count();
      const double* dl = ce.dlogits.data() + s * n_out;
      for (std::size_t j = 0; j < n_out; ++j) dcur[j] = config.alpha * dl[j];

      for (std::size_t i = spec.layers.size(); i-- > 0;) {
        // dcur currently holds d(total)/d(output of layer i)
        if (config.beta != 0.0 && finite && i + 1 == rt.feature_index) {
          const std::size_t n_feat = rt.shapes[rt.feature_index].count();
          const double* eg = ec_grad.data() + s * n_feat;
          for (std::size_t j = 0; j < n_feat; ++j) dcur[j] += config.beta * eg[j];
        }
        const ShapeCHW is = rt.shapes[i];
        const ShapeCHW os = rt.shapes[i + 1];
        const double* in = acts[i].data() + s * is.count();
        const double* p = params.data() + rt.offsets[i];
        double* gp = grad.data() + rt.offsets[i];
        const LayerSpec& layer = spec.layers[i];
        if (const auto* cv = std::get_if<ConvSpec>(&layer)) {
          const std::size_t nw = cv->out_ch * cv->in_ch * cv->kernel * cv->kernel;
          conv_bwd(in, is, *cv, p, dcur.data(), os, dprev.data(), gp, gp + nw);
        } else if (std::holds_alternative<ReluSpec>(layer)) {
          for (std::size_t j = 0; j < is.count(); ++j)
            dprev[j] = in[j] > 0.0 ? dcur[j] : 0.0;
        } else if (const auto* mp = std::get_if<MaxPoolSpec>(&layer)) {
          maxpool_bwd(in, is, *mp, dcur.data(), os, dprev.data());
        } else if (std::holds_alternative<FlattenSpec>(layer)) {
          std::copy(dcur.begin(), dcur.begin() + is.count(), dprev.begin());
        } else if (const auto* d = std::get_if<DenseSpec>(&layer)) {
          dense_bwd(in, *d, p, dcur.data(), dprev.data(), gp, gp + d->out * d->in);
        }
        std::swap(dcur, dprev);
      }
    }
  });

  res.param_grad.assign(rt.total_params, 0.0);
  for (const auto& g : chunk_grads)  // fixed chunk order for bit-reproducibility
    for (std::size_t j = 0; j < rt.total_params; ++j) res.param_grad[j] += g[j];
  return res;
}

TrainerState train(const NetworkSpec& spec, const LabeledDataset& data,
                   TrainerState state, const TemplateSet& set, std::size_t epochs,
                   std::vector<TrainLogRow>* log) {
  spec.validate();
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (data.images.dim(0) != data.size())
    throw std::invalid_argument("train: image/label count mismatch");
  if (state.batch_size == 0) throw std::invalid_argument("train: zero batch size");
  if (!(state.learning_rate > 0.0))
    throw std::invalid_argument("train: learning rate must be positive");
  if (state.parameters.size() != spec.parameter_count())
    throw std::invalid_argument("train: parameter vector has wrong length");

  const std::size_t n = data.size();
  const std::size_t c = data.images.dim(1);
  const std::size_t h = data.images.dim(2);
  const std::size_t w = data.images.dim(3);
  const std::size_t sample_len = c * h * w;

  LossConfig cfg = state.loss_config;
  std::vector<double> window;
  window.reserve(cfg.beta_window);

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(state.rng_seed, "shuffle", epoch));
    shuffle(order, shuffle_rng);

    for (std::size_t start = 0; start < n; start += state.batch_size) {
      const std::size_t bs = std::min(state.batch_size, n - start);
      Tensor batch({bs, c, h, w});
      std::vector<std::size_t> labels(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        const std::size_t src = order[start + i];
        std::copy(data.images.data() + src * sample_len,
                  data.images.data() + (src + 1) * sample_len,
                  batch.data() + i * sample_len);
        labels[i] = data.labels[src];
      }

      auto res = backward(spec, state.parameters, batch, labels, set, cfg);
      ++state.step;
      if (!std::isfinite(res.total))
        throw std::runtime_error("training diverged at step " +
                                 std::to_string(state.step) +
                                 ": total loss is not finite");

      for (std::size_t j = 0; j < state.parameters.size(); ++j)
        state.parameters[j] -= state.learning_rate * res.param_grad[j];

      if (log) log->push_back({state.step, res.cls_loss, res.mi, res.total, cfg.beta});

      window.push_back(res.total);
      if (window.size() >= cfg.beta_window) {
        cfg = update_beta(cfg, window);
        window.clear();
      }
    }
  }
  state.loss_config = cfg;
  return state;
}

std::size_t count_correct(const NetworkSpec& spec, std::span<const double> params,
                          const LabeledDataset& data) {
  const std::size_t n = data.size();
  if (n == 0) return 0;
  const std::size_t c = data.images.dim(1);
  const std::size_t h = data.images.dim(2);
  const std::size_t w = data.images.dim(3);
  const std::size_t sample_len = c * h * w;

  std::size_t correct = 0;
  const std::size_t stride = 64;
  for (std::size_t start = 0; start < n; start += stride) {
    const std::size_t bs = std::min(stride, n - start);
    Tensor batch = Tensor::from_data(
        {bs, c, h, w},
        {data.images.values().begin() + start * sample_len,
         data.images.values().begin() + (start + bs) * sample_len});
    auto out = forward(spec, params, batch);
    const std::size_t classes = out.logits.dim(1);
    for (std::size_t i = 0; i < bs; ++i) {
      const double* row = out.logits.data() + i * classes;
      std::size_t arg = 0;
      for (std::size_t j = 1; j < classes; ++j)
        if (row[j] > row[arg]) arg = j;
      if (arg == data.labels[start + i]) ++correct;
    }
  }
  return correct;
}

void write_train_log(const std::vector<TrainLogRow>& log,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "step,cls_loss,mi,total_loss,beta\n";
  char buf[160];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g\n", row.step,
                  row.cls_loss, row.mi, row.total_loss, row.beta);
    out << buf;
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  ckpt.spec.validate();
  if (ckpt.parameters.size() != ckpt.spec.parameter_count())
    throw std::invalid_argument("checkpoint: parameter count does not match spec");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "ECNN1\n" << ckpt.spec.describe() << '\n' << ckpt.parameters.size() << '\n';
  char buf[48];
  for (double v : ckpt.parameters) {
    std::snprintf(buf, sizeof buf, "%.17g\n", v);
    out << buf;
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic, arch, count_line;
  if (!std::getline(in, magic) || magic != "ECNN1")
    throw std::runtime_error(path.string() + ": not a checkpoint file (want ECNN1)");
  if (!std::getline(in, arch))
    throw std::runtime_error(path.string() + ": missing network description");
  Checkpoint ckpt;
  ckpt.spec = NetworkSpec::parse(arch);
  if (!std::getline(in, count_line))
    throw std::runtime_error(path.string() + ": missing parameter count");
  std::size_t count = 0;
  try {
    count = std::stoul(count_line);
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ": bad parameter count line");
  }
  if (count != ckpt.spec.parameter_count())
    throw std::runtime_error(path.string() + ": parameter count " +
                             std::to_string(count) + " does not match architecture");
  ckpt.parameters.resize(count);
  for (std::size_t i = 0; i < count; ++i)
    if (!(in >> ckpt.parameters[i]))
      throw std::runtime_error(path.string() + ": truncated parameter list at index " +
                               std::to_string(i));
  return ckpt;
}

}  // namespace ecloss
