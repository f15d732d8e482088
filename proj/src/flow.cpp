#include "epigvi/flow.hpp"

#include <cmath>
#include <sstream>

#include "epigvi/rng.hpp"

namespace epigvi {

using ad::ArrayXXd;
using ad::Index;
using ad::Var;

void FlowConfig::validate() const {
  if (dim != 3) throw ConfigError("flow.dim: only 3 dimensions supported");
  if (transforms < 1) throw ConfigError("flow.transforms: must be positive");
  if (hidden_layers < 1)
    throw ConfigError("flow.hidden_layers: must be positive");
  if (hidden_units < 1) throw ConfigError("flow.hidden_units: must be positive");
  if (bins < 2) throw ConfigError("flow.bins: at least two bins required");
  if (!(tail_bound > 0.0)) throw ConfigError("flow.tail_bound: must be positive");
  if (!(beta_max > 0.0)) throw ConfigError("flow.beta_max: must be positive");
  if (!(min_bin_fraction > 0.0) || !(min_bin_fraction * bins < 1.0))
    throw ConfigError("flow.min_bin_fraction: need 0 < bins * fraction < 1");
  if (!(min_derivative > 0.0) || !(min_derivative < 1.0))
    throw ConfigError("flow.min_derivative: must lie in (0, 1)");
}

std::string FlowConfig::arch_string() const {
  std::ostringstream os;
  os.precision(17);
  os << "nsf;dim=" << dim << ";transforms=" << transforms
     << ";hidden_layers=" << hidden_layers << ";hidden_units=" << hidden_units
     << ";bins=" << bins << ";tail_bound=" << tail_bound
     << ";beta_max=" << beta_max << ";min_bin=" << min_bin_fraction
     << ";min_derivative=" << min_derivative;
  return os.str();
}

std::uint64_t FlowConfig::arch_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : arch_string()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

/// MADE degree of hidden unit j: alternates over {1, ..., dim-1}.
int hidden_degree(int j, int dim) { return 1 + (j % (dim - 1)); }

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_value(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

Eigen::ArrayXd base_log_density(const ArrayXXd& z) {
  const double c =
      -0.5 * static_cast<double>(z.cols()) * std::log(2.0 * M_PI);
  return c - 0.5 * z.square().rowwise().sum();
}

}  // namespace

FlowModel::FlowModel(FlowConfig cfg, std::uint64_t init_seed)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int d = cfg_.dim;
  const int h = cfg_.hidden_units;
  const int out = d * cfg_.params_per_coordinate();
  Rng rng(derive_seed(init_seed, 0xf10c));

  auto xavier = [&](Index fan_in, Index fan_out) {
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    ArrayXXd w(fan_in, fan_out);
    for (Index i = 0; i < fan_in; ++i)
      for (Index j = 0; j < fan_out; ++j)
        w(i, j) = s * (2.0 * rng.uniform01() - 1.0);
    return w;
  };

  for (int t = 0; t < cfg_.transforms; ++t) {
    // Input degree of coordinate c is its position in this transform's
    // rotated order, 1-based.
    auto in_degree = [&](int c) { return ((c - t) % d + d) % d + 1; };

    ArrayXXd m_in(d, h);
    for (int c = 0; c < d; ++c)
      for (int j = 0; j < h; ++j)
        m_in(c, j) = hidden_degree(j, d) >= in_degree(c) ? 1.0 : 0.0;

    ArrayXXd m_hidden(h, h);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < h; ++j)
        m_hidden(i, j) =
            hidden_degree(j, d) >= hidden_degree(i, d) ? 1.0 : 0.0;

    const int per = cfg_.params_per_coordinate();
    ArrayXXd m_out(h, out);
    for (int i = 0; i < h; ++i)
      for (int c = 0; c < d; ++c)
        for (int p = 0; p < per; ++p)
          m_out(i, c * per + p) =
              in_degree(c) > hidden_degree(i, d) ? 1.0 : 0.0;

    // Hidden stack, then a zero head so the flow starts as the identity.
    params_.push_back(xavier(d, h));
    masks_.push_back(m_in);
    params_.push_back(ArrayXXd::Zero(1, h));
    masks_.push_back(ArrayXXd::Ones(1, h));
    for (int l = 1; l < cfg_.hidden_layers; ++l) {
      params_.push_back(xavier(h, h));
      masks_.push_back(m_hidden);
      params_.push_back(ArrayXXd::Zero(1, h));
      masks_.push_back(ArrayXXd::Ones(1, h));
    }
    params_.push_back(ArrayXXd::Zero(h, out));
    masks_.push_back(m_out);
    params_.push_back(ArrayXXd::Zero(1, out));
    masks_.push_back(ArrayXXd::Ones(1, out));
  }
}

std::size_t FlowModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.size());
  return n;
}

FlowVars bind(const FlowModel& model, ad::Tape& tape) {
  FlowVars v;
  v.params.reserve(model.parameters().size());
  for (const auto& p : model.parameters()) v.params.push_back(tape.leaf(p));
  return v;
}

namespace flow_detail {

namespace {

Var param_var(const FlowModel& model, const FlowVars* vars, std::size_t i) {
  if (vars != nullptr) return vars->params[i];
  return ad::constant(model.parameters()[i]);
}

}  // namespace

/// Column slice [c0, c1) via a flat row-major gather.
Var slice_cols(const Var& x, Index c0, Index c1) {
  const Index n = x.rows(), c = x.cols(), w = c1 - c0;
  std::vector<int> idx(static_cast<std::size_t>(n * w));
  std::size_t k = 0;
  for (Index i = 0; i < n; ++i)
    for (Index j = c0; j < c1; ++j) idx[k++] = static_cast<int>(i * c + j);
  return ad::index_select(x, idx, n, w);
}

struct KnotVars {
  Var x_knots;  // (N, K+1)
  Var y_knots;  // (N, K+1)
  Var derivs;   // (N, K+1), boundary entries fixed at one
};

/// Row-wise softmax with a detached max shift for stability.
Var softmax_rows(const Var& x) {
  const Index n = x.rows(), k = x.cols();
  ArrayXXd shift(n, k);
  for (Index i = 0; i < n; ++i) {
    const double m = x.value().row(i).maxCoeff();
    for (Index j = 0; j < k; ++j) shift(i, j) = m;
  }
  Var e = ad::exp(ad::sub(x, ad::constant(shift)));
  Var total = ad::matmul(e, ad::constant(ArrayXXd::Ones(k, 1)));
  return ad::div(e, ad::matmul(total, ad::constant(ArrayXXd::Ones(1, k))));
}

KnotVars spline_knots(const Var& raw, const FlowConfig& cfg) {
  const Index n = raw.rows();
  const int k = cfg.bins;
  if (raw.cols() != cfg.params_per_coordinate())
    throw ShapeError("spline: conditioner outputs must have 3*bins-1 columns");
  for (Index j = 0; j < raw.cols(); ++j)
    for (Index i = 0; i < n; ++i)
      if (!std::isfinite(raw.value()(i, j)))
        throw NumericError("spline: non-finite conditioner output");

  const double b = cfg.tail_bound;
  const double min_frac = cfg.min_bin_fraction;

  // Upper-triangular ones (incl. diagonal) turns fractions into cumsums.
  ArrayXXd tri = ArrayXXd::Zero(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = i; j < k; ++j) tri(i, j) = 1.0;
  const Var tri_c = ad::constant(tri);
  const Var edge = ad::constant(ArrayXXd::Constant(n, 1, -b));

  auto knot_row = [&](const Var& raw_block) {
    Var frac = ad::add(
        ad::mul(softmax_rows(raw_block), ad::constant(1.0 - k * min_frac)),
        ad::constant(min_frac));
    Var interior = ad::sub(
        ad::mul(ad::matmul(frac, tri_c), ad::constant(2.0 * b)),
        ad::constant(b));
    return ad::concat({edge, interior}, 1);
  };

  KnotVars kv;
  kv.x_knots = knot_row(slice_cols(raw, 0, k));
  kv.y_knots = knot_row(slice_cols(raw, k, 2 * k));

  // softplus(c0) == 1 - min_derivative, so zero raw params give unit slopes.
  const double c0 = std::log(std::expm1(1.0 - cfg.min_derivative));
  Var interior_d = ad::add(
      ad::softplus(
          ad::add(slice_cols(raw, 2 * k, 3 * k - 1), ad::constant(c0))),
      ad::constant(cfg.min_derivative));
  const Var ones_col = ad::constant(ArrayXXd::Ones(n, 1));
  kv.derivs = ad::concat({ones_col, interior_d, ones_col}, 1);
  return kv;
}

SplineVar rq_spline_var(const Var& x, const Var& raw, const FlowConfig& cfg) {
  if (x.cols() != 1 || x.rows() != raw.rows())
    throw ShapeError("spline: inputs must be a column vector matching raw");
  const Index n = x.rows();
  const int k = cfg.bins;
  const double b = cfg.tail_bound;

  const KnotVars kv = spline_knots(raw, cfg);
  const ArrayXXd& xk_v = kv.x_knots.value();
  const ArrayXXd& xv = x.value();

  // Bin selection and the inside/outside split are data-dependent constants.
  ArrayXXd mask(n, 1), inv_mask(n, 1);
  std::vector<int> lo(n), hi(n);
  for (Index i = 0; i < n; ++i) {
    const double v = xv(i, 0);
    const bool inside = v >= -b && v <= b;
    mask(i, 0) = inside ? 1.0 : 0.0;
    inv_mask(i, 0) = inside ? 0.0 : 1.0;
    int bin = 0;
    if (inside) {
      int l = 0, r = k - 1;
      while (l < r) {
        const int m = (l + r + 1) / 2;
        if (xk_v(i, m) <= v)
          l = m;
        else
          r = m - 1;
      }
      bin = l;
    }
    lo[i] = static_cast<int>(i) * (k + 1) + bin;
    hi[i] = lo[i] + 1;
  }

  const Var xk = ad::index_select(kv.x_knots, lo);
  const Var xk1 = ad::index_select(kv.x_knots, hi);
  const Var yk = ad::index_select(kv.y_knots, lo);
  const Var yk1 = ad::index_select(kv.y_knots, hi);
  const Var dk = ad::index_select(kv.derivs, lo);
  const Var dk1 = ad::index_select(kv.derivs, hi);

  const Var wk = ad::sub(xk1, xk);
  const Var hk = ad::sub(yk1, yk);
  const Var s = ad::div(hk, wk);

  Var xi = ad::div(ad::sub(x, xk), wk);
  xi = ad::clamp_min(xi, 0.0);
  xi = ad::sub(ad::constant(1.0),
               ad::clamp_min(ad::sub(ad::constant(1.0), xi), 0.0));
  const Var om = ad::sub(ad::constant(1.0), xi);
  const Var xiom = ad::mul(xi, om);

  const Var dsum = ad::add(dk, dk1);
  const Var denom =
      ad::add(s, ad::mul(ad::sub(dsum, ad::mul(s, ad::constant(2.0))), xiom));
  const Var numer =
      ad::mul(hk, ad::add(ad::mul(s, ad::mul(xi, xi)), ad::mul(dk, xiom)));
  const Var y_in = ad::add(yk, ad::div(numer, denom));

  const Var deriv_num = ad::mul(
      ad::mul(s, s),
      ad::add(ad::add(ad::mul(dk1, ad::mul(xi, xi)),
                      ad::mul(ad::mul(s, xiom), ad::constant(2.0))),
              ad::mul(dk, ad::mul(om, om))));
  const Var deriv = ad::div(deriv_num, ad::mul(denom, denom));
  for (Index i = 0; i < n; ++i) {
    const double d = deriv.value()(i, 0);
    if (!(d > 0.0) || !std::isfinite(d))
      throw NumericError(
          "spline: non-positive derivative at an evaluated point");
  }

  SplineVar out;
  const Var mask_c = ad::constant(mask);
  out.outputs =
      ad::add(ad::mul(y_in, mask_c), ad::mul(x, ad::constant(inv_mask)));
  out.log_derivative = ad::mul(ad::log(deriv), mask_c);
  return out;
}

Var conditioner_forward(const FlowModel& model, int t, const Var& x,
                        const FlowVars* vars) {
  const FlowConfig& cfg = model.config();
  if (x.cols() != cfg.dim)
    throw ShapeError("conditioner: inputs must have dim columns");
  const Index n = x.rows();
  const std::size_t base =
      static_cast<std::size_t>(t) * model.tensors_per_transform();
  const Var ones_n = ad::constant(ArrayXXd::Ones(n, 1));

  Var h = x;
  for (int l = 0; l <= cfg.hidden_layers; ++l) {
    const std::size_t wi = base + 2 * static_cast<std::size_t>(l);
    Var w =
        ad::mul(param_var(model, vars, wi), ad::constant(model.masks()[wi]));
    Var bias = param_var(model, vars, wi + 1);
    Var z = ad::add(ad::matmul(h, w), ad::matmul(ones_n, bias));
    h = (l < cfg.hidden_layers) ? ad::tanh(z) : z;
  }
  return h;
}

std::pair<Var, Var> transform_forward(const FlowModel& model, int t,
                                      const Var& x, const FlowVars* vars) {
  const FlowConfig& cfg = model.config();
  const int per = cfg.params_per_coordinate();
  const Var raw = conditioner_forward(model, t, x, vars);

  std::vector<Var> cols;
  Var logdet;
  for (int c = 0; c < cfg.dim; ++c) {
    SplineVar sp = rq_spline_var(
        slice_cols(x, c, c + 1), slice_cols(raw, c * per, (c + 1) * per), cfg);
    cols.push_back(sp.outputs);
    logdet = (c == 0) ? sp.log_derivative : ad::add(logdet, sp.log_derivative);
  }
  return {ad::concat(cols, 1), logdet};
}

}  // namespace flow_detail

using flow_detail::conditioner_forward;
using flow_detail::slice_cols;
using flow_detail::spline_knots;
using flow_detail::transform_forward;

FlowSample sample(const FlowModel& model, int n, std::uint64_t seed,
                  const FlowVars* vars) {
  if (n < 1) throw ContractError("sample: need at least one draw");
  const FlowConfig& cfg = model.config();
  Rng rng(derive_seed(seed, 0x5a3e));
  const ArrayXXd z0 = rng.normal_mat(n, cfg.dim);

  ArrayXXd base_ld(n, 1);
  base_ld.col(0) = base_log_density(z0);
  Var logq = ad::constant(std::move(base_ld));
  Var x = ad::constant(z0);
  for (int t = 0; t < cfg.transforms; ++t) {
    auto [y, ld] = transform_forward(model, t, x, vars);
    logq = ad::sub(logq, ld);
    x = y;
  }

  const Var beta = ad::mul(ad::sigmoid(x), ad::constant(cfg.beta_max));
  // log dbeta/dz = log beta_max - softplus(z) - softplus(-z) per coordinate.
  Var sp = ad::add(ad::softplus(x), ad::softplus(ad::neg(x)));
  Var squash =
      ad::sub(ad::constant(cfg.dim * std::log(cfg.beta_max)),
              ad::matmul(sp, ad::constant(ArrayXXd::Ones(cfg.dim, 1))));
  logq = ad::sub(logq, squash);

  FlowSample out;
  out.beta = beta.value();
  out.unconstrained = x.value();
  out.log_q = logq.value().col(0);
  out.beta_var = beta;
  out.log_q_var = logq;
  return out;
}

Eigen::ArrayXd log_prob_batch(const FlowModel& model,
                              const Eigen::ArrayXXd& beta) {
  const FlowConfig& cfg = model.config();
  if (beta.cols() != cfg.dim)
    throw ShapeError("log_prob: beta must have dim columns");
  const Index n = beta.rows();
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < cfg.dim; ++j)
      if (!(beta(i, j) > 0.0) || !(beta(i, j) < cfg.beta_max))
        throw DomainError(
            "log_prob: beta must lie strictly inside the prior support");

  Eigen::ArrayXd logq = Eigen::ArrayXd::Zero(n);
  ArrayXXd x(n, cfg.dim);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < cfg.dim; ++j) {
      const double z =
          std::log(beta(i, j)) - std::log(cfg.beta_max - beta(i, j));
      x(i, j) = z;
      logq(i) -=
          std::log(cfg.beta_max) - softplus_value(z) - softplus_value(-z);
    }

  const int per = cfg.params_per_coordinate();
  for (int t = cfg.transforms - 1; t >= 0; --t) {
    // Coordinates are recovered in order of their position within the
    // transform; the masks guarantee each block only reads recovered ones.
    for (int pos = 0; pos < cfg.dim; ++pos) {
      const int c = model.coordinate_at(t, pos);
      const Var raw = conditioner_forward(model, t, ad::constant(x), nullptr);
      const Var block = slice_cols(raw, c * per, (c + 1) * per);
      const SplineEval inv = rq_spline(x.col(c), block.value(), cfg, true);
      x.col(c) = inv.outputs;
      logq -= inv.log_derivative;
    }
  }
  logq += base_log_density(x);
  return logq;
}

double log_prob(const FlowModel& model, const Eigen::Array3d& beta) {
  ArrayXXd b(1, 3);
  b << beta[0], beta[1], beta[2];
  return log_prob_batch(model, b)[0];
}

SplineEval rq_spline(const Eigen::ArrayXd& inputs,
                     const Eigen::ArrayXXd& conditioner_outputs,
                     const FlowConfig& cfg, bool inverse) {
  if (conditioner_outputs.rows() != inputs.size())
    throw ShapeError("rq_spline: one parameter row per input required");
  if (!inverse) {
    ArrayXXd x(inputs.size(), 1);
    x.col(0) = inputs;
    const flow_detail::SplineVar sv = flow_detail::rq_spline_var(
        ad::constant(std::move(x)), ad::constant(conditioner_outputs), cfg);
    SplineEval out;
    out.outputs = sv.outputs.value().col(0);
    out.log_derivative = sv.log_derivative.value().col(0);
    return out;
  }

  const Index n = inputs.size();
  const int k = cfg.bins;
  const double b = cfg.tail_bound;
  // The knot computation is shared with the forward pass (evaluated on
  // constants), so both directions see bit-identical knots.
  const flow_detail::KnotVars kv =
      spline_knots(ad::constant(conditioner_outputs), cfg);
  const ArrayXXd& xk_v = kv.x_knots.value();
  const ArrayXXd& yk_v = kv.y_knots.value();
  const ArrayXXd& d_v = kv.derivs.value();

  SplineEval out;
  out.outputs.resize(n);
  out.log_derivative.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double y = inputs[i];
    if (!(y >= -b && y <= b)) {
      out.outputs[i] = y;
      out.log_derivative[i] = 0.0;
      continue;
    }
    int l = 0, r = k - 1;
    while (l < r) {
      const int m = (l + r + 1) / 2;
      if (yk_v(i, m) <= y)
        l = m;
      else
        r = m - 1;
    }
    const double xk = xk_v(i, l), xk1 = xk_v(i, l + 1);
    const double yk = yk_v(i, l), yk1 = yk_v(i, l + 1);
    const double dk = d_v(i, l), dk1 = d_v(i, l + 1);
    const double wk = xk1 - xk, hk = yk1 - yk;
    const double s = hk / wk;
    const double rel = y - yk;
    const double q = dk + dk1 - 2.0 * s;
    const double qa = hk * (s - dk) + rel * q;
    const double qb = hk * dk - rel * q;
    const double qc = -s * rel;
    const double disc = std::max(qb * qb - 4.0 * qa * qc, 0.0);
    double xi = 2.0 * qc / (-qb - std::sqrt(disc));
    xi = std::min(std::max(xi, 0.0), 1.0);
    const double om = 1.0 - xi;
    const double denom = s + q * xi * om;
    const double deriv = s * s *
                         (dk1 * xi * xi + 2.0 * s * xi * om + dk * om * om) /
                         (denom * denom);
    out.outputs[i] = xk + xi * wk;
    out.log_derivative[i] = std::log(deriv);
  }
  return out;
}

}  // namespace epigvi
