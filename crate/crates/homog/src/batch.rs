//! Batched network evaluation over a whole point set.
//!
//! The six jet components (value, two gradient, three Hessian entries) are
//! carried as channels: each layer applies its weight matrix to every
//! channel as one dense matrix product over all points, and the tanh jet
//! rule mixes channels pointwise. The backward pass is the exact adjoint of
//! this computation, so its parameter gradients agree with the tape engine
//! to roundoff; the tape stays the reference, this path is the throughput
//! engine for training.
//!
//! Channel order: `V, D1, D2, H11, H12, H22`.

use crate::network::NetworkConfig;

pub const COMPS: usize = 6;
pub const CV: usize = 0;
pub const CD1: usize = 1;
pub const CD2: usize = 2;
pub const CH11: usize = 3;
pub const CH12: usize = 4;
pub const CH22: usize = 5;

/// Which channels a pass must produce or propagate.
pub type CompMask = [bool; COMPS];

/// Value and spatial gradient only.
pub const MASK_GRAD: CompMask = [true, true, true, false, false, false];
/// Value, gradient, and the two Laplacian entries; the mixed second
/// derivative never enters the residuals, so it is skipped.
pub const MASK_SECOND: CompMask = [true, true, true, true, false, true];
/// Everything, mixed entry included.
pub const MASK_ALL: CompMask = [true; COMPS];

/// Per-channel matrices of shape `units x pts`, row-major per channel.
#[derive(Debug, Clone)]
pub struct BatchJets {
    pub units: usize,
    pub pts: usize,
    comp: [Vec<f64>; COMPS],
}

impl BatchJets {
    pub fn new(units: usize, pts: usize) -> Self {
        BatchJets {
            units,
            pts,
            comp: std::array::from_fn(|_| vec![0.0; units * pts]),
        }
    }

    pub fn comp(&self, c: usize) -> &[f64] {
        &self.comp[c]
    }

    pub fn comp_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.comp[c]
    }

    pub fn fill_zero(&mut self) {
        for c in &mut self.comp {
            c.fill(0.0);
        }
    }
}

/// `C = A B + beta C` with row-major `A (m x k)`, `B (k x n)`, `C (m x n)`.
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `C = A B^T + beta C` where `bt` holds `B^T` row-major as `(n x k)`.
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], bt: &[f64], beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && bt.len() >= n * k && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            bt.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `C = A^T B + beta C` where `at` holds `A^T` row-major as `(k x m)`.
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, at: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    assert!(at.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            at.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct LayerCache {
    pre: BatchJets,
    act: BatchJets,
    /// tanh of the pre-activation value channel, kept for the backward pass.
    t: Vec<f64>,
}

/// Preallocated buffers for forward and backward passes over a fixed point
/// set. Trigonometric tables of the points are computed once.
pub struct BatchWorkspace {
    cfg: NetworkConfig,
    pts: usize,
    /// cos x1, sin x1, cos x2, sin x2 at every point.
    trig: [Vec<f64>; 4],
    feats: BatchJets,
    layers: Vec<LayerCache>,
    out: BatchJets,
    d_act: BatchJets,
    d_pre: BatchJets,
    d_feats: BatchJets,
}

impl BatchWorkspace {
    pub fn new(cfg: NetworkConfig, points: &[[f64; 2]]) -> Self {
        let pts = points.len();
        let nf = cfg.n_features();
        let nh = cfg.n_hidden;
        let trig = [
            points.iter().map(|p| p[0].cos()).collect(),
            points.iter().map(|p| p[0].sin()).collect(),
            points.iter().map(|p| p[1].cos()).collect(),
            points.iter().map(|p| p[1].sin()).collect(),
        ];
        let layers = (0..cfg.n_layers)
            .map(|_| LayerCache {
                pre: BatchJets::new(nh, pts),
                act: BatchJets::new(nh, pts),
                t: vec![0.0; nh * pts],
            })
            .collect();
        BatchWorkspace {
            cfg,
            pts,
            trig,
            feats: BatchJets::new(nf, pts),
            layers,
            out: BatchJets::new(1, pts),
            d_act: BatchJets::new(nh, pts),
            d_pre: BatchJets::new(nh, pts),
            d_feats: BatchJets::new(nf, pts),
        }
    }

    pub fn pts(&self) -> usize {
        self.pts
    }

    /// Network output jets for every point, valid after [`Self::forward`].
    pub fn output(&self) -> &BatchJets {
        &self.out
    }

    /// Evaluate the network on every point, producing the channels selected
    /// by `mask` (the value channel is always produced: the nonlinearity
    /// needs it).
    pub fn forward(&mut self, params: &[f64], mask: CompMask) {
        assert_eq!(params.len(), self.cfg.param_count());
        let lay = self.cfg.layout();
        let (np, nh, nf) = (self.cfg.n_periodic, self.cfg.n_hidden, self.cfg.n_features());
        let n_layers = self.cfg.n_layers;
        let BatchWorkspace {
            pts,
            trig,
            feats,
            layers,
            out,
            ..
        } = self;
        let pts = *pts;

        // Periodic feature channels. Rows for axis j only touch D(1+j) and
        // H(jj); the remaining feature channels are zero by construction and
        // stay zero in the preallocated buffers.
        {
            let [fv, fd1, fd2, fh11, _fh12, fh22] = &mut feats.comp;
            for i in 0..np {
                for j in 0..2 {
                    let r = 2 * i + j;
                    let (cosj, sinj) = (&trig[2 * j], &trig[2 * j + 1]);
                    let u = params[lay.u.start + r];
                    let v = params[lay.v.start + r];
                    let b = params[lay.phase.start + r];
                    let off = r * pts;
                    let fv = &mut fv[off..off + pts];
                    for (q, fvq) in fv.iter_mut().enumerate() {
                        *fvq = u.mul_add(cosj[q], v.mul_add(sinj[q], b));
                    }
                    let fd = if j == 0 {
                        &mut fd1[off..off + pts]
                    } else {
                        &mut fd2[off..off + pts]
                    };
                    for (q, fdq) in fd.iter_mut().enumerate() {
                        *fdq = (-u).mul_add(sinj[q], v * cosj[q]);
                    }
                    let fh = if j == 0 {
                        &mut fh11[off..off + pts]
                    } else {
                        &mut fh22[off..off + pts]
                    };
                    for (q, fhq) in fh.iter_mut().enumerate() {
                        *fhq = b - fv[q];
                    }
                }
            }
        }

        // First dense layer.
        let w1 = &params[lay.w1.clone()];
        let b1 = &params[lay.b1.clone()];
        {
            let first = &mut layers[0];
            for c in 0..COMPS {
                if !(mask[c] || c == CV) {
                    continue;
                }
                gemm_nn(nh, nf, pts, w1, feats.comp(c), 0.0, first.pre.comp_mut(c));
            }
            let pv = first.pre.comp_mut(CV);
            for (u, &bu) in b1.iter().enumerate() {
                for x in &mut pv[u * pts..(u + 1) * pts] {
                    *x += bu;
                }
            }
            tanh_jet_forward(&first.pre, &mut first.t, None, &mut first.act, mask);
        }

        // Residual blocks.
        for (l, (wr, br)) in lay.blocks.iter().enumerate() {
            let (prev, rest) = layers.split_at_mut(l + 1);
            let prev = &prev[l];
            let cur = &mut rest[0];
            let w = &params[wr.clone()];
            let b = &params[br.clone()];
            for c in 0..COMPS {
                if !(mask[c] || c == CV) {
                    continue;
                }
                gemm_nn(nh, nh, pts, w, prev.act.comp(c), 0.0, cur.pre.comp_mut(c));
            }
            let pv = cur.pre.comp_mut(CV);
            for (u, &bu) in b.iter().enumerate() {
                for x in &mut pv[u * pts..(u + 1) * pts] {
                    *x += bu;
                }
            }
            tanh_jet_forward(&cur.pre, &mut cur.t, Some(&prev.act), &mut cur.act, mask);
        }

        // Linear readout.
        let w_out = &params[lay.w_out.clone()];
        let last = &layers[n_layers - 1];
        for c in 0..COMPS {
            if !(mask[c] || c == CV) {
                continue;
            }
            gemm_nn(1, nh, pts, w_out, last.act.comp(c), 0.0, out.comp_mut(c));
        }
        let b_out = params[lay.b_out];
        for x in out.comp_mut(CV) {
            *x += b_out;
        }
    }

    /// Adjoint of [`Self::forward`]: given `d(loss)/d(output channel)` in
    /// `seeds` (shape `1 x pts` per channel), accumulate `d(loss)/d(params)`
    /// into `grad`. `mask` must cover every channel with nonzero seeds plus
    /// the value channel, which picks up adjoints through the tanh rule.
    pub fn backward(&mut self, params: &[f64], seeds: &BatchJets, mask: CompMask, grad: &mut [f64]) {
        assert_eq!(params.len(), self.cfg.param_count());
        assert_eq!(grad.len(), self.cfg.param_count());
        assert_eq!(seeds.units, 1);
        assert_eq!(seeds.pts, self.pts);
        assert!(mask[CV], "value channel must be active in the backward pass");
        let lay = self.cfg.layout();
        let (np, nh, nf) = (self.cfg.n_periodic, self.cfg.n_hidden, self.cfg.n_features());
        let n_layers = self.cfg.n_layers;
        let BatchWorkspace {
            pts,
            trig,
            feats,
            layers,
            d_act,
            d_pre,
            d_feats,
            ..
        } = self;
        let pts = *pts;

        // Readout.
        let last = &layers[n_layers - 1];
        grad[lay.b_out] += seeds.comp(CV).iter().sum::<f64>();
        for c in 0..COMPS {
            if !mask[c] {
                continue;
            }
            gemm_nt(
                1,
                pts,
                nh,
                seeds.comp(c),
                last.act.comp(c),
                1.0,
                &mut grad[lay.w_out.clone()],
            );
        }
        let w_out = &params[lay.w_out.clone()];
        for c in 0..COMPS {
            let dc = d_act.comp_mut(c);
            if !mask[c] {
                // Stale data from a previous call must not leak in.
                dc.fill(0.0);
                continue;
            }
            let sc = seeds.comp(c);
            for (u, &wu) in w_out.iter().enumerate() {
                for (q, x) in dc[u * pts..(u + 1) * pts].iter_mut().enumerate() {
                    *x = wu * sc[q];
                }
            }
        }

        // Residual blocks, in reverse.
        for (l, (wr, br)) in lay.blocks.iter().enumerate().rev() {
            let cur = &layers[l + 1];
            let prev_act = &layers[l].act;
            tanh_jet_backward(d_act, &cur.pre, &cur.t, d_pre, mask);
            for (u, g) in grad[br.clone()].iter_mut().enumerate() {
                *g += d_pre.comp(CV)[u * pts..(u + 1) * pts].iter().sum::<f64>();
            }
            let w = &params[wr.clone()];
            for c in 0..COMPS {
                if !mask[c] {
                    continue;
                }
                gemm_nt(
                    nh,
                    pts,
                    nh,
                    d_pre.comp(c),
                    prev_act.comp(c),
                    1.0,
                    &mut grad[wr.clone()],
                );
                // Skip connection: the previous layer's adjoint keeps the
                // block input term (beta = 1) and gains the path through the
                // block weights.
                gemm_tn(nh, nh, pts, w, d_pre.comp(c), 1.0, d_act.comp_mut(c));
            }
        }

        // First dense layer.
        let first = &layers[0];
        tanh_jet_backward(d_act, &first.pre, &first.t, d_pre, mask);
        for (u, g) in grad[lay.b1.clone()].iter_mut().enumerate() {
            *g += d_pre.comp(CV)[u * pts..(u + 1) * pts].iter().sum::<f64>();
        }
        for c in 0..COMPS {
            if !mask[c] {
                continue;
            }
            gemm_nt(
                nh,
                pts,
                nf,
                d_pre.comp(c),
                feats.comp(c),
                1.0,
                &mut grad[lay.w1.clone()],
            );
            gemm_tn(
                nf,
                nh,
                pts,
                &params[lay.w1.clone()],
                d_pre.comp(c),
                0.0,
                d_feats.comp_mut(c),
            );
        }

        // Periodic coefficients. Feature row r = 2i + j depends on (u, v, b)
        // through V = u cos + v sin + b, D(1+j) = -u sin + v cos,
        // H(jj) = -(u cos + v sin).
        for i in 0..np {
            for j in 0..2 {
                let r = 2 * i + j;
                let off = r * pts;
                let (cosj, sinj) = (&trig[2 * j], &trig[2 * j + 1]);
                let dv = &d_feats.comp(CV)[off..off + pts];
                let dd = if j == 0 {
                    &d_feats.comp(CD1)[off..off + pts]
                } else {
                    &d_feats.comp(CD2)[off..off + pts]
                };
                let dh = if j == 0 {
                    &d_feats.comp(CH11)[off..off + pts]
                } else {
                    &d_feats.comp(CH22)[off..off + pts]
                };
                let use_d = mask[if j == 0 { CD1 } else { CD2 }];
                let use_h = mask[if j == 0 { CH11 } else { CH22 }];
                let (mut gu, mut gv, mut gb) = (0.0, 0.0, 0.0);
                for q in 0..pts {
                    let (c, s) = (cosj[q], sinj[q]);
                    let mut du = dv[q] * c;
                    let mut dvv = dv[q] * s;
                    if use_d {
                        du -= dd[q] * s;
                        dvv += dd[q] * c;
                    }
                    if use_h {
                        du -= dh[q] * c;
                        dvv -= dh[q] * s;
                    }
                    gu += du;
                    gv += dvv;
                    gb += dv[q];
                }
                grad[lay.u.start + r] += gu;
                grad[lay.v.start + r] += gv;
                grad[lay.phase.start + r] += gb;
            }
        }
    }
}

/// Pointwise tanh jet: `act = skip + tanh(pre)` through second order.
fn tanh_jet_forward(
    pre: &BatchJets,
    t_store: &mut [f64],
    skip: Option<&BatchJets>,
    act: &mut BatchJets,
    mask: CompMask,
) {
    let n = pre.units * pre.pts;
    let [pv, pd1, pd2, ph11, ph12, ph22] = &pre.comp;
    let [av, ad1, ad2, ah11, ah12, ah22] = &mut act.comp;
    for i in 0..n {
        let t = pv[i].tanh();
        t_store[i] = t;
        let s = 1.0 - t * t;
        av[i] = t;
        if mask[CD1] {
            ad1[i] = s * pd1[i];
        }
        if mask[CD2] {
            ad2[i] = s * pd2[i];
        }
        if mask[CH11] || mask[CH12] || mask[CH22] {
            let fpp = -2.0 * t * s;
            if mask[CH11] {
                ah11[i] = s.mul_add(ph11[i], fpp * pd1[i] * pd1[i]);
            }
            if mask[CH12] {
                ah12[i] = s.mul_add(ph12[i], fpp * pd1[i] * pd2[i]);
            }
            if mask[CH22] {
                ah22[i] = s.mul_add(ph22[i], fpp * pd2[i] * pd2[i]);
            }
        }
    }
    if let Some(base) = skip {
        for c in 0..COMPS {
            if !(mask[c] || c == CV) {
                continue;
            }
            for (a, b) in act.comp[c].iter_mut().zip(base.comp(c)) {
                *a += b;
            }
        }
    }
}

/// Adjoint of [`tanh_jet_forward`] (tanh part only; the skip path is handled
/// by the caller). Reads the adjoint of the activation channels, writes the
/// adjoint of the pre-activation channels.
fn tanh_jet_backward(
    d_act: &BatchJets,
    pre: &BatchJets,
    t: &[f64],
    d_pre: &mut BatchJets,
    mask: CompMask,
) {
    let n = pre.units * pre.pts;
    let [av, ad1, ad2, ah11, ah12, ah22] = &d_act.comp;
    let [pv, pd1, pd2, ph11, ph12, ph22] = &pre.comp;
    let _ = pv;
    let [qv, qd1, qd2, qh11, qh12, qh22] = &mut d_pre.comp;
    let any_h = mask[CH11] || mask[CH12] || mask[CH22];
    for i in 0..n {
        let ti = t[i];
        let s = 1.0 - ti * ti;
        let ds = -2.0 * ti * s;
        // d(loss)/d(pre V) accumulates the direct value path plus every
        // channel that holds s or fpp factors.
        let mut dpv = s * av[i];
        let mut dpd1 = 0.0;
        let mut dpd2 = 0.0;
        if mask[CD1] {
            dpd1 += s * ad1[i];
            dpv += ds * pd1[i] * ad1[i];
        }
        if mask[CD2] {
            dpd2 += s * ad2[i];
            dpv += ds * pd2[i] * ad2[i];
        }
        if any_h {
            let fpp = -2.0 * ti * s;
            let dfpp = (6.0 * ti * ti - 2.0) * s;
            if mask[CH11] {
                qh11[i] = s * ah11[i];
                dpd1 += fpp * 2.0 * pd1[i] * ah11[i];
                dpv += (ds * ph11[i] + dfpp * pd1[i] * pd1[i]) * ah11[i];
            }
            if mask[CH12] {
                qh12[i] = s * ah12[i];
                dpd1 += fpp * pd2[i] * ah12[i];
                dpd2 += fpp * pd1[i] * ah12[i];
                dpv += (ds * ph12[i] + dfpp * pd1[i] * pd2[i]) * ah12[i];
            }
            if mask[CH22] {
                qh22[i] = s * ah22[i];
                dpd2 += fpp * 2.0 * pd2[i] * ah22[i];
                dpv += (ds * ph22[i] + dfpp * pd2[i] * pd2[i]) * ah22[i];
            }
        }
        qv[i] = dpv;
        if mask[CD1] {
            qd1[i] = dpd1;
        }
        if mask[CD2] {
            qd2[i] = dpd2;
        }
    }
}
