//! Full-batch gradient training for the four solver variants.
//!
//! A [`Trainer`] owns the batched evaluation workspace and the
//! variant-specific tables (material samples for the pointwise residual,
//! weighted test-function tables and Gram metric for the integrated one).
//! [`train_pair`] runs a primal and a dual network in lockstep with one
//! Adam state each, logging losses and quick effective-coefficient
//! estimates on a fixed cadence, so the spread between the two estimates
//! can be watched during the run.

use crate::batch::{BatchJets, BatchWorkspace, CD1, CD2, CH11, CH22, MASK_GRAD, MASK_SECOND};
use crate::bounds::{quick_estimate_dual_from, quick_estimate_primal_from};
use crate::losses::{tabulate_material, weak_tables, Form, LossError, WeakTables};
use crate::material::MaterialField;
use crate::network::PeriodicNet;
use crate::par::{self, Reduction};
use crate::quadrature::CollocationGrid;
use crate::test_bases::{tabulate, Gram, TestBasis};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Pointwise or integrated residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Strong,
    Weak,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Strong => write!(f, "strong"),
            Method::Weak => write!(f, "weak"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub log_every: usize,
    pub reduction: Reduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40_000,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            log_every: 100,
            reduction: Reduction::Ordered,
        }
    }
}

/// First/second-moment accumulators with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamState {
    pub fn new(n_params: usize) -> AdamState {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], cfg: &TrainConfig) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grads[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grads[i] * grads[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
    }
}

enum DriverKind {
    Strong {
        /// Coefficient (conductivity or its reciprocal per form) and its
        /// gradient at every point.
        coef: Vec<f64>,
        dcoef: [Vec<f64>; 2],
        resid: Vec<f64>,
    },
    Weak {
        tables: WeakTables,
        gram: Gram,
        v1: Vec<f64>,
        v2: Vec<f64>,
    },
}

/// Loss-and-gradient engine for one network on one variant.
pub struct Trainer {
    ws: BatchWorkspace,
    kind: DriverKind,
    form: Form,
    loading: [f64; 2],
    red: Reduction,
    pts: usize,
    seeds: BatchJets,
    /// Conductivity and reciprocal at the points, for quick estimates.
    gamma: Vec<f64>,
    beta: Vec<f64>,
}

impl Trainer {
    /// Pointwise-residual trainer; requires the smoothed material.
    pub fn strong(
        net_cfg: crate::network::NetworkConfig,
        grid: &CollocationGrid,
        mat: &MaterialField,
        form: Form,
        loading: [f64; 2],
        red: Reduction,
    ) -> Result<Trainer, LossError> {
        if !mat.is_smoothed() {
            return Err(LossError::StrongNeedsSmooth);
        }
        let mtab = tabulate_material(mat, grid);
        let pts = grid.len();
        let (coef, dcoef) = match form {
            Form::Primal => (mtab.gamma.clone(), mtab.dgamma.clone().expect("smoothed")),
            Form::Dual => (mtab.beta.clone(), mtab.dbeta.clone().expect("smoothed")),
        };
        Ok(Trainer {
            ws: BatchWorkspace::new(net_cfg, &grid.points().collect::<Vec<_>>()),
            kind: DriverKind::Strong {
                coef,
                dcoef,
                resid: vec![0.0; pts],
            },
            form,
            loading,
            red,
            pts,
            seeds: BatchJets::new(1, pts),
            gamma: mtab.gamma,
            beta: mtab.beta,
        })
    }

    /// Integrated-residual trainer with a fixed test basis and Gram metric.
    pub fn weak(
        net_cfg: crate::network::NetworkConfig,
        grid: &CollocationGrid,
        mat: &MaterialField,
        form: Form,
        loading: [f64; 2],
        basis: &TestBasis,
        gram: Gram,
        red: Reduction,
    ) -> Result<Trainer, LossError> {
        let mtab = tabulate_material(mat, grid);
        let table = tabulate(basis, grid);
        let tables = weak_tables(form, &table, &mtab, grid);
        let pts = grid.len();
        Ok(Trainer {
            ws: BatchWorkspace::new(net_cfg, &grid.points().collect::<Vec<_>>()),
            kind: DriverKind::Weak {
                tables,
                gram,
                v1: vec![0.0; pts],
                v2: vec![0.0; pts],
            },
            form,
            loading,
            red,
            pts,
            seeds: BatchJets::new(1, pts),
            gamma: mtab.gamma,
            beta: mtab.beta,
        })
    }

    pub fn form(&self) -> Form {
        self.form
    }

    pub fn loading(&self) -> [f64; 2] {
        self.loading
    }

    /// Loss and parameter gradient at `params`. `grad` is overwritten.
    /// Afterwards the forward channels hold this evaluation, so
    /// [`Self::quick_estimate`] reuses them without another pass.
    pub fn loss_and_grad(&mut self, params: &[f64], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        let Trainer {
            ws,
            kind,
            form,
            loading,
            red,
            pts,
            seeds,
            ..
        } = self;
        let n = *pts;
        match kind {
            DriverKind::Strong { coef, dcoef, resid } => {
                ws.forward(params, MASK_SECOND);
                let (d1, d2) = (ws.output().comp(CD1), ws.output().comp(CD2));
                let (h11, h22) = (ws.output().comp(CH11), ws.output().comp(CH22));
                let (l1, l2) = (loading[0], loading[1]);
                match form {
                    Form::Primal => par::fill_slice(resid, |p| {
                        dcoef[0][p] * (l1 + d1[p])
                            + dcoef[1][p] * (l2 + d2[p])
                            + coef[p] * (h11[p] + h22[p])
                    }),
                    Form::Dual => par::fill_slice(resid, |p| {
                        dcoef[0][p] * (l2 + d1[p]) - dcoef[1][p] * (l1 - d2[p])
                            + coef[p] * (h11[p] + h22[p])
                    }),
                }
                let loss = par::sum_indexed(n, *red, |p| resid[p] * resid[p]) / n as f64;
                seeds.fill_zero();
                // Residual derivatives: both forms pair the same coefficient
                // gradient components with D1/D2 (the dual sign flips cancel
                // against the rotated field), and the Laplacian seed is the
                // coefficient itself on both diagonal entries.
                let scale = 2.0 / n as f64;
                par::fill_slice(seeds.comp_mut(CD1), |p| scale * resid[p] * dcoef[0][p]);
                par::fill_slice(seeds.comp_mut(CD2), |p| scale * resid[p] * dcoef[1][p]);
                par::fill_slice(seeds.comp_mut(CH11), |p| scale * resid[p] * coef[p]);
                par::fill_slice(seeds.comp_mut(CH22), |p| scale * resid[p] * coef[p]);
                ws.backward(params, seeds, MASK_SECOND, grad);
                loss
            }
            DriverKind::Weak {
                tables,
                gram,
                v1,
                v2,
            } => {
                ws.forward(params, MASK_GRAD);
                let (d1, d2) = (ws.output().comp(CD1), ws.output().comp(CD2));
                let (l1, l2) = (loading[0], loading[1]);
                match form {
                    Form::Primal => {
                        par::fill_slice(v1, |p| l1 + d1[p]);
                        par::fill_slice(v2, |p| l2 + d2[p]);
                    }
                    Form::Dual => {
                        par::fill_slice(v1, |p| l1 - d2[p]);
                        par::fill_slice(v2, |p| l2 + d1[p]);
                    }
                }
                let r = tables.residual(v1, v2);
                let s = gram.apply_inverse(&r).expect("gram dimension fixed at build");
                let loss = r.iter().zip(&s).map(|(ri, si)| ri * si).sum::<f64>();
                let (dv1, dv2) = tables.seeds(&s);
                seeds.fill_zero();
                match form {
                    Form::Primal => {
                        let sd = seeds.comp_mut(CD1);
                        par::fill_slice(sd, |p| 2.0 * dv1[p]);
                        let sd = seeds.comp_mut(CD2);
                        par::fill_slice(sd, |p| 2.0 * dv2[p]);
                    }
                    Form::Dual => {
                        let sd = seeds.comp_mut(CD1);
                        par::fill_slice(sd, |p| 2.0 * dv2[p]);
                        let sd = seeds.comp_mut(CD2);
                        par::fill_slice(sd, |p| -2.0 * dv1[p]);
                    }
                }
                ws.backward(params, seeds, MASK_GRAD, grad);
                loss
            }
        }
    }

    /// Quick effective-coefficient estimate from the channels of the last
    /// [`Self::loss_and_grad`] evaluation.
    pub fn quick_estimate(&self) -> f64 {
        let d1 = self.ws.output().comp(CD1);
        let d2 = self.ws.output().comp(CD2);
        match self.form {
            Form::Primal => {
                quick_estimate_primal_from(&self.gamma, d1, d2, self.loading, self.red)
            }
            Form::Dual => quick_estimate_dual_from(&self.beta, d1, d2, self.loading, self.red),
        }
    }
}

/// One logged step of a lockstep pair run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LogStep {
    pub epoch: usize,
    pub primal_loss: f64,
    pub dual_loss: f64,
    pub primal_estimate: f64,
    pub dual_estimate: f64,
    /// Relative spread `(primal_estimate - dual_estimate) / primal_estimate`.
    pub gap: f64,
}

/// Where a run aborted on a non-finite loss or gradient.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AbortReport {
    pub epoch: usize,
    pub form: Form,
}

#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub log: Vec<LogStep>,
    /// Evaluation at the final parameters, after the last update.
    pub final_step: LogStep,
    /// Wide final spread between the quick estimates: the smoothing or
    /// training likely went wrong even though each loss decreased.
    pub suspected_failure: bool,
    pub aborted: Option<AbortReport>,
}

/// Spread threshold above which a finished run is flagged.
pub const SUSPECT_GAP: f64 = 0.1;

fn finite(loss: f64, grad: &[f64]) -> bool {
    loss.is_finite() && grad.iter().all(|g| g.is_finite())
}

fn log_step(epoch: usize, lp: f64, ld: f64, primal: &Trainer, dual: &Trainer) -> LogStep {
    let qp = primal.quick_estimate();
    let qd = dual.quick_estimate();
    LogStep {
        epoch,
        primal_loss: lp,
        dual_loss: ld,
        primal_estimate: qp,
        dual_estimate: qd,
        gap: (qp - qd) / qp,
    }
}

/// Train a primal/dual pair in lockstep. Parameters are updated in place;
/// on a non-finite loss or gradient both networks roll back to the last
/// logged checkpoint and the outcome records the abort.
pub fn train_pair(
    primal_net: &mut PeriodicNet,
    dual_net: &mut PeriodicNet,
    primal_tr: &mut Trainer,
    dual_tr: &mut Trainer,
    cfg: &TrainConfig,
) -> PairOutcome {
    assert!(cfg.epochs >= 1 && cfg.log_every >= 1);
    let np = primal_net.params.len();
    let nd = dual_net.params.len();
    let mut grad_p = vec![0.0; np];
    let mut grad_d = vec![0.0; nd];
    let mut adam_p = AdamState::new(np);
    let mut adam_d = AdamState::new(nd);
    let mut ckpt_p = primal_net.params.clone();
    let mut ckpt_d = dual_net.params.clone();
    let mut log = Vec::with_capacity(cfg.epochs.div_ceil(cfg.log_every));
    let mut aborted = None;

    for epoch in 0..cfg.epochs {
        let lp = primal_tr.loss_and_grad(&primal_net.params, &mut grad_p);
        let bad_p = !finite(lp, &grad_p);
        let ld = dual_tr.loss_and_grad(&dual_net.params, &mut grad_d);
        let bad_d = !finite(ld, &grad_d);
        if bad_p || bad_d {
            primal_net.params.copy_from_slice(&ckpt_p);
            dual_net.params.copy_from_slice(&ckpt_d);
            aborted = Some(AbortReport {
                epoch,
                form: if bad_p { Form::Primal } else { Form::Dual },
            });
            break;
        }
        if epoch % cfg.log_every == 0 {
            log.push(log_step(epoch, lp, ld, primal_tr, dual_tr));
            ckpt_p.copy_from_slice(&primal_net.params);
            ckpt_d.copy_from_slice(&dual_net.params);
        }
        adam_p.step(&mut primal_net.params, &grad_p, cfg);
        adam_d.step(&mut dual_net.params, &grad_d, cfg);
    }

    let lp = primal_tr.loss_and_grad(&primal_net.params, &mut grad_p);
    let ld = dual_tr.loss_and_grad(&dual_net.params, &mut grad_d);
    let final_step = log_step(cfg.epochs, lp, ld, primal_tr, dual_tr);
    PairOutcome {
        log,
        suspected_failure: final_step.gap.abs() > SUSPECT_GAP,
        final_step,
        aborted,
    }
}

/// One logged step of a single-form run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SingleStep {
    pub epoch: usize,
    pub loss: f64,
    pub estimate: f64,
}

#[derive(Debug, Clone)]
pub struct SingleOutcome {
    pub log: Vec<SingleStep>,
    /// Evaluation at the final parameters, after the last update.
    pub final_step: SingleStep,
    pub aborted: Option<AbortReport>,
}

/// Train one form alone. Same loop as [`train_pair`] — checkpoints at every
/// log step, rollback on a non-finite loss or gradient — but there is no
/// partner, so no gap and no failure flag; detecting a silent failure needs
/// the pair.
pub fn train_single(
    net: &mut PeriodicNet,
    tr: &mut Trainer,
    cfg: &TrainConfig,
) -> SingleOutcome {
    assert!(cfg.epochs >= 1 && cfg.log_every >= 1);
    let n = net.params.len();
    let mut grad = vec![0.0; n];
    let mut adam = AdamState::new(n);
    let mut ckpt = net.params.clone();
    let mut log = Vec::with_capacity(cfg.epochs.div_ceil(cfg.log_every));
    let mut aborted = None;

    for epoch in 0..cfg.epochs {
        let loss = tr.loss_and_grad(&net.params, &mut grad);
        if !finite(loss, &grad) {
            net.params.copy_from_slice(&ckpt);
            aborted = Some(AbortReport {
                epoch,
                form: tr.form(),
            });
            break;
        }
        if epoch % cfg.log_every == 0 {
            log.push(SingleStep {
                epoch,
                loss,
                estimate: tr.quick_estimate(),
            });
            ckpt.copy_from_slice(&net.params);
        }
        adam.step(&mut net.params, &grad, cfg);
    }

    let loss = tr.loss_and_grad(&net.params, &mut grad);
    let final_step = SingleStep {
        epoch: cfg.epochs,
        loss,
        estimate: tr.quick_estimate(),
    };
    SingleOutcome {
        log,
        final_step,
        aborted,
    }
}
