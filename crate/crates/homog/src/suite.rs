//! Fast self-check suite behind the `check` subcommand: a few seconds of
//! property tests over the analytic reference, architectures, bases,
//! bounds, autodiff, the FEM oracle, and reproducibility. Each check
//! reports pass/fail with a one-line detail; nothing here trains to
//! convergence — the goal is to catch a broken build or platform quickly,
//! not to reproduce the experiment tables.

use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::bounds::guaranteed_pair;
use crate::fem::sparse::jacobi_cg;
use crate::fem::{assemble, TriMesh};
use crate::losses::{weak_loss, weak_residual_primal, Form};
use crate::material::{exact_effective, voigt_reuss, MaterialField, PhasePair};
use crate::network::{NetworkConfig, PeriodicNet};
use crate::par::Reduction;
use crate::quadrature::CollocationGrid;
use crate::test_bases::{
    gram_report, numeric_gram, tabulate, Gram, NetworkBasis, SpectralBasis, TestBasis,
};
use crate::train::{train_pair, TrainConfig, Trainer};

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn run_check(
    name: &'static str,
    f: impl FnOnce() -> Result<String, String>,
) -> CheckResult {
    match f() {
        Ok(detail) => CheckResult {
            name,
            passed: true,
            detail,
        },
        Err(detail) => CheckResult {
            name,
            passed: false,
            detail,
        },
    }
}

/// Run every check; failures do not stop the rest.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        run_check("analytic_reference", analytic_reference),
        run_check("phase_swap_duality", phase_swap_duality),
        run_check("parameter_counts", parameter_counts),
        run_check("spectral_cardinalities", spectral_cardinalities),
        run_check("zero_field_bounds", zero_field_bounds),
        run_check("random_field_bracketing", random_field_bracketing),
        run_check("fem_dense_oracle", fem_dense_oracle),
        run_check("loss_gradients", loss_gradients),
        run_check("weak_basis_invariance", weak_basis_invariance),
        run_check("training_determinism", training_determinism),
    ]
}

fn analytic_reference() -> Result<String, String> {
    let value = exact_effective(PhasePair::standard());
    let expected = 0.6476;
    if (value - expected).abs() <= 5e-5 {
        Ok(format!("effective coefficient {value:.7}"))
    } else {
        Err(format!("expected {expected} within 5e-5, got {value:.7}"))
    }
}

fn phase_swap_duality() -> Result<String, String> {
    // Swapping the phases of the square layout inverts the effective
    // coefficient up to the product of the phases.
    for (a, b) in [(1.0, 0.1), (2.0, 0.5), (1.0, 7.3)] {
        let fwd = exact_effective(PhasePair::new(a, b).map_err(|e| e.to_string())?);
        let swapped = exact_effective(PhasePair::new(b, a).map_err(|e| e.to_string())?);
        let product = fwd * swapped;
        if (product - a * b).abs() > 1e-12 * a * b {
            return Err(format!(
                "phases ({a},{b}): product {product} differs from {}",
                a * b
            ));
        }
    }
    Ok("product identity holds for 3 phase pairs".to_string())
}

fn parameter_counts() -> Result<String, String> {
    for ((np, nh, nl), expected) in [
        ((4, 4, 1), 65),
        ((10, 10, 2), 391),
        ((20, 20, 3), 1801),
        ((50, 50, 5), 15601),
    ] {
        let count = NetworkConfig::new(np, nh, nl)
            .map_err(|e| e.to_string())?
            .param_count();
        if count != expected {
            return Err(format!("({np},{nh},{nl}) gives {count}, expected {expected}"));
        }
    }
    Ok("65 / 391 / 1801 / 15601".to_string())
}

fn spectral_cardinalities() -> Result<String, String> {
    for ((m, n), expected) in [((5, 5), 70), ((7, 7), 126)] {
        let len = SpectralBasis::new(m, n).map_err(|e| e.to_string())?.len();
        if len != expected {
            return Err(format!("M=N={m} gives {len} functions, expected {expected}"));
        }
    }
    Ok("70 at M=N=5, 126 at M=N=7".to_string())
}

fn zero_field_bounds() -> Result<String, String> {
    let phases = PhasePair::standard();
    let mesh = TriMesh::periodic(8).map_err(|e| e.to_string())?;
    let zeros = vec![0.0; mesh.n_dofs()];
    let (upper, lower) =
        guaranteed_pair(&mesh, phases, &zeros, &zeros, [1.0, 0.0], [1.0, 0.0])
            .map_err(|e| e.to_string())?;
    let (voigt, reuss) = voigt_reuss(phases, 0.25);
    if (upper - voigt).abs() > 1e-12 || (lower - reuss).abs() > 1e-12 {
        return Err(format!(
            "zero fields give ({upper:.6}, {lower:.6}), expected ({voigt:.6}, {reuss:.6})"
        ));
    }
    Ok(format!("zero fields give exactly ({voigt:.6}, {reuss:.6})"))
}

fn random_field_bracketing() -> Result<String, String> {
    let phases = PhasePair::standard();
    let exact = exact_effective(phases);
    let mesh = TriMesh::periodic(16).map_err(|e| e.to_string())?;
    let mut rng = StdRng::seed_from_u64(42);
    let mut checked = 0;
    for cfg in [
        NetworkConfig::new(4, 4, 1).map_err(|e| e.to_string())?,
        NetworkConfig::new(10, 10, 2).map_err(|e| e.to_string())?,
    ] {
        for _ in 0..5 {
            let mut primal = PeriodicNet::init(cfg, rng.gen());
            let mut dual = PeriodicNet::init(cfg, rng.gen());
            for p in primal.params.iter_mut().chain(dual.params.iter_mut()) {
                *p += rng.gen_range(-0.5..0.5);
            }
            let vp = crate::bounds::project_to_p1(&primal, &mesh);
            let vd = crate::bounds::project_to_p1(&dual, &mesh);
            let (upper, lower) =
                guaranteed_pair(&mesh, phases, &vp, &vd, [1.0, 0.0], [1.0, 0.0])
                    .map_err(|e| e.to_string())?;
            if !(lower <= exact + 1e-12 && exact <= upper + 1e-12) {
                return Err(format!(
                    "random fields broke the bracket: ({lower:.6}, {upper:.6}) vs {exact:.6}"
                ));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} random trial pairs kept the bracket"))
}

fn fem_dense_oracle() -> Result<String, String> {
    let mesh = TriMesh::periodic(8).map_err(|e| e.to_string())?;
    let mat = MaterialField::piecewise(PhasePair::standard());
    let mut worst: f64 = 0.0;
    for form in [Form::Primal, Form::Dual] {
        let (a, b) = assemble(&mesh, &mat, form, [1.0, 0.0]).map_err(|e| e.to_string())?;
        let (x, report) = jacobi_cg(&a, &b, 1e-14, 4000).map_err(|e| e.to_string())?;
        if !report.converged {
            return Err(format!("{form}: conjugate gradient did not converge"));
        }
        let dense = a
            .to_dense()
            .lu()
            .solve(&DVector::from_column_slice(&b))
            .ok_or_else(|| format!("{form}: dense factorization failed"))?;
        for i in 0..mesh.n_dofs() {
            worst = worst.max((x[i] - dense[i]).abs());
        }
    }
    if worst <= 1e-10 {
        Ok(format!("iterative vs dense solve agree to {worst:.2e}"))
    } else {
        Err(format!("iterative vs dense solve differ by {worst:.2e}"))
    }
}

fn loss_gradients() -> Result<String, String> {
    let grid = CollocationGrid::new(12).map_err(|e| e.to_string())?;
    let net_cfg = NetworkConfig::new(3, 3, 1).map_err(|e| e.to_string())?;
    let phases = PhasePair::standard();
    let smoothed = MaterialField::smoothed(phases, 0.2).map_err(|e| e.to_string())?;
    let piecewise = MaterialField::piecewise(phases);
    let basis = TestBasis::Spectral(SpectralBasis::new(2, 2).map_err(|e| e.to_string())?);
    let inv = match &basis {
        TestBasis::Spectral(s) => s.inverse_gram_diag(),
        TestBasis::Network(_) => unreachable!(),
    };
    let mut rng = StdRng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for form in [Form::Primal, Form::Dual] {
        let strong = Trainer::strong(
            net_cfg,
            &grid,
            &smoothed,
            form,
            [1.0, 0.0],
            Reduction::Ordered,
        )
        .map_err(|e| e.to_string())?;
        let weak = Trainer::weak(
            net_cfg,
            &grid,
            &piecewise,
            form,
            [1.0, 0.0],
            &basis,
            Gram::InverseDiagonal {
                inv_diag: inv.clone(),
            },
            Reduction::Ordered,
        )
        .map_err(|e| e.to_string())?;
        for mut tr in [strong, weak] {
            let net = PeriodicNet::init(net_cfg, rng.gen());
            let n = net.params.len();
            let mut grad = vec![0.0; n];
            let mut params = net.params.clone();
            tr.loss_and_grad(&params, &mut grad);
            let mut scratch = vec![0.0; n];
            for _ in 0..6 {
                let i = rng.gen_range(0..n);
                let h = 1e-5 * (1.0 + params[i].abs());
                let saved = params[i];
                params[i] = saved + h;
                let plus = tr.loss_and_grad(&params, &mut scratch);
                params[i] = saved - h;
                let minus = tr.loss_and_grad(&params, &mut scratch);
                params[i] = saved;
                let fd = (plus - minus) / (2.0 * h);
                let scale = 1.0 + grad[i].abs().max(fd.abs());
                worst = worst.max((grad[i] - fd).abs() / scale);
            }
        }
    }
    if worst <= 1e-4 {
        Ok(format!("worst relative gradient deviation {worst:.2e}"))
    } else {
        Err(format!("gradient deviates from finite differences by {worst:.2e}"))
    }
}

fn weak_basis_invariance() -> Result<String, String> {
    let grid = CollocationGrid::new(16).map_err(|e| e.to_string())?;
    let mat = MaterialField::piecewise(PhasePair::standard());
    let net_cfg = NetworkConfig::new(3, 3, 1).map_err(|e| e.to_string())?;
    let net = PeriodicNet::init(net_cfg, 5);
    let members = NetworkBasis::new(
        NetworkConfig::new(2, 3, 1).map_err(|e| e.to_string())?,
        5,
        99,
    )
    .map_err(|e| e.to_string())?;
    let table = tabulate(&TestBasis::Network(members), &grid);
    let n_t = table.n_t;
    let pts = table.pts;

    // Invertible mixing matrix: random entries pushed away from
    // singularity by a dominant diagonal.
    let mut rng = StdRng::seed_from_u64(3);
    let mut mix = vec![0.0; n_t * n_t];
    for i in 0..n_t {
        for j in 0..n_t {
            mix[i * n_t + j] = rng.gen_range(-1.0..1.0) + if i == j { 2.0 } else { 0.0 };
        }
    }
    let mut mixed = table.clone();
    for (dst, src) in [(&mut mixed.g1, &table.g1), (&mut mixed.g2, &table.g2)] {
        for k in 0..n_t {
            for q in 0..pts {
                dst[k * pts + q] = (0..n_t)
                    .map(|l| mix[k * n_t + l] * src[l * pts + q])
                    .sum();
            }
        }
    }

    let loss_of = |table: &crate::test_bases::BasisTable| -> Result<f64, String> {
        let g = numeric_gram(table, &grid);
        let report = gram_report(&g);
        let chol = g
            .cholesky()
            .ok_or("gram not positive definite".to_string())?;
        let gram = Gram::Full { chol, report };
        let r = weak_residual_primal(&net, &mat, [1.0, 0.0], table, &grid, Reduction::Ordered)
            .map_err(|e| e.to_string())?;
        weak_loss(&r, &gram).map_err(|e| e.to_string())
    };

    let base = loss_of(&table)?;
    let recombined = loss_of(&mixed)?;
    let rel = (base - recombined).abs() / base.abs().max(1e-300);
    if rel <= 1e-8 {
        Ok(format!("loss invariant under recombination to {rel:.2e}"))
    } else {
        Err(format!("loss changed by {rel:.2e} under recombination"))
    }
}

fn training_determinism() -> Result<String, String> {
    let grid = CollocationGrid::new(8).map_err(|e| e.to_string())?;
    let mat = MaterialField::smoothed(PhasePair::standard(), 0.2).map_err(|e| e.to_string())?;
    let net_cfg = NetworkConfig::new(3, 3, 1).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 20,
        log_every: 5,
        reduction: Reduction::Ordered,
        ..TrainConfig::default()
    };
    let run = || -> Result<(Vec<f64>, f64), String> {
        let mut primal = PeriodicNet::init(net_cfg, 1);
        let mut dual = PeriodicNet::init(net_cfg, 2);
        let mut tp = Trainer::strong(
            net_cfg,
            &grid,
            &mat,
            Form::Primal,
            [1.0, 0.0],
            Reduction::Ordered,
        )
        .map_err(|e| e.to_string())?;
        let mut td = Trainer::strong(
            net_cfg,
            &grid,
            &mat,
            Form::Dual,
            [1.0, 0.0],
            Reduction::Ordered,
        )
        .map_err(|e| e.to_string())?;
        let out = train_pair(&mut primal, &mut dual, &mut tp, &mut td, &cfg);
        Ok((primal.params.clone(), out.final_step.primal_loss))
    };
    let (params_a, loss_a) = run()?;
    let (params_b, loss_b) = run()?;
    if loss_a.to_bits() != loss_b.to_bits() {
        return Err(format!("final losses differ: {loss_a} vs {loss_b}"));
    }
    for (a, b) in params_a.iter().zip(&params_b) {
        if a.to_bits() != b.to_bits() {
            return Err("trained parameters differ between identical runs".to_string());
        }
    }
    Ok("two identical short runs agree bitwise".to_string())
}
