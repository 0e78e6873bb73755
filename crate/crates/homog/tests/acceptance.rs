//! End-to-end acceptance of the whole pipeline — eleven criteria, one test
//! and one printed pass/fail line each.
//!
//! The first eight criteria are fast structural and numerical oracles; the
//! last three exercise full training runs and the compiled binary, so the
//! suite as a whole takes over an hour of wall time. Run with `--nocapture`
//! to watch the verdict lines appear.

use homog::bounds::{guaranteed_pair, project_to_p1};
use homog::config::{BasisKind, FormChoice, MaterialKind, MethodKind, RunConfig};
use homog::fem::{assemble, sparse::jacobi_cg, TriMesh};
use homog::losses::{weak_loss, weak_residual_primal, Form};
use homog::material::{exact_effective, voigt_reuss, MaterialField, PhasePair};
use homog::network::{NetworkConfig, PeriodicNet};
use homog::par::Reduction;
use homog::quadrature::CollocationGrid;
use homog::run::{cmd_fem, cmd_train};
use homog::test_bases::{
    gram_report, numeric_gram, tabulate, Gram, NetworkBasis, SpectralBasis, TestBasis,
};
use homog::train::Trainer;
use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// Print the single verdict line for a criterion, then enforce it.
fn verdict(idx: u32, name: &str, passed: bool, detail: &str) {
    let tag = if passed { "PASS" } else { "FAIL" };
    println!("criterion {idx:02} [{tag}] {name}: {detail}");
    assert!(passed, "criterion {idx:02} {name}: {detail}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const LOADING: [f64; 2] = [1.0, 0.0];

#[test]
fn criterion_01_exact_reference_value() {
    let exact = exact_effective(PhasePair::standard());
    let dev = (exact - 0.6476).abs();
    verdict(
        1,
        "closed-form effective coefficient",
        dev <= 5e-5,
        &format!("gamma_eff = {exact:.8}, |gamma_eff - 0.6476| = {dev:.2e} (tol 5e-5)"),
    );
}

#[test]
fn criterion_02_fem_benchmark_brackets_tightly() {
    let exact = exact_effective(PhasePair::standard());
    // The four-decimal headline value must agree with the closed form, so
    // measuring against the closed form is measuring against it.
    assert_eq!(format!("{exact:.4}"), "0.6476");

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.method = MethodKind::Fem;
    cfg.form = FormChoice::Both;
    cfg.material = MaterialKind::Piecewise;
    cfg.fem_n = 128;
    cfg.out_dir = dir.path().display().to_string();
    cfg.validate().unwrap();

    let t0 = Instant::now();
    let record = cmd_fem(&cfg).unwrap();
    let dt = t0.elapsed().as_secs_f64();

    let bounds = record.bounds.expect("both forms solved");
    let upper_err = (bounds.upper_bound - exact) / exact;
    let lower_err = (bounds.lower_bound - exact) / exact;
    let tol = 0.0004; // +/- 0.04 percent
    let passed = upper_err.abs() <= tol && lower_err.abs() <= tol;
    verdict(
        2,
        "finite-element bracket at n = 128",
        passed,
        &format!(
            "upper {:+.4}% lower {:+.4}% (band +/-0.04%), ran in {dt:.1}s (runtime target 120s)",
            upper_err * 100.0,
            lower_err * 100.0,
        ),
    );
}

#[test]
fn criterion_03_parameter_counts() {
    let mut counts = Vec::new();
    let mut ok = true;
    for ((np, nh, nl), expected) in [
        ((4, 4, 1), 65usize),
        ((10, 10, 2), 391),
        ((20, 20, 3), 1801),
        ((50, 50, 5), 15601),
    ] {
        let got = NetworkConfig::new(np, nh, nl).unwrap().param_count();
        ok &= got == expected;
        counts.push(format!("({np},{nh},{nl}) -> {got}"));
    }
    verdict(
        3,
        "architecture parameter counts",
        ok,
        &counts.join(", "),
    );
}

#[test]
fn criterion_04_spectral_test_space_sizes() {
    let n5 = SpectralBasis::new(5, 5).unwrap().len();
    let n7 = SpectralBasis::new(7, 7).unwrap().len();
    verdict(
        4,
        "spectral test-space cardinalities",
        n5 == 70 && n7 == 126,
        &format!("M = N = 5 -> {n5} (want 70), M = N = 7 -> {n7} (want 126)"),
    );
}

#[test]
fn criterion_05_bounds_bracket_for_random_fields() {
    let phases = PhasePair::standard();
    let exact = exact_effective(phases);
    let mesh = TriMesh::periodic(16).unwrap();

    // Zero trial fields must reproduce the classical phase averages
    // exactly (and those round to the familiar 0.775 / 0.30769).
    let zeros = vec![0.0; mesh.n_dofs()];
    let (u0, l0) = guaranteed_pair(&mesh, phases, &zeros, &zeros, LOADING, LOADING).unwrap();
    let (voigt, reuss) = voigt_reuss(phases, 0.25);
    assert_eq!(format!("{voigt:.3}"), "0.775");
    assert_eq!(format!("{reuss:.5}"), "0.30769");
    let zeros_exact = (u0 - voigt).abs() <= 1e-12 && (l0 - reuss).abs() <= 1e-12;

    let mut r = rng(1234);
    let mut checked = 0usize;
    let mut bracket_ok = true;
    let mut worst_margin: f64 = 0.0;
    for (np, nh, nl) in [(4, 4, 1), (10, 10, 2), (20, 20, 3), (50, 50, 5)] {
        let cfg = NetworkConfig::new(np, nh, nl).unwrap();
        for _ in 0..50 {
            let mut primal = PeriodicNet::init(cfg, r.gen());
            let mut dual = PeriodicNet::init(cfg, r.gen());
            for p in primal.params.iter_mut().chain(dual.params.iter_mut()) {
                *p += r.gen_range(-0.5..0.5);
            }
            let vp = project_to_p1(&primal, &mesh);
            let vd = project_to_p1(&dual, &mesh);
            let (upper, lower) =
                guaranteed_pair(&mesh, phases, &vp, &vd, LOADING, LOADING).unwrap();
            bracket_ok &= lower <= exact + 1e-12 && exact <= upper + 1e-12;
            worst_margin = worst_margin.max(lower - exact).max(exact - upper);
            checked += 1;
        }
    }
    verdict(
        5,
        "guaranteed bracket under random parameters",
        zeros_exact && bracket_ok,
        &format!(
            "{checked} random trial pairs over four architectures kept \
             lower <= {exact:.4} <= upper (slack 1e-12); zero fields gave \
             ({u0:.6}, {l0:.6}) vs ({voigt:.6}, {reuss:.6})"
        ),
    );
}

#[test]
fn criterion_06_derivatives_match_finite_differences() {
    let phases = PhasePair::standard();
    let smoothed = MaterialField::smoothed(phases, 0.1).unwrap();
    let piecewise = MaterialField::piecewise(phases);
    let grid = CollocationGrid::new(16).unwrap();
    let basis = TestBasis::Spectral(SpectralBasis::new(3, 3).unwrap());
    let inv_diag = match &basis {
        TestBasis::Spectral(s) => s.inverse_gram_diag(),
        TestBasis::Network(_) => unreachable!(),
    };

    let mut r = rng(99);
    let mut worst_spatial: f64 = 0.0;
    let mut worst_param: f64 = 0.0;

    for (np, nh, nl) in [(4, 4, 1), (10, 10, 2)] {
        let net_cfg = NetworkConfig::new(np, nh, nl).unwrap();
        let net = PeriodicNet::init(net_cfg, r.gen());

        // Spatial first and second derivatives of the network itself
        // against central differences of the plain value.
        for _ in 0..20 {
            let x = [r.gen_range(0.0..6.28), r.gen_range(0.0..6.28)];
            let jet = net.forward(x);
            let h = 1e-4;
            let f = |x1: f64, x2: f64| net.value_at([x1, x2]);
            let (x1, x2) = (x[0], x[1]);
            let fd_d1 = (f(x1 + h, x2) - f(x1 - h, x2)) / (2.0 * h);
            let fd_d2 = (f(x1, x2 + h) - f(x1, x2 - h)) / (2.0 * h);
            let fd_h11 = (f(x1 + h, x2) - 2.0 * f(x1, x2) + f(x1 - h, x2)) / (h * h);
            let fd_h22 = (f(x1, x2 + h) - 2.0 * f(x1, x2) + f(x1, x2 - h)) / (h * h);
            let fd_h12 = (f(x1 + h, x2 + h) - f(x1 + h, x2 - h) - f(x1 - h, x2 + h)
                + f(x1 - h, x2 - h))
                / (4.0 * h * h);
            for (a, b) in [
                (jet.d[0], fd_d1),
                (jet.d[1], fd_d2),
                (jet.h[0], fd_h11),
                (jet.h[1], fd_h12),
                (jet.h[2], fd_h22),
            ] {
                worst_spatial = worst_spatial.max((a - b).abs() / (1.0 + a.abs().max(b.abs())));
            }
        }

        // Parameter gradients of all four losses against central
        // differences of the loss value, on random parameter slices.
        for form in [Form::Primal, Form::Dual] {
            let strong =
                Trainer::strong(net_cfg, &grid, &smoothed, form, LOADING, Reduction::Ordered)
                    .unwrap();
            let weak = Trainer::weak(
                net_cfg,
                &grid,
                &piecewise,
                form,
                LOADING,
                &basis,
                Gram::InverseDiagonal {
                    inv_diag: inv_diag.clone(),
                },
                Reduction::Ordered,
            )
            .unwrap();
            for mut tr in [strong, weak] {
                let mut params = net.params.clone();
                let n = params.len();
                let mut grad = vec![0.0; n];
                tr.loss_and_grad(&params, &mut grad);
                let mut scratch = vec![0.0; n];
                for _ in 0..20 {
                    let i = r.gen_range(0..n);
                    let h = 1e-5 * (1.0 + params[i].abs());
                    let saved = params[i];
                    params[i] = saved + h;
                    let plus = tr.loss_and_grad(&params, &mut scratch);
                    params[i] = saved - h;
                    let minus = tr.loss_and_grad(&params, &mut scratch);
                    params[i] = saved;
                    let fd = (plus - minus) / (2.0 * h);
                    worst_param =
                        worst_param.max((grad[i] - fd).abs() / (1.0 + grad[i].abs().max(fd.abs())));
                }
            }
        }
    }
    let passed = worst_spatial <= 1e-4 && worst_param <= 1e-4;
    verdict(
        6,
        "derivatives vs finite differences",
        passed,
        &format!(
            "worst spatial jet deviation {worst_spatial:.2e}, worst loss-gradient \
             deviation {worst_param:.2e} over 65- and 391-parameter networks \
             (20 points / 20 slices each, tol 1e-4)"
        ),
    );
}

#[test]
fn criterion_07_weak_loss_invariant_under_basis_change() {
    let grid = CollocationGrid::new(32).unwrap();
    let mat = MaterialField::piecewise(PhasePair::standard());
    let net = PeriodicNet::init(NetworkConfig::new(4, 4, 1).unwrap(), 5);
    let members = NetworkBasis::new(NetworkConfig::new(3, 4, 1).unwrap(), 10, 424242).unwrap();
    let table = tabulate(&TestBasis::Network(members), &grid);
    let (n_t, pts) = (table.n_t, table.pts);

    // Random mixing matrix kept invertible by a dominant diagonal.
    let mut r = rng(3);
    let mut mix = vec![0.0; n_t * n_t];
    for i in 0..n_t {
        for j in 0..n_t {
            mix[i * n_t + j] = r.gen_range(-1.0..1.0) + if i == j { 3.0 } else { 0.0 };
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

    let loss_of = |table: &homog::test_bases::BasisTable| {
        let g = numeric_gram(table, &grid);
        let report = gram_report(&g);
        let chol = g.cholesky().expect("gram positive definite");
        let gram = Gram::Full { chol, report };
        let res =
            weak_residual_primal(&net, &mat, LOADING, table, &grid, Reduction::Ordered).unwrap();
        weak_loss(&res, &gram).unwrap()
    };

    let base = loss_of(&table);
    let recombined = loss_of(&mixed);
    let rel = (base - recombined).abs() / base.abs().max(1e-300);
    verdict(
        7,
        "weak loss under basis recombination",
        rel <= 1e-8,
        &format!(
            "10-member network basis, numeric Gram recomputed: relative loss \
             change {rel:.2e} (tol 1e-8)"
        ),
    );
}

#[test]
fn criterion_08_iterative_fem_matches_dense_solve() {
    let mesh = TriMesh::periodic(8).unwrap();
    let mat = MaterialField::piecewise(PhasePair::standard());
    let mut worst: f64 = 0.0;
    for form in [Form::Primal, Form::Dual] {
        let (a, b) = assemble(&mesh, &mat, form, LOADING).unwrap();
        let (x, report) = jacobi_cg(&a, &b, 1e-14, 4000).unwrap();
        assert!(report.converged, "{form}: conjugate gradient stalled");
        let dense = a
            .to_dense()
            .lu()
            .solve(&DVector::from_column_slice(&b))
            .expect("dense factorization");
        for i in 0..mesh.n_dofs() {
            worst = worst.max((x[i] - dense[i]).abs());
        }
    }
    verdict(
        8,
        "iterative vs dense finite-element solve",
        worst <= 1e-10,
        &format!("n = 8, both forms: max nodal difference {worst:.2e} (tol 1e-10)"),
    );
}

fn strong_run(epsilon: f64, out: &std::path::Path) -> homog::run::RunRecord {
    let mut cfg = RunConfig::default();
    cfg.method = MethodKind::Pinn;
    cfg.form = FormChoice::Both;
    cfg.material = MaterialKind::Smoothed;
    cfg.epsilon = epsilon;
    cfg.n_periodic = 10;
    cfg.n_hidden = 10;
    cfg.n_layers = 2;
    cfg.grid_n = 128;
    cfg.fem_n = 128;
    cfg.epochs = 40_000;
    cfg.learning_rate = 1e-3;
    cfg.log_every = 1000;
    cfg.seed = 1;
    cfg.deterministic = true;
    cfg.out_dir = out.display().to_string();
    cfg.validate().unwrap();
    cmd_train(&cfg).unwrap()
}

#[test]
fn criterion_09_strong_training_quality_and_failure_detection() {
    let exact = exact_effective(PhasePair::standard());
    let dir = tempfile::tempdir().unwrap();

    // (a) A resolvable interface width: the estimate lands close and the
    // projected upper bound certifies it.
    let t0 = Instant::now();
    let sharp = strong_run(1.0 / 20.0, &dir.path().join("eps20"));
    let dt_a = t0.elapsed().as_secs_f64();
    let est_err = sharp.primal.as_ref().unwrap().estimate_error;
    let upper_err = (sharp.bounds.as_ref().unwrap().upper_bound - exact) / exact;
    let part_a = (-0.005..=0.025).contains(&est_err) && (0.0..=0.02).contains(&upper_err);

    // (b) Halving the width under the same grid leaves the transition
    // unresolved; the run must notice through its own gap diagnostic.
    let t1 = Instant::now();
    let unresolved = strong_run(1.0 / 40.0, &dir.path().join("eps40"));
    let dt_b = t1.elapsed().as_secs_f64();
    let gap = unresolved.gap.unwrap();
    let part_b = gap >= 0.10 && unresolved.suspected_failure;

    verdict(
        9,
        "pointwise-residual training quality and self-diagnosis",
        part_a && part_b,
        &format!(
            "width 1/20: estimate {est_err:+.3}% in [-0.5%, 2.5%], upper bound \
             {upper_err:+.3}% in [0%, 2%], {dt_a:.0}s; width 1/40: gap {gap_pct:.1}% \
             (need >= 10%), suspected = {susp}, {dt_b:.0}s; runtime target 1800s \
             per run (not enforced)",
            est_err = est_err * 100.0,
            upper_err = upper_err * 100.0,
            gap_pct = gap * 100.0,
            susp = unresolved.suspected_failure,
        ),
    );
}

/// Variational training with the 65-parameter networks and the 70-member
/// spectral test family on the sharp material.
///
/// Status note, kept with the test on purpose: the primal half passes with
/// margin (about +2.8% against a 4% band), but the dual half converges —
/// across ten initialization seeds, learning rates 1e-3 and 3e-3, and out
/// to 100k epochs — to one of two attractors, at about -8.9% and -15.8%,
/// both outside the 8% band. The configuration below is the best of those
/// (the -8.9% basin, reached from this seed). For scale: an exact Galerkin
/// solve that uses the same 70 spectral modes as both trial and test space
/// lands at -9.5% under the same quadrature (grids 96 through 512 move it
/// by under 0.1 points), and a P1 finite-element solve of the same dual
/// problem reaches -0.04%, so the formulation is sound and the shortfall
/// is a capacity/optimization limit of the 65-parameter trial network on
/// the dual energy, not a bug in the weak residual. The band is kept as
/// the documented target; the test is expected to fail on the dual half
/// until a better trial family or optimizer is found.
#[test]
fn criterion_10_variational_training_quality() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.method = MethodKind::Vspinn;
    cfg.form = FormChoice::Both;
    cfg.material = MaterialKind::Piecewise;
    cfg.n_periodic = 4;
    cfg.n_hidden = 4;
    cfg.n_layers = 1;
    cfg.test_basis = BasisKind::Spectral;
    cfg.spectral_m = 5;
    cfg.spectral_n = 5;
    cfg.n_test = 70;
    cfg.grid_n = 128;
    cfg.fem_n = 128;
    cfg.epochs = 20_000;
    cfg.learning_rate = 1e-3;
    cfg.log_every = 1000;
    cfg.seed = 41;
    cfg.deterministic = true;
    cfg.out_dir = dir.path().display().to_string();
    cfg.validate().unwrap();

    let t0 = Instant::now();
    let record = cmd_train(&cfg).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    let p_err = record.primal.as_ref().unwrap().estimate_error;
    let d_err = record.dual.as_ref().unwrap().estimate_error;
    let passed = p_err.abs() <= 0.04 && d_err.abs() <= 0.08;
    verdict(
        10,
        "variational training with 70 spectral test functions",
        passed,
        &format!(
            "65-parameter networks on the sharp material: primal {:+.3}% \
             (band 4%), dual {:+.3}% (band 8%), {dt:.0}s",
            p_err * 100.0,
            d_err * 100.0,
        ),
    );
}

#[test]
fn criterion_11_runs_are_bit_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("rerun.toml");
    std::fs::write(
        &config_path,
        "method = \"vspinn\"\n\
         form = \"both\"\n\
         material = \"piecewise\"\n\
         n_periodic = 4\n\
         n_hidden = 4\n\
         n_layers = 1\n\
         spectral_m = 3\n\
         spectral_n = 3\n\
         n_test = 30\n\
         grid_n = 32\n\
         fem_n = 16\n\
         epochs = 300\n\
         log_every = 100\n\
         seed = 7\n",
    )
    .unwrap();

    let bin = env!("CARGO_BIN_EXE_homog");
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let status = std::process::Command::new(bin)
            .arg("train")
            .arg("--config")
            .arg(&config_path)
            .arg("--deterministic")
            .arg("--out")
            .arg(out)
            .status()
            .expect("binary runs");
        assert!(status.success(), "training invocation failed");
    }

    // The records must agree byte-for-byte once the wall-clock block and
    // the differing output directory are stripped.
    let mut identical = true;
    let mut detail = Vec::new();
    let canon = |path: &std::path::Path| {
        let text = std::fs::read_to_string(path.join("run.json")).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let obj = v.as_object_mut().unwrap();
        obj.remove("timing");
        obj.get_mut("config")
            .and_then(|c| c.as_object_mut())
            .map(|c| c.remove("out_dir"));
        serde_json::to_string_pretty(&v).unwrap()
    };
    let same_json = canon(&out_a) == canon(&out_b);
    identical &= same_json;
    detail.push(format!("run.json (minus timing) identical: {same_json}"));
    for name in [
        "curve.csv",
        "params_primal.bin",
        "params_dual.bin",
        "solution_primal.csv",
        "solution_dual.csv",
    ] {
        let same = std::fs::read(out_a.join(name)).unwrap() == std::fs::read(out_b.join(name)).unwrap();
        identical &= same;
        detail.push(format!("{name} identical: {same}"));
    }
    verdict(
        11,
        "deterministic rerun through the binary",
        identical,
        &detail.join(", "),
    );
}
