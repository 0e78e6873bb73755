//! Periodic residual network for trial fields on the cell.
//!
//! The first layer maps `(x1, x2)` to `2 * n_periodic` features of the form
//! `u cos(x_j) + v sin(x_j) + b`, so every downstream value is periodic in
//! both coordinates by construction. A tanh layer follows, then
//! `n_layers - 1` residual tanh blocks of width `n_hidden`, then a scalar
//! linear readout.

use crate::autodiff::{Jet2, Scalar};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

const MAGIC: &[u8; 4] = b"PNET";

#[derive(Debug)]
pub enum NetworkError {
    /// A size field of the architecture was zero.
    InvalidConfig { n_periodic: usize, n_hidden: usize, n_layers: usize },
    ParamLength { expected: usize, got: usize },
    /// A parameter file had the wrong magic or a truncated header.
    BadHeader,
    Io(std::io::Error),
}

impl fmt::Display for NetworkError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkError::InvalidConfig {
                n_periodic,
                n_hidden,
                n_layers,
            } => write!(
                f,
                "network sizes must be positive, got ({n_periodic}, {n_hidden}, {n_layers})"
            ),
            NetworkError::ParamLength { expected, got } => {
                write!(f, "expected {expected} parameters, got {got}")
            }
            NetworkError::BadHeader => write!(f, "unrecognized parameter file header"),
            NetworkError::Io(e) => write!(f, "parameter file i/o: {e}"),
        }
    }
}

impl std::error::Error for NetworkError {}

impl From<std::io::Error> for NetworkError {
    fn from(e: std::io::Error) -> Self {
        NetworkError::Io(e)
    }
}

/// Architecture triple `(n_periodic, n_hidden, n_layers)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_periodic: usize,
    pub n_hidden: usize,
    pub n_layers: usize,
}

/// Index ranges of each parameter group inside the flat parameter vector.
/// Order: periodic cosine coefficients, periodic sine coefficients, periodic
/// phase offsets, first dense layer (weights then biases), each residual
/// block (weights then biases), readout weights, readout bias.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub u: Range<usize>,
    pub v: Range<usize>,
    pub phase: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub blocks: Vec<(Range<usize>, Range<usize>)>,
    pub w_out: Range<usize>,
    pub b_out: usize,
}

impl NetworkConfig {
    pub fn new(n_periodic: usize, n_hidden: usize, n_layers: usize) -> Result<Self, NetworkError> {
        if n_periodic == 0 || n_hidden == 0 || n_layers == 0 {
            return Err(NetworkError::InvalidConfig {
                n_periodic,
                n_hidden,
                n_layers,
            });
        }
        Ok(NetworkConfig {
            n_periodic,
            n_hidden,
            n_layers,
        })
    }

    /// Number of periodic features, `2 * n_periodic`.
    pub fn n_features(&self) -> usize {
        2 * self.n_periodic
    }

    /// Total trainable parameters:
    /// `6 np + 2 np nh + nh + (L - 1)(nh^2 + nh) + nh + 1`.
    pub fn param_count(&self) -> usize {
        let (np, nh, l) = (self.n_periodic, self.n_hidden, self.n_layers);
        6 * np + 2 * np * nh + nh + (l - 1) * (nh * nh + nh) + nh + 1
    }

    pub fn layout(&self) -> ParamLayout {
        let (np, nh, l) = (self.n_periodic, self.n_hidden, self.n_layers);
        let nf = 2 * np;
        let mut at = 0;
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let u = take(nf);
        let v = take(nf);
        let phase = take(nf);
        let w1 = take(nh * nf);
        let b1 = take(nh);
        let blocks = (1..l)
            .map(|_| (take(nh * nh), take(nh)))
            .collect();
        let w_out = take(nh);
        let b_out = take(1).start;
        debug_assert_eq!(at, self.param_count());
        ParamLayout {
            u,
            v,
            phase,
            w1,
            b1,
            blocks,
            w_out,
            b_out,
        }
    }
}

/// A network together with its flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicNet {
    pub config: NetworkConfig,
    pub params: Vec<f64>,
}

impl PeriodicNet {
    /// All-zero parameters: the identically zero field.
    pub fn zeros(config: NetworkConfig) -> Self {
        PeriodicNet {
            config,
            params: vec![0.0; config.param_count()],
        }
    }

    /// Seeded random initialization. Periodic cosine/sine coefficients are
    /// uniform in [-1, 1]; dense weights are uniform in
    /// [-1/sqrt(fan_in), 1/sqrt(fan_in)]; all biases and phase offsets start
    /// at zero. The draw order equals the parameter layout order, so a seed
    /// pins the whole vector.
    pub fn init(config: NetworkConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = config.layout();
        let mut params = vec![0.0; config.param_count()];
        for i in layout.u.clone().chain(layout.v.clone()) {
            params[i] = rng.gen_range(-1.0..1.0);
        }
        let mut dense = |r: Range<usize>, fan_in: usize, rng: &mut ChaCha8Rng| {
            let s = 1.0 / (fan_in as f64).sqrt();
            for i in r {
                params[i] = rng.gen_range(-s..s);
            }
        };
        dense(layout.w1.clone(), config.n_features(), &mut rng);
        for (w, _b) in &layout.blocks {
            dense(w.clone(), config.n_hidden, &mut rng);
        }
        dense(layout.w_out.clone(), config.n_hidden, &mut rng);
        PeriodicNet { config, params }
    }

    pub fn from_params(config: NetworkConfig, params: Vec<f64>) -> Result<Self, NetworkError> {
        if params.len() != config.param_count() {
            return Err(NetworkError::ParamLength {
                expected: config.param_count(),
                got: params.len(),
            });
        }
        Ok(PeriodicNet { config, params })
    }

    /// Value, spatial gradient, and Hessian at a point.
    pub fn forward(&self, x: [f64; 2]) -> Jet2<f64> {
        forward_jets(&self.config, &self.params, x)
    }

    /// Value only; cheaper than a full jet when derivatives are not needed.
    pub fn value_at(&self, x: [f64; 2]) -> f64 {
        let cfg = &self.config;
        let lay = cfg.layout();
        let p = &self.params;
        let nf = cfg.n_features();
        let mut feats = vec![0.0; nf];
        for i in 0..cfg.n_periodic {
            for j in 0..2 {
                let f = 2 * i + j;
                feats[f] = p[lay.u.start + f].mul_add(
                    x[j].cos(),
                    p[lay.v.start + f].mul_add(x[j].sin(), p[lay.phase.start + f]),
                );
            }
        }
        let nh = cfg.n_hidden;
        let mut act = vec![0.0; nh];
        for k in 0..nh {
            let mut z = p[lay.b1.start + k];
            for (f, &fv) in feats.iter().enumerate() {
                z = p[lay.w1.start + k * nf + f].mul_add(fv, z);
            }
            act[k] = z.tanh();
        }
        let mut next = vec![0.0; nh];
        for (w, b) in &lay.blocks {
            for k in 0..nh {
                let mut z = p[b.start + k];
                for (m, &am) in act.iter().enumerate() {
                    z = p[w.start + k * nh + m].mul_add(am, z);
                }
                next[k] = act[k] + z.tanh();
            }
            std::mem::swap(&mut act, &mut next);
        }
        let mut out = p[lay.b_out];
        for (k, &ak) in act.iter().enumerate() {
            out = p[lay.w_out.start + k].mul_add(ak, out);
        }
        out
    }

    /// Write parameters as a 16-byte header (magic + architecture) followed
    /// by little-endian doubles.
    pub fn save_bin(&self, path: &Path) -> Result<(), NetworkError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(MAGIC)?;
        for n in [
            self.config.n_periodic,
            self.config.n_hidden,
            self.config.n_layers,
        ] {
            f.write_all(&(n as u32).to_le_bytes())?;
        }
        for p in &self.params {
            f.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load_bin(path: &Path) -> Result<Self, NetworkError> {
        let mut f = std::fs::File::open(path)?;
        let mut header = [0u8; 16];
        f.read_exact(&mut header).map_err(|_| NetworkError::BadHeader)?;
        if &header[0..4] != MAGIC {
            return Err(NetworkError::BadHeader);
        }
        let dim = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap()) as usize;
        let config = NetworkConfig::new(dim(4), dim(8), dim(12))
            .map_err(|_| NetworkError::BadHeader)?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)?;
        if bytes.len() != 8 * config.param_count() {
            return Err(NetworkError::ParamLength {
                expected: config.param_count(),
                got: bytes.len() / 8,
            });
        }
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(PeriodicNet { config, params })
    }

    /// Write parameters as `index,value` CSV for inspection.
    pub fn save_csv(&self, path: &Path) -> Result<(), NetworkError> {
        let mut out = String::from("index,value\n");
        for (i, p) in self.params.iter().enumerate() {
            out.push_str(&format!("{i},{p:.17e}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Full generic forward pass: the same code runs on `f64` and tape scalars.
pub fn forward_jets<S: Scalar>(cfg: &NetworkConfig, params: &[S], x: [f64; 2]) -> Jet2<S> {
    assert_eq!(params.len(), cfg.param_count());
    let like = params[0];
    let lay = cfg.layout();
    let nf = cfg.n_features();
    let nh = cfg.n_hidden;

    let coord = [
        Jet2::coord_like(x[0], 0, like),
        Jet2::coord_like(x[1], 1, like),
    ];
    let trig: Vec<(Jet2<S>, Jet2<S>)> = coord.iter().map(|c| (c.cos(), c.sin())).collect();

    let mut feats = Vec::with_capacity(nf);
    for i in 0..cfg.n_periodic {
        for j in 0..2 {
            let f = 2 * i + j;
            let (cj, sj) = trig[j];
            let jet = cj
                .mul_s_add(params[lay.u.start + f], sj.scale_s(params[lay.v.start + f]))
                .add_s(params[lay.phase.start + f]);
            feats.push(jet);
        }
    }

    let mut act = Vec::with_capacity(nh);
    for k in 0..nh {
        let mut z = Jet2::constant_like(0.0, like).add_s(params[lay.b1.start + k]);
        for (f, feat) in feats.iter().enumerate() {
            z = feat.mul_s_add(params[lay.w1.start + k * nf + f], z);
        }
        act.push(z.tanh());
    }

    for (w, b) in &lay.blocks {
        let mut next = Vec::with_capacity(nh);
        for k in 0..nh {
            let mut z = Jet2::constant_like(0.0, like).add_s(params[b.start + k]);
            for (m, am) in act.iter().enumerate() {
                z = am.mul_s_add(params[w.start + k * nh + m], z);
            }
            next.push(act[k] + z.tanh());
        }
        act = next;
    }

    let mut out = Jet2::constant_like(0.0, like).add_s(params[lay.b_out]);
    for (k, ak) in act.iter().enumerate() {
        out = ak.mul_s_add(params[lay.w_out.start + k], out);
    }
    out
}
