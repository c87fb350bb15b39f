//! System model for non-orthogonal preamble random access.
//!
//! A base station with `M` antennas observes `L` preamble symbols from `N`
//! single-antenna devices, of which only a few are active:
//!
//! ```text
//! Y = S Γ^{1/2} H + W        S: L×N, Γ = diag(a_n g_n), H: N×M, W: L×M
//! ```
//!
//! Noise convention: `noise_var` is the total variance of one complex noise
//! entry, so real and imaginary parts each carry `noise_var / 2`. The same
//! convention is used for preamble entries (variance `1/L`) and channel
//! coefficients (unit variance).
//!
//! Every generator is a pure function of its inputs and a 64-bit seed.

use std::io::{self, Read, Write};

use nalgebra::{Complex, DMatrix};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::hash::mix64;

pub type Complex64 = Complex<f64>;

/// Dense complex matrix; row and column counts are carried by the value.
pub type ComplexMatrix = DMatrix<Complex64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: String,
        found: String,
    },
}

/// How many users are active in a coherence block.
#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    /// Exactly `K` users, chosen uniformly without replacement.
    Fixed(usize),
    /// Each user independently active with this probability.
    Probability(f64),
}

/// Distribution of the large-scale gains `g_n` (linear power).
#[derive(Debug, Clone, PartialEq)]
pub enum LargeScale {
    Unit,
    /// `10 log10 g ~ Normal(mean_db, std_db²)`.
    LogNormal { mean_db: f64, std_db: f64 },
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreambleScheme {
    /// i.i.d. `CN(0, 1/L)` entries.
    IidGaussian,
    /// First `N` columns of a unitary `L×L` matrix (requires `N <= L`).
    Orthonormal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub n_users: usize,
    pub preamble_len: usize,
    pub n_antennas: usize,
    pub noise_var: f64,
    pub activation: Activation,
    pub large_scale: LargeScale,
    pub preamble_scheme: PreambleScheme,
}

impl SystemConfig {
    /// Unit gains, i.i.d. preambles, `k` fixed active users.
    pub fn new(n_users: usize, preamble_len: usize, n_antennas: usize, k: usize, noise_var: f64) -> Self {
        Self {
            n_users,
            preamble_len,
            n_antennas,
            noise_var,
            activation: Activation::Fixed(k),
            large_scale: LargeScale::Unit,
            preamble_scheme: PreambleScheme::IidGaussian,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.n_users == 0 {
            return err("n_users must be at least 1".into());
        }
        if self.preamble_len == 0 {
            return err("preamble_len must be at least 1".into());
        }
        if self.n_antennas == 0 {
            return err("n_antennas must be at least 1".into());
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return err(format!("noise_var must be finite and nonnegative, got {}", self.noise_var));
        }
        match self.activation {
            Activation::Fixed(k) if k > self.n_users => {
                return err(format!("fixed activation K={k} exceeds n_users={}", self.n_users));
            }
            Activation::Probability(p) if !(0.0..=1.0).contains(&p) => {
                return err(format!("activation probability {p} outside [0, 1]"));
            }
            _ => {}
        }
        match &self.large_scale {
            LargeScale::Fixed(g) if g.len() != self.n_users => {
                return err(format!("fixed gain vector has {} entries, expected {}", g.len(), self.n_users));
            }
            LargeScale::Fixed(g) if g.iter().any(|&x| !(x >= 0.0 && x.is_finite())) => {
                return err("fixed gains must be finite and nonnegative".into());
            }
            LargeScale::LogNormal { mean_db, std_db } if !(mean_db.is_finite() && *std_db >= 0.0) => {
                return err("lognormal gain parameters must be finite with std_db >= 0".into());
            }
            _ => {}
        }
        if self.preamble_scheme == PreambleScheme::Orthonormal && self.n_users > self.preamble_len {
            return err(format!(
                "orthonormal preambles need n_users <= preamble_len, got N={} > L={}",
                self.n_users, self.preamble_len
            ));
        }
        Ok(())
    }

    /// Expected number of active users.
    pub fn expected_active(&self) -> f64 {
        match self.activation {
            Activation::Fixed(k) => k as f64,
            Activation::Probability(p) => p * self.n_users as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreambleBook {
    /// `L×N`, one preamble per column.
    pub matrix: ComplexMatrix,
    pub scheme: PreambleScheme,
    pub seed: u64,
}

impl PreambleBook {
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn n_users(&self) -> usize {
        self.matrix.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivityPattern {
    pub active: Vec<bool>,
    /// Large-scale power gains, defined for every user whether active or not.
    pub gains: Vec<f64>,
}

impl ActivityPattern {
    /// `γ_n = a_n g_n`.
    pub fn gamma(&self) -> Vec<f64> {
        self.active
            .iter()
            .zip(&self.gains)
            .map(|(&a, &g)| if a { g } else { 0.0 })
            .collect()
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn support(&self) -> Vec<usize> {
        self.active
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| a.then_some(i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// `N×M`, row `n` is `h_n^T`.
    pub matrix: ComplexMatrix,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSignal {
    /// `L×M`.
    pub y: ComplexMatrix,
    pub noise_var: f64,
    pub noise_seed: u64,
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Circularly-symmetric complex Gaussian sample with total variance `var`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

pub fn random_complex_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, var: f64) -> ComplexMatrix {
    // Row-major fill so the stream does not depend on nalgebra's storage order.
    let mut m = ComplexMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = complex_normal(rng, var);
        }
    }
    m
}

pub fn generate_preambles(config: &SystemConfig, seed: u64) -> Result<PreambleBook, ModelError> {
    config.validate()?;
    let (l, n) = (config.preamble_len, config.n_users);
    let mut rng = rng(seed);
    let matrix = match config.preamble_scheme {
        PreambleScheme::IidGaussian => random_complex_matrix(&mut rng, l, n, 1.0 / l as f64),
        PreambleScheme::Orthonormal => {
            let seed_matrix = random_complex_matrix(&mut rng, l, l, 1.0);
            let q = seed_matrix.qr().q();
            q.columns(0, n).into_owned()
        }
    };
    Ok(PreambleBook {
        matrix,
        scheme: config.preamble_scheme,
        seed,
    })
}

pub fn sample_activity(config: &SystemConfig, seed: u64) -> Result<ActivityPattern, ModelError> {
    config.validate()?;
    let n = config.n_users;
    let mut rng = rng(seed);
    let mut active = vec![false; n];
    match config.activation {
        Activation::Fixed(k) => {
            for i in index::sample(&mut rng, n, k) {
                active[i] = true;
            }
        }
        Activation::Probability(p) => {
            for a in active.iter_mut() {
                *a = rng.random::<f64>() < p;
            }
        }
    }
    let gains = match &config.large_scale {
        LargeScale::Unit => vec![1.0; n],
        LargeScale::Fixed(g) => g.clone(),
        LargeScale::LogNormal { mean_db, std_db } => (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                10f64.powf((mean_db + std_db * z) / 10.0)
            })
            .collect(),
    };
    Ok(ActivityPattern { active, gains })
}

pub fn generate_channel(config: &SystemConfig, seed: u64) -> Result<ChannelRealization, ModelError> {
    config.validate()?;
    let mut rng = rng(seed);
    Ok(ChannelRealization {
        matrix: random_complex_matrix(&mut rng, config.n_users, config.n_antennas, 1.0),
        seed,
    })
}

/// `Y = Σ_k sqrt(g_k) a_k s_k h_k^T + W`.
pub fn synthesize_received(
    book: &PreambleBook,
    act: &ActivityPattern,
    chan: &ChannelRealization,
    noise_var: f64,
    seed: u64,
) -> Result<ReceivedSignal, ModelError> {
    let (l, n) = book.matrix.shape();
    let (hn, m) = chan.matrix.shape();
    if hn != n {
        return Err(ModelError::Dimension {
            what: "channel rows",
            expected: n.to_string(),
            found: hn.to_string(),
        });
    }
    if act.active.len() != n || act.gains.len() != n {
        return Err(ModelError::Dimension {
            what: "activity pattern",
            expected: n.to_string(),
            found: format!("{}/{}", act.active.len(), act.gains.len()),
        });
    }
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(ModelError::Config(format!("noise variance {noise_var} must be finite and nonnegative")));
    }
    let mut y = if noise_var > 0.0 {
        random_complex_matrix(&mut rng(seed), l, m, noise_var)
    } else {
        ComplexMatrix::zeros(l, m)
    };
    for (k, gamma) in act.gamma().into_iter().enumerate() {
        if gamma == 0.0 {
            continue;
        }
        let amp = gamma.sqrt();
        let s = book.matrix.column(k);
        let h = chan.matrix.row(k);
        y.ger(Complex64::new(amp, 0.0), &s, &h.transpose(), Complex64::new(1.0, 0.0));
    }
    Ok(ReceivedSignal {
        y,
        noise_var,
        noise_seed: seed,
    })
}

/// Seed stream tags used by [`Instance::generate`].
const STREAM_PREAMBLE: u64 = 0x5052_4541_4d42_4c45;
const STREAM_ACTIVITY: u64 = 0x4143_5449_5649_5459;
const STREAM_CHANNEL: u64 = 0x4348_414e_4e45_4c00;
const STREAM_NOISE: u64 = 0x4e4f_4953_4500_0000;

/// One full draw of the model from a single seed.
#[derive(Debug, Clone)]
pub struct Instance {
    pub config: SystemConfig,
    pub book: PreambleBook,
    pub activity: ActivityPattern,
    pub channel: ChannelRealization,
    pub received: ReceivedSignal,
}

impl Instance {
    pub fn generate(config: &SystemConfig, seed: u64) -> Result<Self, ModelError> {
        let book = generate_preambles(config, mix64(seed, STREAM_PREAMBLE))?;
        Self::with_preambles(config, book, seed)
    }

    /// Draws activity, channel and noise for a given preamble book.
    pub fn with_preambles(config: &SystemConfig, book: PreambleBook, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if book.matrix.shape() != (config.preamble_len, config.n_users) {
            return Err(ModelError::Dimension {
                what: "preamble book",
                expected: format!("{}x{}", config.preamble_len, config.n_users),
                found: format!("{}x{}", book.matrix.nrows(), book.matrix.ncols()),
            });
        }
        let activity = sample_activity(config, mix64(seed, STREAM_ACTIVITY))?;
        let channel = generate_channel(config, mix64(seed, STREAM_CHANNEL))?;
        let received = synthesize_received(&book, &activity, &channel, config.noise_var, mix64(seed, STREAM_NOISE))?;
        Ok(Self {
            config: config.clone(),
            book,
            activity,
            channel,
            received,
        })
    }

    /// The row-sparse target `X = Γ^{1/2} H`.
    pub fn x_true(&self) -> ComplexMatrix {
        let mut x = self.channel.matrix.clone();
        for (k, g) in self.activity.gamma().into_iter().enumerate() {
            let a = g.sqrt();
            x.row_mut(k).iter_mut().for_each(|v| *v *= a);
        }
        x
    }
}

/// Debug dump: `u32` LE rows, `u32` LE cols, then row-major `(re, im)` `f64` LE pairs.
pub fn write_matrix_dump<W: Write>(mut w: W, m: &ComplexMatrix) -> io::Result<()> {
    let rows = u32::try_from(m.nrows()).map_err(|_| io::Error::other("too many rows"))?;
    let cols = u32::try_from(m.ncols()).map_err(|_| io::Error::other("too many columns"))?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let v = m[(i, j)];
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_matrix_dump<R: Read>(mut r: R) -> io::Result<ComplexMatrix> {
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let rows = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u32::from_le_bytes(word) as usize;
    let mut m = ComplexMatrix::zeros(rows, cols);
    let mut f = [0u8; 8];
    for i in 0..rows {
        for j in 0..cols {
            r.read_exact(&mut f)?;
            let re = f64::from_le_bytes(f);
            r.read_exact(&mut f)?;
            let im = f64::from_le_bytes(f);
            m[(i, j)] = Complex64::new(re, im);
        }
    }
    Ok(m)
}
