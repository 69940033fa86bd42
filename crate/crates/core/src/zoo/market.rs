use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

/// Synthetic factor-model market. Returns are in percent per period:
/// `r_t = mu + B f_t + e_t` with i.i.d. Gaussian factor returns `f_t` and
/// idiosyncratic noise `e_t`. The last asset is cash with zero return.
#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    pub n: usize,
    pub k: usize,
    /// Trailing window used by the estimates.
    pub window: usize,
    pub loadings: DMatrix<f64>,
    pub factor_vol: DVector<f64>,
    pub idio_vol: DVector<f64>,
    pub drift: DVector<f64>,
    /// Column t holds the factor returns of period t (K x T).
    pub factors: DMatrix<f64>,
    /// Column t holds the idiosyncratic returns of period t (N x T).
    pub idio: DMatrix<f64>,
}

pub const DEFAULT_WINDOW: usize = 60;
/// Volatility assigned to cash so that `D^{1/2}` stays positive.
pub const CASH_VOL: f64 = 0.01;

impl Market {
    /// Draw model constants and enough history for `periods` estimates.
    pub fn generate(n: usize, k: usize, periods: usize, seed: u64) -> Market {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let window = DEFAULT_WINDOW;
        let len = periods + window;
        let loadings = DMatrix::from_fn(n, k, |_, _| 0.5 * normal(&mut rng));
        let factor_vol = DVector::from_fn(k, |_, _| rng.random_range(0.5..1.5));
        let idio_vol = DVector::from_fn(n, |_, _| rng.random_range(1.0..2.0));
        let drift_dist = Normal::new(0.05, 0.02).expect("valid");
        let drift = DVector::from_fn(n, |_, _| drift_dist.sample(&mut rng));
        let factors = DMatrix::from_fn(k, len, |i, _| {
            factor_vol[i] * normal(&mut rng)
        });
        let idio = DMatrix::from_fn(n, len, |i, _| {
            idio_vol[i] * normal(&mut rng)
        });
        Market {
            n,
            k,
            window,
            loadings,
            factor_vol,
            idio_vol,
            drift,
            factors,
            idio,
        }
    }

    /// Realized returns of the risky assets in period `t`.
    pub fn returns(&self, t: usize) -> DVector<f64> {
        &self.drift + &self.loadings * self.factors.column(t) + self.idio.column(t)
    }

    /// Estimates available before trading in period `t` (0-based), using
    /// the trailing window: `(alpha, F, d_sqrt)` over the N risky assets
    /// plus cash, with `F F' + diag(d_sqrt)^2` the covariance model.
    pub fn estimate(&self, t: usize) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
        let (n, k, w) = (self.n, self.k, self.window);
        let cols = t..t + w;
        let mut alpha = DVector::zeros(n + 1);
        for s in cols.clone() {
            alpha.rows_mut(0, n).axpy(1.0 / w as f64, &self.returns(s), 1.0);
        }
        let fvol = DVector::from_fn(k, |i, _| rms(cols.clone().map(|s| self.factors[(i, s)])));
        let mut f = DMatrix::zeros(n + 1, k);
        for j in 0..k {
            for i in 0..n {
                f[(i, j)] = self.loadings[(i, j)] * fvol[j];
            }
        }
        let mut d = DVector::from_element(n + 1, CASH_VOL);
        for i in 0..n {
            d[i] = rms(cols.clone().map(|s| self.idio[(i, s)]));
        }
        (alpha, f, d)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn rms(it: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0, 0usize);
    for v in it {
        s += v * v;
        c += 1;
    }
    (s / c as f64).sqrt()
}
