/// Column tag of the constant term inside a [`Coef`]. Sorts after every
/// parameter column, matching the last column of the affine map.
pub const CONST: usize = usize::MAX;

/// Sparse affine function of the flattened parameter vector:
/// `sum_k c_k * theta[k] + c0`, stored as `(column, c)` pairs sorted by
/// column with the constant under [`CONST`]. Exact zeros are never stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Coef(Vec<(usize, f64)>);

impl Coef {
    pub fn zero() -> Coef {
        Coef(Vec::new())
    }

    pub fn constant(v: f64) -> Coef {
        if v == 0.0 {
            Coef::zero()
        } else {
            Coef(vec![(CONST, v)])
        }
    }

    /// The parameter entry at flat index `k`.
    pub fn param(k: usize) -> Coef {
        Coef(vec![(k, 1.0)])
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    /// True when the coefficient does not depend on any parameter.
    pub fn is_constant(&self) -> bool {
        self.0.iter().all(|&(c, _)| c == CONST)
    }

    pub fn constant_value(&self) -> f64 {
        match self.0.last() {
            Some(&(CONST, v)) => v,
            _ => 0.0,
        }
    }

    pub fn add(&self, other: &Coef) -> Coef {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            let take_a = j == b.len() || (i < a.len() && a[i].0 < b[j].0);
            let take_b = i == a.len() || (j < b.len() && b[j].0 < a[i].0);
            if take_a {
                out.push(a[i]);
                i += 1;
            } else if take_b {
                out.push(b[j]);
                j += 1;
            } else {
                let v = a[i].1 + b[j].1;
                if v != 0.0 {
                    out.push((a[i].0, v));
                }
                i += 1;
                j += 1;
            }
        }
        Coef(out)
    }

    pub fn add_assign(&mut self, other: &Coef) {
        if other.is_zero() {
            return;
        }
        if self.is_zero() {
            self.0 = other.0.clone();
            return;
        }
        *self = self.add(other);
    }

    pub fn scale(&self, s: f64) -> Coef {
        if s == 0.0 {
            return Coef::zero();
        }
        Coef(self.0.iter().map(|&(c, v)| (c, v * s)).collect())
    }

    pub fn neg(&self) -> Coef {
        self.scale(-1.0)
    }

    /// Product of two coefficients. `None` when both depend on parameters,
    /// since the result would not be affine.
    pub fn mul(&self, other: &Coef) -> Option<Coef> {
        if self.is_zero() || other.is_zero() {
            Some(Coef::zero())
        } else if self.is_constant() {
            Some(other.scale(self.constant_value()))
        } else if other.is_constant() {
            Some(self.scale(other.constant_value()))
        } else {
            None
        }
    }

    /// Evaluate at `theta` (constant term added last).
    pub fn eval(&self, theta: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &(c, v) in &self.0 {
            acc += if c == CONST { v } else { v * theta[c] };
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_merges_and_cancels() {
        let a = Coef::param(2).add(&Coef::constant(1.0));
        let b = Coef::param(0).add(&Coef::param(2).neg());
        let s = a.add(&b);
        assert_eq!(s.entries(), &[(0, 1.0), (CONST, 1.0)]);
        assert!(a.add(&a.neg()).is_zero());
    }

    #[test]
    fn products_need_a_constant_side() {
        let p = Coef::param(1);
        assert_eq!(p.mul(&Coef::constant(3.0)).unwrap().entries(), &[(1, 3.0)]);
        assert!(p.mul(&Coef::param(0)).is_none());
        assert!(p.mul(&Coef::zero()).unwrap().is_zero());
    }

    #[test]
    fn eval_matches_definition() {
        let c = Coef::param(0).scale(2.0).add(&Coef::param(1)).add(&Coef::constant(-1.0));
        assert_eq!(c.eval(&[3.0, 4.0]), 9.0);
        assert_eq!(c.constant_value(), -1.0);
    }
}
