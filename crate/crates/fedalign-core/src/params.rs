//! Dense flat parameter vectors and the element-wise algebra the update
//! rules are written in.
//!
//! A [`ParamVector`] is an immutable-once-shared, fixed-length vector of
//! `f64`. Every public operation checks that its result is finite; a NaN or
//! infinity is an error, never silently propagated. 64-bit floats are
//! required throughout: the oracle suite checks algebraically equal formulas
//! to 1e-10 and tighter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat vector of model parameters (or any per-coordinate quantity that
/// shares the model's length: gradients, moments, preconditioners, offsets).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Builds a vector, rejecting non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "ParamVector::new",
            });
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Little-endian byte image of every entry, used for stream hashing.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.0.len() * 8);
        for v in &self.0 {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    fn check_len(&self, other: &ParamVector, op: &'static str) -> Result<()> {
        if self.0.len() != other.0.len() {
            return Err(Error::LengthMismatch {
                op,
                left: self.0.len(),
                right: other.0.len(),
            });
        }
        Ok(())
    }

    fn finish(values: Vec<f64>, op: &'static str) -> Result<ParamVector> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op });
        }
        Ok(ParamVector(values))
    }

    /// Element-wise combination of two equal-length vectors.
    pub fn zip_with(
        &self,
        other: &ParamVector,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<ParamVector> {
        self.check_len(other, op)?;
        let values = self
            .0
            .iter()
            .zip(other.0.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::finish(values, op)
    }

    /// Element-wise map.
    pub fn map(&self, op: &'static str, f: impl Fn(f64) -> f64) -> Result<ParamVector> {
        Self::finish(self.0.iter().map(|&a| f(a)).collect(), op)
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    /// Element-wise division with an epsilon guard on the denominator.
    pub fn div_eps(&self, other: &ParamVector, eps: f64) -> Result<ParamVector> {
        if eps <= 0.0 {
            return Err(Error::InvalidArgument("div_eps requires eps > 0".into()));
        }
        self.zip_with(other, "div_eps", |a, b| a / (b + eps))
    }

    pub fn scale(&self, c: f64) -> Result<ParamVector> {
        self.map("scale", |a| a * c)
    }

    pub fn square(&self) -> Result<ParamVector> {
        self.map("square", |a| a * a)
    }

    pub fn abs(&self) -> Result<ParamVector> {
        self.map("abs", f64::abs)
    }

    /// Element-wise sign with sign(0) = 0.
    pub fn sign(&self) -> Result<ParamVector> {
        self.map("sign", sign)
    }

    /// Element-wise error function.
    pub fn erf(&self) -> Result<ParamVector> {
        self.map("erf", erf)
    }

    /// Euclidean norm.
    pub fn norm2(&self) -> Result<f64> {
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "norm2 input" });
        }
        let sq: f64 = self.0.iter().map(|v| v * v).sum();
        let n = sq.sqrt();
        if !n.is_finite() {
            return Err(Error::NonFinite { op: "norm2" });
        }
        Ok(n)
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(v: ParamVector) -> Vec<f64> {
        v.0
    }
}

/// sign(x) with sign(0) = 0, so a zero moment or zero offset yields a
/// neutral gate (gamma = 0.5) in the alignment correction.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Size-weighted average: sum_i (w_i / sum_j w_j) * v_i.
///
/// Normalization happens internally, so uniformly rescaling all weights
/// leaves the result unchanged.
pub fn weighted_average(vectors: &[ParamVector], weights: &[f64]) -> Result<ParamVector> {
    if vectors.is_empty() {
        return Err(Error::Empty("weighted_average: no vectors"));
    }
    if vectors.len() != weights.len() {
        return Err(Error::LengthMismatch {
            op: "weighted_average weights",
            left: vectors.len(),
            right: weights.len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument(
            "weighted_average: weights must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroTotalWeight);
    }
    let len = vectors[0].len();
    let mut acc = vec![0.0; len];
    for (v, &w) in vectors.iter().zip(weights.iter()) {
        if v.len() != len {
            return Err(Error::LengthMismatch {
                op: "weighted_average",
                left: len,
                right: v.len(),
            });
        }
        let frac = w / total;
        for (a, &x) in acc.iter_mut().zip(v.as_slice()) {
            *a += frac * x;
        }
    }
    ParamVector::finish(acc, "weighted_average")
}

// Rational approximations for erf/erfc from W. J. Cody, "Rational Chebyshev
// approximation for the error function", Math. Comp. 23 (1969). Max relative
// error is below 1e-15 in double precision, comfortably inside the 1e-12
// contract the Monte-Carlo checks rely on. Implemented as an odd function of
// |x|, so erf(-x) == -erf(x) holds exactly. Coefficients carry their full
// published digits.
#[allow(clippy::excessive_precision)]
const ERF_A: [f64; 5] = [
    3.16112374387056560e0,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
#[allow(clippy::excessive_precision)]
const ERF_B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];
#[allow(clippy::excessive_precision)]
const ERF_C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e0,
    6.61191906371416295e1,
    2.98635138197400131e2,
    8.81952221241769090e2,
    1.71204761263407058e3,
    2.05107837782607147e3,
    1.23033935479799725e3,
    2.15311535474403846e-8,
];
#[allow(clippy::excessive_precision)]
const ERF_D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];
#[allow(clippy::excessive_precision)]
const ERF_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
#[allow(clippy::excessive_precision)]
const ERF_Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];
#[allow(clippy::excessive_precision)]
const ONE_OVER_SQRT_PI: f64 = 5.64189583547756287e-1;

/// Error function, accurate to better than 1e-15 absolute.
pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let y = x.abs();
    let r = if y <= 0.46875 {
        // erf directly via x * P(x^2)/Q(x^2)
        let z = if y >= 1e-300 { y * y } else { 0.0 };
        let mut num = ERF_A[4] * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + ERF_A[i]) * z;
            den = (den + ERF_B[i]) * z;
        }
        return x * (num + ERF_A[3]) / (den + ERF_B[3]);
    } else if y <= 4.0 {
        let mut num = ERF_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERF_C[i]) * y;
            den = (den + ERF_D[i]) * y;
        }
        let frac = (num + ERF_C[7]) / (den + ERF_D[7]);
        exp_msq(y) * frac
    } else if y < 6.0 {
        let z = 1.0 / (y * y);
        let mut num = ERF_P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + ERF_P[i]) * z;
            den = (den + ERF_Q[i]) * z;
        }
        let frac = z * (num + ERF_P[4]) / (den + ERF_Q[4]);
        exp_msq(y) * (ONE_OVER_SQRT_PI - frac) / y
    } else {
        // erfc(y) < 3e-17: erf saturates at +-1 in double precision
        0.0
    };
    // r holds erfc(y); fold back to erf with odd symmetry.
    let e = 1.0 - r;
    if x < 0.0 {
        -e
    } else {
        e
    }
}

/// exp(-y^2) computed with the split y^2 = trunc + del to limit rounding in
/// the argument, as in Cody's reference implementation.
fn exp_msq(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}
