//! Macroscopic fundamental diagrams: the cubic outflow polynomial and its
//! piece-wise affine over-approximation used inside the rolling-horizon LP.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cubic outflow curve `G(N) = a N^3 + b N^2 + c N` in veh/s on `[0, n_jam]`.
///
/// The coefficients already absorb the average trip length, so the value is
/// the trip-completion rate directly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfdPolynomial {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub n_jam: f64,
}

/// Peak of an MFD: the critical accumulation and the outflow it produces.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Critical {
    pub accumulation: f64,
    pub outflow: f64,
}

impl MfdPolynomial {
    /// Builds and validates the curve: positive free-flow slope, concave at the
    /// origin, strictly positive inside the domain and exactly one interior peak.
    pub fn new(a: f64, b: f64, c: f64, n_jam: f64) -> Result<Self> {
        let mfd = Self { a, b, c, n_jam };
        mfd.validate()?;
        Ok(mfd)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { a, b, c, n_jam } = *self;
        if ![a, b, c, n_jam].iter().all(|v| v.is_finite()) {
            return Err(Error::config("mfd", "coefficients must be finite"));
        }
        if n_jam <= 0.0 {
            return Err(Error::config("mfd.n_jam", "jam accumulation must be positive"));
        }
        if c <= 0.0 {
            return Err(Error::config("mfd.c", "linear coefficient must be positive"));
        }
        if b > 0.0 || (b == 0.0 && a >= 0.0) {
            return Err(Error::config("mfd.b", "curve must be concave at the origin"));
        }
        // G(N)/N = a N^2 + b N + c must not vanish inside the domain.
        let lim = n_jam * (1.0 - 1e-3);
        if quadratic_roots(a, b, c).into_iter().any(|r| r > 0.0 && r < lim) {
            return Err(Error::config("mfd", "outflow vanishes inside (0, n_jam)"));
        }
        self.interior_peak()
            .map(|_| ())
            .ok_or_else(|| Error::config("mfd", "no interior maximum in (0, n_jam)"))
    }

    /// Raw polynomial value, no domain check and no clamping.
    #[inline]
    pub fn value(&self, n: f64) -> f64 {
        ((self.a * n + self.b) * n + self.c) * n
    }

    #[inline]
    pub fn derivative(&self, n: f64) -> f64 {
        (3.0 * self.a * n + 2.0 * self.b) * n + self.c
    }

    #[inline]
    pub fn second_derivative(&self, n: f64) -> f64 {
        6.0 * self.a * n + 2.0 * self.b
    }

    /// Outflow in veh/s. Negative polynomial values are clamped to zero.
    pub fn outflow(&self, n: f64) -> Result<f64> {
        if !(0.0..=self.n_jam).contains(&n) {
            return Err(Error::Domain {
                what: "accumulation",
                value: n,
                lo: 0.0,
                hi: self.n_jam,
            });
        }
        Ok(self.value(n).max(0.0))
    }

    /// Outflow with the accumulation clamped into the domain first.
    pub fn outflow_saturating(&self, n: f64) -> f64 {
        self.value(n.clamp(0.0, self.n_jam)).max(0.0)
    }

    fn interior_peak(&self) -> Option<f64> {
        let roots = quadratic_roots(3.0 * self.a, 2.0 * self.b, self.c);
        roots
            .into_iter()
            .filter(|&r| r > 0.0 && r < self.n_jam && self.second_derivative(r) < 0.0)
            .reduce(f64::min)
    }

    /// Argmax of the outflow on `[0, n_jam]` and the peak outflow.
    pub fn critical(&self) -> Critical {
        let accumulation = self.interior_peak().unwrap_or(self.n_jam);
        Critical {
            accumulation,
            outflow: self.outflow_saturating(accumulation),
        }
    }

    /// Trip time at vanishing accumulation, `lim N/G(N) = 1/c`.
    pub fn free_flow_travel_time(&self) -> f64 {
        1.0 / self.c
    }

    /// Inflection point where the cubic turns convex, if it lies in the domain.
    pub fn inflection(&self) -> Option<f64> {
        if self.a > 0.0 {
            let x = -self.b / (3.0 * self.a);
            (x > 0.0 && x < self.n_jam).then_some(x)
        } else {
            None
        }
    }
}

/// Real roots of `a x^2 + b x + c` (degenerates to linear when `a == 0`).
fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b == 0.0 { vec![] } else { vec![-c / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return vec![0.0];
    }
    vec![q / a, c / q]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PwaLine {
    pub slope: f64,
    pub intercept: f64,
}

impl PwaLine {
    #[inline]
    pub fn eval(&self, n: f64) -> f64 {
        self.slope * n + self.intercept
    }

    fn tangent(mfd: &MfdPolynomial, at: f64) -> Self {
        let slope = mfd.derivative(at);
        Self {
            slope,
            intercept: mfd.value(at) - slope * at,
        }
    }
}

/// Minimum of affine lines; concave by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PwaMfd {
    lines: Vec<PwaLine>,
    tangent_points: Vec<f64>,
    n_jam: f64,
    /// Start of the chord that replaces a convex tail of the polynomial.
    majorant_from: Option<f64>,
}

impl PwaMfd {
    pub fn eval(&self, n: f64) -> f64 {
        self.lines
            .iter()
            .map(|l| l.eval(n))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn lines(&self) -> &[PwaLine] {
        &self.lines
    }

    pub fn tangent_points(&self) -> &[f64] {
        &self.tangent_points
    }

    pub fn n_jam(&self) -> f64 {
        self.n_jam
    }

    pub fn majorant_from(&self) -> Option<f64> {
        self.majorant_from
    }

    /// Largest value of the envelope on `[lo, hi]`.
    pub fn max_on(&self, lo: f64, hi: f64) -> f64 {
        // Concave: the max sits at an endpoint or at a breakpoint inside.
        let mut best = self.eval(lo).max(self.eval(hi));
        for w in self.lines.windows(2) {
            if let Some(x) = intersection(&w[0], &w[1]) {
                if x > lo && x < hi {
                    best = best.max(self.eval(x));
                }
            }
        }
        best
    }

    /// Indices of lines that attain the minimum somewhere on `[lo, hi]`.
    pub fn active_lines(&self, lo: f64, hi: f64) -> Vec<usize> {
        let mut keep = Vec::new();
        for (idx, line) in self.lines.iter().enumerate() {
            // The set where this line is the minimum is an interval bounded by
            // its crossings with lines of smaller and larger slope.
            let mut from = f64::NEG_INFINITY;
            let mut to = f64::INFINITY;
            let mut empty = false;
            for (other_idx, other) in self.lines.iter().enumerate() {
                if other_idx == idx {
                    continue;
                }
                let ds = line.slope - other.slope;
                let di = other.intercept - line.intercept;
                if ds.abs() < 1e-15 {
                    if di < 0.0 || (di == 0.0 && other_idx < idx) {
                        empty = true;
                    }
                } else if ds > 0.0 {
                    // line <= other  <=>  n <= di / ds
                    to = to.min(di / ds);
                } else {
                    from = from.max(di / ds);
                }
            }
            let tol = 1e-9 * (1.0 + self.n_jam);
            if !empty && from <= to + tol && from <= hi + tol && to >= lo - tol {
                keep.push(idx);
            }
        }
        keep
    }
}

fn intersection(l1: &PwaLine, l2: &PwaLine) -> Option<f64> {
    let ds = l1.slope - l2.slope;
    (ds.abs() > 1e-15).then(|| (l2.intercept - l1.intercept) / ds)
}

/// Tangent to the concave majorant whose line also passes through the jam end
/// point. Returns `n_jam` when the polynomial is concave on the whole domain.
fn majorant_split(mfd: &MfdPolynomial) -> f64 {
    let Some(infl) = mfd.inflection() else {
        return mfd.n_jam;
    };
    let end = mfd.value(mfd.n_jam).max(0.0);
    let miss = |t: f64| mfd.value(t) + mfd.derivative(t) * (mfd.n_jam - t) - end;
    let (mut lo, mut hi) = (0.0, infl);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if miss(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

const GAP_SAMPLES: usize = 64;

/// Largest relative over-approximation between consecutive tangents.
fn segment_gap(mfd: &MfdPolynomial, p: f64, q: f64) -> f64 {
    if q <= p {
        return 0.0;
    }
    let lp = PwaLine::tangent(mfd, p);
    let lq = PwaLine::tangent(mfd, q);
    (1..=GAP_SAMPLES)
        .map(|s| {
            let x = p + (q - p) * s as f64 / GAP_SAMPLES as f64;
            let g = mfd.value(x);
            if g <= 0.0 {
                0.0
            } else {
                (lp.eval(x).min(lq.eval(x)) - g) / g
            }
        })
        .fold(0.0, f64::max)
}

/// Greedy tangent placement on `[0, end]` meeting a relative-gap budget.
fn place_tangents(mfd: &MfdPolynomial, end: f64, budget: f64, limit: usize) -> Option<Vec<f64>> {
    let mut points = vec![0.0];
    let mut p = 0.0;
    while segment_gap(mfd, p, end) > budget {
        let (mut lo, mut hi) = (p, end);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if segment_gap(mfd, p, mid) <= budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo <= p {
            return None;
        }
        p = lo;
        points.push(p);
        if points.len() >= limit {
            return None;
        }
    }
    if end > 0.0 {
        points.push(end);
    }
    Some(points)
}

/// Over-approximates the MFD by `line_count` tangents to its concave majorant.
///
/// Tangent abscissae start at zero and end at the majorant split point; the
/// interior ones are placed to minimise the largest relative gap to the curve.
/// A convex tail near jam is covered by the chord of the majorant.
pub fn pwa_approximate(mfd: &MfdPolynomial, line_count: usize) -> Result<PwaMfd> {
    if line_count < 2 {
        return Err(Error::config("pwa_lines", "at least two lines are required"));
    }
    mfd.validate()?;
    let end = majorant_split(mfd);

    let mut points = if line_count == 2 {
        vec![0.0, end]
    } else {
        let mut lo = 0.0;
        let mut hi = segment_gap(mfd, 0.0, end);
        let mut best = vec![0.0, end];
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            match place_tangents(mfd, end, mid, line_count) {
                Some(pts) => {
                    hi = mid;
                    best = pts;
                }
                None => lo = mid,
            }
        }
        best
    };
    // Pad up to the requested count by splitting the widest segments.
    while points.len() < line_count {
        let (idx, _) = points
            .windows(2)
            .enumerate()
            .map(|(i, w)| (i, w[1] - w[0]))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let mid = 0.5 * (points[idx] + points[idx + 1]);
        points.insert(idx + 1, mid);
    }

    let lines = points.iter().map(|&p| PwaLine::tangent(mfd, p)).collect();
    Ok(PwaMfd {
        lines,
        tangent_points: points,
        n_jam: mfd.n_jam,
        majorant_from: (end < mfd.n_jam).then_some(end),
    })
}
