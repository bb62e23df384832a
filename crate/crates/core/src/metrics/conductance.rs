use serde::Serialize;

use super::{Graph, Undefined, EXACT_THRESHOLD};

/// Exhaustive conductance: the minimum over nonempty proper vertex subsets
/// `S` of `|E(S, V∖S)| / min(vol S, vol V∖S)`. Disconnected graphs give 0.
pub fn conductance_exact(g: &Graph) -> Result<f64, Undefined> {
    conductance_exact_with_limit(g, EXACT_THRESHOLD)
}

pub fn conductance_exact_with_limit(g: &Graph, limit: usize) -> Result<f64, Undefined> {
    let n = g.len();
    if n < 2 {
        return Err(Undefined::TooFewVertices(n));
    }
    if n > limit || n > 30 {
        return Err(Undefined::TooLarge { n, limit });
    }
    if !g.is_connected() {
        return Ok(0.0);
    }
    let edges = g.edges();
    let deg: Vec<u64> = (0..n).map(|v| g.degree(v) as u64).collect();
    let total: u64 = deg.iter().sum();
    let mut best = f64::INFINITY;
    // phi(S) == phi(V \ S), so only subsets avoiding the last vertex are needed.
    for mask in 1u32..(1u32 << (n - 1)) {
        let mut vol = 0u64;
        let mut bits = mask;
        while bits != 0 {
            vol += deg[bits.trailing_zeros() as usize];
            bits &= bits - 1;
        }
        let cut = edges
            .iter()
            .filter(|(a, b)| ((mask >> a) & 1) != ((mask >> b) & 1))
            .count() as f64;
        let phi = cut / vol.min(total - vol) as f64;
        if phi < best {
            best = phi;
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    /// Sweep over a converged second eigenvector.
    Sweep,
    /// Sweep over a vector that hit the iteration limit before converging.
    SweepUnconverged,
    /// The graph is disconnected; conductance is exactly 0.
    Disconnected,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 10_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpectralEstimate {
    /// Smallest prefix conductance of the eigenvector sweep. An upper bound
    /// on the true conductance.
    pub phi: f64,
    /// Second largest eigenvalue of `D^-1/2 A D^-1/2`.
    pub lambda2: f64,
    /// `1 - lambda2`.
    pub gap: f64,
    /// Cheeger lower bound `gap / 2`.
    pub lower: f64,
    /// Cheeger upper bound `sqrt(2 gap)`, clipped to 1.
    pub upper: f64,
    pub iterations: usize,
    pub method: EstimateMethod,
}

impl SpectralEstimate {
    pub fn brackets(&self, phi: f64, slack: f64) -> bool {
        self.lower - slack <= phi && phi <= self.upper + slack
    }
}

fn seed_vector(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let mut z = (i as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(x: &mut [f64]) -> f64 {
    let norm = dot(x, x).sqrt();
    if norm > 0.0 {
        x.iter_mut().for_each(|v| *v /= norm);
    }
    norm
}

/// Spectral sweep-cut conductance estimate with its Cheeger bracket.
///
/// The second eigenvector of the normalized adjacency operator comes from
/// power iteration on the lazy operator `(I + D^-1/2 A D^-1/2) / 2`, with the
/// top eigenvector `sqrt(deg)` projected out at every step.
pub fn conductance_estimate(g: &Graph) -> Result<SpectralEstimate, Undefined> {
    conductance_estimate_with(g, SpectralOptions::default())
}

pub fn conductance_estimate_with(g: &Graph, opts: SpectralOptions) -> Result<SpectralEstimate, Undefined> {
    let n = g.len();
    if n < 2 {
        return Err(Undefined::TooFewVertices(n));
    }
    if g.total_volume() == 0 || !g.is_connected() {
        return Ok(SpectralEstimate {
            phi: 0.0,
            lambda2: 1.0,
            gap: 0.0,
            lower: 0.0,
            upper: 0.0,
            iterations: 0,
            method: EstimateMethod::Disconnected,
        });
    }
    let inv_sqrt_deg: Vec<f64> = (0..n).map(|v| 1.0 / (g.degree(v) as f64).sqrt()).collect();
    let mut top: Vec<f64> = (0..n).map(|v| (g.degree(v) as f64).sqrt()).collect();
    normalize(&mut top);

    let apply = |x: &[f64], out: &mut [f64]| {
        for v in 0..n {
            let s: f64 = g.neighbors(v).iter().map(|&w| x[w] * inv_sqrt_deg[w]).sum();
            out[v] = 0.5 * (x[v] + s * inv_sqrt_deg[v]);
        }
    };
    let deflate = |x: &mut [f64]| {
        let c = dot(x, &top);
        x.iter_mut().zip(&top).for_each(|(v, t)| *v -= c * t);
    };

    let mut x = seed_vector(n);
    deflate(&mut x);
    normalize(&mut x);
    let mut y = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        apply(&x, &mut y);
        deflate(&mut y);
        if normalize(&mut y) < 1e-12 {
            // x was (numerically) in the kernel; the lazy operator has
            // eigenvalues >= 0, so lambda2 of the normalized operator is -1.
            x.iter_mut().for_each(|v| *v = 0.0);
            converged = true;
            break;
        }
        iterations += 1;
        let diff: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        std::mem::swap(&mut x, &mut y);
        if diff < opts.tolerance {
            converged = true;
            break;
        }
    }
    apply(&x, &mut y);
    // A zero vector means the deflated space is the kernel of the lazy
    // operator, i.e. lambda2 = -1 (only for a single edge).
    let mu = if dot(&x, &x) == 0.0 { 0.0 } else { dot(&x, &y) };
    let lambda2 = (2.0 * mu - 1.0).clamp(-1.0, 1.0);
    let gap = 1.0 - lambda2;
    let phi = if dot(&x, &x) == 0.0 {
        sweep(g, &seed_vector(n), &inv_sqrt_deg)
    } else {
        sweep(g, &x, &inv_sqrt_deg)
    };
    Ok(SpectralEstimate {
        phi,
        lambda2,
        gap,
        lower: gap / 2.0,
        upper: (2.0 * gap).sqrt().min(1.0),
        iterations,
        method: if converged {
            EstimateMethod::Sweep
        } else {
            EstimateMethod::SweepUnconverged
        },
    })
}

/// Minimum prefix conductance after ordering vertices by `x_v / sqrt(deg v)`.
fn sweep(g: &Graph, x: &[f64], inv_sqrt_deg: &[f64]) -> f64 {
    let n = g.len();
    let mut order: Vec<usize> = (0..n).collect();
    let key: Vec<f64> = (0..n).map(|v| x[v] * inv_sqrt_deg[v]).collect();
    order.sort_by(|&a, &b| key[b].total_cmp(&key[a]).then(a.cmp(&b)));
    let total = g.total_volume() as i64;
    let mut in_set = vec![false; n];
    let (mut vol, mut cut) = (0i64, 0i64);
    let mut best = f64::INFINITY;
    for &v in &order[..n - 1] {
        let inside = g.neighbors(v).iter().filter(|&&w| in_set[w]).count() as i64;
        cut += g.degree(v) as i64 - 2 * inside;
        vol += g.degree(v) as i64;
        in_set[v] = true;
        let denom = vol.min(total - vol);
        if denom > 0 {
            best = best.min(cut as f64 / denom as f64);
        }
    }
    best
}
