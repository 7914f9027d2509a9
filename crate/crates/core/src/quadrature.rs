//! Composite Gauss–Legendre rules for complex-valued integrands.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, OnceLock, RwLock};

use gauss_quad::legendre::GaussLegendre;
use num_complex::Complex64;

/// Nodes and weights on `[-1, 1]`.
#[derive(Debug)]
pub struct GaussRule {
    pairs: Vec<(f64, f64)>,
}

impl GaussRule {
    pub fn order(&self) -> usize {
        self.pairs.len()
    }

    pub fn integrate<F: FnMut(f64) -> Complex64>(&self, a: f64, b: f64, mut f: F) -> Complex64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        let mut acc = Complex64::new(0.0, 0.0);
        for &(x, w) in &self.pairs {
            acc += f(mid + half * x) * w;
        }
        acc * half
    }
}

/// Memoized Gauss–Legendre rule of the given order.
pub fn gauss_legendre(order: usize) -> Arc<GaussRule> {
    static CACHE: OnceLock<RwLock<HashMap<usize, Arc<GaussRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(rule) = cache.read().expect("quadrature cache poisoned").get(&order) {
        return Arc::clone(rule);
    }
    let n = NonZeroUsize::new(order).expect("quadrature order must be positive");
    let mut pairs: Vec<(f64, f64)> = GaussLegendre::new(n).into_node_weight_pairs().into_vec();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let rule = Arc::new(GaussRule { pairs });
    let mut w = cache.write().expect("quadrature cache poisoned");
    Arc::clone(w.entry(order).or_insert(rule))
}

/// Integrates over consecutive panels `[breaks[i], breaks[i+1]]`.
///
/// `breaks` must be sorted; zero-width panels are skipped.
pub fn integrate_panels<F: FnMut(f64) -> Complex64>(rule: &GaussRule, breaks: &[f64], mut f: F) -> Complex64 {
    breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| rule.integrate(w[0], w[1], &mut f))
        .sum()
}

/// Sorts, clips to `[lo, hi]` and dedups breakpoints (relative tolerance `1e-12` of the span).
pub fn normalize_breaks(mut points: Vec<f64>, lo: f64, hi: f64) -> Vec<f64> {
    let eps = 1e-12 * (hi - lo).abs().max(f64::MIN_POSITIVE);
    points.push(lo);
    points.push(hi);
    points.retain(|p| p.is_finite() && *p >= lo && *p <= hi);
    points.sort_by(f64::total_cmp);
    points.dedup_by(|a, b| (*a - *b).abs() <= eps);
    points
}
