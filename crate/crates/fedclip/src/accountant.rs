//! Renyi differential privacy accounting for the subsampled Gaussian
//! mechanism, built from scratch.
//!
//! Per-step divergences are composed additively across steps and converted
//! to (epsilon, delta) by minimizing over a grid of orders. The ledger is a
//! pure function of (sampling rate, noise multiplier, steps): the clip norm
//! never enters, because noise std is sigma * C while sensitivity is C.

use crate::error::{Error, Result};

/// Order grid: 1.25, 1.5, then every integer from 2 through 256.
pub fn default_orders() -> Vec<f64> {
    let mut orders = vec![1.25, 1.5];
    orders.extend((2..=256).map(|a| a as f64));
    orders
}

fn check_order(order: f64) -> Result<()> {
    if !order.is_finite() || order <= 1.0 {
        return Err(Error::InvalidOrder(order));
    }
    Ok(())
}

fn check_sigma(noise_multiplier: f64) -> Result<()> {
    if !noise_multiplier.is_finite() || noise_multiplier <= 0.0 {
        return Err(Error::InvalidSigma(noise_multiplier));
    }
    Ok(())
}

/// Renyi divergence of order alpha between N(0, sigma^2) and N(1, sigma^2):
/// alpha / (2 sigma^2).
pub fn rdp_gaussian(noise_multiplier: f64, order: f64) -> Result<f64> {
    check_sigma(noise_multiplier)?;
    check_order(order)?;
    Ok(order / (2.0 * noise_multiplier * noise_multiplier))
}

/// ln C(n, k) via a lazily built ln-factorial table.
fn ln_binomial(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

const LN_FACTORIAL_TABLE: usize = 1025;
static LN_FACTORIALS: std::sync::LazyLock<Vec<f64>> = std::sync::LazyLock::new(|| {
    let mut table = vec![0.0; LN_FACTORIAL_TABLE];
    for i in 2..LN_FACTORIAL_TABLE {
        table[i] = table[i - 1] + (i as f64).ln();
    }
    table
});

fn ln_factorial(n: u64) -> f64 {
    match LN_FACTORIALS.get(n as usize) {
        Some(&v) => v,
        // Orders past the table keep extending the same running sum.
        None => {
            LN_FACTORIALS[LN_FACTORIAL_TABLE - 1]
                + (LN_FACTORIAL_TABLE as u64..=n).map(|i| (i as f64).ln()).sum::<f64>()
        }
    }
}

/// Integer-order RDP of the subsampled Gaussian, the binomial closed form
///
///   (1/(alpha-1)) ln sum_{k=0..alpha} C(alpha,k) (1-q)^(alpha-k) q^k
///                                     exp(k(k-1) / (2 sigma^2))
///
/// evaluated in log space so large orders and small sigmas stay finite.
fn integer_order_rdp(q: f64, sigma: f64, alpha: u64) -> f64 {
    debug_assert!(alpha >= 2);
    let ln_q = q.ln();
    // ln(1-q) via ln_1p keeps precision for small q; for q = 1 the mass sits
    // entirely on the k = alpha term and the rest are skipped.
    let ln_1mq = (-q).ln_1p();
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    let mut terms = Vec::with_capacity(alpha as usize + 1);
    for k in 0..=alpha {
        if q == 1.0 && k < alpha {
            continue;
        }
        // A zero coefficient kills the factor even when its log is -inf.
        let survival = if k == alpha { 0.0 } else { (alpha - k) as f64 * ln_1mq };
        let term = ln_binomial(alpha, k)
            + survival
            + k as f64 * ln_q
            + (k * k.saturating_sub(1)) as f64 * inv_two_sigma_sq;
        terms.push(term);
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    (max + sum.ln()) / (alpha as f64 - 1.0)
}

/// Per-step RDP of the Poisson-subsampled Gaussian at the given order.
///
/// Integer orders use the closed form directly. Non-integer orders take the
/// larger of the closed form at the two neighbouring integers (clamped at 2,
/// the smallest order the form covers); RDP is nondecreasing in the order,
/// so this is a valid upper bound.
pub fn rdp_subsampled_gaussian(sampling_rate: f64, noise_multiplier: f64, order: f64) -> Result<f64> {
    if !sampling_rate.is_finite() || sampling_rate <= 0.0 || sampling_rate > 1.0 {
        return Err(Error::InvalidSamplingRate(sampling_rate));
    }
    check_sigma(noise_multiplier)?;
    check_order(order)?;
    if order.fract() == 0.0 && order >= 2.0 {
        return Ok(integer_order_rdp(sampling_rate, noise_multiplier, order as u64));
    }
    let lo = (order.floor() as u64).max(2);
    let hi = (order.ceil() as u64).max(2);
    let a = integer_order_rdp(sampling_rate, noise_multiplier, lo);
    let b = integer_order_rdp(sampling_rate, noise_multiplier, hi);
    Ok(a.max(b))
}

/// Minimizes steps * rdp(order) + ln(1/delta) / (order - 1) over the grid.
/// Returns (epsilon, chosen order).
pub fn epsilon_from_rdp(orders: &[f64], rdp_totals: &[f64], delta: f64) -> Result<(f64, f64)> {
    if orders.is_empty() {
        return Err(Error::NoOrders);
    }
    if orders.len() != rdp_totals.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} orders vs {} rdp values",
            orders.len(),
            rdp_totals.len()
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Validation {
            key: "delta".into(),
            reason: format!("must lie in (0, 1), got {delta}"),
        });
    }
    let ln_inv_delta = -delta.ln();
    let mut best = f64::INFINITY;
    let mut best_order = orders[0];
    for (&order, &rdp) in orders.iter().zip(rdp_totals) {
        check_order(order)?;
        let eps = rdp + ln_inv_delta / (order - 1.0);
        if eps < best {
            best = eps;
            best_order = order;
        }
    }
    Ok((best, best_order))
}

/// Running privacy account of one training run.
#[derive(Clone, Debug)]
pub struct PrivacyLedger {
    pub sampling_rate: f64,
    pub noise_multiplier: f64,
    pub steps: u64,
    pub orders: Vec<f64>,
    pub delta: f64,
}

impl PrivacyLedger {
    pub fn new(sampling_rate: f64, noise_multiplier: f64, delta: f64) -> Result<Self> {
        Self::with_orders(sampling_rate, noise_multiplier, delta, default_orders())
    }

    pub fn with_orders(
        sampling_rate: f64,
        noise_multiplier: f64,
        delta: f64,
        orders: Vec<f64>,
    ) -> Result<Self> {
        if !sampling_rate.is_finite() || sampling_rate <= 0.0 || sampling_rate > 1.0 {
            return Err(Error::InvalidSamplingRate(sampling_rate));
        }
        check_sigma(noise_multiplier)?;
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Validation {
                key: "delta".into(),
                reason: format!("must lie in (0, 1), got {delta}"),
            });
        }
        let mut sorted = orders;
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("orders are comparable"));
        for &o in &sorted {
            check_order(o)?;
        }
        Ok(PrivacyLedger {
            sampling_rate,
            noise_multiplier,
            steps: 0,
            orders: sorted,
            delta,
        })
    }

    /// Records additional composed steps. Composition is additive in the
    /// per-order divergences, so only the count is stored.
    pub fn observe(&mut self, steps: u64) {
        self.steps += steps;
    }

    /// Per-step RDP at each grid order.
    pub fn per_step_rdp(&self) -> Result<Vec<f64>> {
        self.orders
            .iter()
            .map(|&o| rdp_subsampled_gaussian(self.sampling_rate, self.noise_multiplier, o))
            .collect()
    }

    /// Tightest (epsilon, order) over the grid for the steps recorded so far.
    pub fn epsilon(&self) -> Result<(f64, f64)> {
        if self.orders.is_empty() {
            return Err(Error::NoOrders);
        }
        if self.steps == 0 {
            return Err(Error::NoSteps);
        }
        let totals: Vec<f64> = self
            .per_step_rdp()?
            .into_iter()
            .map(|r| r * self.steps as f64)
            .collect();
        epsilon_from_rdp(&self.orders, &totals, self.delta)
    }
}

/// Smallest noise multiplier in [0.3, 100] whose end-of-run epsilon meets
/// the target, found by bisection; the result lands in [0.99, 1.0] of the
/// target unless the search floor itself is already tighter.
pub fn calibrate_sigma(sampling_rate: f64, steps: u64, target_epsilon: f64, delta: f64) -> Result<f64> {
    const SIGMA_LO: f64 = 0.3;
    const SIGMA_HI: f64 = 100.0;
    if steps == 0 {
        return Err(Error::Uncalibratable("zero steps leaves epsilon undefined".into()));
    }
    if !(target_epsilon > 0.0) || !target_epsilon.is_finite() {
        return Err(Error::Uncalibratable(format!("target epsilon {target_epsilon} out of range")));
    }
    let eps_at = |sigma: f64| -> Result<f64> {
        let mut ledger = PrivacyLedger::new(sampling_rate, sigma, delta)?;
        ledger.observe(steps);
        Ok(ledger.epsilon()?.0)
    };
    if eps_at(SIGMA_HI)? > target_epsilon {
        return Err(Error::Uncalibratable(format!(
            "target epsilon {target_epsilon} unreachable with sigma <= {SIGMA_HI}"
        )));
    }
    if eps_at(SIGMA_LO)? <= target_epsilon {
        // The floor is already private enough; no smaller sigma is offered.
        return Ok(SIGMA_LO);
    }
    let mut lo = SIGMA_LO;
    let mut hi = SIGMA_HI;
    for _ in 0..200 {
        let eps_hi = eps_at(hi)?;
        if eps_hi <= target_epsilon && eps_hi >= 0.99 * target_epsilon {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if eps_at(mid)? <= target_epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
