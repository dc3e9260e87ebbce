use rand::Rng;
use rand_distr::StandardNormal;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Gaussian soft-return estimate for one state-action pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianReturn {
    pub q_mean: f64,
    /// Always at least the configured floor.
    pub q_std: f64,
}

impl GaussianReturn {
    /// From the two raw critic outputs; the second is mapped through softplus
    /// and then floored.
    pub fn from_raw(mean: f64, raw_std: f64, rho_min: f64) -> Self {
        Self { q_mean: mean, q_std: clamp_std(softplus(raw_std), rho_min) }
    }

    /// `d q_std / d raw_std`, zero where the floor is active.
    pub fn std_slope(raw_std: f64, rho_min: f64) -> f64 {
        if softplus(raw_std) > rho_min {
            sigmoid(raw_std)
        } else {
            0.0
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn clamp_std(rho_raw: f64, rho_min: f64) -> f64 {
    if rho_raw.is_nan() {
        rho_min
    } else {
        rho_raw.max(rho_min)
    }
}

/// Clips `target` into `[q - clip, q + clip]`.
pub fn clip_target(target: f64, q: f64, clip: f64) -> f64 {
    target.clamp(q - clip, q + clip)
}

pub fn gaussian_log_density(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - LN_SQRT_2PI
}

/// Gradient of `log N(target; q, rho)` with respect to `q` and `rho`.
pub fn loglik_grads(target: f64, q: f64, rho: f64) -> (f64, f64) {
    let d = target - q;
    let r2 = rho * rho;
    (d / r2, d * d / (r2 * rho) - 1.0 / rho)
}

/// Gradient of `-KL(N(m, s) || N(q, rho))` with respect to `q` and `rho`.
pub fn analytic_loglik_grads(target_mean: f64, target_std: f64, q: f64, rho: f64) -> (f64, f64) {
    let d = target_mean - q;
    let r2 = rho * rho;
    (d / r2, (target_std * target_std + d * d) / (r2 * rho) - 1.0 / rho)
}

/// `KL(N(m1, s1) || N(m2, s2))`.
pub fn gaussian_kl(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    (s2 / s1).ln() + (s1 * s1 + (m1 - m2) * (m1 - m2)) / (2.0 * s2 * s2) - 0.5
}

/// One draw of the distributional soft Bellman target:
/// `r + discount * (z - nu * log_prob)` with `z ~ N(next)`; terminal
/// transitions return `r`.
pub fn soft_return_target<R: Rng + ?Sized>(
    reward: f64,
    done: bool,
    discount: f64,
    next: GaussianReturn,
    next_log_prob: f64,
    nu: f64,
    rng: &mut R,
) -> f64 {
    if done {
        return reward;
    }
    let eps: f64 = rng.sample(StandardNormal);
    reward + discount * (next.q_mean + next.q_std * eps - nu * next_log_prob)
}

/// Mean of [`soft_return_target`].
pub fn expected_soft_target(reward: f64, done: bool, discount: f64, next_mean: f64, next_log_prob: f64, nu: f64) -> f64 {
    if done {
        reward
    } else {
        reward + discount * (next_mean - nu * next_log_prob)
    }
}

/// `log(1 - tanh(u)^2)` without cancellation.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// Log-density of `a = tanh(u)` when `u ~ N(mean, exp(log_std))`, per
/// dimension summed.
pub fn squashed_log_prob(u: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    u.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&u, &m), &ls)| gaussian_log_density(u, m, ls.exp()) - log_one_minus_tanh_sq(u))
        .sum()
}
