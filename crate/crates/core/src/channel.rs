//! Channel coefficients and achievable rates for every link class.
//!
//! All quantities are linear (watts, linear gains); dB conversion happens when
//! a scenario is loaded.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn wavelength(carrier_hz: f64) -> f64 {
    SPEED_OF_LIGHT / carrier_hz
}

/// Thermal noise power `k_B * T * B` in watts.
pub fn thermal_noise(temperature_k: f64, bandwidth_hz: f64) -> f64 {
    BOLTZMANN * temperature_k * bandwidth_hz
}

/// Maximum Doppler shift seen by a transmitter moving at `speed` relative to
/// the receiver.
pub fn max_doppler(speed: f64, carrier_hz: f64) -> f64 {
    speed * carrier_hz / SPEED_OF_LIGHT
}

/// One block-fading realisation of a ground-air channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingDraw {
    /// Rician factor, linear.
    pub rician_factor: f64,
    /// Unit-magnitude line-of-sight term.
    pub los_coeff: Complex64,
    /// Zero-mean unit-variance circularly symmetric Gaussian scatter term.
    pub nlos_coeff: Complex64,
}

impl FadingDraw {
    /// Draws the scattered component; the LoS phase follows the path length.
    pub fn sample<R: Rng + ?Sized>(rician_factor: f64, distance: f64, wavelength: f64, rng: &mut R) -> Self {
        Self {
            rician_factor,
            los_coeff: Complex64::from_polar(1.0, -2.0 * PI * distance / wavelength),
            nlos_coeff: complex_gaussian(1.0, rng),
        }
    }
}

/// Circularly symmetric complex Gaussian with `E|g|^2 = variance`.
pub fn complex_gaussian<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> Complex64 {
    let scale = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * scale, im * scale)
}

/// Rician ground-air coefficient with separate LoS/NLoS path-loss exponents.
pub fn ground_air_coeff(distance: f64, draw: &FadingDraw, tau_los: f64, tau_nlos: f64) -> Result<Complex64> {
    if !(distance > 0.0) {
        return Err(Error::invalid("distance", "must be positive"));
    }
    let omega = draw.rician_factor;
    let (los_weight, nlos_weight) = if omega.is_infinite() {
        (1.0, 0.0)
    } else {
        ((omega / (omega + 1.0)).sqrt(), (1.0 / (omega + 1.0)).sqrt())
    };
    let los = draw.los_coeff * distance.powf(-tau_los / 2.0);
    let nlos = draw.nlos_coeff * distance.powf(-tau_nlos / 2.0);
    Ok(los * los_weight + nlos * nlos_weight)
}

/// Closed-form `E|h|^2` of [`ground_air_coeff`] over the scatter term.
pub fn ground_air_mean_power(distance: f64, rician_factor: f64, tau_los: f64, tau_nlos: f64) -> f64 {
    let w = rician_factor;
    w / (w + 1.0) * distance.powf(-tau_los) + 1.0 / (w + 1.0) * distance.powf(-tau_nlos)
}

/// Free-space satellite-UAV coefficient.
pub fn sat_uav_coeff(distance: f64, antenna_gain: f64, wavelength: f64, phase: f64) -> Result<Complex64> {
    if !(distance > 0.0) {
        return Err(Error::invalid("distance", "must be positive"));
    }
    if !(wavelength > 0.0) {
        return Err(Error::invalid("wavelength", "must be positive"));
    }
    let magnitude = antenna_gain.sqrt() * wavelength / (4.0 * PI * distance);
    Ok(Complex64::from_polar(magnitude, phase))
}

/// Ages a channel estimate by a Doppler/delay product using the Jakes
/// correlation `J0(2 pi D T)`; the innovation has the estimate's power.
pub fn outdated_csi<R: Rng + ?Sized>(h_hat: Complex64, doppler_hz: f64, delay_s: f64, rng: &mut R) -> Complex64 {
    let delta = bessel_j0(2.0 * PI * doppler_hz * delay_s);
    let innovation = complex_gaussian(h_hat.norm_sqr(), rng);
    h_hat * delta + innovation * (1.0 - delta * delta).max(0.0).sqrt()
}

/// A transmitter as seen by one receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Emitter {
    pub tx_power: f64,
    /// `|h|^2` towards the receiver of interest.
    pub coeff_mag_sq: f64,
}

impl Emitter {
    pub fn received_power(&self) -> f64 {
        self.tx_power * self.coeff_mag_sq
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub coeff_mag_sq: f64,
    pub bandwidth: f64,
    pub tx_power: f64,
    pub interference: f64,
    pub noise: f64,
    pub rate: f64,
}

impl LinkBudget {
    pub fn evaluate(bandwidth: f64, target: Emitter, interference: f64, noise: f64) -> Result<Self> {
        if !(bandwidth > 0.0) {
            return Err(Error::invalid("bandwidth", "must be positive"));
        }
        if target.tx_power < 0.0 || target.coeff_mag_sq < 0.0 || interference < 0.0 || noise < 0.0 {
            return Err(Error::invalid("link", "powers, gains and noise must be non-negative"));
        }
        let rate = shannon_rate(bandwidth, target.received_power(), interference + noise);
        Ok(Self {
            coeff_mag_sq: target.coeff_mag_sq,
            bandwidth,
            tx_power: target.tx_power,
            interference,
            noise,
            rate,
        })
    }

    pub fn sinr(&self) -> f64 {
        self.tx_power * self.coeff_mag_sq / (self.interference + self.noise)
    }
}

fn shannon_rate(bandwidth: f64, signal: f64, impairment: f64) -> f64 {
    if signal == 0.0 {
        return 0.0;
    }
    if impairment == 0.0 {
        return f64::INFINITY;
    }
    bandwidth * (signal / impairment).ln_1p() / std::f64::consts::LN_2
}

fn interference_sum(interferers: &[Emitter]) -> f64 {
    interferers.iter().map(Emitter::received_power).sum()
}

/// Ground user to UAV, interfered by every other concurrently transmitting
/// user listed in `co_channel`.
pub fn uplink_rate_user_uav(bandwidth: f64, target: Emitter, co_channel: &[Emitter], noise: f64) -> Result<f64> {
    Ok(LinkBudget::evaluate(bandwidth, target, interference_sum(co_channel), noise)?.rate)
}

/// UAV broadcast to a ground user; interference free.
pub fn downlink_rate_uav_user(bandwidth: f64, link: Emitter, noise: f64) -> Result<f64> {
    Ok(LinkBudget::evaluate(bandwidth, link, 0.0, noise)?.rate)
}

/// UAV to satellite, interfered by the other transmitting UAVs.
pub fn uplink_rate_uav_sat(bandwidth: f64, target: Emitter, interferers: &[Emitter], noise: f64) -> Result<f64> {
    Ok(LinkBudget::evaluate(bandwidth, target, interference_sum(interferers), noise)?.rate)
}

/// Satellite to UAV; interference free.
pub fn downlink_rate_sat_uav(bandwidth: f64, link: Emitter, noise: f64) -> Result<f64> {
    Ok(LinkBudget::evaluate(bandwidth, link, 0.0, noise)?.rate)
}

/// Inter-satellite link rate with free-space loss at `carrier_hz` and thermal
/// noise at `noise_temperature` over the ISL bandwidth.
pub fn isl_rate(
    distance: f64,
    bandwidth: f64,
    tx_power: f64,
    peak_gain: f64,
    carrier_hz: f64,
    noise_temperature: f64,
) -> Result<f64> {
    for (name, v) in [
        ("distance", distance),
        ("bandwidth", bandwidth),
        ("tx_power", tx_power),
        ("peak_gain", peak_gain),
        ("carrier_hz", carrier_hz),
        ("noise_temperature", noise_temperature),
    ] {
        if !(v > 0.0) {
            return Err(Error::invalid(name, "must be positive"));
        }
    }
    let spreading = (4.0 * PI * distance * carrier_hz / SPEED_OF_LIGHT).powi(2);
    let snr = tx_power * peak_gain * peak_gain / (thermal_noise(noise_temperature, bandwidth) * spreading);
    Ok(bandwidth * snr.ln_1p() / std::f64::consts::LN_2)
}

/// Bessel function of the first kind, order zero.
///
/// Small arguments use the trapezoidal rule on `(1/pi) int_0^pi cos(x sin t) dt`,
/// which converges geometrically for this periodic integrand; large arguments
/// use Hankel's asymptotic expansion.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x <= 25.0 {
        const NODES: usize = 96;
        let sum: f64 = (0..NODES).map(|k| (x * (PI * k as f64 / NODES as f64).sin()).cos()).sum();
        sum / NODES as f64
    } else {
        let (p, q) = hankel_pq(x);
        let phase = x - PI / 4.0;
        (2.0 / (PI * x)).sqrt() * (p * phase.cos() - q * phase.sin())
    }
}

fn hankel_pq(x: f64) -> (f64, f64) {
    // a_k = prod_{j=1..k} (-(2j-1)^2) / (k! 8^k); P takes even k, Q odd k,
    // with alternating signs. Stop at the smallest term.
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..60 {
        let odd = (2 * k - 1) as f64;
        term *= -(odd * odd) / (k as f64 * 8.0 * x);
        if term.abs() >= last || term.abs() < 1e-18 {
            break;
        }
        last = term.abs();
        // k odd -> Q with sign (-1)^((k-1)/2); k even -> P with sign (-1)^(k/2).
        if k % 2 == 1 {
            let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
            q += sign * term;
        } else {
            let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
            p += sign * term;
        }
    }
    (p, q)
}
