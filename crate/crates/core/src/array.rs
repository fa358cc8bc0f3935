//! Uniform linear array geometry, spherical-wavefront steering, channels, and
//! the noisy power-measurement source that all training engines draw from.

use std::fmt;
use std::ops::Range;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Radial coordinate of a beam focus. `Infinite` selects the planar-wavefront
/// limit and is a first-class value, not a float sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distance {
    Finite(f64),
    Infinite,
}

impl Distance {
    pub fn finite(self) -> Option<f64> {
        match self {
            Distance::Finite(r) => Some(r),
            Distance::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Distance::Infinite)
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distance::Finite(r) => write!(f, "{r}"),
            Distance::Infinite => write!(f, "inf"),
        }
    }
}

/// Half-wavelength-spaced linear array with its derived field-region bounds.
#[derive(Debug, Clone, Copy)]
pub struct ArrayConfig {
    /// Antenna count, a power of two.
    pub n: usize,
    /// Carrier wavelength in meters.
    pub lambda_c: f64,
    /// Element spacing, fixed at half a wavelength.
    pub d: f64,
    /// Physical aperture `n * d` in meters.
    pub aperture: f64,
    /// Inner edge of the usable near-field region.
    pub r_min: f64,
    /// Rayleigh distance `2 * aperture^2 / lambda_c`; beyond it planar
    /// wavefronts are an adequate model.
    pub r_rayleigh: f64,
}

impl ArrayConfig {
    pub fn new(n: usize, lambda_c: f64) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::BadAntennaCount(n));
        }
        if lambda_c <= 0.0 {
            return Err(Error::NonPositive {
                name: "lambda_c",
                value: lambda_c,
            });
        }
        let d = lambda_c / 2.0;
        let aperture = n as f64 * d;
        let r_rayleigh = 2.0 * aperture * aperture / lambda_c;
        let r_min = (0.5 * (aperture.powi(3) / lambda_c).sqrt()).max(1.2 * aperture);
        Ok(ArrayConfig {
            n,
            lambda_c,
            d,
            aperture,
            r_min,
            r_rayleigh,
        })
    }

    /// log2 of the antenna count: the depth of a binary angular partition
    /// that bottoms out at single grid cells.
    pub fn levels(&self) -> u32 {
        self.n.trailing_zeros()
    }
}

/// A user position in (spatial angle, range) coordinates. `theta` is the sine
/// of the physical angle, so it lives in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserLocation {
    pub theta: f64,
    pub r: f64,
}

impl UserLocation {
    pub fn new(theta: f64, r: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&theta) {
            return Err(Error::AngleOutOfRange(theta));
        }
        if r <= 0.0 {
            return Err(Error::NonPositive { name: "r", value: r });
        }
        Ok(UserLocation { theta, r })
    }
}

/// Signed offset of element `n` (1-based) from the array center, in units of
/// the element spacing.
pub fn element_offset(n: usize, count: usize) -> Result<f64> {
    if n < 1 || n > count {
        return Err(Error::IndexOutOfRange {
            what: "antenna",
            got: n,
            max: count,
        });
    }
    Ok((2.0 * n as f64 - count as f64 - 1.0) / 2.0)
}

/// Exact propagation distance from a user to element `n`, accounting for the
/// curvature of the wavefront across the aperture.
pub fn element_distance(user: UserLocation, n: usize, cfg: &ArrayConfig) -> Result<f64> {
    let delta = element_offset(n, cfg.n)?;
    Ok(distance_to_offset(user.theta, user.r, delta * cfg.d))
}

fn distance_to_offset(theta: f64, r: f64, offset_m: f64) -> f64 {
    let transverse = r * r * (1.0 - theta * theta);
    let axial = r * theta - offset_m;
    (transverse + axial * axial).sqrt()
}

/// Unit-norm array response. Element amplitudes are constant at 1/sqrt(len).
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub values: Vec<Complex64>,
}

impl SteeringVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Spherical-wavefront steering vector for the full array. Each element is
/// phased by its exact path-length difference to the focus; an `Infinite`
/// focus reduces to [`far_steering`] elementwise.
pub fn near_steering(theta: f64, r: Distance, cfg: &ArrayConfig) -> SteeringVector {
    SteeringVector {
        values: steering_block(theta, r, cfg.n, cfg),
    }
}

/// Planar-wavefront steering vector: linear phase ramp across `count`
/// elements at half-wavelength spacing.
pub fn far_steering(theta: f64, count: usize) -> SteeringVector {
    let scale = 1.0 / (count as f64).sqrt();
    let values = (0..count)
        .map(|k| Complex64::from_polar(scale, -std::f64::consts::PI * k as f64 * theta))
        .collect();
    SteeringVector { values }
}

/// Steering block for a centered sub-array of `count` elements sharing the
/// full array's element spacing and wavelength.
pub(crate) fn steering_block(
    theta: f64,
    r: Distance,
    count: usize,
    cfg: &ArrayConfig,
) -> Vec<Complex64> {
    match r {
        Distance::Infinite => far_steering(theta, count).values,
        Distance::Finite(r) => {
            let scale = 1.0 / (count as f64).sqrt();
            let k_wave = 2.0 * std::f64::consts::PI / cfg.lambda_c;
            (1..=count)
                .map(|n| {
                    let delta = (2.0 * n as f64 - count as f64 - 1.0) / 2.0;
                    let rn = distance_to_offset(theta, r, delta * cfg.d);
                    Complex64::from_polar(scale, k_wave * (rn - r))
                })
                .collect()
        }
    }
}

/// `sum conj(a_k) * b_k`. Two accumulator lanes so the FP adds pipeline on
/// long vectors; this dot product dominates the Monte Carlo runtime.
pub(crate) fn hconj_dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    debug_assert_eq!(a.len(), b.len());
    let (mut re0, mut im0, mut re1, mut im1) = (0.0, 0.0, 0.0, 0.0);
    let mut pairs = a.iter().zip(b.iter());
    loop {
        match (pairs.next(), pairs.next()) {
            (Some((x, y)), Some((x2, y2))) => {
                re0 += x.re * y.re + x.im * y.im;
                im0 += x.re * y.im - x.im * y.re;
                re1 += x2.re * y2.re + x2.im * y2.im;
                im1 += x2.re * y2.im - x2.im * y2.re;
            }
            (Some((x, y)), None) => {
                re0 += x.re * y.re + x.im * y.im;
                im0 += x.re * y.im - x.im * y.re;
                break;
            }
            _ => break,
        }
    }
    Complex64::new(re0 + re1, im0 + im1)
}

/// Noiseless beam gain `|b^H w|` between a direction `b` and weights `w`.
pub fn beam_gain(b: &SteeringVector, w: &[Complex64]) -> Result<f64> {
    if b.len() != w.len() {
        return Err(Error::LengthMismatch {
            left: b.len(),
            right: w.len(),
        });
    }
    Ok(hconj_dot(&b.values, w).norm())
}

/// Line-of-sight channel `h = sqrt(n) * gain * b(theta, r)`, where the
/// complex gain carries free-space path loss and propagation phase.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub h_vec: Vec<Complex64>,
    pub gain: Complex64,
    pub user: UserLocation,
    pub rho0: f64,
}

impl ChannelRealization {
    /// Unit-norm steering direction of the channel, recovered by stripping
    /// the scalar gain off `h_vec`.
    pub fn direction(&self, cfg: &ArrayConfig) -> SteeringVector {
        near_steering(self.user.theta, Distance::Finite(self.user.r), cfg)
    }

    /// Beam gain `|b^H w|` of weights against this channel's direction,
    /// evaluated over the active span only (zeros outside contribute nothing).
    pub(crate) fn normalized_gain(&self, weights: &[Complex64], active: Range<usize>) -> f64 {
        let scale = (self.h_vec.len() as f64).sqrt() * self.gain.norm();
        hconj_dot(&self.h_vec[active.clone()], &weights[active]).norm() / scale
    }
}

pub fn make_channel(user: UserLocation, rho0: f64, cfg: &ArrayConfig) -> Result<ChannelRealization> {
    if rho0 <= 0.0 {
        return Err(Error::NonPositive {
            name: "rho0",
            value: rho0,
        });
    }
    let gain = Complex64::from_polar(
        rho0.sqrt() / user.r,
        -2.0 * std::f64::consts::PI * user.r / cfg.lambda_c,
    );
    let b = near_steering(user.theta, Distance::Finite(user.r), cfg);
    let root_n = (cfg.n as f64).sqrt();
    let h_vec = b.values.iter().map(|v| v * gain * root_n).collect();
    Ok(ChannelRealization {
        h_vec,
        gain,
        user,
        rho0,
    })
}

/// Stateful pilot source: each call beams one pilot, adds receiver noise, and
/// returns the received power `|sqrt(p) * h^H w + z|^2`. Keeps an honest
/// count of pilots spent so search engines cannot under-report overhead.
#[derive(Debug)]
pub struct MeasurementOracle {
    channel: ChannelRealization,
    pilot_power: f64,
    noise_power: f64,
    rng: ChaCha8Rng,
    pilots_used: u64,
}

impl MeasurementOracle {
    pub fn new(
        channel: ChannelRealization,
        pilot_power: f64,
        noise_power: f64,
        seed: u64,
    ) -> Result<Self> {
        if pilot_power <= 0.0 {
            return Err(Error::NonPositive {
                name: "pilot_power",
                value: pilot_power,
            });
        }
        if noise_power < 0.0 {
            return Err(Error::NonPositive {
                name: "noise_power",
                value: noise_power,
            });
        }
        Ok(MeasurementOracle {
            channel,
            pilot_power,
            noise_power,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pilots_used: 0,
        })
    }

    pub fn measure(&mut self, weights: &[Complex64]) -> Result<f64> {
        if weights.len() != self.channel.h_vec.len() {
            return Err(Error::LengthMismatch {
                left: weights.len(),
                right: self.channel.h_vec.len(),
            });
        }
        Ok(self.measure_block(weights, 0..weights.len()))
    }

    /// Measurement restricted to the weights' active span. Exact whenever the
    /// weights are zero outside `active`.
    pub fn measure_block(&mut self, weights: &[Complex64], active: Range<usize>) -> f64 {
        let y = self.pilot_power.sqrt()
            * hconj_dot(&self.channel.h_vec[active.clone()], &weights[active]);
        let y = if self.noise_power > 0.0 {
            let sd = (self.noise_power / 2.0).sqrt();
            let re: f64 = StandardNormal.sample(&mut self.rng);
            let im: f64 = StandardNormal.sample(&mut self.rng);
            y + Complex64::new(sd * re, sd * im)
        } else {
            y
        };
        self.pilots_used += 1;
        y.norm_sqr()
    }

    pub fn pilots_used(&self) -> u64 {
        self.pilots_used
    }

    pub fn channel(&self) -> &ChannelRealization {
        &self.channel
    }

    pub fn is_noiseless(&self) -> bool {
        self.noise_power == 0.0
    }
}
