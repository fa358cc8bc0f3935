//! Polar-domain and hierarchical codebooks. The polar grid samples angle
//! uniformly and distance along concentric rings whose radii shrink
//! harmonically; hierarchical layers cover the same region with progressively
//! narrower beams emitted from centered sub-arrays.

use std::fmt;
use std::io::Write;
use std::ops::Range;

use num_complex::Complex64;
use serde::{Serialize, Serializer};

use crate::array::{
    steering_block, ArrayConfig, Distance, SteeringVector, UserLocation,
};
use crate::error::{Error, Result};

/// Identity of a codeword within whichever codebook produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodewordId {
    /// Polar grid cell: angle index `n` (1-based), ring `s` (0 = far ring).
    Polar { n: usize, s: usize },
    /// Far-field beam toward the `n`-th polar grid angle.
    Angular { n: usize },
    /// Angle-only hierarchical beam `i` at the given layer.
    Upper { layer: u32, i: usize },
    /// Angle-and-distance hierarchical beam at the given layer.
    Lower { layer: u32, i: usize, j: usize },
    /// Pseudo codeword matched exactly to a known channel.
    Exact,
}

impl CodewordId {
    /// Layer for hierarchical ids, `None` for flat codebooks.
    pub fn layer(self) -> Option<u32> {
        match self {
            CodewordId::Upper { layer, .. } | CodewordId::Lower { layer, .. } => Some(layer),
            _ => None,
        }
    }
}

impl fmt::Display for CodewordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodewordId::Polar { n, s } => write!(f, "polar:{n}:{s}"),
            CodewordId::Angular { n } => write!(f, "angular:{n}"),
            CodewordId::Upper { layer, i } => write!(f, "upper:{layer}:{i}"),
            CodewordId::Lower { layer, i, j } => write!(f, "lower:{layer}:{i}:{j}"),
            CodewordId::Exact => write!(f, "exact"),
        }
    }
}

impl Serialize for CodewordId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// One beamforming vector plus the metadata needed to interpret a win.
/// Weights outside `active` are exactly zero; inside, every element has
/// modulus `1/sqrt(active_len)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codeword {
    pub id: CodewordId,
    pub weights: Vec<Complex64>,
    pub theta: f64,
    pub distance: Distance,
    /// 1-based first and last active antenna, inclusive.
    pub active: (usize, usize),
}

impl Codeword {
    pub fn active_range(&self) -> Range<usize> {
        self.active.0 - 1..self.active.1
    }

    pub fn active_len(&self) -> usize {
        self.active.1 - self.active.0 + 1
    }
}

/// Angle of the `n`-th beam (1-based) on a `count`-point uniform grid of the
/// sine domain.
pub fn grid_theta(n: usize, count: usize) -> f64 {
    (2.0 * n as f64 - count as f64 - 1.0) / count as f64
}

fn full_codeword(id: CodewordId, theta: f64, distance: Distance, cfg: &ArrayConfig) -> Codeword {
    Codeword {
        id,
        weights: steering_block(theta, distance, cfg.n, cfg),
        theta,
        distance,
        active: (1, cfg.n),
    }
}

fn padded_codeword(
    id: CodewordId,
    theta: f64,
    distance: Distance,
    count: usize,
    cfg: &ArrayConfig,
) -> Codeword {
    let block = steering_block(theta, distance, count, cfg);
    let first = (cfg.n - count) / 2;
    let mut weights = vec![Complex64::new(0.0, 0.0); cfg.n];
    weights[first..first + count].copy_from_slice(&block);
    Codeword {
        id,
        weights,
        theta,
        distance,
        active: (first + 1, first + count),
    }
}

/// Flat grid over angle and distance rings. Ring 0 is the planar-wavefront
/// ring; ring `s >= 1` focuses at `s_delta * (1 - theta^2) / s`.
#[derive(Debug, Clone)]
pub struct PolarCodebook {
    pub cfg: ArrayConfig,
    /// Ring count `S`, counting the planar ring 0.
    pub rings: usize,
    /// Distance-sampling scale in meters; larger values push rings outward.
    pub s_delta: f64,
    entries: Vec<Codeword>,
}

impl PolarCodebook {
    pub fn new(cfg: ArrayConfig, rings: usize, s_delta: f64) -> Result<Self> {
        if rings < 1 {
            return Err(Error::InvalidParam {
                name: "rings",
                why: format!("ring count must be >= 1, got {rings}"),
            });
        }
        if s_delta <= 0.0 {
            return Err(Error::NonPositive {
                name: "s_delta",
                value: s_delta,
            });
        }
        let mut entries = Vec::with_capacity(cfg.n * rings);
        for n in 1..=cfg.n {
            let theta = grid_theta(n, cfg.n);
            for s in 0..rings {
                let distance = ring_distance(s, theta, s_delta);
                entries.push(full_codeword(CodewordId::Polar { n, s }, theta, distance, &cfg));
            }
        }
        Ok(PolarCodebook {
            cfg,
            rings,
            s_delta,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Row-major flat position of cell (`n` 1-based, `s` 0-based).
    pub fn index_of(&self, n: usize, s: usize) -> usize {
        (n - 1) * self.rings + s
    }

    pub fn entry(&self, n: usize, s: usize) -> Result<&Codeword> {
        if n < 1 || n > self.cfg.n || s >= self.rings {
            return Err(Error::GridMismatch {
                n,
                s,
                n_max: self.cfg.n,
                s_max: self.rings,
            });
        }
        Ok(&self.entries[self.index_of(n, s)])
    }

    pub fn entries(&self) -> &[Codeword] {
        &self.entries
    }

    pub fn theta(&self, n: usize) -> f64 {
        grid_theta(n, self.cfg.n)
    }

    pub fn ring_distance(&self, s: usize, theta: f64) -> Distance {
        ring_distance(s, theta, self.s_delta)
    }

    /// One CSV row per entry: layer,angle_index,distance_index,theta,
    /// distance_m_or_inf,first_active,last_active. Flat entries leave the
    /// layer column empty.
    pub fn export_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "layer,angle_index,distance_index,theta,distance_m_or_inf,first_active,last_active"
        )?;
        for cw in &self.entries {
            let (n, s) = match cw.id {
                CodewordId::Polar { n, s } => (n, s),
                _ => unreachable!("polar codebook holds polar ids only"),
            };
            let layer = cw.id.layer().map(|l| l.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{layer},{n},{s},{},{},{},{}",
                cw.theta, cw.distance, cw.active.0, cw.active.1
            )?;
        }
        Ok(())
    }

    /// Weights of all entries, row-major, each element as little-endian f64
    /// pairs (re, im).
    pub fn export_weights_bin<W: Write>(&self, mut w: W) -> Result<()> {
        for cw in &self.entries {
            for v in &cw.weights {
                w.write_all(&v.re.to_le_bytes())?;
                w.write_all(&v.im.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

fn ring_distance(s: usize, theta: f64, s_delta: f64) -> Distance {
    if s == 0 {
        Distance::Infinite
    } else {
        Distance::Finite(s_delta * (1.0 - theta * theta) / s as f64)
    }
}

/// Planar-wavefront beams toward every polar grid angle; the angle-only
/// baseline codebook.
pub fn angular_codebook(cfg: &ArrayConfig) -> Vec<Codeword> {
    (1..=cfg.n)
        .map(|n| {
            full_codeword(
                CodewordId::Angular { n },
                grid_theta(n, cfg.n),
                Distance::Infinite,
                cfg,
            )
        })
        .collect()
}

/// Angle-only hierarchical beam `i` (1-based) at `layer`: a planar beam from
/// the central `2^layer` elements, zero-padded to the full aperture.
pub fn upper_codeword(cfg: &ArrayConfig, layer: u32, i: usize) -> Result<Codeword> {
    if layer < 1 || layer > cfg.levels() {
        return Err(Error::InvalidParam {
            name: "layer",
            why: format!("layer {layer} outside 1..={}", cfg.levels()),
        });
    }
    let count = 1usize << layer;
    if i < 1 || i > count {
        return Err(Error::IndexOutOfRange {
            what: "beam",
            got: i,
            max: count,
        });
    }
    let theta = grid_theta(i, count);
    Ok(padded_codeword(
        CodewordId::Upper { layer, i },
        theta,
        Distance::Infinite,
        count,
        cfg,
    ))
}

/// One-based view of the ring list: position `k` maps to ring `k - 1`.
#[derive(Debug, Clone, Copy)]
pub struct DistanceIndexSet {
    rings: usize,
}

impl DistanceIndexSet {
    pub fn new(rings: usize) -> Self {
        DistanceIndexSet { rings }
    }

    pub fn len(&self) -> usize {
        self.rings
    }

    pub fn is_empty(&self) -> bool {
        self.rings == 0
    }

    pub fn ring(&self, k: usize) -> Result<usize> {
        if k < 1 || k > self.rings {
            return Err(Error::IndexOutOfRange {
                what: "distance position",
                got: k,
                max: self.rings,
            });
        }
        Ok(k - 1)
    }
}

fn ceil_div(a: i64, b: i64) -> i64 {
    (a + b - 1).div_euclid(b)
}

/// Raw one-based distance position for beam `j` at `layer`, allowing `j`
/// outside the layer's range (used by the strict last-layer rule, where the
/// neighbors of an edge beam fall off the grid).
pub fn distance_index_raw(layer: u32, j: i64, rings: usize, stage1_layers: u32) -> i64 {
    let per_layer = 1i64 << (layer - stage1_layers);
    ceil_div((2 * j - 1) * rings as i64, 2 * per_layer)
}

/// One-based distance position `I(layer, j)` sampled by beam `j` of `layer`;
/// the layer splits the ring list into `2^(layer - stage1_layers)` equal
/// spans and takes each span's midpoint, rounding up.
pub fn distance_index(layer: u32, j: usize, rings: usize, stage1_layers: u32) -> Result<usize> {
    if layer <= stage1_layers {
        return Err(Error::InvalidParam {
            name: "layer",
            why: format!("distance sampling starts above layer {stage1_layers}, got {layer}"),
        });
    }
    let per_layer = 1usize << (layer - stage1_layers);
    if j < 1 || j > per_layer {
        return Err(Error::IndexOutOfRange {
            what: "distance beam",
            got: j,
            max: per_layer,
        });
    }
    Ok(distance_index_raw(layer, j as i64, rings, stage1_layers) as usize)
}

/// Joint angle-distance hierarchical beam at `layer`: a spherical beam from
/// the central `2^layer` elements toward sub-grid angle `i`, focused at the
/// ring this layer's `j`-th distance position selects.
pub fn lower_codeword(
    cfg: &ArrayConfig,
    layer: u32,
    i: usize,
    j: usize,
    rings: usize,
    s_delta: f64,
    stage1_layers: u32,
) -> Result<Codeword> {
    if layer > cfg.levels() {
        return Err(Error::InvalidParam {
            name: "layer",
            why: format!("layer {layer} outside 1..={}", cfg.levels()),
        });
    }
    let count = 1usize << layer;
    if i < 1 || i > count {
        return Err(Error::IndexOutOfRange {
            what: "beam",
            got: i,
            max: count,
        });
    }
    let theta = grid_theta(i, count);
    let pos = distance_index(layer, j, rings, stage1_layers)?;
    let ring = DistanceIndexSet::new(rings).ring(pos)?;
    let distance = ring_distance(ring, theta, s_delta);
    Ok(padded_codeword(
        CodewordId::Lower { layer, i, j },
        theta,
        distance,
        count,
        cfg,
    ))
}

/// How the final layer refines the distance estimate around the winner of
/// the previous layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LastLayerRule {
    /// Test the previous winner's distance position and its two neighbors,
    /// clipped to the ring list.
    Window,
    /// Test every position strictly between those sampled by the previous
    /// layer's neighboring beams, clipped to the ring list.
    Strict,
}

impl fmt::Display for LastLayerRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LastLayerRule::Window => write!(f, "window"),
            LastLayerRule::Strict => write!(f, "strict"),
        }
    }
}

impl std::str::FromStr for LastLayerRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "window" => Ok(LastLayerRule::Window),
            "strict" => Ok(LastLayerRule::Strict),
            other => Err(Error::UnknownRule(other.to_string())),
        }
    }
}

/// Distance positions the last layer will test, given the previous layer's
/// winning distance beam `j_star`.
pub fn last_layer_positions(
    rule: LastLayerRule,
    j_star: usize,
    rings: usize,
    stage1_layers: u32,
    levels: u32,
) -> Result<Vec<usize>> {
    let prev = levels - 1;
    let center = distance_index(prev, j_star, rings, stage1_layers)?;
    let ks: Vec<usize> = match rule {
        LastLayerRule::Window => (center.saturating_sub(1)..=center + 1)
            .filter(|&k| k >= 1 && k <= rings)
            .collect(),
        LastLayerRule::Strict => {
            let lo = distance_index_raw(prev, j_star as i64 - 1, rings, stage1_layers);
            let hi = distance_index_raw(prev, j_star as i64 + 1, rings, stage1_layers);
            let first = (lo + 1).max(1) as usize;
            let last = ((hi - 1).max(0) as usize).min(rings);
            if first > last {
                // Adjacent layers can sample back-to-back positions, leaving
                // nothing strictly between; retest the winner's position.
                vec![center]
            } else {
                (first..=last).collect()
            }
        }
    };
    Ok(ks)
}

/// Full-resolution candidates for the final layer: both child angles of the
/// previous winner, crossed with the rule's distance positions. These are
/// polar grid cells, so the ids are polar.
pub fn last_layer_candidates(
    cfg: &ArrayConfig,
    i_star: usize,
    j_star: usize,
    rule: LastLayerRule,
    rings: usize,
    s_delta: f64,
    stage1_layers: u32,
) -> Result<Vec<Codeword>> {
    let ks = last_layer_positions(rule, j_star, rings, stage1_layers, cfg.levels())?;
    let set = DistanceIndexSet::new(rings);
    let mut out = Vec::with_capacity(2 * ks.len());
    for n in [2 * i_star - 1, 2 * i_star] {
        let theta = grid_theta(n, cfg.n);
        for &k in &ks {
            let ring = set.ring(k)?;
            let distance = ring_distance(ring, theta, s_delta);
            out.push(full_codeword(
                CodewordId::Polar { n, s: ring },
                theta,
                distance,
                cfg,
            ));
        }
    }
    Ok(out)
}

/// Largest centered sub-array whose planar-wavefront model stays accurate out
/// to `r_cover` meters, by the Rayleigh criterion applied to the sub-aperture.
pub fn max_farfield_subarray(r_cover: f64, lambda_c: f64) -> u64 {
    (4.0 * r_cover / lambda_c).powf(2.0 / 3.0).floor() as u64
}

fn ceil_log2(x: u64) -> u32 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

/// Number of angle-only descent layers usable before wavefront curvature at
/// `r_cover` starts to defocus the active sub-array; capped two layers short
/// of the full depth so the joint stage always has room to work.
pub fn choose_stage1_depth(r_cover: f64, cfg: &ArrayConfig) -> Result<u32> {
    if r_cover <= 0.0 {
        return Err(Error::NonPositive {
            name: "r_cover",
            value: r_cover,
        });
    }
    let n_far = max_farfield_subarray(r_cover, cfg.lambda_c).max(1);
    Ok(ceil_log2(n_far).clamp(1, cfg.levels() - 2))
}

/// Noiseless beam-gain profile of one hierarchical layer against a fixed
/// user: `(beam angle, |b^H w|)` per beam. Unit-norm vectors keep the gain
/// in [0, 1].
pub fn gain_profile(cfg: &ArrayConfig, user: UserLocation, layer: u32) -> Result<Vec<(f64, f64)>> {
    let b = crate::array::near_steering(user.theta, Distance::Finite(user.r), cfg);
    let count = 1usize << layer;
    let mut out = Vec::with_capacity(count);
    for i in 1..=count {
        let cw = upper_codeword(cfg, layer, i)?;
        let g = crate::array::beam_gain(&b, &cw.weights)?;
        out.push((cw.theta, g));
    }
    Ok(out)
}

/// Convenience: the unit-norm direction a profile is taken against.
pub fn profile_direction(cfg: &ArrayConfig, user: UserLocation) -> SteeringVector {
    crate::array::near_steering(user.theta, Distance::Finite(user.r), cfg)
}
