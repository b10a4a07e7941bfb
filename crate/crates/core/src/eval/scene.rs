//! Procedural fingertip-camera scenes: a coloured superellipse object in
//! front of a textured environment, seen from the kinematic camera poses of
//! a closing hand.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datapath::{downsample_2x2, rgb888_to_rgb565, Frame, PixelFormat, QCIF_HEIGHT, QCIF_WIDTH};
use crate::hand::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectClass {
    Bowl,
    Lemon,
    Pitcher,
    Strawberry,
    Cup,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 5] = [
        ObjectClass::Bowl,
        ObjectClass::Lemon,
        ObjectClass::Pitcher,
        ObjectClass::Strawberry,
        ObjectClass::Cup,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Bowl => "bowl",
            ObjectClass::Lemon => "lemon",
            ObjectClass::Pitcher => "pitcher",
            ObjectClass::Strawberry => "strawberry",
            ObjectClass::Cup => "cup",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Hue in degrees.
    pub fn hue(self) -> f64 {
        match self {
            ObjectClass::Bowl => 5.0,
            ObjectClass::Lemon => 55.0,
            ObjectClass::Pitcher => 215.0,
            ObjectClass::Strawberry => 348.0,
            ObjectClass::Cup => 130.0,
        }
    }

    /// (minor / major axis ratio, superellipse exponent)
    fn outline(self) -> (f64, f64) {
        match self {
            ObjectClass::Bowl => (0.6, 2.5),
            ObjectClass::Lemon => (0.7, 2.0),
            ObjectClass::Pitcher => (0.85, 4.0),
            ObjectClass::Strawberry => (0.85, 1.8),
            ObjectClass::Cup => (0.9, 5.0),
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObjectClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown object class {s:?}"))
    }
}

/// Coverage above which the camera's automatic gain starts to distort
/// colours.
pub const GAIN_DISTORTION_ONSET: f64 = 0.75;
/// Horizontal field of view of the fingertip camera.
const FOCAL_PX: f64 = 152.0;

pub fn hsv_to_rgb(h_deg: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h_deg.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn hash64(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic seed for one (seed, parts...) tuple.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(hash64(seed), |acc, &p| hash64(acc ^ hash64(p)))
}

/// Smooth value noise on the integer lattice, in [0, 1].
fn value_noise(key: u64, x: f64, y: f64) -> f64 {
    let (xf, yf) = (x.floor(), y.floor());
    let (tx, ty) = (x - xf, y - yf);
    let corner = |dx: i64, dy: i64| {
        let h = hash64(key ^ hash64((xf as i64 + dx) as u64 ^ ((yf as i64 + dy) as u64).rotate_left(32)));
        (h >> 11) as f64 / (1u64 << 53) as f64
    };
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (s(tx), s(ty));
    let top = corner(0, 0) * (1.0 - sx) + corner(1, 0) * sx;
    let bottom = corner(0, 1) * (1.0 - sx) + corner(1, 1) * sx;
    top * (1.0 - sy) + bottom * sy
}

/// Environment of one grasp run: a table below the horizon, a wall above,
/// both weakly saturated and textured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub key: u64,
    pub table_hue: f64,
    pub wall_hue: f64,
    pub table_sat: f64,
    pub wall_sat: f64,
}

impl Environment {
    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            key: rng.gen(),
            table_hue: rng.gen_range(20.0..45.0),
            wall_hue: rng.gen_range(0.0..360.0),
            table_sat: rng.gen_range(0.15..0.35),
            wall_sat: rng.gen_range(0.0..0.2),
        }
    }

    /// Colour seen along a world-frame viewing direction.
    fn color(&self, d: &Vector3<f64>) -> [f64; 3] {
        let az = d.y.atan2(d.x);
        let el = d.z.clamp(-1.0, 1.0).asin();
        let n1 = value_noise(self.key, az * 6.0, el * 6.0);
        let n2 = value_noise(self.key ^ 1, az * 25.0, el * 25.0);
        if el < 0.0 {
            // Wood-like grain on the table.
            let grain = 0.5 + 0.5 * (az * 40.0 + n1 * 6.0).sin();
            let v = 0.35 + 0.25 * grain + 0.15 * n2;
            hsv_to_rgb(self.table_hue + 10.0 * (n1 - 0.5), self.table_sat, v)
        } else {
            let v = 0.55 + 0.3 * n1 + 0.1 * n2;
            hsv_to_rgb(self.wall_hue + 30.0 * (n2 - 0.5), self.wall_sat * (0.5 + n1), v)
        }
    }
}

/// Object appearance and placement in one camera view, in pixel units of
/// the full-resolution frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectView {
    pub class: ObjectClass,
    pub hue: f64,
    pub saturation: f64,
    pub value: f64,
    pub center: (f64, f64),
    /// Semi-axes in pixels.
    pub semi_axes: (f64, f64),
    pub exponent: f64,
    pub rotation: f64,
    pub texture_key: u64,
    /// Highlight position in normalized object coordinates.
    pub highlight: (f64, f64),
}

impl ObjectView {
    /// Superellipse level at full-resolution pixel coordinates: < 1 inside.
    fn level(&self, u: f64, v: f64) -> (f64, f64, f64) {
        let (c, s) = (self.rotation.cos(), self.rotation.sin());
        let (du, dv) = (u - self.center.0, v - self.center.1);
        let x = (c * du + s * dv) / self.semi_axes.0;
        let y = (-s * du + c * dv) / self.semi_axes.1;
        ((x.abs().powf(self.exponent) + y.abs().powf(self.exponent)), x, y)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        self.level(u, v).0 < 1.0
    }

    fn color(&self, u: f64, v: f64) -> Option<[f64; 3]> {
        let (level, x, y) = self.level(u, v);
        if level >= 1.0 {
            return None;
        }
        let shade = 1.0 - 0.35 * level + 0.1 * (x - y);
        let grain = value_noise(self.texture_key, x * 8.0, y * 8.0) - 0.5;
        let mut rgb = hsv_to_rgb(
            self.hue + 6.0 * grain,
            self.saturation,
            (self.value * shade + 0.08 * grain).clamp(0.0, 1.0),
        );
        let (hx, hy) = self.highlight;
        let spec = 0.6 * (-((x - hx).powi(2) + (y - hy).powi(2)) / 0.02).exp();
        for ch in &mut rgb {
            *ch += (1.0 - *ch) * spec;
        }
        Some(rgb)
    }

    /// Fraction of downsampled pixel centres inside the object.
    pub fn coverage(&self, width: usize, height: usize) -> f64 {
        let inside = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.contains(2.0 * x as f64 + 1.0, 2.0 * y as f64 + 1.0))
            .count();
        inside as f64 / (width * height) as f64
    }

    /// Scale the object so that its downsampled coverage is `target`.
    pub fn fit_coverage(mut self, target: f64, width: usize, height: usize) -> Self {
        let (ratio, base) = (self.semi_axes.1 / self.semi_axes.0, self.semi_axes.0);
        let (mut lo, mut hi) = (0.0, 20.0 * base.max(1.0) + 400.0);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            self.semi_axes = (mid, mid * ratio);
            if self.coverage(width, height) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.semi_axes = (hi, hi * ratio);
        self
    }
}

/// Automatic-gain artefacts at close range: desaturation, over-exposure and
/// a false colour cast, growing with coverage beyond the onset.
pub fn gain_distortion(rgb: [f64; 3], coverage: f64) -> [f64; 3] {
    if coverage <= GAIN_DISTORTION_ONSET {
        return rgb;
    }
    let s = ((coverage - GAIN_DISTORTION_ONSET) / (1.0 - GAIN_DISTORTION_ONSET)).min(1.0);
    let gray = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
    let tint = [0.12, -0.04, 0.10];
    let mut out = [0.0; 3];
    for c in 0..3 {
        let desat = rgb[c] + (gray - rgb[c]) * 0.75 * s;
        out[c] = desat * (1.0 + 0.6 * s) + tint[c] * s;
    }
    out
}

/// Everything needed to render one camera view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewSpec {
    pub camera_pose: Pose,
    pub environment: Environment,
    pub object: ObjectView,
    pub gain_distortion: bool,
    pub noise_seed: u64,
    pub noise_sigma: f64,
}

/// Rendered view: 88x72 RGB888 frame, its footprint mask and coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub frame: Frame,
    pub mask: Vec<u8>,
    pub coverage: f64,
}

/// The sensor image: QCIF RGB565 as the camera delivers it.
pub fn render_qcif(spec: &ViewSpec, camera_id: u8, frame_counter: u32) -> Frame {
    let (w, h) = (QCIF_WIDTH as usize, QCIF_HEIGHT as usize);
    let coverage = spec.object.coverage(w / 2, h / 2);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("finite sigma");
    let rot = spec.camera_pose.rotation;
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut pixels = Vec::with_capacity(w * h * 2);
    for v in 0..h {
        for u in 0..w {
            let (pu, pv) = (u as f64 + 0.5, v as f64 + 0.5);
            let mut rgb = match spec.object.color(pu, pv) {
                Some(c) => c,
                None => {
                    // Camera looks along +x, image u to the right (-y), v down (-z).
                    let d = Vector3::new(1.0, -(pu - cx) / FOCAL_PX, -(pv - cy) / FOCAL_PX).normalize();
                    spec.environment.color(&(rot * d))
                }
            };
            if spec.gain_distortion {
                rgb = gain_distortion(rgb, coverage);
            }
            let mut q = |c: f64| ((c + noise.sample(&mut rng)).clamp(0.0, 1.0) * 255.0).round() as u8;
            let px = rgb888_to_rgb565(q(rgb[0]), q(rgb[1]), q(rgb[2]));
            pixels.extend_from_slice(&px.to_be_bytes());
        }
    }
    Frame::new(camera_id, frame_counter, w as u16, h as u16, PixelFormat::Rgb565, pixels)
        .expect("QCIF buffer has the right size")
}

/// Render at QCIF, pass through RGB565 like the sensor, then 2x2 downsample.
pub fn render_view(spec: &ViewSpec, camera_id: u8, frame_counter: u32) -> RenderedView {
    let (dw, dh) = (QCIF_WIDTH as usize / 2, QCIF_HEIGHT as usize / 2);
    let coverage = spec.object.coverage(dw, dh);
    let full = render_qcif(spec, camera_id, frame_counter);
    let frame = downsample_2x2(&full).expect("QCIF dimensions are even");
    let mask = (0..dh)
        .flat_map(|y| (0..dw).map(move |x| (x, y)))
        .map(|(x, y)| u8::from(spec.object.contains(2.0 * x as f64 + 1.0, 2.0 * y as f64 + 1.0)))
        .collect();
    RenderedView { frame, mask, coverage }
}

/// Random object appearance for one run; placement is set per frame.
pub fn random_object(class: ObjectClass, rng: &mut impl Rng) -> ObjectView {
    let (ratio, exponent) = class.outline();
    let angle = rng.gen_range(0.0..2.0 * PI);
    ObjectView {
        class,
        hue: class.hue() + rng.gen_range(-8.0..8.0),
        saturation: rng.gen_range(0.7..0.95),
        value: rng.gen_range(0.6..0.9),
        center: (QCIF_WIDTH as f64 / 2.0, QCIF_HEIGHT as f64 / 2.0),
        semi_axes: (40.0, 40.0 * ratio * rng.gen_range(0.9..1.1)),
        exponent,
        rotation: rng.gen_range(-0.5..0.5),
        texture_key: rng.gen(),
        highlight: (0.4 * angle.cos(), 0.4 * angle.sin()),
    }
}
