use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    Room,
    Corridor,
    OpenPlane,
    Cluttered,
}

impl SceneKind {
    pub const ALL: [SceneKind; 4] = [
        SceneKind::Room,
        SceneKind::Corridor,
        SceneKind::OpenPlane,
        SceneKind::Cluttered,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SceneKind::Room => "room",
            SceneKind::Corridor => "corridor",
            SceneKind::OpenPlane => "open-plane",
            SceneKind::Cluttered => "cluttered",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// Textured rectangle `center + a u + b v` with `|a| <= half.x`, `|b| <= half.y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    pub center: Vector3<f64>,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
    pub half: Vector2<f64>,
    pub texture_seed: u64,
}

impl Quad {
    pub fn normal(&self) -> Vector3<f64> {
        self.u.cross(&self.v)
    }

    pub fn area(&self) -> f64 {
        4.0 * self.half.x * self.half.y
    }

    /// Distance along the unit ray `o + t d` to the rectangle.
    #[inline]
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let n = self.normal();
        let den = n.dot(d);
        if den.abs() < 1e-12 {
            return None;
        }
        let t = n.dot(&(self.center - o)) / den;
        if t <= 1e-9 {
            return None;
        }
        let q = o + d * t - self.center;
        (q.dot(&self.u).abs() <= self.half.x && q.dot(&self.v).abs() <= self.half.y).then_some(t)
    }

    /// In-plane coordinates of a point on the quad.
    pub fn local(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let q = p - self.center;
        Vector2::new(q.dot(&self.u), q.dot(&self.v))
    }
}

/// Nominal platform path shared by both passes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub start: Vector3<f64>,
    /// Unit direction of travel in the horizontal plane.
    pub heading: Vector3<f64>,
    /// m/s.
    pub speed: f64,
    /// Offset of the second pass from the first, meters.
    pub revisit_offset: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub kind: SceneKind,
    pub seed: u64,
    pub quads: Vec<Quad>,
    pub landmarks: Vec<Vector3<f64>>,
    pub path: PathSpec,
}

fn hash2(seed: u64, x: i64, y: i64) -> f64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    h ^= (x as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = h.rotate_left(31).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= (y as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    h ^= h >> 32;
    h = h.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    h ^= h >> 29;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (xf, yf) = (x.floor(), y.floor());
    let (xi, yi) = (xf as i64, yf as i64);
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (fx, fy) = (s(x - xf), s(y - yf));
    let a = hash2(seed, xi, yi);
    let b = hash2(seed, xi + 1, yi);
    let c = hash2(seed, xi, yi + 1);
    let d = hash2(seed, xi + 1, yi + 1);
    let top = a + fx * (b - a);
    let bottom = c + fx * (d - c);
    2.0 * (top + fy * (bottom - top)) - 1.0
}

/// Octave wavelengths (m) and amplitudes of the surface texture.
const OCTAVES: [(f64, f64); 5] = [(0.9, 45.0), (0.45, 32.0), (0.22, 22.0), (0.11, 14.0), (0.055, 9.0)];

/// Multi-octave value-noise intensity at in-plane coordinates `uv`; octaves
/// shorter than three pixel footprints are dropped to avoid aliasing.
pub fn texture(seed: u64, uv: &Vector2<f64>, footprint: f64) -> f64 {
    let mut v = 128.0;
    for (k, &(lambda, amp)) in OCTAVES.iter().enumerate() {
        if lambda < 3.0 * footprint {
            break;
        }
        let s = seed.wrapping_add(k as u64 * 7919);
        v += amp * value_noise(s, uv.x / lambda + 0.37 * k as f64, uv.y / lambda - 0.61 * k as f64);
    }
    v.clamp(0.0, 255.0)
}

impl Scene {
    /// Nearest surface hit along a unit ray.
    pub fn raycast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, q) in self.quads.iter().enumerate() {
            if let Some(t) = q.intersect(o, d) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        best
    }

    /// Whether `p` on quad `on` is seen unobstructed from `o`.
    pub fn visible(&self, o: &Vector3<f64>, p: &Vector3<f64>, on: usize) -> bool {
        let diff = p - o;
        let dist = diff.norm();
        if dist < 1e-9 {
            return false;
        }
        let d = diff / dist;
        if self.quads[on].normal().dot(&d).abs() < 0.05 {
            return false;
        }
        self.quads
            .iter()
            .enumerate()
            .all(|(i, q)| i == on || q.intersect(o, &d).is_none_or(|t| t >= dist - 1e-7))
    }

    /// Deterministic jittered samples over every surface at `density` points per m^2,
    /// restricted to points within `reach` of the path segment.
    pub fn surface_samples(&self, density: f64, reach: f64, length: f64) -> Vec<(Vector3<f64>, usize)> {
        let step = 1.0 / density.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5EED_C10D);
        let mut out = Vec::new();
        for (i, q) in self.quads.iter().enumerate() {
            let nu = (2.0 * q.half.x / step).ceil() as i64;
            let nv = (2.0 * q.half.y / step).ceil() as i64;
            for a in 0..nu {
                for b in 0..nv {
                    let ja: f64 = rng.random_range(0.1..0.9);
                    let jb: f64 = rng.random_range(0.1..0.9);
                    let x = -q.half.x + (a as f64 + ja) * step;
                    let y = -q.half.y + (b as f64 + jb) * step;
                    if x.abs() > q.half.x || y.abs() > q.half.y {
                        continue;
                    }
                    let p = q.center + q.u * x + q.v * y;
                    if self.path_distance(&p, length) <= reach {
                        out.push((p, i));
                    }
                }
            }
        }
        out
    }

    /// Distance from a point to the first-pass path segment of the given length.
    pub fn path_distance(&self, p: &Vector3<f64>, length: f64) -> f64 {
        let d = p - self.path.start;
        let s = d.dot(&self.path.heading).clamp(0.0, length);
        (d - self.path.heading * s).norm()
    }
}

fn quad(center: [f64; 3], u: [f64; 3], v: [f64; 3], half: [f64; 2], seed: u64) -> Quad {
    Quad {
        center: Vector3::from(center),
        u: Vector3::from(u).normalize(),
        v: Vector3::from(v).normalize(),
        half: Vector2::from(half),
        texture_seed: seed,
    }
}

/// Axis-aligned box as five quads (no bottom face).
fn boxed(min: Vector3<f64>, max: Vector3<f64>, seed: u64) -> Vec<Quad> {
    let c = (min + max) / 2.0;
    let h = (max - min) / 2.0;
    vec![
        quad([c.x, c.y, max.z], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [h.x, h.y], seed),
        quad(
            [min.x, c.y, c.z],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [h.y, h.z],
            seed + 1,
        ),
        quad(
            [max.x, c.y, c.z],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [h.y, h.z],
            seed + 2,
        ),
        quad(
            [c.x, min.y, c.z],
            [1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0],
            [h.x, h.z],
            seed + 3,
        ),
        quad(
            [c.x, max.y, c.z],
            [1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0],
            [h.x, h.z],
            seed + 4,
        ),
    ]
}

/// Closed room with the given half extents in x and y, floor at z = 0.
fn room_shell(hx: f64, hy: f64, height: f64, seed: u64) -> Vec<Quad> {
    let hz = height / 2.0;
    vec![
        quad([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [hx, hy], seed),
        quad([0.0, 0.0, height], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [hx, hy], seed + 1),
        quad([-hx, 0.0, hz], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [hy, hz], seed + 2),
        quad([hx, 0.0, hz], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [hy, hz], seed + 3),
        quad([0.0, -hy, hz], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [hx, hz], seed + 4),
        quad([0.0, hy, hz], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [hx, hz], seed + 5),
    ]
}

/// How far corridor pilasters stand out of the wall, meters.
const PILASTER_DEPTH: f64 = 0.15;

/// Landmarks per square meter of surface.
const LANDMARK_DENSITY: f64 = 3.0;

/// Builds one of the synthetic worlds. Identical seeds give identical scenes.
pub fn build_scene(kind: SceneKind, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tex: u64 = rng.random();
    let x = Vector3::x();
    let (quads, path) = match kind {
        SceneKind::Room => (
            room_shell(6.0, 5.0, 3.0, tex),
            PathSpec {
                start: Vector3::new(-4.5, -1.0, 1.2),
                heading: x,
                speed: 0.18,
                revisit_offset: Vector3::new(0.0, 0.6, 0.15),
            },
        ),
        SceneKind::Cluttered => {
            let mut q = room_shell(6.0, 5.0, 3.0, tex);
            let mut k = 0;
            while k < 7 {
                let cx: f64 = rng.random_range(-5.0..5.0);
                let cy: f64 = rng.random_range(-4.2..4.2);
                // Keep the corridor around both passes free.
                if (-2.2..1.2).contains(&cy) {
                    continue;
                }
                let hx: f64 = rng.random_range(0.2..0.6);
                let hy: f64 = rng.random_range(0.2..0.6);
                let hz: f64 = rng.random_range(0.4..1.8);
                let min = Vector3::new(cx - hx, cy - hy, 0.0);
                let max = Vector3::new(cx + hx, (cy + hy).min(4.9), hz);
                q.extend(boxed(min, max, tex + 100 + 10 * k));
                k += 1;
            }
            (
                q,
                PathSpec {
                    start: Vector3::new(-4.5, -1.0, 1.2),
                    heading: x,
                    speed: 0.18,
                    revisit_offset: Vector3::new(0.0, 0.6, 0.15),
                },
            )
        }
        SceneKind::Corridor => {
            let (hl, hw, h) = (30.0, 1.2, 2.6);
            let mut q = vec![
                quad([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [hl, hw], tex),
                quad([0.0, 0.0, h], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [hl, hw], tex + 1),
                quad(
                    [0.0, -hw, h / 2.0],
                    [1.0, 0.0, 0.0],
                    [0.0, 0.0, 1.0],
                    [hl, h / 2.0],
                    tex + 2,
                ),
                quad(
                    [0.0, hw, h / 2.0],
                    [1.0, 0.0, 0.0],
                    [0.0, 0.0, 1.0],
                    [hl, h / 2.0],
                    tex + 3,
                ),
                quad(
                    [-hl, 0.0, h / 2.0],
                    [0.0, 1.0, 0.0],
                    [0.0, 0.0, 1.0],
                    [hw, h / 2.0],
                    tex + 4,
                ),
                quad(
                    [hl, 0.0, h / 2.0],
                    [0.0, 1.0, 0.0],
                    [0.0, 0.0, 1.0],
                    [hw, h / 2.0],
                    tex + 5,
                ),
            ];
            // Shallow wall pilasters: the only structure along the axis.
            let mut k = 0;
            let mut px = -hl + 4.0;
            while px < hl - 4.0 {
                let left = k % 2 == 0;
                let (y0, y1) = if left {
                    (-hw, -hw + PILASTER_DEPTH)
                } else {
                    (hw - PILASTER_DEPTH, hw)
                };
                let faces = boxed(
                    Vector3::new(px, y0, 0.0),
                    Vector3::new(px + 0.3, y1, h),
                    tex + 100 + 10 * k,
                );
                // Drop the top and the face lying in the wall.
                let flush = if left { 3 } else { 4 };
                q.extend(
                    faces
                        .into_iter()
                        .enumerate()
                        .filter(|(i, _)| *i != 0 && *i != flush)
                        .map(|(_, f)| f),
                );
                px += 7.0;
                k += 1;
            }
            (
                q,
                PathSpec {
                    start: Vector3::new(-12.0, -0.3, 1.2),
                    heading: x,
                    speed: 0.3,
                    revisit_offset: Vector3::new(0.0, 0.5, 0.15),
                },
            )
        }
        SceneKind::OpenPlane => {
            let mut q = vec![quad(
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [25.0, 16.0],
                tex,
            )];
            let mut k = 0;
            while k < 5 {
                let cx: f64 = rng.random_range(-4.0..14.0);
                let cy: f64 = rng.random_range(-9.0..9.0);
                if cy.abs() < 3.0 {
                    continue;
                }
                let min = Vector3::new(cx - 0.5, cy - 0.5, 0.0);
                let max = Vector3::new(cx + 0.5, cy + 0.5, rng.random_range(0.5..1.5));
                q.extend(boxed(min, max, tex + 100 + 10 * k));
                k += 1;
            }
            (
                q,
                PathSpec {
                    start: Vector3::new(-5.0, 0.0, 1.2),
                    heading: x,
                    speed: 0.25,
                    revisit_offset: Vector3::new(0.0, 0.6, 0.2),
                },
            )
        }
    };
    let mut scene = Scene {
        kind,
        seed,
        quads,
        landmarks: Vec::new(),
        path,
    };
    let length = path.speed * 50.0;
    let mut landmarks = Vec::new();
    for q in &scene.quads {
        let n = (q.area() * LANDMARK_DENSITY).round() as usize;
        for _ in 0..n {
            let a: f64 = rng.random_range(-0.98..0.98);
            let b: f64 = rng.random_range(-0.98..0.98);
            let p = q.center + q.u * (a * q.half.x) + q.v * (b * q.half.y);
            if scene.path_distance(&p, length) < 14.0 {
                landmarks.push(p);
            }
        }
    }
    scene.landmarks = landmarks;
    scene
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        for kind in SceneKind::ALL {
            assert_eq!(build_scene(kind, 7), build_scene(kind, 7));
        }
        assert_ne!(
            build_scene(SceneKind::Cluttered, 7),
            build_scene(SceneKind::Cluttered, 8)
        );
    }

    #[test]
    fn raycast_hits_nearest_wall() {
        let s = build_scene(SceneKind::Room, 1);
        let (t, i) = s.raycast(&Vector3::new(0.0, 0.0, 1.5), &Vector3::x()).unwrap();
        assert!((t - 6.0).abs() < 1e-12);
        assert!((s.quads[i].normal().x.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn texture_is_deterministic_and_bounded() {
        let uv = Vector2::new(0.3, -1.7);
        assert_eq!(texture(3, &uv, 0.001), texture(3, &uv, 0.001));
        assert_ne!(texture(3, &uv, 0.001), texture(4, &uv, 0.001));
        for k in 0..1000 {
            let v = texture(9, &Vector2::new(k as f64 * 0.013, k as f64 * 0.007), 0.002);
            assert!((0.0..=255.0).contains(&v));
        }
    }

    #[test]
    fn occlusion_is_detected() {
        let s = build_scene(SceneKind::Room, 1);
        let o = Vector3::new(0.0, 0.0, 1.5);
        // Point on the far wall seen straight on.
        let p = Vector3::new(6.0, 0.5, 1.0);
        let wall = s.raycast(&o, &(p - o).normalize()).unwrap().1;
        assert!(s.visible(&o, &p, wall));
        // The same point seen from outside the room is hidden by the opposite wall.
        assert!(!s.visible(&Vector3::new(-8.0, 0.5, 1.0), &p, wall));
    }
}
