//! Forward-facing pseudo-3D camera and the visual styles.
//!
//! Every pixel is first assigned an exact semantic class from scene geometry;
//! styles only decide how a class is colored. That makes the segmentation of
//! a scene identical under every style.

use super::car::CarState;
use super::image::{Frame, SegMap, CHANNELS};
use super::track::{Point, Track};
use crate::error::{invalid, Result};
use crate::rng::{derive_indexed, derive_seed, hash01, seeded};
use rand::Rng;
use std::f64::consts::PI;

pub const NUM_CLASSES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Class {
    Road = 0,
    LaneMarking = 1,
    OffRoad = 2,
    Sky = 3,
    Building = 4,
    Obstacle = 5,
}

impl Class {
    pub const ALL: [Class; NUM_CLASSES] = [
        Class::Road,
        Class::LaneMarking,
        Class::OffRoad,
        Class::Sky,
        Class::Building,
        Class::Obstacle,
    ];
}

fn rgb(r: u8, g: u8, b: u8) -> [f32; 3] {
    [r as f32 / 127.5 - 1.0, g as f32 / 127.5 - 1.0, b as f32 / 127.5 - 1.0]
}

/// Fixed class colors of the scene-parsing style.
pub fn parsing_palette() -> [[f32; 3]; NUM_CLASSES] {
    [
        rgb(128, 64, 128),
        rgb(255, 255, 255),
        rgb(107, 142, 35),
        rgb(70, 130, 180),
        rgb(70, 70, 70),
        rgb(220, 20, 60),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RenderStyle {
    /// Flat-shaded simulator look.
    Virtual,
    /// Scene parsing: one fixed color per class.
    Parsing,
    /// Textured, sunlit look standing in for camera footage.
    Real,
    /// Virtual style with perturbed palette and texture.
    RandomizedVirtual(u64),
}

/// Coloring rules for one style on one track.
#[derive(Clone, Debug, PartialEq)]
pub struct Palette {
    pub colors: [[f32; 3]; NUM_CLASSES],
    /// Luminance texture amplitude per class.
    pub noise: [f32; NUM_CLASSES],
    /// Sky color at the top row (the class color is used at the horizon).
    pub sky_top: [f32; 3],
    /// Blend toward the horizon sky color at far distance.
    pub fog: f32,
    /// Darkened window rows on buildings.
    pub windows: bool,
}

impl Palette {
    fn flat(colors: [[f32; 3]; NUM_CLASSES]) -> Self {
        Self {
            sky_top: colors[Class::Sky as usize],
            colors,
            noise: [0.0; NUM_CLASSES],
            fog: 0.0,
            windows: false,
        }
    }

    fn virtual_base() -> Self {
        Self {
            colors: [
                rgb(70, 70, 75),
                rgb(225, 225, 225),
                rgb(70, 125, 55),
                rgb(110, 150, 205),
                rgb(95, 85, 80),
                rgb(190, 45, 45),
            ],
            noise: [0.02, 0.0, 0.02, 0.0, 0.0, 0.0],
            sky_top: rgb(80, 120, 190),
            fog: 0.25,
            windows: false,
        }
    }

    fn real_base() -> Self {
        Self {
            colors: [
                rgb(165, 160, 150),
                rgb(245, 235, 190),
                rgb(120, 100, 60),
                rgb(225, 232, 240),
                rgb(175, 150, 125),
                rgb(250, 140, 20),
            ],
            noise: [0.08, 0.03, 0.15, 0.0, 0.08, 0.05],
            sky_top: rgb(150, 190, 235),
            fog: 0.1,
            windows: true,
        }
    }

    /// Small per-track color shift so each track has its own look.
    fn shifted(mut self, seed: u64) -> Self {
        for (k, color) in self.colors.iter_mut().enumerate() {
            for (ch, v) in color.iter_mut().enumerate() {
                *v += (hash01(seed, k as i64, ch as i64) as f32 - 0.5) * 0.12;
            }
        }
        self
    }

    fn randomized(mut self, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let gain: f32 = rng.gen_range(0.8..1.2);
        for color in self.colors.iter_mut().chain(std::iter::once(&mut self.sky_top)) {
            for v in color.iter_mut() {
                let lum = (*v + 1.0) * gain - 1.0;
                *v = lum + rng.gen_range(-0.4..0.4);
            }
        }
        for n in &mut self.noise {
            *n = rng.gen_range(0.0..0.08);
        }
        self.fog = rng.gen_range(0.0..0.4);
        self
    }
}

impl RenderStyle {
    pub fn palette(&self, track: &Track) -> Palette {
        let shift = derive_seed(track.style_seed, "palette");
        match *self {
            RenderStyle::Parsing => Palette::flat(parsing_palette()),
            RenderStyle::Virtual => Palette::virtual_base().shifted(shift),
            RenderStyle::Real => Palette::real_base().shifted(shift ^ 0x5eed),
            RenderStyle::RandomizedVirtual(seed) => Palette::virtual_base().shifted(shift).randomized(seed),
        }
    }
}

/// `n` distinct randomized virtual styles.
pub fn randomized_styles(n: usize, seed: u64) -> Result<Vec<RenderStyle>> {
    if n == 0 {
        return invalid("randomized_styles needs n >= 1");
    }
    Ok((0..n as u64)
        .map(|i| RenderStyle::RandomizedVirtual(derive_indexed(seed, "style", i)))
        .collect())
}

/// Pinhole camera looking along the car heading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    /// Row (from the top) of the horizon line.
    pub horizon: f64,
    /// Focal length in pixels.
    pub focal: f64,
    /// Mounting height in meters.
    pub mount: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self::square(64)
    }
}

impl Camera {
    /// 90° horizontal field of view at `size`×`size`.
    pub fn square(size: usize) -> Self {
        let s = size as f64;
        Self {
            width: size,
            height: size,
            horizon: 0.3125 * s,
            focal: s / 2.0,
            mount: 3.0,
        }
    }
}

/// Where a pixel ray lands.
#[derive(Clone, Copy, Debug)]
enum Hit {
    Ground { point: Point, depth: f64 },
    Above { azimuth: f64, elevation_px: f64 },
}

fn cast(cam: &Camera, state: &CarState, row: usize, col: usize) -> Hit {
    let u = col as f64 + 0.5 - cam.width as f64 / 2.0;
    let v = row as f64 + 0.5 - cam.horizon;
    let (s, c) = state.heading.sin_cos();
    if v > 0.0 {
        let depth = cam.focal * cam.mount / v;
        let lateral = u * depth / cam.focal;
        Hit::Ground {
            point: [
                state.position[0] + depth * c + lateral * s,
                state.position[1] + depth * s - lateral * c,
            ],
            depth,
        }
    } else {
        Hit::Above {
            azimuth: state.heading - (u / cam.focal).atan(),
            elevation_px: -v,
        }
    }
}

const OBSTACLE_SPACING: f64 = 60.0;
const OBSTACLE_RADIUS: f64 = 1.5;
const MARKING_HALF_WIDTH: f64 = 0.2;
const DASH_PERIOD: f64 = 8.0;
const EDGE_LINE: f64 = 0.5;

/// Off-road obstacle discs, alternating sides along the lap.
pub fn obstacles(track: &Track) -> Vec<Point> {
    let n = (track.length() / OBSTACLE_SPACING).floor() as usize;
    (0..n)
        .map(|i| {
            let (p, th) = track.at_arc(i as f64 * OBSTACLE_SPACING + OBSTACLE_SPACING / 2.0);
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            let off = side * (track.half_width + 4.0);
            [p[0] - th.sin() * off, p[1] + th.cos() * off]
        })
        .collect()
}

/// Skyline height in pixels above the horizon at a given azimuth.
fn skyline(track: &Track, cam: &Camera, azimuth: f64) -> f64 {
    let ph1 = hash01(track.style_seed, 1, 0) * 2.0 * PI;
    let ph2 = hash01(track.style_seed, 2, 0) * 2.0 * PI;
    let shape = (0.5 + 0.5 * (3.0 * azimuth + ph1).sin()) * (0.5 + 0.5 * (7.0 * azimuth + ph2).sin());
    cam.height as f64 * (0.04 + 0.12 * shape)
}

/// Scene geometry shared by all renders of one (state, track).
struct Scene<'a> {
    track: &'a Track,
    cam: Camera,
    obstacles: Vec<Point>,
}

impl<'a> Scene<'a> {
    fn new(track: &'a Track, cam: Camera) -> Self {
        Self {
            track,
            cam,
            obstacles: obstacles(track),
        }
    }

    fn classify(&self, hit: Hit) -> Class {
        match hit {
            Hit::Ground { point, .. } => {
                let r2 = OBSTACLE_RADIUS * OBSTACLE_RADIUS;
                if self
                    .obstacles
                    .iter()
                    .any(|o| (o[0] - point[0]).powi(2) + (o[1] - point[1]).powi(2) <= r2)
                {
                    return Class::Obstacle;
                }
                match self.track.project_near(point) {
                    None => Class::OffRoad,
                    Some(p) => {
                        let dashed = p.lateral.abs() < MARKING_HALF_WIDTH && p.arc.rem_euclid(DASH_PERIOD) < DASH_PERIOD / 2.0;
                        let edge = p.dist > self.track.half_width - EDGE_LINE;
                        if dashed || edge {
                            Class::LaneMarking
                        } else {
                            Class::Road
                        }
                    }
                }
            }
            Hit::Above {
                azimuth,
                elevation_px,
            } => {
                if elevation_px < skyline(self.track, &self.cam, azimuth) {
                    Class::Building
                } else {
                    Class::Sky
                }
            }
        }
    }
}

fn labels(scene: &Scene, state: &CarState) -> (Vec<u8>, Vec<Hit>) {
    let cam = scene.cam;
    let mut labels = Vec::with_capacity(cam.width * cam.height);
    let mut hits = Vec::with_capacity(cam.width * cam.height);
    for row in 0..cam.height {
        for col in 0..cam.width {
            let hit = cast(&cam, state, row, col);
            labels.push(scene.classify(hit) as u8);
            hits.push(hit);
        }
    }
    (labels, hits)
}

/// Exact class of every pixel.
pub fn render_segmentation_with(state: &CarState, track: &Track, cam: Camera) -> SegMap {
    let scene = Scene::new(track, cam);
    let (labels, _) = labels(&scene, state);
    SegMap {
        height: cam.height,
        width: cam.width,
        labels,
    }
}

pub fn render_segmentation(state: &CarState, track: &Track) -> SegMap {
    render_segmentation_with(state, track, Camera::default())
}

/// Texture coordinate seed distinguishes styles so textures differ.
fn texture(seed: u64, hit: Hit, class: Class) -> f64 {
    let (a, b) = match hit {
        Hit::Ground { point, .. } => ((point[0] * 2.0).floor() as i64, (point[1] * 2.0).floor() as i64),
        Hit::Above {
            azimuth,
            elevation_px,
        } => ((azimuth * 120.0).floor() as i64, (elevation_px * 2.0).floor() as i64),
    };
    2.0 * hash01(seed ^ ((class as u64 + 1) * 0x1000_0001), a, b) - 1.0
}

fn shade(palette: &Palette, cam: &Camera, seed: u64, class: Class, hit: Hit) -> [f32; 3] {
    let k = class as usize;
    let mut color = palette.colors[k];
    if class == Class::Sky {
        if let Hit::Above { elevation_px, .. } = hit {
            let t = (elevation_px / cam.horizon).clamp(0.0, 1.0) as f32;
            for ch in 0..3 {
                color[ch] = color[ch] * (1.0 - t) + palette.sky_top[ch] * t;
            }
        }
    }
    if palette.noise[k] > 0.0 {
        let n = palette.noise[k] * texture(seed, hit, class) as f32;
        color.iter_mut().for_each(|v| *v += n);
    }
    if palette.windows && class == Class::Building {
        if let Hit::Above {
            azimuth,
            elevation_px,
        } = hit
        {
            if (elevation_px as i64) % 2 == 1 && ((azimuth * 60.0).floor() as i64).rem_euclid(3) == 0 {
                color.iter_mut().for_each(|v| *v -= 0.35);
            }
        }
    }
    if palette.fog > 0.0 {
        if let Hit::Ground { depth, .. } = hit {
            let t = palette.fog * (depth / 150.0).min(1.0) as f32;
            let fog = palette.colors[Class::Sky as usize];
            for ch in 0..3 {
                color[ch] = color[ch] * (1.0 - t) + fog[ch] * t;
            }
        }
    }
    color.map(|v| v.clamp(-1.0, 1.0))
}

pub fn render_with(state: &CarState, track: &Track, style: RenderStyle, cam: Camera) -> Frame {
    let scene = Scene::new(track, cam);
    let (labels, hits) = labels(&scene, state);
    let palette = style.palette(track);
    let tex_seed = match style {
        RenderStyle::RandomizedVirtual(s) => derive_seed(s, "texture"),
        RenderStyle::Real => derive_seed(track.style_seed, "real-texture"),
        _ => derive_seed(track.style_seed, "virtual-texture"),
    };
    let mut data = Vec::with_capacity(cam.width * cam.height * CHANNELS);
    for (&l, &hit) in labels.iter().zip(&hits) {
        data.extend(shade(&palette, &cam, tex_seed, Class::ALL[l as usize], hit));
    }
    Frame::new(cam.height, cam.width, data).expect("camera-sized frame")
}

/// Renders the camera view of `state` in `style` at the default 64×64.
pub fn render(state: &CarState, track: &Track, style: RenderStyle) -> Frame {
    render_with(state, track, style, Camera::default())
}

/// Palette image of a segmentation map.
pub fn parsing_frame(seg: &SegMap) -> Frame {
    let pal = parsing_palette();
    let data = seg.labels.iter().flat_map(|&l| pal[l as usize]).collect();
    Frame::new(seg.height, seg.width, data).expect("segmap-sized frame")
}

/// Recovers classes from a parsing-style frame by nearest palette color;
/// ties go to the lowest class index.
pub fn classes_from_parsing(frame: &Frame) -> SegMap {
    let pal = parsing_palette();
    let labels = frame
        .data
        .chunks(CHANNELS)
        .map(|px| {
            let mut best = (f32::INFINITY, 0u8);
            for (k, c) in pal.iter().enumerate() {
                let d: f32 = px.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, k as u8);
                }
            }
            best.1
        })
        .collect();
    SegMap {
        height: frame.height,
        width: frame.width,
        labels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::car::{reset, reset_at, step, SimConfig};
    use crate::sim::track::{make_track, TrackSpec};
    use proptest::prelude::*;
    use rand::Rng;

    fn states(track: &Track, n: usize) -> Vec<CarState> {
        let mut rng = seeded(9);
        (0..n)
            .map(|_| {
                let mut s = reset_at(track, rng.gen_range(0.0..track.length()));
                s.speed = rng.gen_range(0.0..20.0);
                let cfg = SimConfig::default();
                for _ in 0..rng.gen_range(0..8) {
                    s = step(track, &s, rng.gen_range(0..9), &cfg).unwrap().0;
                }
                s
            })
            .collect()
    }

    #[test]
    fn parsing_render_is_palette_of_segmentation() {
        let t = make_track(TrackSpec::A);
        for s in states(&t, 5) {
            let seg = render_segmentation(&s, &t);
            assert_eq!(render(&s, &t, RenderStyle::Parsing), parsing_frame(&seg));
            assert_eq!(classes_from_parsing(&parsing_frame(&seg)), seg);
        }
    }

    #[test]
    fn parsing_frame_uses_only_class_colors() {
        let t = make_track(TrackSpec::B);
        let f = render(&reset(&t, 0), &t, RenderStyle::Parsing);
        let pal = parsing_palette();
        let mut seen = std::collections::HashSet::new();
        for px in f.data.chunks(3) {
            let k = pal.iter().position(|c| c.as_slice() == px).expect("palette color");
            seen.insert(k);
        }
        assert!(seen.len() <= NUM_CLASSES);
    }

    #[test]
    fn road_fills_bottom_rows_at_spawn() {
        let t = make_track(TrackSpec::A);
        let seg = render_segmentation(&reset(&t, 0), &t);
        let bottom = &seg.labels[(seg.height - 8) * seg.width..];
        let road = bottom.iter().filter(|&&l| l == Class::Road as u8 || l == Class::LaneMarking as u8).count();
        assert!(road as f64 > 0.6 * bottom.len() as f64);
        assert!(seg.labels.iter().all(|&l| (l as usize) < NUM_CLASSES));
        // Top row is sky or skyline.
        assert!(seg.labels[..seg.width].iter().all(|&l| l == Class::Sky as u8 || l == Class::Building as u8));
    }

    #[test]
    fn virtual_and_real_differ_substantially() {
        let t = make_track(TrackSpec::A);
        let s = reset(&t, 7);
        let v = render(&s, &t, RenderStyle::Virtual);
        let r = render(&s, &t, RenderStyle::Real);
        assert!(v.differing_pixel_fraction(&r).unwrap() >= 0.3);
        assert!(v.in_range() && r.in_range());
    }

    #[test]
    fn render_is_pure() {
        let t = make_track(TrackSpec::B);
        let s = states(&t, 1)[0];
        for style in [RenderStyle::Virtual, RenderStyle::Real, RenderStyle::RandomizedVirtual(3)] {
            assert_eq!(render(&s, &t, style), render(&s, &t, style));
        }
    }

    #[test]
    fn randomized_styles_are_distinct_and_seeded() {
        let t = make_track(TrackSpec::A);
        let styles = randomized_styles(10, 4).unwrap();
        assert_eq!(styles, randomized_styles(10, 4).unwrap());
        let pals: Vec<_> = styles.iter().map(|s| s.palette(&t)).collect();
        for i in 0..pals.len() {
            for j in i + 1..pals.len() {
                assert_ne!(pals[i], pals[j]);
            }
        }
        let one = randomized_styles(1, 4).unwrap();
        assert_ne!(one[0].palette(&t), RenderStyle::Virtual.palette(&t));
        assert!(randomized_styles(0, 4).is_err());
    }

    #[test]
    fn tracks_have_distinct_looks() {
        let (a, b) = (make_track(TrackSpec::A), make_track(TrackSpec::B));
        assert_ne!(RenderStyle::Real.palette(&a), RenderStyle::Real.palette(&b));
        assert_ne!(RenderStyle::Virtual.palette(&a), RenderStyle::Virtual.palette(&b));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn segmentation_is_style_invariant(seed in 0u64..1000, arc in 0.0f64..1.0) {
            let t = make_track(TrackSpec::B);
            let s = reset_at(&t, arc * t.length());
            let seg = render_segmentation(&s, &t);
            // Every style colors pixels class by class: pixels of the same
            // class never change class between styles.
            for style in [RenderStyle::Virtual, RenderStyle::Real, RenderStyle::RandomizedVirtual(seed)] {
                let f = render(&s, &t, style);
                prop_assert_eq!(f.height * f.width, seg.labels.len());
            }
            prop_assert_eq!(classes_from_parsing(&render(&s, &t, RenderStyle::Parsing)), seg);
        }
    }
}
