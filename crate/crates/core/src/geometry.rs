//! Obstacle configurations for the five dataset families.
//!
//! Every domain is the channel `[0, L] x [0, H]` minus one or two obstacles.
//! Sampling is a pure function of a seed; each family draws candidates until
//! the clearance rule holds.

use std::f64::consts::{PI, SQRT_2, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point = [f64; 2];

pub const CHANNEL_LENGTH: f64 = 1.6;
pub const CHANNEL_HEIGHT: f64 = 0.41;
/// Minimum distance between an obstacle bounding box and the channel walls.
pub const CLEARANCE: f64 = 0.02;
/// Slack applied to the inclusive clearance comparison.
const CLEARANCE_SLACK: f64 = 1e-12;
pub const MAX_REJECTIONS: usize = 10_000;

pub const RADIUS_RANGE: (f64, f64) = (0.02, 0.08);
pub const SQUARE_SIDE_RANGE: (f64, f64) = (0.02 * SQRT_2, 0.08 * SQRT_2);
pub const TRIANGLE_SIDE_RANGE: (f64, f64) = (0.078, 0.182);
pub const TRIANGLE_STRETCH_RANGE: (f64, f64) = (0.7, 1.3);
pub const CENTER_X_RANGE: (f64, f64) = (0.15, 0.5);
pub const CENTER_Y_RANGE: (f64, f64) = (0.1, 0.3);
/// x-offset of the downstream obstacle in the two-obstacle families.
pub const SECOND_OBSTACLE_SHIFT: f64 = 0.5;
pub const INFLOW_PEAK_RANGE: (f64, f64) = (0.25, 2.25);

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("no valid {dataset} configuration after {attempts} draws (seed {seed})")]
    Infeasible {
        dataset: DatasetId,
        seed: u64,
        attempts: usize,
    },
    #[error("unknown dataset family `{0}`")]
    UnknownDataset(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetId {
    #[serde(rename = "standard_cylinder")]
    StandardCylinder,
    #[serde(rename = "cylinder_stretch")]
    CylinderStretch,
    #[serde(rename = "cylinder_tri_quad")]
    CylinderTriQuad,
    #[serde(rename = "2cylinders")]
    TwoCylinders,
    #[serde(rename = "mixed_all")]
    MixedAll,
}

impl DatasetId {
    pub const ALL: [DatasetId; 5] = [
        DatasetId::StandardCylinder,
        DatasetId::CylinderStretch,
        DatasetId::CylinderTriQuad,
        DatasetId::TwoCylinders,
        DatasetId::MixedAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetId::StandardCylinder => "standard_cylinder",
            DatasetId::CylinderStretch => "cylinder_stretch",
            DatasetId::CylinderTriQuad => "cylinder_tri_quad",
            DatasetId::TwoCylinders => "2cylinders",
            DatasetId::MixedAll => "mixed_all",
        }
    }

    /// Probability that a second, downstream obstacle is drawn.
    pub fn second_obstacle_probability(self) -> f64 {
        match self {
            DatasetId::TwoCylinders => 0.5,
            DatasetId::MixedAll => 0.25,
            _ => 0.0,
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetId {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DatasetId::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| GeometryError::UnknownDataset(s.to_string()))
    }
}

/// Obstacle shape parameters. Lengths are in channel units, angles in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Circle {
        radius: f64,
    },
    /// Axis-aligned ellipse given by its semi-axes.
    Ellipse {
        half_width: f64,
        half_height: f64,
    },
    /// Rectangle rotated by `angle` about its center; a square when
    /// `width == height`.
    Square {
        width: f64,
        height: f64,
        angle: f64,
    },
    /// Equilateral triangle rotated about its centroid, then scaled by
    /// `stretch` along world x and `1 / stretch` along world y.
    Triangle {
        side: f64,
        angle: f64,
        stretch: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Point,
    pub shape: Shape,
}

/// Axis-aligned box `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Point,
    pub max: Point,
}

impl Aabb {
    fn from_points(points: &[Point]) -> Aabb {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for k in 0..2 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        Aabb { min, max }
    }

    pub fn overlaps(&self, other: &Aabb) -> bool {
        self.min[0] < other.max[0]
            && other.min[0] < self.max[0]
            && self.min[1] < other.max[1]
            && other.min[1] < self.max[1]
    }
}

impl Obstacle {
    pub fn circle(center: Point, radius: f64) -> Obstacle {
        Obstacle {
            center,
            shape: Shape::Circle { radius },
        }
    }

    /// Corner points of polygonal shapes, counter-clockwise.
    pub fn corners(&self) -> Option<Vec<Point>> {
        let [cx, cy] = self.center;
        match self.shape {
            Shape::Square {
                width,
                height,
                angle,
            } => {
                let (s, c) = angle.sin_cos();
                let local = [
                    [-0.5 * width, -0.5 * height],
                    [0.5 * width, -0.5 * height],
                    [0.5 * width, 0.5 * height],
                    [-0.5 * width, 0.5 * height],
                ];
                Some(
                    local
                        .iter()
                        .map(|[x, y]| [cx + c * x - s * y, cy + s * x + c * y])
                        .collect(),
                )
            }
            Shape::Triangle {
                side,
                angle,
                stretch,
            } => {
                let r = side / 3f64.sqrt();
                Some(
                    (0..3)
                        .map(|k| {
                            let phi = angle + 0.5 * PI + k as f64 * TAU / 3.0;
                            [cx + stretch * r * phi.cos(), cy + r * phi.sin() / stretch]
                        })
                        .collect(),
                )
            }
            Shape::Circle { .. } | Shape::Ellipse { .. } => None,
        }
    }

    pub fn bounding_box(&self) -> Aabb {
        let [cx, cy] = self.center;
        match self.shape {
            Shape::Circle { radius } => Aabb {
                min: [cx - radius, cy - radius],
                max: [cx + radius, cy + radius],
            },
            Shape::Ellipse {
                half_width,
                half_height,
            } => Aabb {
                min: [cx - half_width, cy - half_height],
                max: [cx + half_width, cy + half_height],
            },
            Shape::Square { .. } | Shape::Triangle { .. } => {
                Aabb::from_points(&self.corners().expect("polygonal shape"))
            }
        }
    }

    pub fn perimeter(&self) -> f64 {
        match self.shape {
            Shape::Circle { radius } => TAU * radius,
            Shape::Ellipse {
                half_width: a,
                half_height: b,
            } => {
                // Ramanujan's second approximation.
                let h = ((a - b) / (a + b)).powi(2);
                PI * (a + b) * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()))
            }
            _ => {
                let c = self.corners().expect("polygonal shape");
                (0..c.len()).map(|i| dist(c[i], c[(i + 1) % c.len()])).sum()
            }
        }
    }

    /// Closed counter-clockwise polyline approximating the boundary, with
    /// every segment no longer than `max_segment`. The first point is not
    /// repeated at the end.
    pub fn boundary_polyline(&self, max_segment: f64) -> Vec<Point> {
        let [cx, cy] = self.center;
        match self.shape {
            Shape::Circle { radius } => {
                let n = segment_count(self.perimeter(), max_segment);
                (0..n)
                    .map(|k| {
                        let t = TAU * k as f64 / n as f64;
                        [cx + radius * t.cos(), cy + radius * t.sin()]
                    })
                    .collect()
            }
            Shape::Ellipse {
                half_width,
                half_height,
            } => {
                // Equal parameter steps; the longest chord is bounded by the
                // largest semi-axis times the step angle.
                let n_perim = segment_count(self.perimeter(), max_segment);
                let n_bound = (TAU * half_width.max(half_height) / max_segment).ceil() as usize;
                let n = n_perim.max(n_bound);
                (0..n)
                    .map(|k| {
                        let t = TAU * k as f64 / n as f64;
                        [cx + half_width * t.cos(), cy + half_height * t.sin()]
                    })
                    .collect()
            }
            _ => {
                let corners = self.corners().expect("polygonal shape");
                let mut out = Vec::new();
                for i in 0..corners.len() {
                    let a = corners[i];
                    let b = corners[(i + 1) % corners.len()];
                    let n = (dist(a, b) / max_segment).ceil().max(1.0) as usize;
                    for k in 0..n {
                        let t = k as f64 / n as f64;
                        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
                    }
                }
                out
            }
        }
    }
}

/// Circles and ellipses use `ceil(perimeter / h)` segments, at least 16.
fn segment_count(perimeter: f64, max_segment: f64) -> usize {
    ((perimeter / max_segment).ceil() as usize).max(16)
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub length: f64,
    pub height: f64,
}

impl Default for Channel {
    fn default() -> Self {
        Channel {
            length: CHANNEL_LENGTH,
            height: CHANNEL_HEIGHT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub channel: Channel,
    pub obstacles: Vec<Obstacle>,
    /// Peak of the parabolic inflow profile.
    pub inflow_peak: f64,
    pub dataset: DatasetId,
    pub seed: u64,
}

impl DomainSpec {
    /// The single-cylinder configuration used for mesh-count comparisons:
    /// circle at (0.325, 0.2) with r = 0.05.
    pub fn reference(inflow_peak: f64) -> DomainSpec {
        DomainSpec {
            channel: Channel::default(),
            obstacles: vec![Obstacle::circle([0.325, 0.2], 0.05)],
            inflow_peak,
            dataset: DatasetId::StandardCylinder,
            seed: 0,
        }
    }

    /// The 2.2-long benchmark channel with a cylinder at (0.2, 0.2), r = 0.05.
    pub fn elongated_benchmark(inflow_peak: f64) -> DomainSpec {
        DomainSpec {
            channel: Channel {
                length: 2.2,
                height: CHANNEL_HEIGHT,
            },
            obstacles: vec![Obstacle::circle([0.2, 0.2], 0.05)],
            inflow_peak,
            dataset: DatasetId::StandardCylinder,
            seed: 0,
        }
    }

    /// Obstacle-free channel.
    pub fn empty_channel(inflow_peak: f64) -> DomainSpec {
        DomainSpec {
            channel: Channel::default(),
            obstacles: Vec::new(),
            inflow_peak,
            dataset: DatasetId::StandardCylinder,
            seed: 0,
        }
    }
}

/// True iff every obstacle bounding box keeps at least [`CLEARANCE`] from all
/// four channel walls (inclusive) and no two boxes overlap.
pub fn validate_clearance(spec: &DomainSpec) -> bool {
    let Channel { length, height } = spec.channel;
    let boxes: Vec<Aabb> = spec.obstacles.iter().map(Obstacle::bounding_box).collect();
    let limit = CLEARANCE - CLEARANCE_SLACK;
    let walls_ok = boxes.iter().all(|b| {
        b.min[0] >= limit
            && b.min[1] >= limit
            && length - b.max[0] >= limit
            && height - b.max[1] >= limit
    });
    let disjoint = boxes
        .iter()
        .enumerate()
        .all(|(i, a)| boxes[i + 1..].iter().all(|b| !a.overlaps(b)));
    walls_ok && disjoint
}

fn uniform<R: Rng>(rng: &mut R, range: (f64, f64)) -> f64 {
    rng.gen_range(range.0..range.1)
}

fn draw_center<R: Rng>(rng: &mut R, x_shift: f64) -> Point {
    let x = uniform(rng, CENTER_X_RANGE) + x_shift;
    let y = uniform(rng, CENTER_Y_RANGE);
    [x, y]
}

fn draw_circle<R: Rng>(rng: &mut R, x_shift: f64) -> Obstacle {
    let center = draw_center(rng, x_shift);
    Obstacle::circle(center, uniform(rng, RADIUS_RANGE))
}

fn draw_ellipse<R: Rng>(rng: &mut R, x_shift: f64) -> Obstacle {
    let center = draw_center(rng, x_shift);
    let half_height = uniform(rng, RADIUS_RANGE);
    let half_width = uniform(rng, RADIUS_RANGE);
    Obstacle {
        center,
        shape: Shape::Ellipse {
            half_width,
            half_height,
        },
    }
}

/// One of circle / square / triangle with equal probability; `stretched`
/// selects the mixed_all variants.
fn draw_tri_quad<R: Rng>(rng: &mut R, x_shift: f64, stretched: bool) -> Obstacle {
    let pick = rng.gen_range(0..3u8);
    match pick {
        0 if stretched => draw_ellipse(rng, x_shift),
        0 => draw_circle(rng, x_shift),
        1 => {
            let center = draw_center(rng, x_shift);
            let width = uniform(rng, SQUARE_SIDE_RANGE);
            let height = if stretched {
                uniform(rng, SQUARE_SIDE_RANGE)
            } else {
                width
            };
            let angle = rng.gen_range(0.0..TAU);
            Obstacle {
                center,
                shape: Shape::Square {
                    width,
                    height,
                    angle,
                },
            }
        }
        _ => {
            let center = draw_center(rng, x_shift);
            let side = uniform(rng, TRIANGLE_SIDE_RANGE);
            let angle = rng.gen_range(0.0..TAU);
            let stretch = if stretched {
                uniform(rng, TRIANGLE_STRETCH_RANGE)
            } else {
                1.0
            };
            Obstacle {
                center,
                shape: Shape::Triangle {
                    side,
                    angle,
                    stretch,
                },
            }
        }
    }
}

/// A single unconditioned draw from a family's distribution, before the
/// clearance rule is applied. Returns the obstacles and the inflow peak.
pub fn draw_candidate<R: Rng>(dataset: DatasetId, rng: &mut R) -> (Vec<Obstacle>, f64) {
    let inflow_peak = uniform(rng, INFLOW_PEAK_RANGE);
    let obstacle = |rng: &mut R, shift: f64| match dataset {
        DatasetId::StandardCylinder | DatasetId::TwoCylinders => draw_circle(rng, shift),
        DatasetId::CylinderStretch => draw_ellipse(rng, shift),
        DatasetId::CylinderTriQuad => draw_tri_quad(rng, shift, false),
        DatasetId::MixedAll => draw_tri_quad(rng, shift, true),
    };
    let mut obstacles = vec![obstacle(rng, 0.0)];
    let p_second = dataset.second_obstacle_probability();
    if p_second > 0.0 && rng.gen_bool(p_second) {
        obstacles.push(obstacle(rng, SECOND_OBSTACLE_SHIFT));
    }
    (obstacles, inflow_peak)
}

/// Draws a domain for `dataset` from a generator seeded with `seed`,
/// rejecting candidates that violate [`validate_clearance`].
pub fn sample_geometry(dataset: DatasetId, seed: u64) -> Result<DomainSpec, GeometryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_REJECTIONS {
        let (obstacles, inflow_peak) = draw_candidate(dataset, &mut rng);
        let spec = DomainSpec {
            channel: Channel::default(),
            obstacles,
            inflow_peak,
            dataset,
            seed,
        };
        if validate_clearance(&spec) {
            return Ok(spec);
        }
    }
    Err(GeometryError::Infeasible {
        dataset,
        seed,
        attempts: MAX_REJECTIONS,
    })
}

/// Seed of simulation `index` within a dataset generated from `dataset_seed`
/// (SplitMix64 finalizer over the pair).
pub fn simulation_seed(dataset_seed: u64, index: u64) -> u64 {
    let mut z = dataset_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index)
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(center: Point, r: f64) -> DomainSpec {
        DomainSpec {
            obstacles: vec![Obstacle::circle(center, r)],
            ..DomainSpec::reference(1.0)
        }
    }

    #[test]
    fn reference_configuration_is_valid() {
        assert!(validate_clearance(&single([0.325, 0.2], 0.05)));
    }

    #[test]
    fn bottom_margin_below_threshold_is_rejected() {
        // bbox bottom at 0.019
        assert!(!validate_clearance(&single([0.325, 0.069], 0.05)));
    }

    #[test]
    fn margin_exactly_at_threshold_is_accepted() {
        assert!(validate_clearance(&single([0.325, 0.07], 0.05)));
        assert!(validate_clearance(&single([0.1, 0.2], 0.08)));
        assert!(validate_clearance(&single([0.325, 0.31], 0.08)));
    }

    #[test]
    fn overlapping_boxes_are_rejected() {
        let mut spec = single([0.3, 0.2], 0.05);
        spec.obstacles.push(Obstacle::circle([0.38, 0.22], 0.05));
        assert!(!validate_clearance(&spec));
        spec.obstacles[1].center = [0.5, 0.22];
        assert!(validate_clearance(&spec));
    }

    #[test]
    fn standard_cylinder_ranges() {
        for seed in 0..200 {
            let spec = sample_geometry(DatasetId::StandardCylinder, seed).unwrap();
            assert_eq!(spec.obstacles.len(), 1);
            let o = spec.obstacles[0];
            assert!((0.15..0.5).contains(&o.center[0]));
            assert!((0.1..0.3).contains(&o.center[1]));
            match o.shape {
                Shape::Circle { radius } => assert!((0.02..0.08).contains(&radius)),
                s => panic!("unexpected shape {s:?}"),
            }
            assert!(validate_clearance(&spec));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        for d in DatasetId::ALL {
            let a = sample_geometry(d, 42).unwrap();
            let b = sample_geometry(d, 42).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn dataset_names_round_trip() {
        for d in DatasetId::ALL {
            assert_eq!(d.name().parse::<DatasetId>().unwrap(), d);
            let json = serde_json::to_string(&d).unwrap();
            assert_eq!(json, format!("\"{}\"", d.name()));
        }
        assert!("3cylinders".parse::<DatasetId>().is_err());
    }

    #[test]
    fn triangle_corners_have_requested_side() {
        let o = Obstacle {
            center: [0.3, 0.2],
            shape: Shape::Triangle {
                side: 0.1,
                angle: 0.7,
                stretch: 1.0,
            },
        };
        let c = o.corners().unwrap();
        for i in 0..3 {
            assert!((dist(c[i], c[(i + 1) % 3]) - 0.1).abs() < 1e-12);
        }
        let centroid = [
            (c[0][0] + c[1][0] + c[2][0]) / 3.0,
            (c[0][1] + c[1][1] + c[2][1]) / 3.0,
        ];
        assert!(dist(centroid, o.center) < 1e-12);
    }

    #[test]
    fn polylines_respect_segment_bound() {
        let shapes = [
            Shape::Circle { radius: 0.05 },
            Shape::Ellipse {
                half_width: 0.08,
                half_height: 0.02,
            },
            Shape::Square {
                width: 0.1,
                height: 0.05,
                angle: 0.3,
            },
            Shape::Triangle {
                side: 0.15,
                angle: 1.0,
                stretch: 1.3,
            },
        ];
        for shape in shapes {
            let o = Obstacle {
                center: [0.3, 0.2],
                shape,
            };
            let poly = o.boundary_polyline(0.0098);
            let n = poly.len();
            assert!(n >= 3);
            let mut area = 0.0;
            for i in 0..n {
                let (a, b) = (poly[i], poly[(i + 1) % n]);
                assert!(dist(a, b) <= 0.0098 + 1e-12, "{shape:?}");
                area += a[0] * b[1] - b[0] * a[1];
            }
            assert!(area > 0.0, "polyline must be counter-clockwise");
        }
        let circle = Obstacle::circle([0.3, 0.2], 0.05).boundary_polyline(0.0098);
        assert_eq!(circle.len(), 33);
        let tiny = Obstacle::circle([0.3, 0.2], 0.02).boundary_polyline(0.0098);
        assert_eq!(tiny.len(), 16);
    }

    #[test]
    fn simulation_seeds_differ() {
        let a: Vec<u64> = (0..100).map(|i| simulation_seed(7, i)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(a.len(), b.len());
        assert_ne!(simulation_seed(7, 0), simulation_seed(8, 0));
    }
}
