//! Graded triangle meshes of the channel minus its obstacles.
//!
//! Boundaries are discretized first (walls by the size field, obstacles by
//! polylines), triangulated with an incremental Delaunay kernel, and then
//! refined by inserting circumcenters of skinny or oversized triangles.
//! Circumcenters that would encroach a boundary segment split that segment
//! at its midpoint instead.

use std::collections::{HashMap, HashSet, VecDeque};

use robust::Coord;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{dist, Channel, DomainSpec, Point};

const NONE: usize = usize::MAX;
/// Coordinate tolerance for boundary classification.
pub const BOUNDARY_TOL: f64 = 1e-9;
/// Radius-to-shortest-edge bound; `sqrt(2)` guarantees angles above 20.7 degrees.
const SKINNY_RATIO: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("meshing failed: {reason} (domain: {spec})")]
    Failed { reason: String, spec: String },
    #[error("vertex {index} at ({x}, {y}) is {detail}")]
    Unclassifiable {
        index: usize,
        x: f64,
        y: f64,
        detail: &'static str,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    Fluid,
    Wall,
    Inflow,
    Outflow,
}

impl NodeType {
    /// Position in the one-hot encoding `(fluid, wall, inflow, outflow)`.
    pub fn index(self) -> usize {
        match self {
            NodeType::Fluid => 0,
            NodeType::Wall => 1,
            NodeType::Inflow => 2,
            NodeType::Outflow => 3,
        }
    }
}

/// Sizing of the mesh. `far_size` is the target edge length away from
/// obstacles, `obstacle_size` the edge length on obstacle boundaries, and the
/// size grows linearly with distance from the nearest obstacle at slope
/// `grading` in between.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshParams {
    pub far_size: f64,
    pub obstacle_size: f64,
    pub grading: f64,
    /// Triangles whose circumradius exceeds `radius_factor * size` are split.
    pub radius_factor: f64,
}

impl Default for MeshParams {
    fn default() -> Self {
        MeshParams {
            far_size: 0.0225,
            obstacle_size: 0.0098,
            grading: 1.0,
            radius_factor: 0.68,
        }
    }
}

impl MeshParams {
    /// Uniformly coarsened parameters for desk-scale experiments.
    pub fn coarsened(factor: f64) -> MeshParams {
        let d = MeshParams::default();
        MeshParams {
            far_size: d.far_size * factor,
            obstacle_size: d.obstacle_size * factor,
            ..d
        }
    }

    pub fn size_at(&self, distance_to_obstacle: f64) -> f64 {
        self.far_size
            .min(self.obstacle_size + self.grading * distance_to_obstacle)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub channel: Channel,
    pub vertices: Vec<Point>,
    /// Counter-clockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub node_types: Vec<NodeType>,
    /// Closed counter-clockwise vertex loops, one per obstacle.
    pub obstacle_boundaries: Vec<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshStats {
    pub vertices: usize,
    pub cells: usize,
    /// Smallest interior angle, in degrees.
    pub min_angle: f64,
    pub min_edge: f64,
    pub max_edge: f64,
}

impl Mesh {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut edges: Vec<[usize; 2]> = self
            .triangles
            .iter()
            .flat_map(|t| {
                (0..3).map(move |i| {
                    let (a, b) = (t[i], t[(i + 1) % 3]);
                    [a.min(b), a.max(b)]
                })
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// Plain-text dump: vertex count, `x y type` lines, triangle count,
    /// `a b c` lines.
    pub fn to_text(&self) -> String {
        let mut out = format!("vertices {}\n", self.vertices.len());
        for (p, t) in self.vertices.iter().zip(&self.node_types) {
            out.push_str(&format!("{:.17e} {:.17e} {}\n", p[0], p[1], t.index()));
        }
        out.push_str(&format!("triangles {}\n", self.triangles.len()));
        for t in &self.triangles {
            out.push_str(&format!("{} {} {}\n", t[0], t[1], t[2]));
        }
        out
    }
}

fn angles(a: Point, b: Point, c: Point) -> [f64; 3] {
    let (la, lb, lc) = (dist(b, c), dist(c, a), dist(a, b));
    let angle = |opp: f64, s1: f64, s2: f64| {
        ((s1 * s1 + s2 * s2 - opp * opp) / (2.0 * s1 * s2))
            .clamp(-1.0, 1.0)
            .acos()
    };
    [angle(la, lb, lc), angle(lb, lc, la), angle(lc, la, lb)]
}

pub fn mesh_stats(mesh: &Mesh) -> MeshStats {
    let mut min_angle = f64::INFINITY;
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| mesh.vertices[i]);
        for ang in angles(a, b, c) {
            min_angle = min_angle.min(ang.to_degrees());
        }
    }
    let (mut min_edge, mut max_edge) = (f64::INFINITY, 0.0f64);
    for [a, b] in mesh.edges() {
        let l = dist(mesh.vertices[a], mesh.vertices[b]);
        min_edge = min_edge.min(l);
        max_edge = max_edge.max(l);
    }
    MeshStats {
        vertices: mesh.vertices.len(),
        cells: mesh.triangles.len(),
        min_angle,
        min_edge,
        max_edge,
    }
}

fn coord(p: Point) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    robust::orient2d(coord(a), coord(b), coord(c))
}

fn circumcenter(a: Point, b: Point, c: Point) -> Point {
    let (bx, by) = (b[0] - a[0], b[1] - a[1]);
    let (cx, cy) = (c[0] - a[0], c[1] - a[1]);
    let d = 2.0 * (bx * cy - by * cx);
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    [
        a[0] + (cy * b2 - by * c2) / d,
        a[1] + (bx * c2 - cx * b2) / d,
    ]
}

fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist(p, [a[0] + t * dx, a[1] + t * dy])
}

fn segments_cross(p: Point, q: Point, a: Point, b: Point) -> bool {
    let d1 = orient(p, q, a);
    let d2 = orient(p, q, b);
    let d3 = orient(a, b, p);
    let d4 = orient(a, b, q);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

#[derive(Clone, Copy, Debug)]
struct Tri {
    v: [usize; 3],
    /// `nbr[i]` shares the edge opposite `v[i]`.
    nbr: [usize; 3],
    alive: bool,
}

#[derive(Clone, Copy, Debug)]
struct Segment {
    a: usize,
    b: usize,
    /// `None` for channel walls, `Some(k)` for obstacle `k`.
    obstacle: Option<usize>,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

struct Triangulation {
    pts: Vec<Point>,
    tris: Vec<Tri>,
    constrained: HashSet<(usize, usize)>,
    last: usize,
}

impl Triangulation {
    /// Starts from a large triangle enclosing `[lo, hi]`; its three vertices
    /// occupy indices 0..3.
    fn new(lo: Point, hi: Point) -> Triangulation {
        let c = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        let r = 50.0 * (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let pts = vec![
            [c[0] - 2.0 * r, c[1] - r],
            [c[0] + 2.0 * r, c[1] - r],
            [c[0], c[1] + 2.0 * r],
        ];
        Triangulation {
            pts,
            tris: vec![Tri {
                v: [0, 1, 2],
                nbr: [NONE; 3],
                alive: true,
            }],
            constrained: HashSet::new(),
            last: 0,
        }
    }

    fn p(&self, i: usize) -> Point {
        self.pts[i]
    }

    fn incircle(&self, t: usize, p: Point) -> f64 {
        let [a, b, c] = self.tris[t].v.map(|i| coord(self.pts[i]));
        robust::incircle(a, b, c, coord(p))
    }

    fn locate(&mut self, p: Point) -> usize {
        let mut t = self.last;
        if !self.tris[t].alive {
            t = self.tris.iter().rposition(|t| t.alive).expect("live triangle");
        }
        let max_steps = 4 * self.tris.len() + 16;
        'walk: for _ in 0..max_steps {
            let tri = self.tris[t];
            for i in 0..3 {
                let a = self.p(tri.v[(i + 1) % 3]);
                let b = self.p(tri.v[(i + 2) % 3]);
                if orient(a, b, p) < 0.0 && tri.nbr[i] != NONE {
                    t = tri.nbr[i];
                    continue 'walk;
                }
            }
            self.last = t;
            return t;
        }
        // Walks over constrained triangulations can cycle; fall back to a scan.
        let t = (0..self.tris.len())
            .find(|&t| {
                let tri = self.tris[t];
                tri.alive
                    && (0..3).all(|i| {
                        orient(self.p(tri.v[(i + 1) % 3]), self.p(tri.v[(i + 2) % 3]), p) >= 0.0
                    })
            })
            .expect("point inside the enclosing triangle");
        self.last = t;
        t
    }

    /// Inserts `p`, returning its index and the triangles created. The edge
    /// `allow` may be crossed even if constrained (used for segment splits).
    fn insert(&mut self, p: Point, allow: Option<(usize, usize)>) -> (usize, Vec<usize>) {
        let start = self.locate(p);
        for &v in &self.tris[start].v {
            if dist(self.pts[v], p) < 1e-14 {
                return (v, Vec::new());
            }
        }
        let mut in_cavity: HashSet<usize> = HashSet::new();
        in_cavity.insert(start);
        let mut cavity = vec![start];
        let mut stack = vec![start];
        let crossable = |tr: &Triangulation, a: usize, b: usize| {
            let k = key(a, b);
            !tr.constrained.contains(&k) || allow == Some(k)
        };
        while let Some(c) = stack.pop() {
            let tri = self.tris[c];
            for i in 0..3 {
                let n = tri.nbr[i];
                if n == NONE || in_cavity.contains(&n) {
                    continue;
                }
                let (a, b) = (tri.v[(i + 1) % 3], tri.v[(i + 2) % 3]);
                if crossable(self, a, b) && self.incircle(n, p) > 0.0 {
                    in_cavity.insert(n);
                    cavity.push(n);
                    stack.push(n);
                }
            }
        }
        // Grow the cavity until it is star-shaped with respect to `p`.
        let boundary = loop {
            let mut boundary = Vec::new();
            let mut grow = None;
            for &c in &cavity {
                let tri = self.tris[c];
                for i in 0..3 {
                    let n = tri.nbr[i];
                    if n != NONE && in_cavity.contains(&n) {
                        continue;
                    }
                    let (a, b) = (tri.v[(i + 1) % 3], tri.v[(i + 2) % 3]);
                    if orient(self.p(a), self.p(b), p) <= 0.0 {
                        if n != NONE && crossable(self, a, b) {
                            grow = Some(n);
                            break;
                        }
                        panic!("cannot insert point on constrained edge ({a}, {b})");
                    }
                    boundary.push((a, b, n));
                }
                if grow.is_some() {
                    break;
                }
            }
            match grow {
                Some(n) => {
                    in_cavity.insert(n);
                    cavity.push(n);
                }
                None => break boundary,
            }
        };
        let vi = self.pts.len();
        self.pts.push(p);
        for &c in &cavity {
            self.tris[c].alive = false;
        }
        let first = self.tris.len();
        let mut by_start = HashMap::with_capacity(boundary.len());
        let mut by_end = HashMap::with_capacity(boundary.len());
        for (k, &(a, b, _)) in boundary.iter().enumerate() {
            by_start.insert(a, first + k);
            by_end.insert(b, first + k);
        }
        let mut created = Vec::with_capacity(boundary.len());
        for &(a, b, outside) in &boundary {
            let t = self.tris.len();
            // Triangle (a, b, p): edge opposite a is (b, p), shared with the
            // fan triangle starting at b; edge opposite b is (p, a).
            let nbr = [by_start[&b], by_end[&a], outside];
            self.tris.push(Tri {
                v: [a, b, vi],
                nbr,
                alive: true,
            });
            if outside != NONE {
                let o = &mut self.tris[outside];
                for j in 0..3 {
                    let (x, y) = (o.v[(j + 1) % 3], o.v[(j + 2) % 3]);
                    if x == b && y == a {
                        o.nbr[j] = t;
                    }
                }
            }
            created.push(t);
        }
        self.last = created[0];
        (vi, created)
    }

    fn edge_set(&self) -> HashSet<(usize, usize)> {
        let mut set = HashSet::new();
        for t in self.tris.iter().filter(|t| t.alive) {
            for i in 0..3 {
                set.insert(key(t.v[i], t.v[(i + 1) % 3]));
            }
        }
        set
    }
}

struct Refiner<'a> {
    tri: Triangulation,
    segments: Vec<Segment>,
    polygons: Vec<Vec<Point>>,
    params: &'a MeshParams,
    channel: Channel,
    max_vertices: usize,
}

impl Refiner<'_> {
    fn distance_to_obstacles(&self, p: Point) -> f64 {
        let mut d = f64::INFINITY;
        for poly in &self.polygons {
            let n = poly.len();
            for i in 0..n {
                d = d.min(segment_distance(p, poly[i], poly[(i + 1) % n]));
            }
        }
        d
    }

    fn size(&self, p: Point) -> f64 {
        if self.polygons.is_empty() {
            self.params.far_size
        } else {
            self.params.size_at(self.distance_to_obstacles(p))
        }
    }

    fn in_fluid(&self, p: Point) -> bool {
        let Channel { length, height } = self.channel;
        p[0] > 0.0
            && p[0] < length
            && p[1] > 0.0
            && p[1] < height
            && self.polygons.iter().all(|poly| !point_in_polygon(p, poly))
    }

    fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.tri.tris[t].v.map(|i| self.tri.pts[i]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    fn is_fluid_triangle(&self, t: usize) -> bool {
        let tri = &self.tri.tris[t];
        tri.alive && tri.v.iter().all(|&v| v >= 3) && self.in_fluid(self.centroid(t))
    }

    fn needs_split(&self, t: usize) -> Option<Point> {
        let [a, b, c] = self.tri.tris[t].v.map(|i| self.tri.pts[i]);
        let cc = circumcenter(a, b, c);
        let r = dist(cc, a);
        let shortest = dist(a, b).min(dist(b, c)).min(dist(c, a));
        let skinny = r / shortest > SKINNY_RATIO;
        let large = r > self.params.radius_factor * self.size(self.centroid(t));
        (skinny || large).then_some(cc)
    }

    fn encroached_by(&self, p: Point) -> Vec<usize> {
        self.segments
            .iter()
            .enumerate()
            .filter(|(_, s)| {
                let (a, b) = (self.tri.pts[s.a], self.tri.pts[s.b]);
                let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
                dist(mid, p) < 0.5 * dist(a, b)
            })
            .map(|(i, _)| i)
            .collect()
    }

    fn crossed_by(&self, from: Point, to: Point) -> Vec<usize> {
        self.segments
            .iter()
            .enumerate()
            .filter(|(_, s)| segments_cross(from, to, self.tri.pts[s.a], self.tri.pts[s.b]))
            .map(|(i, _)| i)
            .collect()
    }

    /// Splits segment `s` at its midpoint; returns the new triangles.
    fn split_segment(&mut self, s: usize) -> Vec<usize> {
        let Segment { a, b, obstacle } = self.segments[s];
        let (pa, pb) = (self.tri.pts[a], self.tri.pts[b]);
        let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
        let k = key(a, b);
        let (m, created) = self.tri.insert(mid, Some(k));
        self.tri.constrained.remove(&k);
        self.tri.constrained.insert(key(a, m));
        self.tri.constrained.insert(key(m, b));
        self.segments[s] = Segment { a, b: m, obstacle };
        self.segments.push(Segment { a: m, b, obstacle });
        created
    }

    /// Inserts segment midpoints until every segment is an edge of the
    /// triangulation, then marks them constrained.
    fn recover_segments(&mut self) -> Result<(), String> {
        for _ in 0..64 {
            let edges = self.tri.edge_set();
            let missing: Vec<usize> = (0..self.segments.len())
                .filter(|&s| !edges.contains(&key(self.segments[s].a, self.segments[s].b)))
                .collect();
            if missing.is_empty() {
                self.tri.constrained = self
                    .segments
                    .iter()
                    .map(|s| key(s.a, s.b))
                    .collect();
                return Ok(());
            }
            for s in missing {
                self.split_segment(s);
            }
        }
        Err("boundary segments could not be recovered".into())
    }

    fn refine(&mut self) -> Result<(), String> {
        let mut queue: VecDeque<usize> = (0..self.tri.tris.len()).collect();
        let mut stalls = 0usize;
        while let Some(t) = queue.pop_front() {
            if !self.is_fluid_triangle(t) {
                continue;
            }
            let Some(cc) = self.needs_split(t) else {
                continue;
            };
            if self.tri.pts.len() > self.max_vertices {
                return Err(format!("vertex budget {} exhausted", self.max_vertices));
            }
            let mut hit = self.encroached_by(cc);
            if hit.is_empty() && !self.in_fluid(cc) {
                hit = self.crossed_by(self.centroid(t), cc);
                if hit.is_empty() {
                    return Err(format!("circumcenter {cc:?} escaped the domain"));
                }
            }
            if hit.is_empty() {
                let (v, created) = self.tri.insert(cc, None);
                if created.is_empty() {
                    stalls += 1;
                    if stalls > 1000 {
                        return Err(format!("repeated insertion at vertex {v}"));
                    }
                }
                queue.extend(created);
            } else {
                hit.sort_unstable();
                for s in hit {
                    queue.extend(self.split_segment(s));
                }
                queue.push_back(t);
            }
        }
        Ok(())
    }
}

/// Points along `a -> b` spaced according to `size`, endpoints included.
fn graded_points(a: Point, b: Point, size: impl Fn(Point) -> f64) -> Vec<Point> {
    const SAMPLES: usize = 4000;
    let at = |t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    let len = dist(a, b);
    let mut cumulative = Vec::with_capacity(SAMPLES + 1);
    cumulative.push(0.0);
    for k in 0..SAMPLES {
        let t = (k as f64 + 0.5) / SAMPLES as f64;
        let prev = *cumulative.last().unwrap();
        cumulative.push(prev + len / SAMPLES as f64 / size(at(t)));
    }
    let total = *cumulative.last().unwrap();
    let n = (total.ceil() as usize).max(1);
    let mut out = vec![a];
    let mut k = 0;
    for i in 1..n {
        let target = total * i as f64 / n as f64;
        while cumulative[k + 1] < target {
            k += 1;
        }
        let frac = (target - cumulative[k]) / (cumulative[k + 1] - cumulative[k]);
        out.push(at((k as f64 + frac) / SAMPLES as f64));
    }
    out.push(b);
    out
}

/// Builds the conforming, refined triangulation of `spec`'s domain.
pub fn triangulate(spec: &DomainSpec, params: &MeshParams) -> Result<Mesh, MeshError> {
    let fail = |reason: String| MeshError::Failed {
        reason,
        spec: serde_json::to_string(spec).unwrap_or_default(),
    };
    let Channel { length, height } = spec.channel;
    let polylines: Vec<Vec<Point>> = spec
        .obstacles
        .iter()
        .map(|o| o.boundary_polyline(params.obstacle_size))
        .collect();

    let mut refiner = Refiner {
        tri: Triangulation::new([0.0, 0.0], [length, height]),
        segments: Vec::new(),
        polygons: polylines.clone(),
        params,
        channel: spec.channel,
        max_vertices: 2_000_000,
    };

    // Channel walls, counter-clockwise from the origin.
    let corners = [[0.0, 0.0], [length, 0.0], [length, height], [0.0, height]];
    let mut wall_loop: Vec<Point> = Vec::new();
    for i in 0..4 {
        let pts = graded_points(corners[i], corners[(i + 1) % 4], |p| refiner.size(p));
        wall_loop.extend_from_slice(&pts[..pts.len() - 1]);
    }
    let mut loops: Vec<(Vec<Point>, Option<usize>)> = vec![(wall_loop, None)];
    loops.extend(polylines.iter().cloned().enumerate().map(|(k, p)| (p, Some(k))));

    for (pts, obstacle) in loops {
        let ids: Vec<usize> = pts.iter().map(|&p| refiner.tri.insert(p, None).0).collect();
        for i in 0..ids.len() {
            refiner.segments.push(Segment {
                a: ids[i],
                b: ids[(i + 1) % ids.len()],
                obstacle,
            });
        }
    }
    refiner.recover_segments().map_err(&fail)?;
    refiner.refine().map_err(&fail)?;

    // Keep the fluid triangles and renumber their vertices.
    let fluid: Vec<usize> = (0..refiner.tri.tris.len())
        .filter(|&t| refiner.is_fluid_triangle(t))
        .collect();
    let mut remap = vec![NONE; refiner.tri.pts.len()];
    let mut vertices = Vec::new();
    let mut triangles = Vec::with_capacity(fluid.len());
    for &t in &fluid {
        let tri = refiner.tri.tris[t].v.map(|v| {
            if remap[v] == NONE {
                remap[v] = vertices.len();
                vertices.push(refiner.tri.pts[v]);
            }
            remap[v]
        });
        triangles.push(tri);
    }

    let mut obstacle_boundaries = Vec::with_capacity(spec.obstacles.len());
    for k in 0..spec.obstacles.len() {
        let next: HashMap<usize, usize> = refiner
            .segments
            .iter()
            .filter(|s| s.obstacle == Some(k))
            .map(|s| (s.a, s.b))
            .collect();
        let start = *next.keys().min().ok_or_else(|| fail("empty obstacle".into()))?;
        let mut cycle = vec![remap[start]];
        let mut cur = next[&start];
        while cur != start {
            if cycle.len() > next.len() {
                return Err(fail("obstacle boundary is not a closed loop".into()));
            }
            cycle.push(remap[cur]);
            cur = next[&cur];
        }
        if cycle.iter().any(|&v| v == NONE) {
            return Err(fail("obstacle boundary vertex not in mesh".into()));
        }
        obstacle_boundaries.push(cycle);
    }

    let node_types = classify_nodes(&vertices, &triangles, spec.channel, &obstacle_boundaries)?;
    let mesh = Mesh {
        channel: spec.channel,
        vertices,
        triangles,
        node_types,
        obstacle_boundaries,
    };
    if let Some(t) = (0..mesh.triangles.len()).find(|&t| mesh.signed_area(t) <= 1e-10) {
        return Err(fail(format!("degenerate triangle {t}")));
    }
    Ok(mesh)
}

/// Vertices lying on an edge that belongs to exactly one triangle.
pub fn topological_boundary(num_vertices: usize, triangles: &[[usize; 3]]) -> Vec<bool> {
    let mut count: HashMap<(usize, usize), u32> = HashMap::new();
    for t in triangles {
        for i in 0..3 {
            *count.entry(key(t[i], t[(i + 1) % 3])).or_default() += 1;
        }
    }
    let mut on_boundary = vec![false; num_vertices];
    for ((a, b), c) in count {
        if c == 1 {
            on_boundary[a] = true;
            on_boundary[b] = true;
        }
    }
    on_boundary
}

/// Assigns node types: `x = 0` is inflow, `x = L` outflow (corners included),
/// the top and bottom walls and obstacle loops are walls, everything else is
/// fluid. Fails if the geometric type disagrees with the mesh topology.
pub fn classify_nodes(
    vertices: &[Point],
    triangles: &[[usize; 3]],
    channel: Channel,
    obstacle_boundaries: &[Vec<usize>],
) -> Result<Vec<NodeType>, MeshError> {
    let mut on_obstacle = vec![false; vertices.len()];
    for &v in obstacle_boundaries.iter().flatten() {
        on_obstacle[v] = true;
    }
    let topo = topological_boundary(vertices.len(), triangles);
    let mut types = Vec::with_capacity(vertices.len());
    for (index, &[x, y]) in vertices.iter().enumerate() {
        let ty = if x.abs() <= BOUNDARY_TOL {
            NodeType::Inflow
        } else if (x - channel.length).abs() <= BOUNDARY_TOL {
            NodeType::Outflow
        } else if y.abs() <= BOUNDARY_TOL
            || (y - channel.height).abs() <= BOUNDARY_TOL
            || on_obstacle[index]
        {
            NodeType::Wall
        } else {
            NodeType::Fluid
        };
        let detail = match (ty == NodeType::Fluid, topo[index]) {
            (true, true) => Some("on the mesh boundary but not on any wall or obstacle"),
            (false, false) if !triangles.is_empty() => Some("typed as boundary but interior to the mesh"),
            _ => None,
        };
        if let Some(detail) = detail {
            return Err(MeshError::Unclassifiable { index, x, y, detail });
        }
        types.push(ty);
    }
    Ok(types)
}
