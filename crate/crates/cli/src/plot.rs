//! Static PNG plots of nodal fields, rasterized per triangle with linear
//! interpolation.

use std::path::Path;

use cylflow::mesher::Mesh;
use cylflow::solver::Frame;
use image::{Rgb, RgbImage};

const WIDTH: u32 = 960;
const GAP: u32 = 8;
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);

/// Viridis-like ramp, sampled at eight stops.
const RAMP: [[f64; 3]; 8] = [
    [68.0, 1.0, 84.0],
    [70.0, 50.0, 127.0],
    [54.0, 92.0, 141.0],
    [39.0, 127.0, 142.0],
    [31.0, 161.0, 135.0],
    [74.0, 194.0, 109.0],
    [159.0, 218.0, 58.0],
    [253.0, 231.0, 37.0],
];

pub fn colormap(t: f64) -> Rgb<u8> {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (RAMP.len() - 1) as f64;
    let i = (x.floor() as usize).min(RAMP.len() - 2);
    let f = x - i as f64;
    let c: [u8; 3] = std::array::from_fn(|k| (RAMP[i][k] * (1.0 - f) + RAMP[i + 1][k] * f).round() as u8);
    Rgb(c)
}

fn panel_height(mesh: &Mesh) -> u32 {
    let ch = &mesh.channel;
    ((WIDTH as f64) * ch.height / ch.length).round().max(1.0) as u32
}

/// Draws `values` over the mesh into `img` with its top edge at `y0`;
/// pixels outside the fluid stay untouched.
fn draw_field(img: &mut RgbImage, y0: u32, mesh: &Mesh, values: &[f64], range: (f64, f64)) {
    let h = panel_height(mesh);
    let ch = &mesh.channel;
    let sx = WIDTH as f64 / ch.length;
    let sy = h as f64 / ch.height;
    let span = (range.1 - range.0).max(f64::MIN_POSITIVE);
    // Pixel coordinates with y pointing down.
    let px = |i: usize| {
        let [x, y] = mesh.vertices[i];
        (x * sx, (ch.height - y) * sy)
    };
    for tri in &mesh.triangles {
        let [a, b, c] = tri.map(px);
        let det = (b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1);
        if det.abs() < 1e-12 {
            continue;
        }
        let xmin = a.0.min(b.0).min(c.0).floor().max(0.0) as u32;
        let xmax = (a.0.max(b.0).max(c.0).ceil() as u32).min(WIDTH - 1);
        let ymin = a.1.min(b.1).min(c.1).floor().max(0.0) as u32;
        let ymax = (a.1.max(b.1).max(c.1).ceil() as u32).min(h - 1);
        for py in ymin..=ymax {
            for pxl in xmin..=xmax {
                let (x, y) = (pxl as f64 + 0.5, py as f64 + 0.5);
                let l1 = ((b.0 - x) * (c.1 - y) - (c.0 - x) * (b.1 - y)) / det;
                let l2 = ((c.0 - x) * (a.1 - y) - (a.0 - x) * (c.1 - y)) / det;
                let l3 = 1.0 - l1 - l2;
                if l1 < -1e-9 || l2 < -1e-9 || l3 < -1e-9 {
                    continue;
                }
                let v = l1 * values[tri[0]] + l2 * values[tri[1]] + l3 * values[tri[2]];
                img.put_pixel(pxl, y0 + py, colormap((v - range.0) / span));
            }
        }
    }
}

fn range_of(fields: &[&[f64]]) -> (f64, f64) {
    fields
        .iter()
        .flat_map(|f| f.iter())
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

pub fn speed(frame: &Frame) -> Vec<f64> {
    frame.velocity.iter().map(|v| v[0].hypot(v[1])).collect()
}

/// Four stacked panels: truth and prediction of the velocity norm, then
/// truth and prediction of pressure. Each field pair shares a colour scale.
pub fn comparison_image(mesh: &Mesh, truth: &Frame, prediction: &Frame) -> RgbImage {
    let h = panel_height(mesh);
    let mut img = RgbImage::from_pixel(WIDTH, 4 * h + 3 * GAP, WHITE);
    let (st, sp) = (speed(truth), speed(prediction));
    let vr = range_of(&[&st, &sp]);
    let pr = range_of(&[&truth.pressure, &prediction.pressure]);
    let panels: [(&[f64], (f64, f64)); 4] = [(&st, vr), (&sp, vr), (&truth.pressure, pr), (&prediction.pressure, pr)];
    for (k, (values, range)) in panels.into_iter().enumerate() {
        draw_field(&mut img, k as u32 * (h + GAP), mesh, values, range);
    }
    img
}

pub fn write_comparison(path: &Path, mesh: &Mesh, truth: &Frame, prediction: &Frame) -> Result<(), String> {
    comparison_image(mesh, truth, prediction)
        .save(path)
        .map_err(|e| format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cylflow::geometry::DomainSpec;
    use cylflow::mesher::{triangulate, MeshParams};

    #[test]
    fn colormap_ends() {
        assert_eq!(colormap(0.0), Rgb([68, 1, 84]));
        assert_eq!(colormap(1.0), Rgb([253, 231, 37]));
        assert_eq!(colormap(f64::NAN), colormap(0.0));
    }

    #[test]
    fn fluid_is_painted_and_obstacle_is_not() {
        let spec = DomainSpec::reference(1.0);
        let mesh = triangulate(&spec, &MeshParams::coarsened(2.0)).unwrap();
        let frame = Frame {
            velocity: mesh.vertices.iter().map(|p| [p[0], 0.0]).collect(),
            pressure: mesh.vertices.iter().map(|p| p[1]).collect(),
        };
        let img = comparison_image(&mesh, &frame, &frame);
        let h = panel_height(&mesh);
        assert_eq!(img.height(), 4 * h + 3 * GAP);
        // Obstacle centre stays white; a point upstream is coloured.
        let to_px = |x: f64, y: f64| ((x / 1.6 * WIDTH as f64) as u32, ((0.41 - y) / 0.41 * h as f64) as u32);
        let (cx, cy) = to_px(0.325, 0.2);
        assert_eq!(*img.get_pixel(cx, cy), WHITE);
        let (ux, uy) = to_px(0.1, 0.2);
        assert_ne!(*img.get_pixel(ux, uy), WHITE);
        // Gap rows stay white.
        assert!((0..WIDTH).all(|x| *img.get_pixel(x, h + GAP / 2) == WHITE));
    }
}
