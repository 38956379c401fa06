use nalgebra::{Vector2, Vector3};

use super::camera::PinholeCamera;
use super::image::{MaskKind, SilhouetteImage};
use crate::diff::{CustomBackward, Tensor, Var};
use crate::{Error, Result};

/// Soft contributions are dropped once `d²/σ` outside a triangle exceeds this;
/// `sigmoid(-30) ≈ 1e-13`.
pub const SOFT_CUTOFF: f64 = 30.0;

/// Default soft temperature in px² for an image of the given width.
pub fn default_sigma(width: usize) -> f64 {
    1e-4 * (width * width) as f64
}

/// `(b - a) × (p - a)`.
fn edge(a: Vector2<f64>, b: Vector2<f64>, p: Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

fn pixel_range(lo: f64, hi: f64, n: usize) -> std::ops::Range<usize> {
    // Centers at i + 0.5.
    let a = (lo - 0.5).ceil().max(0.0);
    let b = ((hi - 0.5).floor() + 1.0).min(n as f64);
    if b <= a {
        0..0
    } else {
        a as usize..b as usize
    }
}

/// Fill a screen-space triangle into `mask` with the top-left rule.
fn fill_triangle(mut v: [Vector2<f64>; 3], width: usize, height: usize, mask: &mut [f32]) {
    let area = edge(v[0], v[1], v[2]);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    if area < 0.0 {
        v.swap(1, 2);
    }
    let owns = |a: Vector2<f64>, b: Vector2<f64>| {
        let d = b - a;
        d.y < 0.0 || (d.y == 0.0 && d.x > 0.0)
    };
    let rule = [owns(v[0], v[1]), owns(v[1], v[2]), owns(v[2], v[0])];
    let xs = pixel_range(v.iter().map(|p| p.x).fold(f64::INFINITY, f64::min), v.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max), width);
    let ys = pixel_range(v.iter().map(|p| p.y).fold(f64::INFINITY, f64::min), v.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max), height);
    for j in ys {
        for i in xs.clone() {
            let p = Vector2::new(i as f64 + 0.5, j as f64 + 0.5);
            let e = [edge(v[0], v[1], p), edge(v[1], v[2], p), edge(v[2], v[0], p)];
            if (0..3).all(|k| e[k] > 0.0 || (e[k] == 0.0 && rule[k])) {
                mask[j * width + i] = 1.0;
            }
        }
    }
}

/// Clip a camera-frame polygon to `lo < z < hi` (Sutherland-Hodgman).
fn clip_depth(poly: Vec<Vector3<f64>>, lo: f64, hi: f64) -> Vec<Vector3<f64>> {
    let clip = |poly: Vec<Vector3<f64>>, keep: &dyn Fn(f64) -> bool, plane: f64| {
        let mut out = Vec::with_capacity(poly.len() + 1);
        for i in 0..poly.len() {
            let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
            let (ka, kb) = (keep(a.z), keep(b.z));
            if ka {
                out.push(a);
            }
            if ka != kb {
                let t = (plane - a.z) / (b.z - a.z);
                let mut p = a + (b - a) * t;
                p.z = plane;
                out.push(p);
            }
        }
        out
    };
    let poly = clip(poly, &|z| z > lo, lo);
    if poly.len() < 3 {
        return poly;
    }
    clip(poly, &|z| z < hi, hi)
}

/// Binary silhouette: a pixel is set iff its center lies in the projection of
/// the part of some triangle with depth in `(near, far)`. No depth test.
pub fn rasterize_hard(triangles: &[[Vector3<f64>; 3]], camera: &PinholeCamera) -> SilhouetteImage {
    let (w, h) = (camera.width, camera.height);
    let mut mask = vec![0.0f32; w * h];
    for tri in triangles {
        let poly = if tri.iter().all(|p| camera.in_depth_range(p.z)) {
            tri.to_vec()
        } else {
            clip_depth(tri.to_vec(), camera.near, camera.far)
        };
        if poly.len() < 3 {
            continue;
        }
        let s: Vec<Vector2<f64>> = poly
            .iter()
            .map(|p| Vector2::new(camera.fx * p.x / p.z + camera.cx, camera.fy * p.y / p.z + camera.cy))
            .collect();
        for k in 1..s.len() - 1 {
            fill_triangle([s[0], s[k], s[k + 1]], w, h, &mut mask);
        }
    }
    SilhouetteImage { width: w, height: h, kind: MaskKind::Hard, pixels: mask }
}

/// Nearest boundary point of a triangle to `p`.
struct Nearest {
    /// `sign · d² / σ`, positive inside.
    z: f64,
    inside: bool,
    edge: usize,
    t: f64,
    q: Vector2<f64>,
}

fn nearest(v: &[Vector2<f64>; 3], p: Vector2<f64>, sigma: f64) -> Option<Nearest> {
    let e = [edge(v[0], v[1], p), edge(v[1], v[2], p), edge(v[2], v[0], p)];
    let area = edge(v[0], v[1], v[2]);
    let inside = area != 0.0 && (e.iter().all(|&x| x >= 0.0) || e.iter().all(|&x| x <= 0.0));
    let mut best = (f64::INFINITY, 0, 0.0, p);
    for k in 0..3 {
        let (a, b) = (v[k], v[(k + 1) % 3]);
        let ab = b - a;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let q = a + ab * t;
        let d2 = (p - q).norm_squared();
        if d2 < best.0 {
            best = (d2, k, t, q);
        }
    }
    let (d2, edge, t, q) = best;
    if !inside && d2 > SOFT_CUTOFF * sigma {
        return None;
    }
    let z = if inside { d2 / sigma } else { -d2 / sigma };
    Some(Nearest { z, inside, edge, t, q })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct SoftGrid<'a> {
    screen: &'a [f64],
    n: usize,
    faces: &'a [[usize; 3]],
    width: usize,
    height: usize,
    sigma: f64,
}

impl SoftGrid<'_> {
    fn tri(&self, f: &[usize; 3]) -> [Vector2<f64>; 3] {
        f.map(|i| Vector2::new(self.screen[i], self.screen[self.n + i]))
    }

    /// Visit every (pixel, face) pair with a nonzero contribution, in face
    /// order then row-major pixel order.
    fn for_each(&self, mut visit: impl FnMut(usize, usize, &[Vector2<f64>; 3], Vector2<f64>, &Nearest)) {
        let r = (SOFT_CUTOFF * self.sigma).sqrt();
        for (fi, f) in self.faces.iter().enumerate() {
            let v = self.tri(f);
            if v.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
                continue;
            }
            let lo = |k: usize| v.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min) - r;
            let hi = |k: usize| v.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max) + r;
            for j in pixel_range(lo(1), hi(1), self.height) {
                for i in pixel_range(lo(0), hi(0), self.width) {
                    let p = Vector2::new(i as f64 + 0.5, j as f64 + 0.5);
                    if let Some(nr) = nearest(&v, p, self.sigma) {
                        visit(j * self.width + i, fi, &v, p, &nr);
                    }
                }
            }
        }
    }

    /// `Π (1 - D_j)` per pixel.
    fn transmission(&self) -> Vec<f64> {
        let mut prod = vec![1.0; self.width * self.height];
        self.for_each(|px, _, _, _, nr| prod[px] *= sigmoid(-nr.z));
        prod
    }
}

fn check_soft_inputs(screen: &[f64], faces: &[[usize; 3]], sigma: f64) -> Result<usize> {
    if !(sigma > 0.0) {
        return Err(Error::Invalid(format!("soft rasterizer temperature must be positive, got {sigma}")));
    }
    let n = screen.len() / 2;
    if faces.iter().flatten().any(|&i| i >= n) {
        return Err(Error::Invalid("face index out of range".into()));
    }
    Ok(n)
}

/// Soft occupancy `1 - Π(1 - sigmoid(±d²/σ))` of screen-space triangles.
/// `screen` is a row-major `2×n` block of pixel coordinates.
pub fn soft_occupancy(screen: &[f64], faces: &[[usize; 3]], width: usize, height: usize, sigma: f64) -> Result<Vec<f64>> {
    let n = check_soft_inputs(screen, faces, sigma)?;
    let grid = SoftGrid { screen, n, faces, width, height, sigma };
    Ok(grid.transmission().into_iter().map(|t| 1.0 - t).collect())
}

struct SoftBackward {
    faces: Vec<[usize; 3]>,
    transmission: Vec<f64>,
    width: usize,
    height: usize,
    sigma: f64,
}

impl CustomBackward for SoftBackward {
    fn backward(&self, grad_out: &Tensor, inputs: &[&Tensor], _output: &Tensor) -> Vec<Option<Tensor>> {
        let screen = inputs[0].data();
        let n = screen.len() / 2;
        let grid = SoftGrid { screen, n, faces: &self.faces, width: self.width, height: self.height, sigma: self.sigma };
        let g = grad_out.data();
        let mut grad = vec![0.0; 2 * n];
        grid.for_each(|px, fi, _, p, nr| {
            let go = g[px];
            if go == 0.0 {
                return;
            }
            // ∂S/∂z = Π(1 - D)·D for this face.
            let ds_dz = self.transmission[px] * sigmoid(nr.z);
            let s = if nr.inside { 1.0 } else { -1.0 };
            let c = go * ds_dz * s / self.sigma;
            let diff = p - nr.q;
            let f = self.faces[fi];
            let (ia, ib) = (f[nr.edge], f[(nr.edge + 1) % 3]);
            // ∂d²/∂a = -2(p - q)(1 - t), ∂d²/∂b = -2(p - q)t.
            let ga = diff * (-2.0 * (1.0 - nr.t) * c);
            let gb = diff * (-2.0 * nr.t * c);
            grad[ia] += ga.x;
            grad[n + ia] += ga.y;
            grad[ib] += gb.x;
            grad[n + ib] += gb.y;
        });
        vec![Some(Tensor::new(inputs[0].shape(), grad).expect("gradient shape"))]
    }
}

/// Differentiable soft silhouette of a `2×n` block of screen vertices; the
/// result has shape `[height, width]`.
pub fn rasterize_soft<'t>(
    screen: &Var<'t>,
    faces: &[[usize; 3]],
    width: usize,
    height: usize,
    sigma: f64,
) -> Result<Var<'t>> {
    let shape = screen.shape();
    if shape.len() != 2 || shape[0] != 2 {
        return Err(Error::Invalid(format!("soft rasterizer expects 2xN vertices, got {shape:?}")));
    }
    let transmission = screen.with_value(|s| -> Result<Vec<f64>> {
        let n = check_soft_inputs(s.data(), faces, sigma)?;
        Ok(SoftGrid { screen: s.data(), n, faces, width, height, sigma }.transmission())
    })?;
    let occ = Tensor::new(&[height, width], transmission.iter().map(|t| 1.0 - t).collect())?;
    let back = SoftBackward { faces: faces.to_vec(), transmission, width, height, sigma };
    Ok(screen.tape().custom(&[*screen], occ, Box::new(back)))
}
