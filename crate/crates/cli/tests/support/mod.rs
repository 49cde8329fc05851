//! Independent reference implementations used as oracles by the acceptance
//! suite. These deliberately re-derive the math from the data-layout
//! definitions instead of calling the production code paths.

use std::collections::HashSet;
use tractpipe_core::registration::DisplacementField;
use tractpipe_core::volume::{LabelVolume, PeakVolume};

/// Naive trilinear warp: for every voxel, clamp the sample point, find the
/// cell corners by direct index arithmetic, and accumulate corner
/// contributions in z-y-x order.
pub fn naive_warp(vol: &PeakVolume, field: &DisplacementField) -> PeakVolume {
    let [xd, yd, zd] = vol.dims();
    let channels = vol.channels();
    let mut out = PeakVolume::zeros(vol.dims(), channels);
    for z in 0..zd {
        for y in 0..yd {
            for x in 0..xd {
                let u = field.vector(x, y, z);
                let q = [x as f64 + u[0], y as f64 + u[1], z as f64 + u[2]];
                for c in 0..channels {
                    let v = naive_sample(vol, q, c);
                    out.set(x, y, z, c, v);
                }
            }
        }
    }
    out
}

fn naive_axis(dim: usize, coord: f64) -> (usize, usize, f64) {
    let max = (dim - 1) as f64;
    let c = coord.clamp(0.0, max);
    if dim == 1 {
        return (0, 0, 0.0);
    }
    let mut lo = c.floor() as usize;
    if lo > dim - 2 {
        lo = dim - 2;
    }
    (lo, lo + 1, c - lo as f64)
}

pub fn naive_sample(vol: &PeakVolume, q: [f64; 3], channel: usize) -> f64 {
    let dims = vol.dims();
    let (x0, x1, tx) = naive_axis(dims[0], q[0]);
    let (y0, y1, ty) = naive_axis(dims[1], q[1]);
    let (z0, z1, tz) = naive_axis(dims[2], q[2]);
    let mut acc = 0.0;
    for (zc, wz) in [(z0, 1.0 - tz), (z1, tz)] {
        for (yc, wy) in [(y0, 1.0 - ty), (y1, ty)] {
            for (xc, wx) in [(x0, 1.0 - tx), (x1, tx)] {
                let w = wz * wy * wx;
                acc += w * vol.get(xc, yc, zc, channel);
            }
        }
    }
    acc
}

/// Brute-force Dice over explicit voxel index sets.
pub fn brute_dice(pred: &LabelVolume, truth: &LabelVolume, class: usize) -> f64 {
    let nvox = pred.dims()[0] * pred.dims()[1] * pred.dims()[2];
    let p: HashSet<usize> = (0..nvox)
        .filter(|&v| pred.data()[v * pred.classes() + class] == 1)
        .collect();
    let t: HashSet<usize> = (0..nvox)
        .filter(|&v| truth.data()[v * truth.classes() + class] == 1)
        .collect();
    if p.is_empty() && t.is_empty() {
        return 1.0;
    }
    2.0 * p.intersection(&t).count() as f64 / (p.len() + t.len()) as f64
}

/// Central finite differences of a scalar function of a parameter vector.
pub fn finite_difference_gradient<F>(f: F, params: &mut [f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + step;
        let plus = f(params);
        params[i] = orig - step;
        let minus = f(params);
        params[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    grad
}

/// Relative error between two gradient vectors in the Euclidean norm.
pub fn rel_vec_error(a: &[f64], b: &[f64]) -> f64 {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    diff.sqrt() / na.sqrt().max(nb.sqrt()).max(1e-12)
}
