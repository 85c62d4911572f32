//! Two-dimensional linear projection of encoder representations onto their
//! top principal components.

use std::io::Write;
use std::path::Path;

use crate::autodiff::{Graph, Tensor};
use crate::data::{EncodedExample, LabeledBatch};
use crate::error::{Error, Result};
use crate::model::ModelParams;

const MAX_ITERATIONS: usize = 10_000;
const CONVERGENCE: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// Two orthonormal directions, each of the representation width.
    pub components: [Vec<f64>; 2],
    pub mean: Vec<f64>,
    /// One `(x, y)` per input row.
    pub points: Vec<[f64; 2]>,
}

/// Encoder representations of every example, in inference mode.
pub fn encode_all(model: &ModelParams, examples: &[EncodedExample]) -> Result<Tensor> {
    let dim = model.dims().dim;
    let mut data = Vec::with_capacity(examples.len() * dim);
    for chunk in examples.chunks(256) {
        let batch = LabeledBatch::from_examples(chunk);
        let mut g = Graph::new();
        let mv = model.bind(&mut g, false);
        let rep = mv.encode(&mut g, &batch, 0.0, None)?;
        data.extend_from_slice(g.value(rep.h).data());
    }
    Tensor::new(examples.len(), dim, data)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> bool {
    let norm = dot(v, v).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

/// Removes the components of `v` along each of `basis` (assumed unit).
fn orthogonalize(v: &mut [f64], basis: &[&[f64]]) {
    for b in basis {
        let p = dot(v, b);
        v.iter_mut().zip(*b).for_each(|(x, bi)| *x -= p * bi);
    }
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    m.chunks(v.len()).map(|row| dot(row, v)).collect()
}

/// Leading unit eigenvector of the symmetric matrix `cov`, restricted to
/// the complement of `exclude`.
fn power_iteration(cov: &[f64], dim: usize, exclude: &[&[f64]]) -> Vec<f64> {
    // Deterministic, generic start so no eigenvector is missed by symmetry.
    let mut v: Vec<f64> = (0..dim).map(|k| 1.0 + (k as f64 + 1.0).sqrt().fract()).collect();
    orthogonalize(&mut v, exclude);
    if !normalize(&mut v) {
        return fallback_direction(dim, exclude);
    }
    for _ in 0..MAX_ITERATIONS {
        let mut next = mat_vec(cov, &v);
        orthogonalize(&mut next, exclude);
        if !normalize(&mut next) {
            // The remaining spectrum is zero; any orthonormal direction works.
            return v;
        }
        let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        if delta < CONVERGENCE {
            break;
        }
    }
    v
}

fn fallback_direction(dim: usize, exclude: &[&[f64]]) -> Vec<f64> {
    for axis in 0..dim {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        orthogonalize(&mut v, exclude);
        if normalize(&mut v) {
            return v;
        }
    }
    vec![0.0; dim]
}

/// Centers `rows` and projects them onto the two leading principal
/// directions, found by power iteration with deflation.
pub fn pca_2d(rows: &Tensor) -> Result<Projection> {
    let (n, dim) = (rows.rows(), rows.cols());
    if n < 3 {
        return Err(Error::Config(format!("projection needs at least 3 rows, got {n}")));
    }
    if dim < 2 {
        return Err(Error::Config(format!("projection needs width ≥ 2, got {dim}")));
    }
    let mut mean = vec![0.0; dim];
    for r in 0..n {
        mean.iter_mut().zip(rows.row(r)).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = vec![0.0; dim * dim];
    for r in 0..n {
        let centered: Vec<f64> = rows.row(r).iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..dim {
            for j in 0..dim {
                cov[i * dim + j] += centered[i] * centered[j];
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= n as f64);

    let first = power_iteration(&cov, dim, &[]);
    let mut second = power_iteration(&cov, dim, &[&first]);
    // A second Gram-Schmidt pass keeps the pair orthonormal to rounding.
    orthogonalize(&mut second, &[&first]);
    if !normalize(&mut second) {
        second = fallback_direction(dim, &[&first]);
    }

    let points = (0..n)
        .map(|r| {
            let centered: Vec<f64> = rows.row(r).iter().zip(&mean).map(|(x, m)| x - m).collect();
            [dot(&centered, &first), dot(&centered, &second)]
        })
        .collect();
    Ok(Projection {
        components: [first, second],
        mean,
        points,
    })
}

pub fn write_projection_csv(path: &Path, points: &[[f64; 2]], labels: &[&str]) -> Result<()> {
    if points.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} points for {} labels",
            points.len(),
            labels.len()
        )));
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "x,y,label")?;
    for ([x, y], label) in points.iter().zip(labels) {
        writeln!(w, "{x},{y},{label}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_axis_aligned_spread() {
        // Variance 9 along x, 1 along y, 0 along z.
        let rows = Tensor::from_rows(&[
            [3.0, 0.0, 0.0],
            [-3.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
        ])
        .unwrap();
        let p = pca_2d(&rows).unwrap();
        assert!((p.components[0][0].abs() - 1.0).abs() < 1e-9);
        assert!((p.components[1][1].abs() - 1.0).abs() < 1e-9);
        assert!((p.points[0][0].abs() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_input_still_orthonormal() {
        let rows = Tensor::from_rows(&[[1.0, 2.0, 3.0]; 4]).unwrap();
        let p = pca_2d(&rows).unwrap();
        let [a, b] = &p.components;
        assert!((dot(a, a) - 1.0).abs() < 1e-12);
        assert!((dot(b, b) - 1.0).abs() < 1e-12);
        assert!(dot(a, b).abs() < 1e-12);
        assert!(p.points.iter().all(|pt| pt[0] == 0.0 && pt[1] == 0.0));
    }

    #[test]
    fn directions_are_orthonormal_on_random_data() {
        use rand::Rng as _;
        let mut rng = crate::rng::stream_rng(4, crate::rng::Stream::Synth, 0);
        let data: Vec<f64> = (0..50 * 12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = pca_2d(&Tensor::new(50, 12, data).unwrap()).unwrap();
        let [a, b] = &p.components;
        assert!((dot(a, a) - 1.0).abs() < 1e-8);
        assert!((dot(b, b) - 1.0).abs() < 1e-8);
        assert!(dot(a, b).abs() < 1e-8);
    }

    #[test]
    fn too_few_rows() {
        let rows = Tensor::zeros(2, 4);
        assert!(matches!(pca_2d(&rows), Err(Error::Config(_))));
    }
}
