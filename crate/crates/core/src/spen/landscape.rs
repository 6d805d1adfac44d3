use std::io::Write;

use super::Energy;
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Energies on an `x × y` grid, min-subtracted per `x` column and mapped
/// through `log(1 + ·)`, with the per-column argmin over the `y` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Landscape {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `values[i][j]` belongs to `(xs[i], ys[j])`.
    pub values: Vec<Vec<f64>>,
    pub argmin: Vec<f64>,
}

pub fn energy_landscape_grid<E: Energy + ?Sized>(net: &E, xs: &[f64], ys: &[f64]) -> Result<Landscape> {
    if ys.is_empty() {
        return Err(Error::Config("landscape y grid is empty".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Config("landscape grids must be finite".into()));
    }
    let (nx, ny) = (xs.len(), ys.len());
    if nx == 0 {
        return Ok(Landscape {
            xs: Vec::new(),
            ys: ys.to_vec(),
            values: Vec::new(),
            argmin: Vec::new(),
        });
    }
    let y = Tensor::new(ys.repeat(nx), &[nx, ny])?;
    let e = tensor::no_grad(|| net.energy(&Tensor::vector(xs.to_vec()), &y))?.to_vec();
    let mut values = Vec::with_capacity(nx);
    let mut argmin = Vec::with_capacity(nx);
    for col in e.chunks(ny) {
        let (jmin, &emin) = col
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty column");
        argmin.push(ys[jmin]);
        values.push(col.iter().map(|v| (v - emin).ln_1p()).collect());
    }
    Ok(Landscape {
        xs: xs.to_vec(),
        ys: ys.to_vec(),
        values,
        argmin,
    })
}

impl Landscape {
    /// Long format: `x,y,log_energy`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "x,y,log_energy")?;
        for (x, row) in self.xs.iter().zip(&self.values) {
            for (y, v) in self.ys.iter().zip(row) {
                writeln!(w, "{x},{y},{v}")?;
            }
        }
        Ok(())
    }

    /// `x,argmin_y,target` with the target given by `f`.
    pub fn write_argmin_csv(&self, mut w: impl Write, f: impl Fn(f64) -> f64) -> Result<()> {
        writeln!(w, "x,argmin_y,target")?;
        for (x, a) in self.xs.iter().zip(&self.argmin) {
            writeln!(w, "{x},{a},{}", f(*x))?;
        }
        Ok(())
    }
}

/// Root-mean-square distance of the argmin trace to `f`.
pub fn argmin_rmse(landscape: &Landscape, f: impl Fn(f64) -> f64) -> f64 {
    let n = landscape.xs.len().max(1) as f64;
    let sse: f64 = landscape
        .xs
        .iter()
        .zip(&landscape.argmin)
        .map(|(x, a)| (a - f(*x)).powi(2))
        .sum();
    (sse / n).sqrt()
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}
