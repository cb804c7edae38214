//! Ulam discretization of the transfer operators on a box grid.
//!
//! Paths are launched from every cell centre and their endpoints binned, which
//! gives a histogram estimate of the transition kernel `k_t(x, y)`. The same
//! paths carry the Girsanov weight `M_t`, so the directional kernel derivative
//! `E^0[1{X_t in cell j} M_t] / vol` comes for free and shares its noise with
//! the kernel.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::girsanov::{exp_weight, WeightIntegrand};
use crate::linalg::spectral_norm;
use crate::sde::{integrate, path_rng, Domain, PerturbationField, SdeModel, TimeGrid};

/// Uniform partition of a box into `boxes_per_axis^d` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    domain: Domain,
    lower: Vec<f64>,
    widths: Vec<f64>,
    boxes_per_axis: usize,
    n_cells: usize,
    box_volume: f64,
}

pub fn build_grid(domain: &Domain, boxes_per_axis: usize) -> Result<Grid> {
    let (lower, upper) = domain
        .bounds()
        .ok_or_else(|| Error::UnsupportedDomain("Ulam grids need a box domain".into()))?;
    if boxes_per_axis < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 boxes per axis, got {boxes_per_axis}")));
    }
    let widths: Vec<f64> = lower
        .iter()
        .zip(upper)
        .map(|(lo, up)| (up - lo) / boxes_per_axis as f64)
        .collect();
    Ok(Grid {
        domain: domain.clone(),
        lower: lower.to_vec(),
        box_volume: widths.iter().product(),
        widths,
        boxes_per_axis,
        n_cells: boxes_per_axis.pow(lower.len() as u32),
    })
}

impl Grid {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn box_volume(&self) -> f64 {
        self.box_volume
    }

    pub fn boxes_per_axis(&self) -> usize {
        self.boxes_per_axis
    }

    /// Cell containing `point`: half-open cells, last cell closed. Points on
    /// or beyond the outer faces map to the adjacent boundary cell.
    pub fn cell_of(&self, point: &[f64]) -> usize {
        let n = self.boxes_per_axis;
        point
            .iter()
            .zip(self.lower.iter().zip(&self.widths))
            .fold(0, |acc, (x, (lo, w))| {
                let raw = ((x - lo) / w).floor();
                let idx = if raw < 0.0 { 0 } else { (raw as usize).min(n - 1) };
                acc * n + idx
            })
    }

    pub fn center(&self, cell: usize) -> Vec<f64> {
        let n = self.boxes_per_axis;
        let d = self.dim();
        let mut out = vec![0.0; d];
        let mut rest = cell;
        for axis in (0..d).rev() {
            let idx = rest % n;
            rest /= n;
            out[axis] = self.lower[axis] + (idx as f64 + 0.5) * self.widths[axis];
        }
        out
    }

    pub fn centers(&self) -> Vec<Vec<f64>> {
        (0..self.n_cells).map(|c| self.center(c)).collect()
    }

    /// Cell values of `f` at the centres.
    pub fn sample<F: Fn(&[f64]) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.n_cells).map(|c| f(&self.center(c))).collect()
    }

    /// `<f, g>` in L^2(Lebesgue) with piecewise-constant cell values.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.box_volume * f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn l2_norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).sqrt()
    }

    pub fn l1_norm(&self, f: &[f64]) -> f64 {
        self.box_volume * f.iter().map(|v| v.abs()).sum::<f64>()
    }
}

/// Transition time, step count and sample size of a kernel estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelParams {
    pub t: f64,
    pub n_steps: usize,
    pub n_paths_per_cell: usize,
    pub seed: u64,
    /// Absolute start time; non-zero for time-dependent coefficients.
    pub start_time: f64,
}

impl KernelParams {
    pub fn new(t: f64, n_steps: usize, n_paths_per_cell: usize, seed: u64) -> Self {
        Self {
            t,
            n_steps,
            n_paths_per_cell,
            seed,
            start_time: 0.0,
        }
    }

    pub fn starting_at(self, start_time: f64) -> Self {
        Self { start_time, ..self }
    }
}

/// Histogram estimate of `k_t(x, y)`; entry `(i, j)` has units 1/volume.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub k: DMatrix<f64>,
    pub t: f64,
    pub gamma_id: String,
    pub n_paths_per_cell: usize,
    pub box_volume: f64,
}

impl KernelMatrix {
    pub fn n_cells(&self) -> usize {
        self.k.nrows()
    }

    /// `sum_j k[i][j] vol`
    pub fn row_mass(&self, i: usize) -> f64 {
        self.k.row(i).sum() * self.box_volume
    }

    pub fn max_entry(&self) -> f64 {
        self.k.max()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_matrix_csv(w, &self.k, self.t, &self.gamma_id)
    }
}

/// Girsanov-weighted directional derivative of the kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct DKernelMatrix {
    pub dk: DMatrix<f64>,
    /// Per-entry standard error of `dk`.
    pub std_error: DMatrix<f64>,
    /// Standard error of each row mass `sum_j dk[i][j] vol`.
    pub row_mass_std_error: Vec<f64>,
    pub direction_id: String,
    pub box_volume: f64,
}

impl DKernelMatrix {
    pub fn row_mass(&self, i: usize) -> f64 {
        self.dk.row(i).sum() * self.box_volume
    }

    /// `DP[j][i] = dk[i][j] vol`
    pub fn derivative_operator(&self, t: f64) -> UlamOperator {
        UlamOperator {
            matrix: self.dk.transpose() * self.box_volume,
            kind: OperatorKind::PerronFrobenius,
            t,
            gamma_id: format!("d[{}]", self.direction_id),
            box_volume: self.box_volume,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OperatorKind {
    PerronFrobenius,
    Koopman,
}

/// Matrix of a transfer operator acting on cell values.
#[derive(Debug, Clone, PartialEq)]
pub struct UlamOperator {
    pub matrix: DMatrix<f64>,
    pub kind: OperatorKind,
    pub t: f64,
    pub gamma_id: String,
    pub box_volume: f64,
}

impl UlamOperator {
    pub fn n_cells(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (&self.matrix * nalgebra::DVector::from_column_slice(f)).iter().copied().collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_matrix_csv(w, &self.matrix, self.t, &self.gamma_id)
    }
}

struct RowSample {
    counts: Vec<u64>,
    weight_sum: Vec<f64>,
    weight_sq: Vec<f64>,
    /// `(target cell, M_t, <M>_t)` per path, in launch order.
    paths: Vec<(usize, f64, f64)>,
}

/// Launches `n_paths_per_cell` paths from each centre under drift
/// `b + sim_gamma`, histogramming the endpoints and, if requested,
/// accumulating the Girsanov weight of `direction` per target cell.
fn sample_rows(
    model: &SdeModel,
    sim_gamma: &PerturbationField,
    direction: Option<&PerturbationField>,
    grid: &Grid,
    params: &KernelParams,
) -> Result<Vec<RowSample>> {
    if params.n_paths_per_cell == 0 {
        return Err(Error::InvalidInput("need at least one path per cell".into()));
    }
    if grid.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: grid.dim(),
        });
    }
    let time_grid = TimeGrid::new(params.t, params.n_steps)?;
    let n = grid.n_cells();
    let per = params.n_paths_per_cell;
    let sqrt_dt = time_grid.dt().sqrt();
    let rows: Vec<Result<RowSample>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x0 = grid.center(i);
            let mut row = RowSample {
                counts: vec![0; n],
                weight_sum: vec![0.0; if direction.is_some() { n } else { 0 }],
                weight_sq: vec![0.0; if direction.is_some() { n } else { 0 }],
                paths: Vec::with_capacity(if direction.is_some() { per } else { 0 }),
            };
            let mut integrand = direction.map(|g| WeightIntegrand::new(model, g)).transpose()?;
            for p in 0..per {
                let mut rng = path_rng(params.seed, (i * per + p) as u64);
                let mut m = 0.0;
                let mut qv = 0.0;
                let end = integrate(
                    model,
                    grid.domain(),
                    &x0,
                    sim_gamma,
                    params.start_time,
                    &time_grid,
                    |dw| {
                        for w in dw.iter_mut() {
                            *w = sqrt_dt * rng.sample::<f64, _>(StandardNormal);
                        }
                    },
                    |step| {
                        if let Some(w) = integrand.as_mut() {
                            let (dm, dqv) = w.step(step)?;
                            m += dm;
                            qv += dqv;
                        }
                        Ok(())
                    },
                )
                .map_err(|e| match e {
                    Error::Explosion { .. } => Error::Estimation(format!("cell {i}: {e}")),
                    other => other,
                })?;
                let j = grid.cell_of(&end);
                row.counts[j] += 1;
                if direction.is_some() {
                    row.weight_sum[j] += m;
                    row.weight_sq[j] += m * m;
                    row.paths.push((j, m, qv));
                }
            }
            Ok(row)
        })
        .collect();
    rows.into_iter().collect()
}

fn kernel_from_rows(rows: &[RowSample], grid: &Grid, params: &KernelParams, gamma_id: &str) -> KernelMatrix {
    let n = grid.n_cells();
    let norm = params.n_paths_per_cell as f64 * grid.box_volume();
    KernelMatrix {
        k: DMatrix::from_fn(n, n, |i, j| rows[i].counts[j] as f64 / norm),
        t: params.t,
        gamma_id: gamma_id.to_string(),
        n_paths_per_cell: params.n_paths_per_cell,
        box_volume: grid.box_volume(),
    }
}

/// Histogram kernel of the perturbed process `X^gamma` at time `t`.
pub fn estimate_kernel(
    model: &SdeModel,
    gamma: &PerturbationField,
    grid: &Grid,
    params: &KernelParams,
) -> Result<KernelMatrix> {
    let rows = sample_rows(model, gamma, None, grid, params)?;
    Ok(kernel_from_rows(&rows, grid, params, gamma.id()))
}

fn derivative_from_rows(rows: &[RowSample], grid: &Grid, params: &KernelParams, direction_id: &str) -> DKernelMatrix {
    let n = grid.n_cells();
    let per = params.n_paths_per_cell as f64;
    let vol = grid.box_volume();
    let dk = DMatrix::from_fn(n, n, |i, j| rows[i].weight_sum[j] / (per * vol));
    // Sample of entry (i, j) is 1{X in j} M / vol over the row's paths.
    let std_error = DMatrix::from_fn(n, n, |i, j| {
        let mean = rows[i].weight_sum[j] / per;
        let var = (rows[i].weight_sq[j] / per - mean * mean).max(0.0) * per / (per - 1.0).max(1.0);
        (var / per).sqrt() / vol
    });
    let row_mass_std_error = rows
        .iter()
        .map(|r| {
            let mean = r.paths.iter().map(|p| p.1).sum::<f64>() / per;
            let var = r.paths.iter().map(|p| (p.1 - mean) * (p.1 - mean)).sum::<f64>() / (per - 1.0).max(1.0);
            (var / per).sqrt()
        })
        .collect();
    DKernelMatrix {
        dk,
        std_error,
        row_mass_std_error,
        direction_id: direction_id.to_string(),
        box_volume: vol,
    }
}

/// Kernel of the base process together with its Girsanov derivative in
/// direction `gamma`, from one set of paths.
pub fn estimate_kernel_with_derivative(
    model: &SdeModel,
    gamma: &PerturbationField,
    grid: &Grid,
    params: &KernelParams,
) -> Result<(KernelMatrix, DKernelMatrix)> {
    let zero = PerturbationField::zero(model.dim());
    let rows = sample_rows(model, &zero, Some(gamma), grid, params)?;
    Ok((
        kernel_from_rows(&rows, grid, params, zero.id()),
        derivative_from_rows(&rows, grid, params, gamma.id()),
    ))
}

/// Base kernel, its derivative in `direction`, and the kernels of
/// `b + eps direction` for each `eps`, all from the same base paths. The
/// perturbed kernels are importance-weighted with `Z = exp(eps M - eps^2 <M>/2)`,
/// so `k(eps) - k(0) - eps dk` is second order in `eps` path by path.
#[derive(Debug, Clone)]
pub struct CoupledKernels {
    pub base: KernelMatrix,
    pub derivative: DKernelMatrix,
    pub epsilons: Vec<f64>,
    pub perturbed: Vec<KernelMatrix>,
}

pub fn coupled_kernels(
    model: &SdeModel,
    direction: &PerturbationField,
    epsilons: &[f64],
    grid: &Grid,
    params: &KernelParams,
) -> Result<CoupledKernels> {
    let zero = PerturbationField::zero(model.dim());
    let rows = sample_rows(model, &zero, Some(direction), grid, params)?;
    let n = grid.n_cells();
    let norm = params.n_paths_per_cell as f64 * grid.box_volume();
    let perturbed = epsilons
        .iter()
        .map(|&eps| {
            let mut k = DMatrix::zeros(n, n);
            for (i, row) in rows.iter().enumerate() {
                for &(j, m, qv) in &row.paths {
                    k[(i, j)] += exp_weight(eps * m, eps * eps * qv)? / norm;
                }
            }
            Ok(KernelMatrix {
                k,
                t: params.t,
                gamma_id: direction.scaled(eps).id().to_string(),
                n_paths_per_cell: params.n_paths_per_cell,
                box_volume: grid.box_volume(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoupledKernels {
        base: kernel_from_rows(&rows, grid, params, zero.id()),
        derivative: derivative_from_rows(&rows, grid, params, direction.id()),
        epsilons: epsilons.to_vec(),
        perturbed,
    })
}

/// Girsanov kernel derivative; use the same seed as the base kernel run so
/// both share paths.
pub fn kernel_derivative(
    model: &SdeModel,
    gamma: &PerturbationField,
    grid: &Grid,
    params: &KernelParams,
) -> Result<DKernelMatrix> {
    Ok(estimate_kernel_with_derivative(model, gamma, grid, params)?.1)
}

/// Perron–Frobenius `P[j][i] = k[i][j] vol` and Koopman `U = P^T`.
pub fn assemble_operators(kernel: &KernelMatrix, grid: &Grid) -> Result<(UlamOperator, UlamOperator)> {
    if kernel.n_cells() != grid.n_cells() {
        return Err(Error::DimensionMismatch {
            expected: grid.n_cells(),
            found: kernel.n_cells(),
        });
    }
    let koopman = &kernel.k * grid.box_volume();
    let pf = koopman.transpose();
    Ok((
        UlamOperator {
            matrix: pf,
            kind: OperatorKind::PerronFrobenius,
            t: kernel.t,
            gamma_id: kernel.gamma_id.clone(),
            box_volume: grid.box_volume(),
        },
        UlamOperator {
            matrix: koopman,
            kind: OperatorKind::Koopman,
            t: kernel.t,
            gamma_id: kernel.gamma_id.clone(),
            box_volume: grid.box_volume(),
        },
    ))
}

/// `||P(gamma) - P(0) - DP||_2 / ||gamma||_V`, where `DP` is already the
/// derivative applied to `gamma`.
pub fn operator_norm_residual(
    p0: &UlamOperator,
    p_gamma: &UlamOperator,
    dp: &UlamOperator,
    gamma_v_norm: f64,
) -> Result<f64> {
    let n = p0.n_cells();
    for found in [p_gamma.n_cells(), dp.n_cells()] {
        if found != n {
            return Err(Error::DimensionMismatch { expected: n, found });
        }
    }
    let residual = &p_gamma.matrix - &p0.matrix - &dp.matrix;
    let norm = spectral_norm(&residual);
    if gamma_v_norm == 0.0 {
        return if norm == 0.0 {
            Ok(0.0)
        } else {
            Err(Error::InvalidInput("nonzero residual for a zero-norm perturbation".into()))
        };
    }
    Ok(norm / gamma_v_norm)
}

/// Dense CSV: a header row `n_cells,t,gamma_id`, one row with those values,
/// then the matrix row by row.
pub fn write_matrix_csv<W: Write>(mut w: W, m: &DMatrix<f64>, t: f64, gamma_id: &str) -> Result<()> {
    writeln!(w, "n_cells,t,gamma_id")?;
    writeln!(w, "{},{},\"{}\"", m.nrows(), t, gamma_id.replace('"', "'"))?;
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads a matrix written by [`write_matrix_csv`]; returns `(matrix, t, gamma_id)`.
pub fn read_matrix_csv<R: BufRead>(r: R) -> Result<(DMatrix<f64>, f64, String)> {
    let bad = |msg: &str| Error::InvalidInput(format!("matrix csv: {msg}"));
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| bad("empty"))??;
    if header.trim() != "n_cells,t,gamma_id" {
        return Err(bad("unexpected header"));
    }
    let meta = lines.next().ok_or_else(|| bad("missing metadata row"))??;
    let mut parts = meta.splitn(3, ',');
    let n: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("n_cells"))?;
    let t: f64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("t"))?;
    let gamma_id = parts.next().unwrap_or("").trim_matches('"').to_string();
    let mut data = Vec::with_capacity(n * n);
    for _ in 0..n {
        let line = lines.next().ok_or_else(|| bad("too few rows"))??;
        for v in line.split(',') {
            data.push(v.trim().parse::<f64>().map_err(|_| bad("number"))?);
        }
    }
    if data.len() != n * n {
        return Err(bad("ragged rows"));
    }
    Ok((DMatrix::from_row_slice(n, n, &data), t, gamma_id))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_conventions() {
        let g = build_grid(&Domain::interval(0.0, 1.0).unwrap(), 4).unwrap();
        assert_eq!(g.cell_of(&[0.25]), 1);
        assert_eq!(g.cell_of(&[1.0]), 3);
        assert_eq!(g.cell_of(&[0.0]), 0);
        assert_eq!(g.center(2), vec![0.625]);
        let sq = build_grid(&Domain::new_box(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(), 4).unwrap();
        assert_eq!(sq.n_cells(), 16);
        assert_eq!(sq.box_volume(), 1.0 / 16.0);
        for c in 0..16 {
            assert_eq!(sq.cell_of(&sq.center(c)), c);
        }
        assert!(build_grid(&Domain::interval(0.0, 1.0).unwrap(), 1).is_err());
        assert!(build_grid(&Domain::unbounded(1), 4).is_err());
    }

    #[test]
    fn zero_direction_derivative_is_zero() {
        let m = SdeModel::brownian(1, 1.0, 1.0).unwrap();
        let g = build_grid(&Domain::interval(0.0, 1.0).unwrap(), 8).unwrap();
        let p = KernelParams::new(0.2, 20, 50, 1);
        let dk = kernel_derivative(&m, &PerturbationField::zero(1), &g, &p).unwrap();
        assert!(dk.dk.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn csv_round_trip() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.25, -3.5e-7, 2.0]);
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &m, 0.5, "bump").unwrap();
        let (back, t, id) = read_matrix_csv(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!((t, id.as_str()), (0.5, "bump"));
    }

    #[test]
    fn residual_rejects_mismatched_sizes() {
        let op = |n| UlamOperator {
            matrix: DMatrix::identity(n, n),
            kind: OperatorKind::PerronFrobenius,
            t: 1.0,
            gamma_id: "x".into(),
            box_volume: 1.0,
        };
        assert!(operator_norm_residual(&op(3), &op(3), &op(4), 1.0).is_err());
        let mut zero = op(3);
        zero.matrix.fill(0.0);
        assert_eq!(operator_norm_residual(&op(3), &op(3), &zero, 0.0).unwrap(), 0.0);
    }
}
