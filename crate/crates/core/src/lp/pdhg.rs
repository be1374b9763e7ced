//! Restarted primal-dual hybrid gradient for `min c.x, Ax = b, x >= 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, InfeasibilityWitness, Result};
use crate::linalg::{dot, norm2, CsrMatrix};

use super::assemble::{ConstraintSystem, NuMode, RowKind};
use super::colgen::crash_start;
use super::measures::{displacement_defect, displacement_ray, DiscreteMeasure};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdhgOptions {
    /// Relative tolerance on primal residual, dual residual and gap.
    pub tol: f64,
    pub max_iter: usize,
    /// Iterations between convergence / restart / infeasibility checks.
    pub check_every: usize,
    /// Relative tolerance of a Farkas ray: `max (A^T y)_+ <= tol * b.y`.
    pub infeasibility_tol: f64,
    pub ruiz_passes: usize,
    /// Start from a column-generation solution when one is available.
    pub crash: bool,
    pub crash_rounds: usize,
}

impl Default for PdhgOptions {
    fn default() -> Self {
        PdhgOptions {
            tol: 1e-8,
            max_iter: 500_000,
            check_every: 64,
            infeasibility_tol: 1e-8,
            ruiz_passes: 10,
            crash: true,
            crash_rounds: 2000,
        }
    }
}

/// Optimal measure together with its dual certificate.
#[derive(Clone, Debug, Serialize)]
pub struct PrimalSolution {
    pub x: Vec<f64>,
    /// Row multipliers; holonomy rows give the test function, balance rows
    /// the price-like multiplier.
    pub y: Vec<f64>,
    pub measure: DiscreteMeasure,
    pub value: f64,
    pub dual_value: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub restarts: usize,
    /// Column-generation rounds spent on the starting point; 0 for a cold
    /// start.
    pub crash_rounds: usize,
    /// Relative KKT error at every check.
    pub history: Vec<f64>,
}

impl PrimalSolution {
    /// Multipliers of one row family, in row order.
    pub fn multipliers(&self, cs: &ConstraintSystem, family: fn(&RowKind) -> bool) -> Vec<f64> {
        cs.rows.iter().zip(&self.y).filter(|(r, _)| family(r)).map(|(_, y)| *y).collect()
    }

    /// `min_j (c - A^T y)_j`; nonnegative up to tolerance for a dual-feasible
    /// certificate.
    pub fn min_reduced_cost(&self, cs: &ConstraintSystem) -> f64 {
        let at = cs.a.transpose();
        let mut aty = vec![0.0; cs.n_cols()];
        at.mul_vec(&self.y, &mut aty);
        cs.c.iter().zip(&aty).map(|(c, a)| c - a).fold(f64::INFINITY, f64::min)
    }
}

struct Scaled {
    a: CsrMatrix,
    at: CsrMatrix,
    b: Vec<f64>,
    c: Vec<f64>,
    row_scale: Vec<f64>,
    col_scale: Vec<f64>,
}

fn scale_problem(a: &CsrMatrix, b: &[f64], c: &[f64], passes: usize) -> Scaled {
    let (m, n) = (a.nrows, a.ncols);
    let mut dr = vec![1.0; m];
    let mut dc = vec![1.0; n];
    let mut values = a.values.clone();
    let apply = |values: &mut Vec<f64>, fr: &[f64], fc: &[f64]| {
        for r in 0..m {
            for p in a.indptr[r]..a.indptr[r + 1] {
                values[p] *= fr[r] * fc[a.indices[p]];
            }
        }
    };
    for _ in 0..passes {
        let mut rmax = vec![0.0_f64; m];
        let mut cmax = vec![0.0_f64; n];
        for r in 0..m {
            for p in a.indptr[r]..a.indptr[r + 1] {
                let v = values[p].abs();
                rmax[r] = rmax[r].max(v);
                cmax[a.indices[p]] = cmax[a.indices[p]].max(v);
            }
        }
        let fr: Vec<f64> = rmax.iter().map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }).collect();
        let fc: Vec<f64> = cmax.iter().map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }).collect();
        apply(&mut values, &fr, &fc);
        dr.iter_mut().zip(&fr).for_each(|(d, f)| *d *= f);
        dc.iter_mut().zip(&fc).for_each(|(d, f)| *d *= f);
    }
    // Pock-Chambolle with alpha = 1.
    let mut rsum = vec![0.0_f64; m];
    let mut csum = vec![0.0_f64; n];
    for r in 0..m {
        for p in a.indptr[r]..a.indptr[r + 1] {
            rsum[r] += values[p].abs();
            csum[a.indices[p]] += values[p].abs();
        }
    }
    let fr: Vec<f64> = rsum.iter().map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }).collect();
    let fc: Vec<f64> = csum.iter().map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }).collect();
    apply(&mut values, &fr, &fc);
    dr.iter_mut().zip(&fr).for_each(|(d, f)| *d *= f);
    dc.iter_mut().zip(&fc).for_each(|(d, f)| *d *= f);

    let scaled = CsrMatrix {
        nrows: m,
        ncols: n,
        indptr: a.indptr.clone(),
        indices: a.indices.clone(),
        values,
    };
    Scaled {
        at: scaled.transpose(),
        a: scaled,
        b: b.iter().zip(&dr).map(|(v, d)| v * d).collect(),
        c: c.iter().zip(&dc).map(|(v, d)| v * d).collect(),
        row_scale: dr,
        col_scale: dc,
    }
}

/// Largest singular value by power iteration on `A^T A`.
fn operator_norm(a: &CsrMatrix, at: &CsrMatrix) -> f64 {
    let mut x = vec![1.0 / (a.ncols as f64).sqrt(); a.ncols];
    let mut ax = vec![0.0; a.nrows];
    let mut estimate = 0.0;
    for _ in 0..64 {
        a.mul_vec(&x, &mut ax);
        at.mul_vec(&ax, &mut x);
        let nrm = norm2(&x);
        if nrm == 0.0 {
            return 0.0;
        }
        let next = nrm.sqrt();
        x.iter_mut().for_each(|v| *v /= nrm);
        if (next - estimate).abs() <= 1e-6 * next {
            estimate = next;
            break;
        }
        estimate = next;
    }
    // Power iteration approaches from below.
    estimate * 1.01
}

/// Unscaled optimality measures of a scaled iterate.
struct Kkt {
    primal: f64,
    dual: f64,
    gap: f64,
    primal_obj: f64,
    dual_obj: f64,
}

impl Kkt {
    fn relative(&self, bn: f64, cn: f64) -> f64 {
        (self.primal / (1.0 + bn))
            .max(self.dual / (1.0 + cn))
            .max(self.gap / (1.0 + self.primal_obj.abs() + self.dual_obj.abs()))
    }
}

struct Problem<'a> {
    s: &'a Scaled,
    b_norm: f64,
    c_norm: f64,
}

impl Problem<'_> {
    fn kkt(&self, x: &[f64], y: &[f64], ax: &[f64], aty: &[f64]) -> Kkt {
        let s = self.s;
        let pr: Vec<f64> = (0..ax.len()).map(|r| (ax[r] - s.b[r]) / s.row_scale[r]).collect();
        let du: Vec<f64> = (0..aty.len())
            .map(|j| ((s.c[j] - aty[j]) / s.col_scale[j]).min(0.0))
            .collect();
        let primal_obj = dot(&s.c, x);
        let dual_obj = dot(&s.b, y);
        Kkt {
            primal: norm2(&pr),
            dual: norm2(&du),
            gap: (primal_obj - dual_obj).abs(),
            primal_obj,
            dual_obj,
        }
    }

    /// Weighted KKT error in the scaled space, used for restarts.
    fn weighted(&self, x: &[f64], y: &[f64], ax: &[f64], aty: &[f64], omega: f64) -> f64 {
        let s = self.s;
        let pr: f64 = ax.iter().zip(&s.b).map(|(a, b)| (a - b) * (a - b)).sum();
        let du: f64 = aty.iter().zip(&s.c).map(|(a, c)| (c - a).min(0.0).powi(2)).sum();
        let gap = dot(&s.c, x) - dot(&s.b, y);
        (omega * omega * pr + du / (omega * omega) + gap * gap).sqrt()
    }

    /// Checks whether `dy` (scaled) is a Farkas ray: `A^T y <= 0`, `b.y > 0`.
    fn farkas(&self, dy: &[f64], atdy: &[f64], tol: f64) -> Option<(Vec<f64>, f64)> {
        let s = self.s;
        let y: Vec<f64> = dy.iter().zip(&s.row_scale).map(|(v, d)| v * d).collect();
        let scale = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return None;
        }
        let by = dot(&s.b, dy) / scale;
        if !(by > 1e-9 * (1.0 + self.b_norm)) {
            return None;
        }
        let worst = atdy
            .iter()
            .zip(&s.col_scale)
            .map(|(a, d)| a / d / scale)
            .fold(0.0_f64, f64::max);
        (worst <= tol * by).then(|| (y.iter().map(|v| v / scale).collect(), by))
    }
}

/// Solves the measure LP of `cs`. Fixed-terminal systems whose terminal mean
/// contradicts the displacement identity are rejected at once with the
/// explicit Farkas ray.
pub fn solve_primal(cs: &ConstraintSystem, options: &PdhgOptions) -> Result<PrimalSolution> {
    solve_primal_from(cs, options, None)
}

/// [`solve_primal`] started from a given primal vector.
pub fn solve_primal_from(cs: &ConstraintSystem, options: &PdhgOptions, start: Option<&[f64]>) -> Result<PrimalSolution> {
    check_displacement(cs)?;
    let crash = match start {
        None if options.crash => crash_start(cs, options.crash_rounds),
        _ => None,
    };
    match &crash {
        Some(c) => iterate(cs, options, Some(&c.x), Some(&c.y), c.rounds),
        None => iterate(cs, options, start, None, 0),
    }
}

fn check_displacement(cs: &ConstraintSystem) -> Result<()> {
    if let NuMode::Fixed(nu) = &cs.nu_mode {
        let defect = displacement_defect(cs, nu);
        if defect.abs() > 1e-9 {
            let ray = displacement_ray(cs);
            let g = &cs.grid;
            let mean = |m: &[f64]| -> f64 { (0..g.n_x()).map(|l| g.x(l) * m[l]).sum() };
            return Err(Error::Infeasible(InfeasibilityWitness {
                identity: "displacement".into(),
                defect,
                details: vec![
                    ("mean_nu".into(), mean(nu)),
                    ("mean_m0".into(), mean(&cs.m0)),
                    ("supply_integral".into(), cs.qbar.iter().sum::<f64>() * g.dt()),
                    ("ray_b_dot_y".into(), dot(&cs.b, &ray)),
                ],
            }));
        }
    }
    Ok(())
}

fn iterate(
    cs: &ConstraintSystem,
    options: &PdhgOptions,
    start: Option<&[f64]>,
    dual_start: Option<&[f64]>,
    crash_rounds: usize,
) -> Result<PrimalSolution> {
    let s = scale_problem(&cs.a, &cs.b, &cs.c, options.ruiz_passes);
    let problem = Problem {
        s: &s,
        b_norm: norm2(&cs.b),
        c_norm: norm2(&cs.c),
    };
    let (m, n) = (s.a.nrows, s.a.ncols);
    let eta = 0.998 / operator_norm(&s.a, &s.at).max(1e-12);
    let (bn, cn) = (norm2(&s.b), norm2(&s.c));
    let mut omega = if bn > 1e-10 && cn > 1e-10 { cn / bn } else { 1.0 };

    let mut x = match start {
        Some(x0) if x0.len() == n => x0.iter().zip(&s.col_scale).map(|(v, d)| (v / d).max(0.0)).collect(),
        Some(x0) => return Err(Error::Input(format!("start vector has {} entries, need {n}", x0.len()))),
        None => vec![0.0; n],
    };
    let mut y: Vec<f64> = match dual_start {
        Some(y0) => y0.iter().zip(&s.row_scale).map(|(v, d)| v / d).collect(),
        None => vec![0.0; m],
    };
    let mut ax = vec![0.0; m];
    s.a.mul_vec(&x, &mut ax);
    let mut aty = vec![0.0; n];
    s.at.mul_vec(&y, &mut aty);
    if start.is_some() {
        let k = problem.kkt(&x, &y, &ax, &aty);
        let r = k.relative(problem.b_norm, problem.c_norm);
        if r <= options.tol {
            return Ok(finish(cs, &s, &x, &y, k, 0, 0, crash_rounds, vec![r]));
        }
    }

    let mut x_sum = vec![0.0; n];
    let mut y_sum = vec![0.0; m];
    let mut avg_count = 0usize;
    let mut x_restart = x.clone();
    let mut y_restart = y.clone();
    let mut kkt_restart = problem.weighted(&x, &y, &ax, &aty, omega);
    let mut kkt_prev_candidate = f64::INFINITY;
    let mut since_restart = 0usize;
    let mut restarts = 0usize;
    let mut history = Vec::new();
    let mut y_check = y.clone();
    let mut aty_check = aty.clone();

    let mut x_new = vec![0.0; n];
    let mut ax_new = vec![0.0; m];
    let mut x_avg = vec![0.0; n];
    let mut y_avg = vec![0.0; m];
    let mut ax_avg = vec![0.0; m];
    let mut aty_avg = vec![0.0; n];

    for iteration in 1..=options.max_iter {
        let tau = eta / omega;
        let sigma = eta * omega;
        for j in 0..n {
            x_new[j] = (x[j] - tau * (s.c[j] - aty[j])).max(0.0);
        }
        s.a.mul_vec(&x_new, &mut ax_new);
        for r in 0..m {
            y[r] += sigma * (s.b[r] - 2.0 * ax_new[r] + ax[r]);
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut ax, &mut ax_new);
        s.at.mul_vec(&y, &mut aty);
        x_sum.iter_mut().zip(&x).for_each(|(a, v)| *a += v);
        y_sum.iter_mut().zip(&y).for_each(|(a, v)| *a += v);
        avg_count += 1;
        since_restart += 1;

        if iteration % options.check_every != 0 && iteration != options.max_iter {
            continue;
        }
        let inv = 1.0 / avg_count as f64;
        x_avg.iter_mut().zip(&x_sum).for_each(|(a, v)| *a = v * inv);
        y_avg.iter_mut().zip(&y_sum).for_each(|(a, v)| *a = v * inv);
        s.a.mul_vec(&x_avg, &mut ax_avg);
        s.at.mul_vec(&y_avg, &mut aty_avg);

        let k_cur = problem.kkt(&x, &y, &ax, &aty);
        let k_avg = problem.kkt(&x_avg, &y_avg, &ax_avg, &aty_avg);
        let (r_cur, r_avg) = (
            k_cur.relative(problem.b_norm, problem.c_norm),
            k_avg.relative(problem.b_norm, problem.c_norm),
        );
        let use_avg = r_avg < r_cur;
        history.push(r_cur.min(r_avg));
        if r_cur.min(r_avg) <= options.tol {
            let (xs, ys, k) = if use_avg { (&x_avg, &y_avg, k_avg) } else { (&x, &y, k_cur) };
            return Ok(finish(cs, &s, xs, ys, k, iteration, restarts, crash_rounds, history));
        }

        // Farkas ray from the drift of the dual iterate.
        let dy: Vec<f64> = y.iter().zip(&y_check).map(|(a, b)| a - b).collect();
        let atdy: Vec<f64> = aty.iter().zip(&aty_check).map(|(a, b)| a - b).collect();
        for (cand, atc) in [(&dy, &atdy), (&y, &aty)] {
            if let Some((ray, by)) = problem.farkas(cand, atc, options.infeasibility_tol) {
                return Err(Error::Infeasible(InfeasibilityWitness {
                    identity: "farkas_ray".into(),
                    defect: by,
                    details: vec![
                        ("iteration".into(), iteration as f64),
                        ("ray_norm2".into(), norm2(&ray)),
                    ],
                }));
            }
        }
        y_check.copy_from_slice(&y);
        aty_check.copy_from_slice(&aty);

        let w_cur = problem.weighted(&x, &y, &ax, &aty, omega);
        let w_avg = problem.weighted(&x_avg, &y_avg, &ax_avg, &aty_avg, omega);
        let (w_cand, cand_is_avg) = if w_avg < w_cur { (w_avg, true) } else { (w_cur, false) };
        let restart = w_cand <= 0.2 * kkt_restart
            || (w_cand <= 0.8 * kkt_restart && w_cand > kkt_prev_candidate)
            || since_restart as f64 >= 0.36 * iteration as f64;
        kkt_prev_candidate = w_cand;
        if restart {
            if cand_is_avg {
                x.copy_from_slice(&x_avg);
                y.copy_from_slice(&y_avg);
                ax.copy_from_slice(&ax_avg);
                aty.copy_from_slice(&aty_avg);
            }
            let dx = norm2(&x.iter().zip(&x_restart).map(|(a, b)| a - b).collect::<Vec<_>>());
            let dyn_ = norm2(&y.iter().zip(&y_restart).map(|(a, b)| a - b).collect::<Vec<_>>());
            if dx > 1e-10 && dyn_ > 1e-10 {
                omega = (0.5 * (dyn_ / dx).ln() + 0.5 * omega.ln()).exp();
            }
            x_restart.copy_from_slice(&x);
            y_restart.copy_from_slice(&y);
            kkt_restart = problem.weighted(&x, &y, &ax, &aty, omega);
            kkt_prev_candidate = f64::INFINITY;
            x_sum.iter_mut().for_each(|v| *v = 0.0);
            y_sum.iter_mut().for_each(|v| *v = 0.0);
            avg_count = 0;
            since_restart = 0;
            restarts += 1;
        }
    }
    Err(Error::NonConvergence {
        iterations: options.max_iter,
        last_residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    cs: &ConstraintSystem,
    s: &Scaled,
    xs: &[f64],
    ys: &[f64],
    k: Kkt,
    iterations: usize,
    restarts: usize,
    crash_rounds: usize,
    history: Vec<f64>,
) -> PrimalSolution {
    let x: Vec<f64> = xs.iter().zip(&s.col_scale).map(|(v, d)| v * d).collect();
    let y: Vec<f64> = ys.iter().zip(&s.row_scale).map(|(v, d)| v * d).collect();
    PrimalSolution {
        measure: DiscreteMeasure::from_lp(cs, &x),
        value: cs.objective(&x),
        dual_value: dot(&cs.b, &y),
        primal_residual: k.primal,
        dual_residual: k.dual,
        x,
        y,
        iterations,
        restarts,
        crash_rounds,
        history,
    }
}
