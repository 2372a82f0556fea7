//! Manufactured disk problems, convergence-rate studies, and table output.
//!
//! The manufactured case lives on the disk of radius `r` with constant load
//! `C`, unit gradient obstacle, and zero Dirichlet data on the circle. For
//! `C ≤ 2/r` the constraint never activates and the solution is the
//! quadratic `C/4 (r² - |x|²)`; for larger `C` the cone `r - |x|` forms over
//! the annulus `|x| ≥ 2/C`. The dual solution is `z(x) = -C/2 x` throughout.

use crate::dual_solver::{run_flow, FlowParams, FlowReport};
use crate::duality::{
    conforming_postprocess, continuous_gap_estimator, continuous_total_error,
    discrete_convexity_measures, discrete_gap_estimator, eoc, marini_reconstruct,
};
use crate::energy::ProblemData;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::mesh::disk::build_disk_mesh;
use crate::mesh::{compute_geometry, GeometryCache, Mesh};
use crate::spaces::{
    cr_gradient, cr_interpolate, project_data, rt_element_mean, rt_interpolate, CrFunction,
    RtFunction,
};

/// Disk problem with constant load `C`, unit obstacle, zero boundary values.
#[derive(Debug, Clone, Copy)]
pub struct ManufacturedCase {
    pub c: f64,
    pub r: f64,
}

impl ManufacturedCase {
    pub fn new(c: f64, r: f64) -> Result<Self> {
        if !(c > 0.0) || !(r > 0.0) {
            return Err(Error::Parameter(format!(
                "manufactured case needs positive load and radius (C = {c}, r = {r})"
            )));
        }
        let case = ManufacturedCase { c, r };
        if !case.is_inactive() {
            // The two branches agree on the free-boundary circle |x| = 2/C.
            for k in 0..16 {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / 16.0;
                let x = Vec2::new(theta.cos(), theta.sin()).scale(2.0 / c);
                let outer = r - x.norm();
                let inner = -c / 4.0 * x.norm_sq() + r - 1.0 / c;
                if (outer - inner).abs() > 1e-14 * (1.0 + r) {
                    return Err(Error::Parameter(
                        "manufactured branches disagree at the free boundary".into(),
                    ));
                }
            }
        }
        Ok(case)
    }

    /// The gradient constraint never activates when `C ≤ 2/r`.
    pub fn is_inactive(&self) -> bool {
        self.c <= 2.0 / self.r
    }

    pub fn u(&self, x: Vec2) -> f64 {
        let rho = x.norm();
        if self.is_inactive() {
            self.c / 4.0 * (self.r * self.r - rho * rho)
        } else if rho >= 2.0 / self.c {
            self.r - rho
        } else {
            -self.c / 4.0 * rho * rho + self.r - 1.0 / self.c
        }
    }

    pub fn grad_u(&self, x: Vec2) -> Vec2 {
        let rho = x.norm();
        if self.is_inactive() || rho < 2.0 / self.c {
            x.scale(-self.c / 2.0)
        } else {
            x.scale(-1.0 / rho)
        }
    }

    pub fn z(&self, x: Vec2) -> Vec2 {
        x.scale(-self.c / 2.0)
    }

    pub fn f(&self, _x: Vec2) -> f64 {
        self.c
    }

    pub fn zeta(&self, _x: Vec2) -> f64 {
        1.0
    }

    /// Analytic active set `{|x| ≥ 2/C}` (empty in the inactive regime).
    pub fn is_active(&self, x: Vec2) -> bool {
        !self.is_inactive() && x.norm() >= 2.0 / self.c
    }

    /// Projects the case data onto a mesh (`u_D` is the side mean of `u`).
    pub fn project(&self, mesh: &Mesh, geo: &GeometryCache) -> Result<ProblemData> {
        project_data(
            mesh,
            geo,
            |x| self.f(x),
            |_| 0.0,
            |x| self.u(x),
            |x| self.zeta(x),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    APriori,
    APosteriori,
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub case: ManufacturedCase,
    pub levels: Vec<u32>,
    pub flow: FlowParams,
    /// Number of levels processed concurrently.
    pub jobs: usize,
}

impl StudyConfig {
    pub fn new(case: ManufacturedCase, levels: Vec<u32>, flow: FlowParams) -> Result<Self> {
        if levels.is_empty() || levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter(
                "study levels must be strictly increasing and non-empty".into(),
            ));
        }
        Ok(StudyConfig {
            case,
            levels,
            flow,
            jobs: 1,
        })
    }
}

#[derive(Debug, Clone)]
pub struct StudyRow {
    pub level: u32,
    pub h: f64,
    /// Total dof count of the saddle problem (RT sides plus elements).
    pub n_dofs: usize,
    pub e_tot: f64,
    pub e_gap: f64,
    pub eoc_tot: Option<f64>,
    pub eoc_gap: Option<f64>,
    pub identity_gap: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceTable {
    pub rows: Vec<StudyRow>,
}

impl ConvergenceTable {
    /// CSV with the fixed column set
    /// `level,h,N,e_tot,e_gap,eoc_tot,eoc_gap,identity_gap`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,h,N,e_tot,e_gap,eoc_tot,eoc_gap,identity_gap\n");
        for row in &self.rows {
            let fmt_opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
            out.push_str(&format!(
                "{},{:.12e},{},{:.12e},{:.12e},{},{},{:.12e}\n",
                row.level,
                row.h,
                row.n_dofs,
                row.e_tot,
                row.e_gap,
                fmt_opt(row.eoc_tot),
                fmt_opt(row.eoc_gap),
                row.identity_gap
            ));
        }
        out
    }

    /// Mean EOC of the gap column over the last `n` increments.
    pub fn mean_eoc_gap(&self, n: usize) -> f64 {
        mean_tail(self.rows.iter().filter_map(|r| r.eoc_gap), n)
    }

    pub fn mean_eoc_tot(&self, n: usize) -> f64 {
        mean_tail(self.rows.iter().filter_map(|r| r.eoc_tot), n)
    }
}

fn mean_tail(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    let all: Vec<f64> = values.collect();
    let tail = &all[all.len().saturating_sub(n)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

struct LevelOutcome {
    h: f64,
    n_dofs: usize,
    e_tot: f64,
    e_gap: f64,
}

fn solve_level(case: &ManufacturedCase, level: u32, flow: &FlowParams) -> Result<(Mesh, GeometryCache, ProblemData, FlowReport)> {
    let mesh = build_disk_mesh(case.r, level)?;
    let geo = compute_geometry(&mesh)?;
    let data = case.project(&mesh, &geo)?;
    let report = run_flow(&mesh, &geo, &data, flow).map_err(|e| Error::Study {
        level,
        msg: e.to_string(),
    })?;
    Ok((mesh, geo, data, report))
}

fn apriori_level(case: &ManufacturedCase, level: u32, flow: &FlowParams) -> Result<LevelOutcome> {
    let (mesh, geo, data, report) = solve_level(case, level, flow)?;

    let v = cr_interpolate(&mesh, |x| case.u(x));
    let y = rt_interpolate(&mesh, &geo, |x| case.z(x));
    let gap = discrete_gap_estimator(&mesh, &geo, &v, &y, &data);
    let m = discrete_convexity_measures(&mesh, &geo, &v, &y, &report.z, &data);

    Ok(LevelOutcome {
        h: mesh.mesh_size(&geo),
        n_dofs: mesh.n_sides() + mesh.n_triangles(),
        e_tot: m.rho_primal_sq + m.rho_dual_sq,
        e_gap: gap.total,
    })
}

fn aposteriori_level(case: &ManufacturedCase, level: u32, flow: &FlowParams) -> Result<LevelOutcome> {
    let (mesh, geo, data, report) = solve_level(case, level, flow)?;

    let (u_cr, _) = marini_reconstruct(&mesh, &geo, &report.z, &report.lambda, &data);
    let v_conf = conforming_postprocess(&mesh, &geo, &u_cr, &data, |x| case.u(x));
    let e_gap = continuous_gap_estimator(&mesh, &geo, &v_conf, &report.z, &data, case)
        .map_err(|e| Error::Study {
            level,
            msg: e.to_string(),
        })?;
    let e_tot = continuous_total_error(&mesh, &geo, &v_conf, &report.z, &data, case)
        .map_err(|e| Error::Study {
            level,
            msg: e.to_string(),
        })?;

    Ok(LevelOutcome {
        h: mesh.mesh_size(&geo),
        n_dofs: mesh.n_sides() + mesh.n_triangles(),
        e_tot,
        e_gap,
    })
}

fn run_study(config: &StudyConfig, kind: StudyKind) -> Result<ConvergenceTable> {
    let level_fn = |level: u32| match kind {
        StudyKind::APriori => apriori_level(&config.case, level, &config.flow),
        StudyKind::APosteriori => aposteriori_level(&config.case, level, &config.flow),
    };

    let outcomes: Vec<LevelOutcome> = if config.jobs > 1 {
        let mut results: Vec<Option<Result<LevelOutcome>>> =
            (0..config.levels.len()).map(|_| None).collect();
        for chunk in config
            .levels
            .iter()
            .copied()
            .enumerate()
            .collect::<Vec<_>>()
            .chunks(config.jobs)
        {
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&(i, level)| (i, scope.spawn(move || level_fn(level))))
                    .collect();
                for (i, handle) in handles {
                    results[i] = Some(handle.join().expect("study worker panicked"));
                }
            });
        }
        results
            .into_iter()
            .map(|r| r.expect("all levels processed"))
            .collect::<Result<_>>()?
    } else {
        config
            .levels
            .iter()
            .map(|&level| level_fn(level))
            .collect::<Result<_>>()?
    };

    let hs: Vec<f64> = outcomes.iter().map(|o| o.h).collect();
    let e_tots: Vec<f64> = outcomes.iter().map(|o| o.e_tot).collect();
    let e_gaps: Vec<f64> = outcomes.iter().map(|o| o.e_gap).collect();
    let eoc_tot = if outcomes.len() >= 2 && e_tots.iter().all(|&e| e > 0.0) {
        eoc(&e_tots, &hs)?
    } else {
        Vec::new()
    };
    let eoc_gap = if outcomes.len() >= 2 && e_gaps.iter().all(|&e| e > 0.0) {
        eoc(&e_gaps, &hs)?
    } else {
        Vec::new()
    };

    let rows = outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| StudyRow {
            level: config.levels[i],
            h: o.h,
            n_dofs: o.n_dofs,
            e_tot: o.e_tot,
            e_gap: o.e_gap,
            eoc_tot: (i > 0).then(|| eoc_tot.get(i - 1).copied()).flatten(),
            eoc_gap: (i > 0).then(|| eoc_gap.get(i - 1).copied()).flatten(),
            identity_gap: (o.e_tot - o.e_gap).abs() / o.e_gap.max(f64::MIN_POSITIVE),
        })
        .collect();
    Ok(ConvergenceTable { rows })
}

/// Interpolates the exact pair, solves each level, and tabulates the
/// discrete gap estimator against the discrete total error.
pub fn run_apriori_study(config: &StudyConfig) -> Result<ConvergenceTable> {
    run_study(config, StudyKind::APriori)
}

/// Solves each level, post-processes to a conforming approximation, and
/// tabulates the continuous estimator against the continuous total error.
pub fn run_aposteriori_study(config: &StudyConfig) -> Result<ConvergenceTable> {
    run_study(config, StudyKind::APosteriori)
}

/// Element counts of the primal and dual active sets and their disagreement,
/// at relative tolerance 1e-6.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveSetReport {
    pub n_active_primal: usize,
    pub n_active_dual: usize,
    pub n_disagree: usize,
}

pub fn active_set_report(
    mesh: &Mesh,
    geo: &GeometryCache,
    u_cr: &CrFunction,
    z_rt: &RtFunction,
    data: &ProblemData,
) -> ActiveSetReport {
    let tol = 1e-6;
    let grads = cr_gradient(mesh, geo, u_cr);
    let means = rt_element_mean(mesh, geo, z_rt);
    let mut report = ActiveSetReport {
        n_active_primal: 0,
        n_active_dual: 0,
        n_disagree: 0,
    };
    for t in 0..mesh.n_triangles() {
        let zeta = data.zeta.values[t];
        let primal = grads.values[t].norm() >= zeta * (1.0 - tol);
        let dual = means.values[t].norm() >= zeta * (1.0 - tol);
        report.n_active_primal += primal as usize;
        report.n_active_dual += dual as usize;
        report.n_disagree += (primal != dual) as usize;
    }
    report
}
