//! Subcommand bodies. Each returns the summary record and writes its own
//! artifacts through [`Outputs`].

use caslab::beltrami::{solve_beltrami, BeltramiCoefficient, BeltramiSettings};
use caslab::cas::{assemble_connection, flatness_residual};
use caslab::cmetric::{bers_metric_jets, pair_cubics, ComplexMetric, CubicPair};
use caslab::examples::{verify_catalogue, CatalogueSettings};
use caslab::gauss::{continue_ray, newton_solve, NewtonSettings, RayMode, RaySchedule};
use caslab::holonomy::{integrate_loop, invariants, minkowski_form, preserves_form, unimodular_project, LoopPath};
use caslab::spectra::{discretize, discretize_shifted, family_metric, invertibility_scan, spectrum as eigen_report, ScanSettings};
use caslab::transport::{commute_check, solve_transport, Generator, MetricSeries, PowerSeries2D};
use caslab::{Backend, ComplexField, Exec, GridDomain, C64};
use serde_json::{json, Value};

use crate::config::{
    BackendName, Config, MetricSpec, OperatorName, ProfileName, RayModeName, SeriesSpec, SpectrumMode,
};
use crate::output::{num, Outputs};
use crate::svg::{fold_diagram, scatter, spectrum_scatter, BranchPoint};
use crate::CliError;

type Out = Result<Value, CliError>;

const HALF_PLANE: [f64; 4] = [-0.5, 0.5, 1.0, 2.0];

fn config_error(message: String) -> CliError {
    CliError::Config { message, position: None }
}

fn window_backend(cfg: &Config) -> Result<Backend, CliError> {
    let b = cfg.grid.backend.unwrap_or(BackendName::Fd6Window).backend();
    if b.periodic() {
        return Err(config_error(format!("window metrics need a window backend, not {b:?}")));
    }
    Ok(b)
}

fn window(cfg: &Config) -> Result<GridDomain, CliError> {
    let [x0, x1, y0, y1] = cfg.grid.window.unwrap_or(HALF_PLANE);
    Ok(GridDomain::window(cfg.grid.n, x0, x1, y0, y1)?)
}

fn read_field(path: &std::path::Path) -> Result<ComplexField, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    ComplexField::read_snapshot(std::io::BufReader::new(file))
        .map_err(|e| config_error(format!("{}: {e}", path.display())))
}

pub fn build_metric(cfg: &Config) -> Result<ComplexMetric, CliError> {
    let n = cfg.grid.n;
    let spec = cfg.metric.clone().ok_or_else(|| config_error("this subcommand needs a [metric] table".into()))?;
    let metric = match spec {
        MetricSpec::Flat { lambda, mu } => {
            let d = GridDomain::square(n, cfg.grid.length)?;
            let backend = cfg.grid.backend.unwrap_or(BackendName::Spectral).backend();
            ComplexMetric::new(
                ComplexField::constant(&d, lambda.c()),
                ComplexField::constant(&d, mu.c()),
                ComplexField::constant(&d, C64::new(1.0, 0.0)),
                backend,
            )?
        }
        MetricSpec::Hyperbolic {} => bers_metric_jets(
            &window(cfg)?,
            |z| [z, C64::new(1.0, 0.0)],
            |z| [z.conj(), C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
            window_backend(cfg)?,
        )?,
        MetricSpec::Bers { a, epsilon } => {
            let (a, eps) = (a.c(), epsilon.c());
            bers_metric_jets(
                &window(cfg)?,
                move |z| [z + a * z * z, 1.0 + 2.0 * a * z],
                move |z| [z.conj() + eps * z, eps, C64::new(1.0, 0.0)],
                window_backend(cfg)?,
            )?
        }
        MetricSpec::Family { family, param, index } => {
            let mut h = family_metric(family.family(param), index, cfg.seed, n)?;
            if cfg.grid.backend.is_some() {
                h.backend = window_backend(cfg)?;
            }
            h
        }
        MetricSpec::Snapshot { lambda, mu, wbar_dzbar } => {
            let backend = cfg.grid.backend.unwrap_or(BackendName::Spectral).backend();
            ComplexMetric::new(read_field(&lambda)?, read_field(&mu)?, read_field(&wbar_dzbar)?, backend)?
        }
    };
    let cert = metric.check_positive();
    if !cert.passed {
        return Err(CliError::Numerical(caslab::CasError::NotPositive(format!("{cert:?}"))));
    }
    Ok(metric)
}

fn cubics(cfg: &Config, d: &GridDomain) -> CubicPair {
    CubicPair::constant(d, cfg.cubic.phi.c(), cfg.cubic.psibar.c())
}

fn mean(f: &ComplexField) -> C64 {
    f.data.iter().sum::<C64>() / f.len() as f64
}

fn describe(h: &ComplexMetric) -> Value {
    let d = h.domain();
    json!({ "nx": d.nx, "ny": d.ny, "origin": d.origin, "lx": d.lx, "ly": d.ly, "backend": h.backend })
}

pub fn solve(cfg: &Config, out: &mut Outputs) -> Out {
    let h = build_metric(cfg)?;
    let d = h.domain();
    let q = cubics(cfg, &d);
    let u0 = ComplexField::constant(&d, cfg.solver.initial.c());
    let settings = NewtonSettings {
        tol: cfg.solver.tol,
        max_iter: cfg.solver.max_iter,
        dense_threshold: cfg.solver.dense_threshold,
        spectrum: cfg.solver.spectrum,
        ..NewtonSettings::default()
    };
    let sol = newton_solve(&h, &q, &u0, &settings)?;
    out.write_snapshot("u.casf", &sol.u)?;
    let rows: Vec<Vec<String>> =
        sol.newton_trace.iter().enumerate().map(|(k, r)| vec![k.to_string(), num(*r)]).collect();
    out.write_csv("trace.csv", &["iteration", "residual"], &rows)?;
    let s = pair_cubics(&h, &q)?;
    Ok(json!({
        "grid": describe(&h),
        "s_mean": mean(&s),
        "u_mean": mean(&sol.u),
        "u_max_deviation": sol.u.max_diff(&ComplexField::constant(&d, mean(&sol.u)))?,
        "residual_norm": sol.residual_norm,
        "newton_trace": sol.newton_trace,
        "quadratic_constant": sol.quadratic_constant(3, 1e-11),
        "spectral_summary": sol.spectral_summary,
        "solver": sol.solver,
        "fields": ["u.casf"],
    }))
}

fn schedule(cfg: &Config) -> RaySchedule {
    let r = &cfg.ray;
    let mode = match r.mode {
        RayModeName::Hll => RayMode::Hll,
        RayModeName::Twistor => RayMode::Twistor { rate: r.rate.c() },
    };
    RaySchedule {
        mode,
        t_max: r.t_max,
        ds: r.ds.min(r.ds_max),
        ds_max: r.ds_max,
        max_steps: r.max_steps,
        u_floor: r.u_floor,
        fold_tol: r.fold_tol,
        newton_tol: cfg.solver.tol,
        ..RaySchedule::hll()
    }
}

pub fn ray(cfg: &Config, out: &mut Outputs) -> Out {
    let h = build_metric(cfg)?;
    let d = h.domain();
    let q = cubics(cfg, &d);
    let u0 = ComplexField::constant(&d, cfg.solver.initial.c());
    let result = continue_ray(&h, &q, &u0, &schedule(cfg))?;
    let header = [
        "step", "branch", "t_re", "t_im", "s_re", "s_im", "x_re", "x_im", "u_mean_re", "u_mean_im", "u_rms", "eigen_re",
        "eigen_im", "residual",
    ];
    let rows: Vec<Vec<String>> = result
        .points
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let mut r = vec![k.to_string(), p.branch.to_string()];
            for v in [p.t, p.s_mean, p.x_mean, p.u_mean] {
                r.push(num(v.re));
                r.push(num(v.im));
            }
            r.extend([num(p.u_rms), num(p.eigenvalue.re), num(p.eigenvalue.im), num(p.residual)]);
            r
        })
        .collect();
    out.write_csv("ray.csv", &header, &rows)?;
    if let Some(f) = &result.fold {
        let row = vec![
            num(f.t.re),
            num(f.bracket.0.re),
            num(f.bracket.1.re),
            num(f.s.re),
            num(f.s.im),
            num(f.s_bracket.0.re),
            num(f.s_bracket.1.re),
            num(f.x.re),
            num(f.x.im),
            num(f.smallest_eigenvalue.norm()),
            num(f.kernel_alignment),
            f.agree.to_string(),
        ];
        let header = [
            "t", "t_lo", "t_hi", "s_re", "s_im", "s_lo", "s_hi", "x_re", "x_im", "eigen_abs", "kernel_alignment", "agree",
        ];
        out.write_csv("fold.csv", &header, &[row])?;
    }
    let points: Vec<BranchPoint> = result
        .points
        .iter()
        .map(|p| BranchPoint { branch: p.branch, t: p.t.re, u_norm: p.u_rms, eigen_abs: p.eigenvalue.norm() })
        .collect();
    let fold = result.fold.as_ref().map(|f| BranchPoint {
        branch: 0,
        t: f.t.re,
        u_norm: f.u_mean.norm(),
        eigen_abs: f.smallest_eigenvalue.norm(),
    });
    let plot = fold_diagram(&points, fold);
    plot.warnings.iter().for_each(|w| eprintln!("warning: {w}"));
    out.write_bytes("fold.svg", plot.svg.as_bytes())?;
    Ok(json!({
        "grid": describe(&h),
        "points": result.points.len(),
        "branches": result.branches,
        "steps": result.steps,
        "rejected": result.rejected,
        "fold": result.fold,
    }))
}

pub fn holonomy(cfg: &Config, out: &mut Outputs) -> Out {
    let h = build_metric(cfg)?;
    let d = h.domain();
    let q = cubics(cfg, &d);
    let conn = assemble_connection(&h, &q)?;
    let flatness = flatness_residual(&conn)?.max_abs();
    let center = cfg.holonomy.center.map(|c| c.c()).unwrap_or_else(|| {
        d.origin + C64::new(0.5 * d.hx() * (d.nx - 1) as f64, 0.5 * d.hy() * (d.ny - 1) as f64)
    });
    let path = LoopPath::circle(center, cfg.holonomy.radius, cfg.holonomy.sides);
    let hol = integrate_loop(&conn, &path, cfg.holonomy.steps)?;
    let (proj, root) = unimodular_project(&hol.m, None)?;
    let inv = invariants(&proj.m)?;
    let raw: Vec<Vec<C64>> = (0..3).map(|r| (0..3).map(|k| hol.m[(r, k)]).collect()).collect();
    let projected: Vec<Vec<C64>> = (0..3).map(|r| (0..3).map(|k| proj.m[(r, k)]).collect()).collect();
    let record = json!({
        "grid": describe(&h),
        "loop": { "center": center, "radius": cfg.holonomy.radius, "sides": cfg.holonomy.sides, "area": path.area() },
        "flatness_residual": flatness,
        "holonomy": raw,
        "det_defect": hol.det_defect,
        "identity_defect": hol.identity_defect(),
        "area_bound": path.area().abs() * flatness,
        "projected": projected,
        "cube_root_det": root,
        "projected_det_defect": proj.det_defect,
        "minkowski_form_defect": preserves_form(&proj.m, &minkowski_form()),
        "invariants": inv,
    });
    out.write_json("holonomy.json", &record)?;
    Ok(record)
}

pub fn spectrum(cfg: &Config, out: &mut Outputs) -> Out {
    let sp = &cfg.spectrum;
    match sp.mode {
        SpectrumMode::Operator => {
            let h = build_metric(cfg)?;
            let d = h.domain();
            let op = match sp.operator {
                OperatorName::Shifted => discretize_shifted(&h, sp.shift)?,
                OperatorName::Linearization => {
                    let s = pair_cubics(&h, &cubics(cfg, &d))?;
                    discretize(&h, &ComplexField::constant(&d, cfg.solver.initial.c()), &s)?
                }
            };
            let rep = eigen_report(&op, sp.count)?;
            let rows: Vec<Vec<String>> = rep
                .eigenvalues
                .iter()
                .zip(&rep.residuals)
                .enumerate()
                .map(|(k, (v, r))| vec![k.to_string(), num(v.re), num(v.im), num(*r)])
                .collect();
            out.write_csv("spectrum.csv", &["index", "re", "im", "residual"], &rows)?;
            let pts: Vec<(f64, f64)> = rep.eigenvalues.iter().map(|v| (v.re, v.im)).collect();
            let plot = spectrum_scatter("eigenvalues nearest zero", &pts);
            plot.warnings.iter().for_each(|w| eprintln!("warning: {w}"));
            out.write_bytes("spectrum.svg", plot.svg.as_bytes())?;
            Ok(json!({ "grid": describe(&h), "operator": op.source, "report": rep }))
        }
        SpectrumMode::Scan => {
            let settings = ScanSettings {
                floor: sp.floor,
                shift: sp.shift,
                coarse: sp.coarse,
                fine: sp.fine,
                stability: sp.stability,
            };
            let family = sp.family.family(sp.param);
            let rep = invertibility_scan(family, sp.samples, cfg.seed, &settings, Exec::default());
            let rows: Vec<Vec<String>> = rep
                .samples
                .iter()
                .map(|s| {
                    vec![
                        s.index.to_string(),
                        num(s.sigma_min_coarse),
                        num(s.sigma_min),
                        num(s.sigma_max),
                        num(s.relative_change),
                        format!("{:?}", s.verdict),
                        s.note.clone(),
                    ]
                })
                .collect();
            let header = ["index", "sigma_min_coarse", "sigma_min", "sigma_max", "relative_change", "verdict", "note"];
            out.write_csv("scan.csv", &header, &rows)?;
            let pts: Vec<(f64, f64)> = rep.samples.iter().map(|s| (s.index as f64, s.sigma_min)).collect();
            let plot = scatter("smallest singular value", "sample", "sigma_min", &pts);
            plot.warnings.iter().for_each(|w| eprintln!("warning: {w}"));
            out.write_bytes("scan.svg", plot.svg.as_bytes())?;
            Ok(json!({ "scan": rep }))
        }
    }
}

pub fn verify(cfg: &Config, out: &mut Outputs) -> Out {
    let v = &cfg.verify;
    let settings = CatalogueSettings { n: v.n, half_width: v.half_width, eps: v.eps.c(), theta: v.theta };
    let report = verify_catalogue(&settings)?;
    out.write_json("report.json", &report)?;
    out.write_bytes("report.md", report.to_markdown().as_bytes())?;
    let failing: Vec<String> = report
        .entries
        .iter()
        .flat_map(|e| e.checks.iter().filter(|c| c.gating && !c.passed).map(move |c| format!("{}: {}", e.name, c.name)))
        .collect();
    Ok(json!({ "passed": report.passed(), "entries": report.entries.len(), "failing": failing }))
}

fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |a, i| a * i as f64)
}

fn series(spec: &SeriesSpec, order: usize) -> Result<PowerSeries2D, CliError> {
    let o = C64::new(0.0, 0.0);
    match spec {
        SeriesSpec::Named(name) => match name.as_str() {
            "exp-zbar" => Ok(PowerSeries2D::from_fn(order, o, |j, k| if j == 0 { C64::new(1.0 / factorial(k), 0.0) } else { o })),
            "one" => Ok(PowerSeries2D::constant(order, o, C64::new(1.0, 0.0))),
            "z" => Ok(PowerSeries2D::z(order, o)),
            "zbar" => Ok(PowerSeries2D::zbar(order, o)),
            other => Err(config_error(format!("unknown series '{other}' (exp-zbar, one, z, zbar)"))),
        },
        SeriesSpec::Terms(rows) => {
            let mut s = PowerSeries2D::zeros(order, o);
            for &[j, k, re, im] in rows {
                if j < 0.0 || k < 0.0 || j.fract() != 0.0 || k.fract() != 0.0 || (j + k) as usize > order {
                    return Err(config_error(format!("series term [{j}, {k}] is not a monomial of order <= {order}")));
                }
                s = s.add(&PowerSeries2D::monomial(order, o, j as usize, k as usize, C64::new(re, im)))?;
            }
            Ok(s)
        }
    }
}

/// `λ = 1 + 0.3 z z̄ + 0.1 z² - 0.05i z̄²` with `w̄ = z̄ + 0.1 z²`.
fn sample_metric(order: usize) -> MetricSeries {
    let o = C64::new(0.0, 0.0);
    let lambda = PowerSeries2D::from_fn(order, o, |j, k| match (j, k) {
        (0, 0) => C64::new(1.0, 0.0),
        (1, 1) => C64::new(0.3, 0.0),
        (2, 0) => C64::new(0.1, 0.0),
        (0, 2) => C64::new(0.0, -0.05),
        _ => o,
    });
    MetricSeries {
        lambda,
        a: PowerSeries2D::monomial(order, o, 1, 0, C64::new(0.2, 0.0)),
        b: PowerSeries2D::constant(order, o, C64::new(1.0, 0.0)),
    }
}

pub fn transport(cfg: &Config, out: &mut Outputs) -> Out {
    let t = &cfg.transport;
    let f0 = series(&t.data, t.order)?;
    let g = Generator::steady(series(&t.generator, t.order)?);
    let run = |dt: f64| solve_transport(&f0, &g, t.t, dt).map(|s| s.series.into_iter().next().expect("one series"));
    let f = run(t.dt)?;
    let mut rows = Vec::new();
    for j in 0..=t.order {
        for k in 0..=(t.order - j) {
            let v = f.coeff(j, k);
            if v.norm() > 0.0 {
                rows.push(vec![j.to_string(), k.to_string(), num(v.re), num(v.im)]);
            }
        }
    }
    out.write_csv("coefficients.csv", &["j", "k", "re", "im"], &rows)?;
    let richardson = if t.richardson {
        let (a, b) = (run(t.dt / 2.0)?, run(t.dt / 4.0)?);
        Some(f.sub(&a)?.norm() / a.sub(&b)?.norm())
    } else {
        None
    };
    let defects = if t.commute { Some(commute_check(&sample_metric(t.order), &f0, &g, t.t, t.dt, t.radius)?) } else { None };
    Ok(json!({
        "order": t.order,
        "t": t.t,
        "dt": t.dt,
        "norm": f.norm(),
        "richardson_ratio": richardson,
        "commute_defects": defects,
    }))
}

pub fn beltrami(cfg: &Config, out: &mut Outputs) -> Out {
    let b = &cfg.beltrami;
    let hw = b.half_width;
    let d = GridDomain::new(b.n, b.n, 2.0 * hw, 2.0 * hw, C64::new(-hw, -hw))?;
    let (k, sigma, c0) = (b.k.c(), b.sigma, b.center.c());
    let mu = BeltramiCoefficient::from_fn(&d, c0, b.support_radius, |z| {
        let w = z - c0;
        let t = w.norm_sqr() / (sigma * sigma);
        match b.profile {
            ProfileName::Radial if w.norm() > 0.0 => k * t * (1.0 - t).exp() * w / w.conj(),
            ProfileName::Bump => k * (-t).exp(),
            _ => C64::new(0.0, 0.0),
        }
    })?;
    let map = solve_beltrami(&mu, &BeltramiSettings { tol: b.tol, max_iter: b.max_iter })?;
    out.write_snapshot("map.casf", &map.f)?;
    out.write_snapshot("mu.casf", &map.mu)?;
    Ok(json!({
        "n": b.n,
        "sup_mu": mu.sup(),
        "iterations": map.iterations,
        "residual": map.residual,
        "max_contraction": map.max_contraction(2),
        "fields": ["map.casf", "mu.casf"],
    }))
}
