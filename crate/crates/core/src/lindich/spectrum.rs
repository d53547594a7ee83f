use serde::Serialize;

use super::dichotomy::analyze;
use super::{Axis, EdOptions, LinearSystem, PeriodicTable, Structure};
use crate::error::{invalid, Result};
use crate::seqspace::Window;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumMethod {
    /// Exact Floquet data when the structure allows it, bisection otherwise.
    Auto,
    /// Always bisect on dichotomy probes.
    Bisection,
}

#[derive(Debug, Clone)]
pub struct SpectrumOptions {
    /// Defaults to `[σ_min/2, 2σ_max]` over the window.
    pub gamma_range: Option<(f64, f64)>,
    pub resolution: f64,
    pub method: SpectrumMethod,
    pub ed: EdOptions,
    pub initial_probes: usize,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self { gamma_range: None, resolution: 1e-6, method: SpectrumMethod::Auto, ed: EdOptions::default(), initial_probes: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Probe {
    pub gamma: f64,
    pub has_ed: bool,
    pub rank: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    #[serde(rename = "interval")]
    pub axis: Axis,
    #[serde(rename = "spectrum")]
    pub intervals: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub heuristic: bool,
    #[serde(skip)]
    pub probes: Vec<Probe>,
}

impl SpectrumReport {
    pub fn contains(&self, gamma: f64) -> bool {
        self.intervals.iter().any(|[a, b]| *a <= gamma && gamma <= *b)
    }
}

pub fn default_gamma_range(sys: &LinearSystem, window: Window) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for t in window.iter() {
        for s in sys.coeff(t).singular_values().iter() {
            lo = lo.min(*s);
            hi = hi.max(*s);
        }
    }
    if hi == 0.0 {
        return (1e-6, 1.0);
    }
    (lo.max(1e-6 * hi) / 2.0, 2.0 * hi)
}

fn merge(mut iv: Vec<[f64; 2]>, resolution: f64) -> Vec<[f64; 2]> {
    iv.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let mut out: Vec<[f64; 2]> = Vec::new();
    for [a, b] in iv {
        match out.last_mut() {
            Some(last) if a - last[1] <= resolution => last[1] = last[1].max(b),
            _ => out.push([a, b]),
        }
    }
    out
}

fn table_points(t: &PeriodicTable) -> Vec<f64> {
    t.floquet_rates().into_iter().filter(|r| *r > 1e-300).collect()
}

struct Prober<'a> {
    sys: &'a LinearSystem,
    axis: Axis,
    window: Window,
    ed: EdOptions,
    probes: Vec<Probe>,
}

impl Prober<'_> {
    fn probe(&mut self, gamma: f64) -> Result<Probe> {
        let r = analyze(&self.sys.scaled(gamma), self.axis, self.window, &self.ed, false)?;
        let p = Probe { gamma, has_ed: r.has_ed, rank: r.rank };
        self.probes.push(p);
        Ok(p)
    }

    fn resolve(&mut self, a: Probe, b: Probe, resolution: f64, out: &mut Vec<[f64; 2]>) -> Result<()> {
        if a.has_ed && b.has_ed && a.rank == b.rank {
            return Ok(());
        }
        if !a.has_ed && !b.has_ed {
            out.push([a.gamma, b.gamma]);
            return Ok(());
        }
        if b.gamma - a.gamma <= resolution {
            match (a.has_ed, b.has_ed) {
                (true, true) => {
                    let m = 0.5 * (a.gamma + b.gamma);
                    out.push([m, m]);
                }
                (true, false) => out.push([b.gamma, b.gamma]),
                _ => out.push([a.gamma, a.gamma]),
            }
            return Ok(());
        }
        let m = self.probe(0.5 * (a.gamma + b.gamma))?;
        self.resolve(a, m, resolution, out)?;
        self.resolve(m, b, resolution, out)
    }
}

fn exact_intervals(sys: &LinearSystem, axis: Axis, window: Window, opts: &SpectrumOptions) -> Result<Option<Vec<[f64; 2]>>> {
    let (Some(minus), Some(plus)) = (sys.limit_minus(), sys.limit_plus()) else {
        return Ok(None);
    };
    let mut points = match (sys.structure(), axis) {
        (Structure::AsymPeriodic { .. }, Axis::ZPlus) => table_points(plus),
        (Structure::AsymPeriodic { .. }, Axis::ZMinus) => table_points(minus),
        (Structure::AsymPeriodic { .. }, Axis::Z) => {
            let mut v = table_points(plus);
            v.extend(table_points(minus));
            v
        }
        (Structure::General, _) => return Ok(None),
        _ => table_points(plus),
    };
    points.sort_by(|a, b| a.total_cmp(b));
    points.dedup_by(|a, b| (*a - *b).abs() <= opts.resolution);
    let mut iv: Vec<[f64; 2]> = points.iter().map(|p| [*p, *p]).collect();
    if matches!(sys.structure(), Structure::AsymPeriodic { .. }) && axis == Axis::Z {
        let mut prober = Prober { sys, axis, window, ed: opts.ed, probes: Vec::new() };
        for pair in points.windows(2) {
            if pair[1] - pair[0] <= opts.resolution {
                continue;
            }
            if !prober.probe((pair[0] * pair[1]).sqrt())?.has_ed {
                iv.push([pair[0], pair[1]]);
            }
        }
    }
    Ok(Some(iv))
}

/// Dichotomy spectrum on `axis`, as sorted disjoint closed intervals inside
/// the γ range. Degenerate intervals `[x, x]` are point spectrum.
pub fn spectrum(sys: &LinearSystem, axis: Axis, window: Window, opts: &SpectrumOptions) -> Result<SpectrumReport> {
    let (gmin, gmax) = opts.gamma_range.unwrap_or_else(|| default_gamma_range(sys, window));
    if !(gmin > 0.0 && gmax > gmin && gmax.is_finite()) {
        return invalid(format!("gamma range must satisfy 0 < γ_min < γ_max, got [{gmin}, {gmax}]"));
    }
    if !(opts.resolution > 0.0) {
        return invalid("resolution must be positive");
    }
    let mut warnings = Vec::new();
    let mut probes = Vec::new();
    let heuristic = sys.structure() == Structure::General;
    let exact = match opts.method {
        SpectrumMethod::Auto => exact_intervals(sys, axis, window, opts)?,
        SpectrumMethod::Bisection => None,
    };
    let raw = match exact {
        Some(iv) => iv,
        None => {
            let mut prober = Prober { sys, axis, window, ed: opts.ed, probes: Vec::new() };
            let n = opts.initial_probes.max(2);
            let grid: Vec<f64> = (0..n)
                .map(|i| (gmin.ln() + (gmax.ln() - gmin.ln()) * i as f64 / (n - 1) as f64).exp())
                .collect();
            let mut coarse = Vec::with_capacity(n);
            for g in grid {
                coarse.push(prober.probe(g)?);
            }
            let mut out = Vec::new();
            for pair in coarse.windows(2) {
                prober.resolve(pair[0], pair[1], opts.resolution, &mut out)?;
            }
            if !coarse[0].has_ed {
                out.push([gmin, gmin]);
            }
            if !coarse[n - 1].has_ed {
                out.push([gmax, gmax]);
            }
            probes = prober.probes;
            out
        }
    };
    let clipped: Vec<[f64; 2]> = raw
        .into_iter()
        .filter(|[a, b]| *b >= gmin && *a <= gmax)
        .map(|[a, b]| [a.max(gmin), b.min(gmax)])
        .collect();
    let intervals = merge(clipped, opts.resolution);
    if intervals.is_empty() {
        warnings.push(format!("no spectrum inside the γ range [{gmin}, {gmax}]"));
    }
    Ok(SpectrumReport { axis, intervals, warnings, heuristic, probes })
}
