//! Error-vs-rank sweeps over methods, end times and ranks.

mod config;
mod output;

pub use config::{
    load_config, parse_ranks, preset, preset_with, ExperimentConfig, Method, ModelSpec, PriorSpec,
    PRESETS,
};
pub use output::{
    csv_string, emit_csv, emit_hankel, emit_summary, emit_svg_plots, summary_string, write_report,
    CSV_HEADER,
};

use std::time::{Duration, Instant};

use nalgebra::{Cholesky, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fourdvar::{
    fourdvar_gramians, outer_loop, FourDVarProblem, OuterLoopResult, DEFAULT_TOL,
};
use crate::gramians::{
    fisher_factor, infinite_noisy_observability, make_compatible_prior, tl_noisy_observability_with,
};
use crate::inference::{forward_map, reduced_model, FullPosterior, LinearPosterior, OlrSpectrum};
use crate::linalg::{rel_norm, DenseMatrix, SymFactor};
use crate::metrics::{draw_trials, empirical_risk_on, exact_bayes_risk, foerstner_factored};
use crate::models::{
    build_advection_diffusion, build_band_prior, build_heat_1d_with, load_lti_matrix_market,
    prior_from_lyapunov, read_matrix_market, uniform_times, InferenceSetup, LtiSystem,
    MeasurementSet, TimeKind,
};
use crate::reduction::Balancer;
use crate::rng::{NormalStream, STREAM_MEASUREMENTS};

/// Slack for the OLR optimality inequalities.
pub const OPTIMALITY_SLACK: f64 = 1e-10;
/// Relative TLBT/BT gap tolerated at the largest end time and rank.
pub const TLBT_BT_RATIO: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct ReportRow {
    pub model: String,
    pub method: String,
    pub t_e: f64,
    /// Requested rank.
    pub rank: usize,
    /// Rank actually used, after clamping to the numerical rank.
    pub effective_rank: usize,
    /// Label suffix of the prior the estimator was built with (`""`, `"-NC"`, `"-C"`).
    pub prior: &'static str,
    /// Label suffix of the prior of the reference posterior.
    pub reference: &'static str,
    pub foerstner: f64,
    pub exact_risk: f64,
    pub empirical_risk: Option<f64>,
    pub emp_stderr: Option<f64>,
    pub seed: u64,
    pub runtime: Duration,
}

#[derive(Debug, Clone)]
pub struct HankelSpectrum {
    pub method: String,
    pub t_e: f64,
    pub values: Vec<f64>,
}

impl HankelSpectrum {
    /// Values divided by the leading one.
    pub fn normalized(&self) -> Vec<f64> {
        let top = self.values.first().copied().unwrap_or(1.0);
        self.values.iter().map(|v| v / top).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub model: String,
    pub method: String,
    pub t_e: f64,
    pub rank: usize,
    pub metric: &'static str,
    pub olr: f64,
    pub other: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub name: String,
    pub rows: Vec<ReportRow>,
    pub spectra: Vec<HankelSpectrum>,
    pub spectral_abscissa: f64,
    pub violations: Vec<Violation>,
    /// Largest gap between the OLR Förstner error and its closed form.
    pub olr_tail_defect: f64,
    pub warnings: Vec<String>,
    pub diagnostics: Vec<String>,
}

impl ExperimentReport {
    pub fn empty(name: &str) -> Self {
        Self {
            name: name.to_string(),
            rows: Vec::new(),
            spectra: Vec::new(),
            spectral_abscissa: f64::NAN,
            violations: Vec::new(),
            olr_tail_defect: 0.0,
            warnings: Vec::new(),
            diagnostics: Vec::new(),
        }
    }

    pub fn row(&self, model: &str, method: &str, t_e: f64, rank: usize) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.method == method && r.t_e == t_e && r.rank == rank)
    }
}

pub fn build_model(cfg: &ExperimentConfig) -> Result<LtiSystem> {
    match &cfg.model {
        ModelSpec::Heat { diffusivity } => build_heat_1d_with(cfg.d, *diffusivity),
        ModelSpec::AdvectionDiffusion {
            diffusion,
            velocity,
        } => build_advection_diffusion(cfg.d, *diffusion, *velocity),
        ModelSpec::External { a, b, c } => load_lti_matrix_market(a, b.as_deref(), c),
    }
}

pub fn build_prior(cfg: &ExperimentConfig, system: &LtiSystem) -> Result<SymFactor> {
    let d = system.state_dim();
    match &cfg.prior {
        PriorSpec::Lyapunov => prior_from_lyapunov(system, &DenseMatrix::identity(d, d)),
        PriorSpec::Band { seed } => build_band_prior(d, *seed),
        PriorSpec::Identity => Ok(SymFactor::identity(d)),
        PriorSpec::File(path) => {
            let g = read_matrix_market(path)?;
            if g.shape() != (d, d) {
                return Err(Error::Dimension(format!(
                    "prior in {} is {}x{}, expected {d}x{d}",
                    path.display(),
                    g.nrows(),
                    g.ncols()
                )));
            }
            let l = Cholesky::new(g).ok_or_else(|| {
                Error::Definiteness(format!(
                    "prior in {} is not positive definite",
                    path.display()
                ))
            })?;
            SymFactor::new(l.unpack())
        }
    }
}

fn noise_cov(cfg: &ExperimentConfig, system: &LtiSystem) -> DenseMatrix {
    let p = system.output_dim();
    DenseMatrix::identity(p, p) * cfg.sigma_obs.powi(2)
}

/// Model-dependent checks that need the system matrices.
fn validate_against(cfg: &ExperimentConfig, system: &LtiSystem, abscissa: f64) -> Result<()> {
    if system.kind() != TimeKind::Continuous {
        return Err(Error::Config(
            "experiments need a continuous-time model".into(),
        ));
    }
    let d = system.state_dim();
    if let Some(&r) = cfg.ranks.iter().find(|&&r| r > d) {
        return Err(Error::Config(format!(
            "rank {r} exceeds the state dimension {d}"
        )));
    }
    if cfg.methods.contains(&Method::Bt) && abscissa >= 0.0 {
        return Err(Error::Stability(abscissa));
    }
    if cfg.compare_compatible && abscissa >= 0.0 {
        return Err(Error::Config(
            "compare_compatible needs a stable model".into(),
        ));
    }
    Ok(())
}

/// One prior variant: the reference posterior rows are measured against,
/// and the optimal low-rank approximation built from that prior.
struct Reference {
    model: String,
    suffix: &'static str,
    setup: InferenceSetup,
    posterior: FullPosterior,
    olr: OlrSpectrum,
    trials: Vec<MeasurementSet>,
}

enum Estimator<'a> {
    Balanced {
        balancer: &'a Balancer,
        variant: usize,
    },
    Olr {
        variant: usize,
    },
}

struct Job<'a> {
    reference: usize,
    method: String,
    estimator: Estimator<'a>,
    rank: usize,
}

struct Evaluated {
    row: ReportRow,
    olr_tail: Option<f64>,
}

fn evaluate(
    job: &Job,
    refs: &[Reference],
    system: &LtiSystem,
    cfg: &ExperimentConfig,
    t_e: f64,
) -> Result<Evaluated> {
    let start = Instant::now();
    let reference = &refs[job.reference];
    let (post, variant, effective, tail): (LinearPosterior, usize, usize, Option<f64>) =
        match job.estimator {
            Estimator::Balanced { balancer, variant } => {
                let setup = &refs[variant].setup;
                let eff = job.rank.min(balancer.usable_rank());
                let red = balancer.reduce(system, setup.prior(), eff)?;
                (reduced_model(setup, &red)?, variant, eff, None)
            }
            Estimator::Olr { variant } => {
                let own = &refs[variant];
                let eff = job
                    .rank
                    .min(own.setup.state_dim().min(own.posterior.f.nrows()));
                // the closed form only describes the distance to its own posterior
                let tail = (variant == job.reference).then(|| own.olr.foerstner_tail(eff));
                (own.olr.truncate(eff)?, variant, eff, tail)
            }
        };
    let setup = &refs[variant].setup;
    let foerstner =
        foerstner_factored(&post.cov_factor, &reference.posterior.posterior.cov_factor)?;
    let exact = exact_bayes_risk(&post.mean_map, &reference.posterior)?;
    let empirical = if reference.trials.is_empty() {
        None
    } else {
        Some(empirical_risk_on(
            &reference.trials,
            &reference.posterior,
            cfg.seed,
            |m| post.mean(setup, m),
        )?)
    };
    Ok(Evaluated {
        row: ReportRow {
            model: reference.model.clone(),
            method: job.method.clone(),
            t_e,
            rank: job.rank,
            effective_rank: effective,
            prior: refs[variant].suffix,
            reference: reference.suffix,
            foerstner,
            exact_risk: exact.value,
            empirical_risk: empirical.map(|e| e.value),
            emp_stderr: empirical.and_then(|e| e.std_error),
            seed: cfg.seed,
            runtime: start.elapsed(),
        },
        olr_tail: tail.map(|t| (t - foerstner).abs()),
    })
}

/// Run every (method, end time, rank) combination of `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let system = build_model(cfg)?;
    let abscissa = system.spectral_abscissa()?;
    validate_against(cfg, &system, abscissa)?;
    let prior = build_prior(cfg, &system)?;
    let noise = noise_cov(cfg, &system);

    let mut report = ExperimentReport::empty(&cfg.name);
    report.spectral_abscissa = abscissa;

    let mut priors = vec![("", prior.clone())];
    if cfg.compare_compatible {
        let compatible = make_compatible_prior(&system, &prior)?;
        priors = vec![("-NC", prior), ("-C", compatible)];
    }
    let balanced: Vec<Method> = cfg
        .methods
        .iter()
        .copied()
        .filter(|&m| m != Method::Olr)
        .collect();
    let with_olr = cfg.methods.contains(&Method::Olr);

    let bt_obs = if balanced.contains(&Method::Bt) {
        Some(infinite_noisy_observability(&system, &noise)?)
    } else {
        None
    };

    for &t_e in &cfg.end_times {
        let times = uniform_times(cfg.step, t_e)?;
        let refs: Vec<Reference> = priors
            .par_iter()
            .map(|(suffix, p)| {
                let setup =
                    InferenceSetup::new(system.clone(), p.clone(), noise.clone(), times.clone())?;
                let forward = forward_map(&setup)?;
                let posterior = FullPosterior::with_forward(&setup, &forward)?;
                let olr = OlrSpectrum::new(&setup, &posterior.f)?;
                let trials = if cfg.n_trials > 0 {
                    draw_trials(&setup, &forward, cfg.n_trials, cfg.seed)
                } else {
                    Vec::new()
                };
                Ok(Reference {
                    model: format!("{}{suffix}", cfg.name),
                    suffix,
                    setup,
                    posterior,
                    olr,
                    trials,
                })
            })
            .collect::<Result<_>>()?;

        // observability-side factors do not depend on the prior
        let obs: Vec<(Method, SymFactor)> = balanced
            .par_iter()
            .map(|&m| {
                let factor = match m {
                    Method::Bt => bt_obs.clone().expect("computed above"),
                    Method::Tlbt => {
                        tl_noisy_observability_with(&system, &noise, t_e, cfg.obs_route)?
                    }
                    Method::BtH => fisher_factor(&refs[0].setup)?,
                    Method::Olr => unreachable!(),
                };
                Ok((m, factor))
            })
            .collect::<Result<_>>()?;

        let mut balancers: Vec<(String, usize, Balancer)> = Vec::new();
        for (m, q) in &obs {
            for (vi, v) in refs.iter().enumerate() {
                let label = format!("{}{}", m.label(), v.suffix);
                let b = Balancer::new(v.setup.prior(), q)?;
                report.spectra.push(HankelSpectrum {
                    method: label.clone(),
                    t_e,
                    values: b.hankel().to_vec(),
                });
                let max_rank = cfg.ranks.iter().copied().max().unwrap_or(0);
                if max_rank > b.usable_rank() {
                    report.warnings.push(format!(
                        "{label} at t_e = {t_e}: numerical rank {} < requested {max_rank}; larger ranks are clamped",
                        b.usable_rank()
                    ));
                }
                balancers.push((label, vi, b));
            }
        }

        let mut jobs = Vec::new();
        for (ri, _) in refs.iter().enumerate() {
            for (label, vi, b) in &balancers {
                for &r in &cfg.ranks {
                    jobs.push(Job {
                        reference: ri,
                        method: label.clone(),
                        estimator: Estimator::Balanced {
                            balancer: b,
                            variant: *vi,
                        },
                        rank: r,
                    });
                }
            }
            if with_olr {
                for (vi, v) in refs.iter().enumerate() {
                    for &r in &cfg.ranks {
                        jobs.push(Job {
                            reference: ri,
                            method: format!("{}{}", Method::Olr.label(), v.suffix),
                            estimator: Estimator::Olr { variant: vi },
                            rank: r,
                        });
                    }
                }
            }
        }
        // rows come back in job order whatever the completion order
        let evaluated: Vec<Evaluated> = jobs
            .par_iter()
            .map(|j| evaluate(j, &refs, &system, cfg, t_e))
            .collect::<Result<_>>()?;
        for e in evaluated {
            if let Some(gap) = e.olr_tail {
                report.olr_tail_defect = report.olr_tail_defect.max(gap);
            }
            report.rows.push(e.row);
        }
        for r in &refs {
            report.diagnostics.push(format!(
                "{} t_e = {t_e}: {} measurement times, {} informative data directions",
                r.model,
                r.setup.n_times(),
                r.olr.informative()
            ));
        }
    }
    report.diagnostics.push(format!(
        "largest |OLR Foerstner - closed form|: {:e}",
        report.olr_tail_defect
    ));
    check_optimality(&mut report);
    check_tlbt_vs_bt(cfg, &mut report);
    Ok(report)
}

fn is_olr(row: &ReportRow) -> bool {
    row.method == format!("{}{}", Method::Olr.label(), row.prior)
}

/// The optimal approximation of a reference posterior is the OLR built from
/// the reference's own prior. Its mean has the least risk among all rank-`r`
/// linear estimators; its covariance the least Förstner distance among
/// updates `Γ_pr - K K^T` of that same prior, which excludes balanced
/// methods built from another prior.
fn check_optimality(report: &mut ExperimentReport) {
    let mut found = Vec::new();
    let mut cross = 0usize;
    for olr in report
        .rows
        .iter()
        .filter(|r| is_olr(r) && r.prior == r.reference)
    {
        for other in report.rows.iter().filter(|r| {
            !is_olr(r) && r.model == olr.model && r.t_e == olr.t_e && r.rank == olr.rank
        }) {
            let mut pairs = vec![("exact_risk", olr.exact_risk, other.exact_risk)];
            if other.prior == olr.prior {
                pairs.push(("foerstner", olr.foerstner, other.foerstner));
            } else if olr.foerstner > other.foerstner + OPTIMALITY_SLACK {
                cross += 1;
            }
            for (metric, a, b) in pairs {
                if a > b + OPTIMALITY_SLACK {
                    found.push(Violation {
                        model: olr.model.clone(),
                        method: other.method.clone(),
                        t_e: olr.t_e,
                        rank: olr.rank,
                        metric,
                        olr: a,
                        other: b,
                    });
                }
            }
        }
    }
    if cross > 0 {
        report.diagnostics.push(format!(
            "{cross} rows where a balanced method built from another prior has a smaller Foerstner distance than OLR"
        ));
    }
    for v in &found {
        report.warnings.push(format!(
            "optimality violated: {} {} at t_e = {}, r = {}: OLR {:e} > {} {:e}",
            v.model, v.metric, v.t_e, v.rank, v.olr, v.method, v.other
        ));
    }
    report.violations = found;
}

/// TLBT should approach BT at the largest end time and rank.
fn check_tlbt_vs_bt(cfg: &ExperimentConfig, report: &mut ExperimentReport) {
    let (Some(&t_e), Some(&r)) = (
        cfg.end_times.iter().max_by(|a, b| a.total_cmp(b)),
        cfg.ranks.iter().max(),
    ) else {
        return;
    };
    let mut notes = Vec::new();
    for tl in report
        .rows
        .iter()
        .filter(|row| row.t_e == t_e && row.rank == r && row.method.starts_with("TLBT"))
    {
        let bt_label = tl.method.replacen("TLBT", "BT", 1);
        if let Some(bt) = report.row(&tl.model, &bt_label, t_e, r) {
            let gap = (tl.foerstner - bt.foerstner).abs();
            let line = format!(
                "{} t_e = {t_e}, r = {r}: {} Foerstner {:e}, {} {:e}",
                tl.model, tl.method, tl.foerstner, bt.method, bt.foerstner
            );
            if gap > TLBT_BT_RATIO * bt.foerstner {
                notes.push((true, format!("{line} (differ by more than 10%)")));
            } else {
                notes.push((false, line));
            }
        }
    }
    for (warn, line) in notes {
        if warn {
            report.warnings.push(line);
        } else {
            report.diagnostics.push(line);
        }
    }
}

/// Hankel spectra of every balanced method of `cfg` at end time `t_e`.
pub fn gramian_spectra(cfg: &ExperimentConfig, t_e: f64) -> Result<Vec<HankelSpectrum>> {
    let mut single = cfg.clone();
    single.end_times = vec![t_e];
    single.validate()?;
    let system = build_model(&single)?;
    let abscissa = system.spectral_abscissa()?;
    validate_against(&single, &system, abscissa)?;
    let prior = build_prior(&single, &system)?;
    let noise = noise_cov(&single, &system);
    let mut priors = vec![("", prior.clone())];
    if single.compare_compatible {
        priors = vec![
            ("-NC", prior.clone()),
            ("-C", make_compatible_prior(&system, &prior)?),
        ];
    }
    let times = uniform_times(single.step, t_e)?;
    let mut out = Vec::new();
    for &m in single.methods.iter().filter(|&&m| m != Method::Olr) {
        for (suffix, p) in &priors {
            let setup =
                InferenceSetup::new(system.clone(), p.clone(), noise.clone(), times.clone())?;
            let q = match m {
                Method::Bt => infinite_noisy_observability(&system, &noise)?,
                Method::Tlbt => {
                    tl_noisy_observability_with(&system, &noise, t_e, single.obs_route)?
                }
                Method::BtH => fisher_factor(&setup)?,
                Method::Olr => unreachable!(),
            };
            out.push(HankelSpectrum {
                method: format!("{}{suffix}", m.label()),
                t_e,
                values: Balancer::new(setup.prior(), &q)?.hankel().to_vec(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FourDVarDemo {
    pub state_dim: usize,
    pub steps: usize,
    pub rank: usize,
    pub full: OuterLoopResult,
    pub reduced: OuterLoopResult,
    /// `‖x_reduced - x_full‖ / ‖x_full‖`.
    pub analysis_gap: f64,
    pub background_error: f64,
    pub full_error: f64,
    pub reduced_error: f64,
}

/// Twin experiment: 4D-Var on the model discretized at the measurement
/// step, solved with the full and the balanced inner loop.
pub fn fourdvar_demo(cfg: &ExperimentConfig) -> Result<FourDVarDemo> {
    cfg.validate()?;
    let system = build_model(cfg)?;
    let prior = build_prior(cfg, &system)?;
    let noise = noise_cov(cfg, &system);
    let d = system.state_dim();
    let p = system.output_dim();
    let model = LtiSystem::discrete(system.propagator(cfg.step)?, system.c().clone())?;

    let mut stream = NormalStream::new(cfg.seed, STREAM_MEASUREMENTS);
    let background = DVector::zeros(d);
    let truth = &background + prior.base() * stream.vector(d);
    let mut x = truth.clone();
    let mut observations = Vec::with_capacity(cfg.fourdvar_steps + 1);
    for k in 0..=cfg.fourdvar_steps {
        if k > 0 {
            x = model.a() * x;
        }
        observations.push(model.c() * &x + stream.vector(p) * cfg.sigma_obs);
    }
    let problem = FourDVarProblem::new(model, background.clone(), prior, noise, observations)?;
    let pair = fourdvar_gramians(&problem, cfg.fourdvar_steps + 1)?;
    let balancer = Balancer::from_pair(&pair)?;
    let rank = cfg.fourdvar_rank.min(balancer.usable_rank()).min(d);
    let reduction = balancer.reduce(problem.model(), problem.prior(), rank)?;

    let full = outer_loop(&problem, None, DEFAULT_TOL, 20)?;
    let reduced = outer_loop(&problem, Some(&reduction), DEFAULT_TOL, 20)?;
    Ok(FourDVarDemo {
        state_dim: d,
        steps: cfg.fourdvar_steps,
        rank,
        analysis_gap: rel_norm(&reduced.x0, &full.x0),
        background_error: rel_norm(&background, &truth),
        full_error: rel_norm(&full.x0, &truth),
        reduced_error: rel_norm(&reduced.x0, &truth),
        full,
        reduced,
    })
}
