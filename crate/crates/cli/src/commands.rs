//! Subcommand handlers.

use std::fs;
use std::path::Path;

use fallfact::experiments::{self, ExperimentSpec, MaxGapSpec, TfRateSpec, F17, FULL_ROC_REPS};
use fallfact::kstest::{self, KsOptions, StatMethod};
use fallfact::transforms::{self, TransformKind};
use fallfact::trendfilter::{self, SolverConfig, TrendFilterFit, TrendFilterProblem};
use fallfact::{parallel, InputGrid, TiePolicy};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::io::{create, read_column, read_pairs, write_columns, write_text};
use crate::{
    BenchArgs, Command, Experiment, Failure, KstestArgs, Method, Op, SimulateArgs, Ties, TransformArgs,
    TrendfilterArgs,
};

const BENCH_MIN_N: usize = 64;

pub fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Transform(a) => transform(a),
        Command::Trendfilter(a) => trend_filter(a),
        Command::Kstest(a) => ks_test(a),
        Command::Simulate(a) => simulate(a),
        Command::Bench(a) => bench(a),
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn check_order(k: usize) -> Result<(), Failure> {
    if k > transforms::MAX_ORDER {
        return Err(usage(format!("--k {k} exceeds the supported maximum {}", transforms::MAX_ORDER)));
    }
    Ok(())
}

fn json<T: Serialize>(value: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn transform(a: TransformArgs) -> Result<(), Failure> {
    check_order(a.k)?;
    let x = read_column(&a.x)?;
    let mut y = read_column(&a.y)?;
    if x.len() != y.len() {
        return Err(Failure::Io(format!("{} x values but {} y values", x.len(), y.len())));
    }
    let grid = InputGrid::from_sorted(x)?;
    let kind = match a.op {
        Op::H => TransformKind::Forward,
        Op::Hinv => TransformKind::Inverse,
        Op::Ht => TransformKind::Transpose,
        Op::Htinv => TransformKind::TransposeInverse,
    };
    transforms::apply(kind, &mut y, &grid, a.k)?;
    write_columns(&a.out, &["y"], &[&y])
}

#[derive(Serialize)]
struct FitSummary {
    lambda: F17,
    objective: F17,
    iterations: usize,
    kkt: F17,
    converged: bool,
    polished: bool,
}

#[derive(Serialize)]
struct TrendfilterSummary {
    k: usize,
    n: usize,
    rescale: bool,
    lambda_max: Option<F17>,
    fits: Vec<FitSummary>,
}

fn trend_filter(a: TrendfilterArgs) -> Result<(), Failure> {
    check_order(a.k)?;
    if let Some(l) = a.lambda {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(usage(format!("--lambda must be finite and nonnegative, got {l}")));
        }
    }
    if a.nlambda == Some(0) {
        return Err(usage("--nlambda must be at least 1"));
    }
    let (x, y) = read_pairs(&a.data)?;
    let grid = InputGrid::from_sorted(x.clone())?;
    let work = if a.rescale { grid.rescale_unit()? } else { grid };
    let config = SolverConfig::default();

    let (fits, lmax): (Vec<TrendFilterFit>, Option<f64>) = match (a.lambda, a.nlambda) {
        (Some(lambda), _) => {
            let problem = TrendFilterProblem::new(work, y.clone(), a.k, lambda)?;
            (vec![trendfilter::fit(&problem, &config)?], None)
        }
        (None, Some(count)) => {
            let lmax = trendfilter::lambda_max(&work, &y, a.k)?;
            if !(lmax > 0.0) {
                return Err(Failure::Compute(fallfact::Error::InvalidConfig(format!(
                    "data are a polynomial of degree {}; the lambda path is empty",
                    a.k
                ))));
            }
            let lambdas = trendfilter::default_lambda_path(lmax, count, trendfilter::DEFAULT_PATH_RATIO);
            (trendfilter::fit_path(&work, &y, a.k, &lambdas, &config)?, Some(lmax))
        }
        (None, None) => return Err(usage("one of --lambda or --nlambda is required")),
    };

    let mut out = csv::Writer::from_writer(create(&a.out)?);
    let csv_err = |e: csv::Error| Failure::Io(format!("{}: {e}", a.out.display()));
    out.write_record(["lambda", "x", "y", "fitted"]).map_err(csv_err)?;
    for fit in &fits {
        for i in 0..x.len() {
            out.write_record([fit.lambda, x[i], y[i], fit.beta[i]].map(experiments::fmt17)).map_err(csv_err)?;
        }
    }
    out.flush().map_err(|e| Failure::Io(format!("{}: {e}", a.out.display())))?;

    let summary = TrendfilterSummary {
        k: a.k,
        n: x.len(),
        rescale: a.rescale,
        lambda_max: lmax.map(F17),
        fits: fits
            .iter()
            .map(|f| FitSummary {
                lambda: F17(f.lambda),
                objective: F17(f.objective),
                iterations: f.iterations,
                kkt: F17(f.kkt),
                converged: f.converged,
                polished: f.polished,
            })
            .collect(),
    };
    print!("{}", json(&summary)?);
    match fits.iter().find(|f| !f.converged) {
        Some(f) => Err(Failure::Compute(fallfact::Error::NotConverged { iterations: f.iterations })),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct KsSummary {
    statistic: F17,
    k: usize,
    method: String,
    pvalue: Option<F17>,
    m: usize,
    n: usize,
    seed: Option<u64>,
}

fn ks_test(a: KstestArgs) -> Result<(), Failure> {
    check_order(a.k)?;
    if a.permutations == Some(0) {
        return Err(usage("--permutations must be at least 1"));
    }
    let policy = match a.ties {
        Ties::Reject => TiePolicy::Reject,
        Ties::Jitter => {
            if !(a.jitter_eps > 0.0 && a.jitter_eps.is_finite()) {
                return Err(usage(format!("--jitter-eps must be positive, got {}", a.jitter_eps)));
            }
            TiePolicy::Jitter { eps: a.jitter_eps, seed: a.jitter_seed }
        }
    };
    let method = match a.method {
        Method::H => StatMethod::H,
        Method::G => StatMethod::G,
    };
    let x = read_column(&a.x)?;
    let y = read_column(&a.y)?;
    let sample = kstest::join_samples(&x, &y, policy)?;
    let opts = KsOptions { rescale: !a.no_rescale };
    let (result, seed) = match a.permutations {
        Some(b) => {
            let seed = a.seed.unwrap_or(0);
            (kstest::permutation_pvalue(&sample, a.k, method, b, seed, opts)?, Some(seed))
        }
        None => (kstest::ks_statistic(&sample, a.k, method, opts)?, None),
    };
    let summary = KsSummary {
        statistic: F17(result.statistic),
        k: a.k,
        method: method.to_string(),
        pvalue: result.pvalue.map(F17),
        m: sample.m(),
        n: sample.n(),
        seed,
    };
    write_text(&a.out, &json(&summary)?)
}

fn read_spec<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn validated(r: fallfact::Result<()>) -> Result<(), Failure> {
    r.map_err(|e| usage(format!("invalid spec: {e}")))
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    if a.threads == Some(0) {
        return Err(usage("--threads must be at least 1"));
    }
    if a.full_scale && !matches!(a.experiment, Experiment::Roc) {
        return Err(usage("--full-scale applies to roc only"));
    }
    fs::create_dir_all(&a.out).map_err(|e| Failure::Io(format!("{}: {e}", a.out.display())))?;
    let file = |name: &str, suffix: &str| a.out.join(format!("{name}{suffix}"));
    match a.experiment {
        Experiment::Maxgap => {
            let spec: MaxGapSpec = read_spec(&a.spec)?;
            validated(spec.validate())?;
            let results = parallel::install(a.threads, || experiments::run_max_gap(&spec))??;
            experiments::write_max_gap_csv(&results, create(&file(&spec.name, ".csv"))?)?;
            write_text(&file(&spec.name, ".json"), &experiments::max_gap_summary_json(&spec, &results)?)
        }
        Experiment::Tfrate => {
            let spec: TfRateSpec = read_spec(&a.spec)?;
            validated(spec.validate())?;
            let result = parallel::install(a.threads, || experiments::simulate_tf_rate(&spec))??;
            result.write_csv(create(&file(&spec.name, ".csv"))?)?;
            write_text(&file(&spec.name, ".json"), &result.summary_json()?)
        }
        Experiment::Roc => {
            let mut spec: ExperimentSpec = read_spec(&a.spec)?;
            if a.full_scale {
                spec.reps = FULL_ROC_REPS;
            }
            validated(spec.validate())?;
            let table = parallel::install(a.threads, || experiments::simulate_roc(&spec))??;
            table.write_curves_csv(create(&file(&spec.name, ".csv"))?)?;
            table.write_statistics_csv(create(&file(&spec.name, "_statistics.csv"))?)?;
            write_text(&file(&spec.name, ".json"), &table.summary_json()?)
        }
    }
}

fn bench(a: BenchArgs) -> Result<(), Failure> {
    check_order(a.k)?;
    if a.nmax < BENCH_MIN_N {
        return Err(usage(format!("--nmax must be at least {BENCH_MIN_N}")));
    }
    if a.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    let n_list: Vec<usize> =
        std::iter::successors(Some(BENCH_MIN_N), |&n| n.checked_mul(2)).take_while(|&n| n <= a.nmax).collect();
    let rows = experiments::bench_transforms(&n_list, a.k, a.reps, a.seed)?;
    Ok(experiments::write_bench_csv(&rows, a.k, create(&a.out)?)?)
}
