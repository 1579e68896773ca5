use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use pricewar::demand::DemandDist;
use pricewar::evaluation::{
    build_policy, lda_outcome_probs, negative_log_likelihood, run_tournament, strategy_distance_report, NllRow,
    PolicyKind, TournamentRow, W1Row,
};
use pricewar::game::{ConsumptionRecord, MarketConfig};
use pricewar::io::{read_csv, read_records, write_csv, write_records};
use pricewar::lda::{
    infer as run_inference, read_preference, read_theta, write_diagnostics, write_preference, write_theta,
    AlignedEstimates, Corpus, DiagnosticRow, LdaConfig,
};
use pricewar::pipeline::{
    exposure_distributions, preprocess as run_preprocess, read_o2o, AssignmentRow, ExposureRow, PreprocessConfig,
    LEVELS,
};
use pricewar::policies::{QLearnerConfig, TrackerConfig};
use pricewar::simulator::{run_game, RoundShare};
use pricewar::{rng, Error, Result};

pub use pricewar::evaluation::TournamentConfig;

pub fn defaults_toml<T: Default + Serialize>() -> String {
    toml::to_string_pretty(&T::default()).unwrap_or_else(|e| format!("# unavailable: {e}\n"))
}

fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Data(format!("output failed validation: {}", what())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub market: MarketConfig,
    pub policy1: PolicyKind,
    pub policy2: PolicyKind,
    pub tracker: TrackerConfig,
    pub qlearn: QLearnerConfig,
    pub dp_cost_scale: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            market: MarketConfig::default(),
            policy1: PolicyKind::Random,
            policy2: PolicyKind::Random,
            tracker: TrackerConfig::default(),
            qlearn: QLearnerConfig::default(),
            dp_cost_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SummaryRow {
    policy1: String,
    policy2: String,
    rounds: u32,
    final_share1: Option<f64>,
    final_share2: Option<f64>,
    coerced1: usize,
    coerced2: usize,
}

pub fn simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: SimulateConfig = load(config)?;
    if let Some(s) = seed {
        cfg.market.seed = s;
    }
    cfg.market.validate()?;
    let s = cfg.market.seed;
    let mut p1 = build_policy(cfg.policy1, &cfg.tracker, &cfg.qlearn, cfg.dp_cost_scale, rng::derive_seed(s, &[0x5e, 0]))?;
    let mut p2 = build_policy(cfg.policy2, &cfg.tracker, &cfg.qlearn, cfg.dp_cost_scale, rng::derive_seed(s, &[0x5e, 1]))?;
    let result = run_game(&cfg.market, p1.as_mut(), p2.as_mut())?;

    std::fs::create_dir_all(out)?;
    let files = [out.join("records_company1.csv"), out.join("records_company2.csv")];
    for (path, recs) in files.iter().zip(&result.records) {
        write_records(path, recs)?;
    }
    write_csv(&out.join("trajectory.csv"), &result.trajectory)?;
    let summary = SummaryRow {
        policy1: cfg.policy1.to_string(),
        policy2: cfg.policy2.to_string(),
        rounds: cfg.market.rounds,
        final_share1: result.final_share.map(|s| s[0]),
        final_share2: result.final_share.map(|s| s[1]),
        coerced1: result.coerced[0],
        coerced2: result.coerced[1],
    };
    write_csv(&out.join("summary.csv"), &[summary])?;

    let expected = cfg.market.num_customers() * cfg.market.rounds as usize;
    for (company, path) in files.iter().enumerate() {
        let back = read_records(path, cfg.market.award_sets[company].len())?;
        check(back.len() == expected, || format!("{} has {} rows, expected {expected}", path.display(), back.len()))?;
    }
    let traj: Vec<RoundShare> = read_csv(&out.join("trajectory.csv"))?;
    check(traj.len() == cfg.market.rounds as usize, || "trajectory length".into())?;
    read_csv::<SummaryRow>(&out.join("summary.csv"))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub lda: LdaConfig,
    /// Number of own awards; taken from the records when absent.
    pub own_arity: Option<usize>,
    /// Demand distribution used to impute missing demands.
    pub demand: Option<DemandDist>,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            lda: LdaConfig::default(),
            own_arity: None,
            demand: Some(DemandDist::uniform(1, 100).expect("valid default range")),
        }
    }
}

fn read_assignments(path: &Path) -> Result<BTreeMap<u64, AssignmentRow>> {
    let rows: Vec<AssignmentRow> = read_csv(path)?;
    let mut map = BTreeMap::new();
    for r in rows {
        if map.insert(r.user_id, r).is_some() {
            return Err(Error::Data(format!("user {} assigned twice", r.user_id)));
        }
    }
    Ok(map)
}

/// Label of the strategy unit every record belongs to: the strategy group
/// when assignments are given, the customer otherwise.
fn unit_labels(records: &[ConsumptionRecord], assignments: Option<&BTreeMap<u64, AssignmentRow>>) -> Result<Vec<u64>> {
    records
        .iter()
        .map(|r| match assignments {
            None => Ok(u64::from(r.customer)),
            Some(a) => a
                .get(&u64::from(r.customer))
                .map(|row| row.strategy_group as u64)
                .ok_or_else(|| Error::Data(format!("customer {} has no group assignment", r.customer))),
        })
        .collect()
}

fn read_any_records(path: &Path, own_arity: Option<usize>) -> Result<(Vec<ConsumptionRecord>, usize)> {
    let records = read_records(path, own_arity.unwrap_or(usize::MAX))?;
    let arity = own_arity.unwrap_or_else(|| records.iter().map(|r| r.own_award + 1).max().unwrap_or(1).max(2));
    Ok((records, arity))
}

pub fn infer(
    records_path: &Path,
    config: Option<&Path>,
    assignments: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg: InferConfig = match config {
        Some(p) => load(p)?,
        None => InferConfig::default(),
    };
    if let Some(s) = seed {
        cfg.lda.seed = s;
    }
    cfg.lda.validate()?;
    let (records, own_arity) = read_any_records(records_path, cfg.own_arity)?;
    let assignments = assignments.map(read_assignments).transpose()?;
    let labels = unit_labels(&records, assignments.as_ref())?;
    let distinct: Vec<u64> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let index: BTreeMap<u64, usize> = distinct.iter().enumerate().map(|(i, &l)| (l, i)).collect();

    let mut unit_iter = labels.iter();
    let mut impute_rng = rng::stream(cfg.lda.seed, &[0x1f, 0]);
    let corpus = Corpus::from_consumption(
        &records,
        |_| unit_iter.next().map(|l| index[l]),
        distinct.len(),
        own_arity,
        cfg.lda.acc,
        cfg.demand.as_ref(),
        &mut impute_rng,
    )?;
    let fit = run_inference(&corpus, &cfg.lda, cfg.demand.as_ref())?;

    std::fs::create_dir_all(out)?;
    write_preference(&out.join("pref.csv"), &fit.pref)?;
    write_theta(&out.join("theta.csv"), &distinct, &fit.theta)?;
    write_diagnostics(&out.join("diagnostics.csv"), &fit.traces)?;

    let pref = read_preference(&out.join("pref.csv"))?;
    check(pref.opp_arity() == cfg.lda.opp_arity && pref.acc() == cfg.lda.acc, || "preference grid shape".into())?;
    let theta = read_theta(&out.join("theta.csv"))?;
    check(theta.len() == distinct.len(), || "one strategy row set per unit".into())?;
    let diag: Vec<DiagnosticRow> = read_csv(&out.join("diagnostics.csv"))?;
    let chains: BTreeSet<usize> = diag.iter().map(|d| d.chain).collect();
    check(chains.len() == cfg.lda.chains, || format!("{} diagnostic streams", chains.len()))?;
    Ok(())
}

#[derive(Args, Debug, Clone)]
pub struct PreprocessArgs {
    /// Raw offline coupon CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Merchant playing company 1; overrides the config file.
    #[arg(long)]
    pub merchant: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn preprocess(args: &PreprocessArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg: PreprocessConfig = match &args.config {
        Some(p) => load(p)?,
        None => PreprocessConfig::default(),
    };
    if let Some(m) = args.merchant {
        cfg.focal_merchant = m;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if args.config.is_none() && args.merchant.is_none() {
        return Err(Error::Config("a focal merchant is required (--merchant or config)".into()));
    }
    let (rows, quarantine) = read_o2o(&args.input)?;
    if !quarantine.is_empty() {
        log::warn!("{} rows quarantined; see quarantine.csv", quarantine.len());
    }
    let out = run_preprocess(&rows, quarantine, &cfg)?;
    out.write(&args.out)?;

    let assigned: Vec<AssignmentRow> = read_csv(&args.out.join("assignments.csv"))?;
    let users: BTreeSet<u64> = assigned.iter().map(|a| a.user_id).collect();
    check(users.len() == assigned.len(), || "every user assigned once".into())?;
    let mut emitted = 0;
    for g in 0..out.records.len() {
        let recs = read_records(&args.out.join(format!("records_group_{g}.csv")), LEVELS + 1)?;
        check(
            recs.iter().all(|r| r.demand == Some(1) && r.count <= 1),
            || format!("group {g} records must be binary"),
        )?;
        emitted += recs.len();
    }
    check(emitted == out.records.iter().map(Vec::len).sum::<usize>(), || "record count".into())?;
    read_csv::<ExposureRow>(&args.out.join("exposure.csv"))?;
    eprintln!(
        "{} users in {} preference groups; {} quarantined rows; {} users without focal rows excluded",
        users.len(),
        out.records.len(),
        out.quarantine.len(),
        out.excluded_users
    );
    Ok(())
}

pub fn tournament(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: TournamentConfig = load(config)?;
    if let Some(s) = seed {
        let n = cfg.seeds.len() as u64;
        cfg.seeds = (s..s + n).collect();
    }
    let report = run_tournament(&cfg)?;
    report.write(out)?;
    let rows: Vec<TournamentRow> = read_csv(&out.join("tournament.csv"))?;
    check(rows.len() == cfg.cells.len(), || "one tournament row per cell".into())?;
    check(rows.iter().all(|r| (0.0..=1.0).contains(&r.mean_share)), || "shares in [0, 1]".into())?;
    for c in &report.cells {
        for s in &cfg.seeds {
            let t: Vec<RoundShare> = read_csv(&out.join(format!("trajectory_{}_{s}.csv", c.cell.file_stem())))?;
            check(t.len() == cfg.market.rounds as usize, || "trajectory length".into())?;
        }
    }
    for r in &rows {
        println!("{} vs {}: {:.4} ± {:.4}", r.row, r.col, r.mean_share, r.stderr);
    }
    Ok(())
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    /// `pref.csv` from `infer`.
    #[arg(long)]
    pub pref: PathBuf,
    /// `theta.csv` from `infer`.
    #[arg(long)]
    pub theta: PathBuf,
    /// Held-out records to score.
    #[arg(long)]
    pub test: PathBuf,
    /// Group assignments used when the estimates were fitted.
    #[arg(long)]
    pub assignments: Option<PathBuf>,
    /// True opponent exposure (`exposure.csv`); enables the distance report.
    #[arg(long)]
    pub exposure: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let pref = read_preference(&args.pref)?;
    let theta = read_theta(&args.theta)?;
    let labels: Vec<u64> = theta.iter().map(|(l, _)| *l).collect();
    let est = AlignedEstimates::new(pref, theta.into_iter().map(|(_, t)| t).collect())?;
    let position: BTreeMap<u64, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();

    let (records, _) = read_any_records(&args.test, Some(est.pref.own_arity()))?;
    if records.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if let Some(r) = records.iter().find(|r| r.demand.is_none()) {
        return Err(Error::Data(format!("test record for customer {} has no demand", r.customer)));
    }
    let assignments = args.assignments.as_deref().map(read_assignments).transpose()?;
    let rec_labels = unit_labels(&records, assignments.as_ref())?;
    let units: Vec<usize> = rec_labels
        .iter()
        .map(|l| {
            position
                .get(l)
                .copied()
                .ok_or_else(|| Error::Data(format!("no strategy estimate for unit {l}")))
        })
        .collect::<Result<_>>()?;
    let mut unit_iter = units.iter();
    let mut no_rng = rng::stream(0, &[]);
    let corpus = Corpus::from_consumption(
        &records,
        |_| unit_iter.next().copied(),
        labels.len(),
        est.pref.own_arity(),
        est.pref.acc(),
        None,
        &mut no_rng,
    )?;
    let lda = negative_log_likelihood(lda_outcome_probs(&est, corpus.records(), Some)?)?;
    let uniform = negative_log_likelihood(corpus.records().iter().map(|_| 1.0 / est.pref.acc() as f64))?;
    let nll_rows = vec![
        NllRow {
            model: "LDA".into(),
            n: lda.n,
            nll: lda.nll,
            floor_events: lda.floor_events,
        },
        NllRow {
            model: "uniform".into(),
            n: uniform.n,
            nll: uniform.nll,
            floor_events: uniform.floor_events,
        },
    ];
    std::fs::create_dir_all(&args.out)?;
    write_csv(&args.out.join("nll_report.csv"), &nll_rows)?;
    let back: Vec<NllRow> = read_csv(&args.out.join("nll_report.csv"))?;
    check(back.len() == 2 && back.iter().all(|r| r.nll.is_finite()), || "nll report".into())?;
    println!("NLL: LDA {:.4}, uniform {:.4} over {} records", lda.nll, uniform.nll, lda.n);

    if let Some(path) = &args.exposure {
        let exposure: Vec<ExposureRow> = read_csv(path)?;
        let truth = match &assignments {
            None => exposure_distributions(&exposure),
            Some(a) => {
                let groups: BTreeSet<usize> = records
                    .iter()
                    .filter_map(|r| a.get(&u64::from(r.customer)).map(|row| row.preference_group))
                    .collect();
                if groups.len() != 1 {
                    return Err(Error::Data(format!(
                        "test records span {} preference groups; expected one",
                        groups.len()
                    )));
                }
                let pg = *groups.iter().next().expect("one group");
                let pooled: Vec<ExposureRow> = exposure
                    .iter()
                    .filter_map(|e| {
                        let row = a.get(&e.user_id)?;
                        (row.preference_group == pg).then_some(ExposureRow {
                            user_id: row.strategy_group as u64,
                            ..*e
                        })
                    })
                    .collect();
                exposure_distributions(&pooled)
            }
        };
        let estimates: BTreeMap<u64, Vec<f64>> = labels
            .iter()
            .zip(&est.theta)
            .map(|(&l, t)| (l, t.probs().to_vec()))
            .collect();
        if estimates.values().any(|v| v.len() != LEVELS) {
            return Err(Error::SupportMismatch {
                left: est.pref.opp_arity(),
                right: LEVELS,
            });
        }
        let rows = strategy_distance_report(&estimates, &truth)?;
        write_csv(&args.out.join("w1_report.csv"), &rows)?;
        let back: Vec<W1Row> = read_csv(&args.out.join("w1_report.csv"))?;
        check(back.len() == rows.len(), || "w1 report".into())?;
        let mean = rows.last().expect("report has a mean row");
        println!("W1: LDA {:.5}, uniform {:.5}, overall {:.5}", mean.lda, mean.uniform, mean.overall);
    }
    Ok(())
}
