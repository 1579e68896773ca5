//! Coupon-log preprocessing: parse the raw offline coupon table, bin the
//! focal merchant's coupons into three levels, cluster its users twice
//! (preference groups, then strategy groups inside each) and emit binary
//! usage records in the common record schema.

mod kmeans;

pub use kmeans::{kmeans_cluster, standardize};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Award, ConsumptionRecord};
use crate::io::{write_csv, write_records};
use crate::rng;

pub const O2O_HEADER: [&str; 7] = [
    "User_id",
    "Merchant_id",
    "Coupon_id",
    "Discount_rate",
    "Distance",
    "Date_received",
    "Date",
];

/// Number of coupon levels; awards are `0` (no coupon) and `1..=LEVELS`.
pub const LEVELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct CouponRecord {
    pub user_id: u64,
    pub merchant_id: u64,
    pub coupon_id: Option<u64>,
    pub distance: Option<u32>,
    /// Raw discount text, e.g. `150:20` or `0.9`.
    pub discount_rate: Option<String>,
    /// Fraction of the price taken off.
    pub discount: Option<f64>,
    pub date_received: Option<NaiveDate>,
    pub date_used: Option<NaiveDate>,
}

impl CouponRecord {
    pub fn used(&self) -> bool {
        self.date_used.is_some()
    }

    /// Day the row happened: receipt for coupon rows, purchase otherwise.
    pub fn day(&self) -> Option<NaiveDate> {
        self.date_received.or(self.date_used)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quarantined {
    /// 1-based line number in the input file, header included.
    pub line: u64,
    pub reason: String,
}

/// Discount as a fraction off: `x:y` means `y` off a spend of `x`, a bare
/// number is the price multiplier.
pub fn parse_discount(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Some((x, y)) = s.split_once(':') {
        let (x, y): (f64, f64) = (x.trim().parse().ok()?, y.trim().parse().ok()?);
        return (x > 0.0 && (0.0..=x).contains(&y)).then(|| y / x);
    }
    let r: f64 = s.parse().ok()?;
    (r > 0.0 && r <= 1.0).then_some(1.0 - r)
}

fn nullable(s: &str) -> Option<&str> {
    let s = s.trim();
    (!s.is_empty() && !s.eq_ignore_ascii_case("null")).then_some(s)
}

fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, "%Y%m%d").map_err(|e| format!("bad date {s:?}: {e}"))
}

fn parse_row(row: &csv::StringRecord) -> std::result::Result<CouponRecord, String> {
    if row.len() != O2O_HEADER.len() {
        return Err(format!("expected {} fields, found {}", O2O_HEADER.len(), row.len()));
    }
    let id = |i: usize| -> std::result::Result<Option<u64>, String> {
        nullable(&row[i])
            .map(|v| v.parse::<u64>().map_err(|_| format!("bad {} {v:?}", O2O_HEADER[i])))
            .transpose()
    };
    let user_id = id(0)?.ok_or("missing User_id")?;
    let merchant_id = id(1)?.ok_or("missing Merchant_id")?;
    let coupon_id = id(2)?;
    let distance = nullable(&row[4])
        .map(|v| v.parse::<u32>().map_err(|_| format!("bad Distance {v:?}")))
        .transpose()?;
    let date_received = nullable(&row[5]).map(parse_date).transpose()?;
    let date_used = nullable(&row[6]).map(parse_date).transpose()?;
    let discount_rate = nullable(&row[3]).map(str::to_string);

    let discount = match (coupon_id, &discount_rate) {
        (None, _) => None,
        (Some(_), None) => return Err("coupon without a discount rate".into()),
        (Some(_), Some(raw)) => {
            Some(parse_discount(raw).ok_or_else(|| format!("unparseable discount rate {raw:?}"))?)
        }
    };
    if coupon_id.is_some() && date_received.is_none() {
        return Err("coupon without a receipt date".into());
    }
    if coupon_id.is_none() && date_used.is_none() {
        return Err("row has neither a coupon nor a purchase".into());
    }
    if let (Some(r), Some(u)) = (date_received, date_used) {
        if u < r {
            return Err(format!("used on {u} before received on {r}"));
        }
    }
    Ok(CouponRecord {
        user_id,
        merchant_id,
        coupon_id,
        distance,
        discount_rate,
        discount,
        date_received,
        date_used,
    })
}

/// Reads the raw table. Rows that cannot be interpreted are returned
/// separately with a reason instead of failing the whole file.
pub fn read_o2o(path: &Path) -> Result<(Vec<CouponRecord>, Vec<Quarantined>)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(crate::io::open_input(path)?);
    let header = rdr.headers()?.clone();
    if header.iter().map(str::trim).ne(O2O_HEADER.iter().copied()) {
        return Err(Error::Data(format!(
            "{}: expected header {}, found {}",
            path.display(),
            O2O_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut good = Vec::new();
    let mut bad = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        match row.map_err(|e| e.to_string()).and_then(|r| parse_row(&r)) {
            Ok(rec) => good.push(rec),
            Err(reason) => bad.push(Quarantined { line, reason }),
        }
    }
    Ok((good, bad))
}

/// Three-level binning of discount values by their rank among the focal
/// merchant's distinct rates.
#[derive(Debug, Clone, PartialEq)]
pub struct CouponLevels {
    /// Distinct focal discount values, ascending.
    pub rates: Vec<f64>,
    /// Smallest value of level 1 and of level 2, when those levels exist.
    thresholds: [Option<f64>; 2],
}

impl CouponLevels {
    /// Level (0-based) of a discount value. Values from other merchants are
    /// placed with the focal thresholds.
    pub fn level_of(&self, discount: f64) -> usize {
        match self.thresholds {
            [_, Some(t2)] if discount >= t2 - 1e-12 => 2,
            [Some(t1), _] if discount >= t1 - 1e-12 => 1,
            _ => 0,
        }
    }

    /// Award for a coupon row: 0 without a coupon, otherwise level + 1.
    pub fn award_of(&self, rec: &CouponRecord) -> Award {
        match (rec.coupon_id, rec.discount) {
            (Some(_), Some(d)) => self.level_of(d) + 1,
            _ => 0,
        }
    }
}

/// Tertiles over distinct discount values of `records` with coupons.
pub fn bin_coupon_levels<'a>(records: impl IntoIterator<Item = &'a CouponRecord>) -> CouponLevels {
    let mut rates: Vec<f64> = records
        .into_iter()
        .filter(|r| r.coupon_id.is_some())
        .filter_map(|r| r.discount)
        .collect();
    rates.sort_by(f64::total_cmp);
    rates.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    let d = rates.len();
    if d == 1 {
        log::warn!("all coupons share one discount rate; every coupon lands in the lowest level");
    }
    let first_of = |level: usize| (0..d).find(|&r| r * LEVELS / d == level).map(|r| rates[r]);
    CouponLevels {
        thresholds: [first_of(1), first_of(2)],
        rates,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub focal_merchant: u64,
    pub preference_groups: usize,
    pub strategy_group_count: usize,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            focal_merchant: 0,
            preference_groups: 4,
            strategy_group_count: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentRow {
    pub user_id: u64,
    pub preference_group: usize,
    pub strategy_group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouponLevelRow {
    pub discount_rate: String,
    pub discount: f64,
    pub level: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureRow {
    pub user_id: u64,
    pub level: usize,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub user_id: u64,
    pub receive_count: f64,
    pub usage_rate: f64,
    pub mean_level: f64,
    pub mean_distance: f64,
    pub market_received: f64,
    pub market_usage_rate: f64,
    pub active_days: f64,
}

impl FeatureRow {
    fn merchant_features(&self) -> Vec<f64> {
        vec![self.receive_count, self.usage_rate, self.mean_level, self.mean_distance]
    }

    fn user_features(&self) -> Vec<f64> {
        vec![self.market_received, self.market_usage_rate, self.active_days]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    /// Records of each preference group; `customer` is the user id.
    pub records: Vec<Vec<ConsumptionRecord>>,
    pub assignments: Vec<AssignmentRow>,
    pub levels: CouponLevels,
    pub level_rows: Vec<CouponLevelRow>,
    /// Coupon receipts from every other merchant per focal user and level.
    pub exposure: Vec<ExposureRow>,
    pub features: Vec<FeatureRow>,
    pub quarantine: Vec<Quarantined>,
    /// Users present in the data without any focal-merchant row.
    pub excluded_users: usize,
}

fn mean_or(values: &[f64], default: f64) -> f64 {
    if values.is_empty() {
        default
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn features(
    records: &[CouponRecord],
    focal: u64,
    users: &BTreeSet<u64>,
    levels: &CouponLevels,
) -> Vec<FeatureRow> {
    #[derive(Default)]
    struct Acc {
        received: f64,
        used: f64,
        levels: Vec<f64>,
        distances: Vec<f64>,
        market_received: f64,
        market_used: f64,
        days: BTreeSet<NaiveDate>,
    }
    let mut acc: BTreeMap<u64, Acc> = users.iter().map(|&u| (u, Acc::default())).collect();
    for r in records {
        let Some(a) = acc.get_mut(&r.user_id) else { continue };
        a.days.extend(r.date_received);
        a.days.extend(r.date_used);
        if r.coupon_id.is_some() {
            a.market_received += 1.0;
            a.market_used += f64::from(u8::from(r.used()));
        }
        if r.merchant_id != focal {
            continue;
        }
        if let Some(d) = r.distance {
            a.distances.push(f64::from(d));
        }
        if r.coupon_id.is_some() {
            a.received += 1.0;
            a.used += f64::from(u8::from(r.used()));
            a.levels.push(levels.award_of(r) as f64);
        }
    }
    let all_distances: Vec<f64> = acc.values().flat_map(|a| a.distances.iter().copied()).collect();
    let default_distance = mean_or(&all_distances, 0.0);
    acc.into_iter()
        .map(|(user_id, a)| FeatureRow {
            user_id,
            receive_count: a.received,
            usage_rate: if a.received > 0.0 { a.used / a.received } else { 0.0 },
            mean_level: mean_or(&a.levels, 0.0),
            mean_distance: mean_or(&a.distances, default_distance),
            market_received: a.market_received,
            market_usage_rate: if a.market_received > 0.0 { a.market_used / a.market_received } else { 0.0 },
            active_days: a.days.len() as f64,
        })
        .collect()
}

/// Runs the two-stage clustering and record conversion for one merchant.
pub fn preprocess(
    records: &[CouponRecord],
    quarantine: Vec<Quarantined>,
    cfg: &PreprocessConfig,
) -> Result<Preprocessed> {
    if cfg.preference_groups == 0 || cfg.strategy_group_count == 0 {
        return Err(Error::Config("group counts must be >= 1".into()));
    }
    let focal: Vec<&CouponRecord> = records.iter().filter(|r| r.merchant_id == cfg.focal_merchant).collect();
    if focal.is_empty() {
        return Err(Error::Data(format!("merchant {} has no records", cfg.focal_merchant)));
    }
    let users: BTreeSet<u64> = focal.iter().map(|r| r.user_id).collect();
    let everyone: BTreeSet<u64> = records.iter().map(|r| r.user_id).collect();
    let excluded_users = everyone.len() - users.len();
    if excluded_users > 0 {
        log::info!("{excluded_users} users have no rows for merchant {} and are excluded", cfg.focal_merchant);
    }
    if let Some(u) = users.iter().find(|&&u| u > u64::from(u32::MAX)) {
        return Err(Error::Data(format!("user id {u} does not fit the record schema")));
    }

    let levels = bin_coupon_levels(focal.iter().copied());
    let mut level_rows: BTreeMap<String, CouponLevelRow> = BTreeMap::new();
    for r in &focal {
        if let (Some(raw), Some(d)) = (&r.discount_rate, r.discount) {
            level_rows.entry(raw.clone()).or_insert_with(|| CouponLevelRow {
                discount_rate: raw.clone(),
                discount: d,
                level: levels.level_of(d),
            });
        }
    }
    let mut level_rows: Vec<CouponLevelRow> = level_rows.into_values().collect();
    level_rows.sort_by(|a, b| a.discount.total_cmp(&b.discount).then_with(|| a.discount_rate.cmp(&b.discount_rate)));

    let features = features(records, cfg.focal_merchant, &users, &levels);
    let stage1: Vec<Vec<f64>> = features.iter().map(FeatureRow::merchant_features).collect();
    let k1 = cfg.preference_groups.min(features.len());
    if k1 < cfg.preference_groups {
        log::warn!("only {} focal users; using {k1} preference groups", features.len());
    }
    let pref_group = kmeans_cluster(&stage1, k1, rng::derive_seed(cfg.seed, &[0x91, 0]))?;

    let mut strat_group = vec![0usize; features.len()];
    for g in 0..k1 {
        let members: Vec<usize> = (0..features.len()).filter(|&i| pref_group[i] == g).collect();
        let k2 = cfg.strategy_group_count.min(members.len());
        if k2 < cfg.strategy_group_count {
            log::warn!("preference group {g} has {} users; using {k2} strategy groups", members.len());
        }
        let x: Vec<Vec<f64>> = members.iter().map(|&i| features[i].user_features()).collect();
        let labels = kmeans_cluster(&x, k2, rng::derive_seed(cfg.seed, &[0x91, 1, g as u64]))?;
        for (&i, l) in members.iter().zip(labels) {
            strat_group[i] = l;
        }
    }
    let assignments: Vec<AssignmentRow> = features
        .iter()
        .enumerate()
        .map(|(i, f)| AssignmentRow {
            user_id: f.user_id,
            preference_group: pref_group[i],
            strategy_group: strat_group[i],
        })
        .collect();
    let group_of: BTreeMap<u64, usize> = assignments.iter().map(|a| (a.user_id, a.preference_group)).collect();

    let first_day = records
        .iter()
        .filter_map(CouponRecord::day)
        .min()
        .ok_or_else(|| Error::Data("no dated rows".into()))?;
    let mut out = vec![Vec::new(); k1];
    for r in &focal {
        let day = r.day().expect("validated rows carry a date");
        out[group_of[&r.user_id]].push(ConsumptionRecord {
            period: ((day - first_day).num_days() / 7) as u32 + 1,
            customer: r.user_id as u32,
            own_award: levels.award_of(r),
            count: u32::from(r.used()),
            demand: Some(1),
        });
    }
    for group in &mut out {
        group.sort_by_key(|r| (r.period, r.customer, r.own_award, r.count));
    }

    let mut exposure: BTreeMap<(u64, usize), u64> = users
        .iter()
        .flat_map(|&u| (0..LEVELS).map(move |l| ((u, l), 0)))
        .collect();
    for r in records {
        if r.merchant_id == cfg.focal_merchant || r.coupon_id.is_none() {
            continue;
        }
        if let (true, Some(d)) = (users.contains(&r.user_id), r.discount) {
            *exposure.entry((r.user_id, levels.level_of(d))).or_default() += 1;
        }
    }
    let exposure = exposure
        .into_iter()
        .map(|((user_id, level), count)| ExposureRow { user_id, level, count })
        .collect();

    Ok(Preprocessed {
        records: out,
        assignments,
        levels,
        level_rows,
        exposure,
        features,
        quarantine,
        excluded_users,
    })
}

impl Preprocessed {
    /// Writes `records_group_<g>.csv`, `assignments.csv`,
    /// `coupon_levels.csv`, `exposure.csv`, `features.csv` and
    /// `quarantine.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (g, recs) in self.records.iter().enumerate() {
            write_records(&dir.join(format!("records_group_{g}.csv")), recs)?;
        }
        write_csv(&dir.join("assignments.csv"), &self.assignments)?;
        write_csv(&dir.join("coupon_levels.csv"), &self.level_rows)?;
        write_csv(&dir.join("exposure.csv"), &self.exposure)?;
        write_csv(&dir.join("features.csv"), &self.features)?;
        write_csv(&dir.join("quarantine.csv"), &self.quarantine)?;
        Ok(())
    }
}

/// Per-user opponent exposure distribution from `exposure.csv` rows.
/// Users with no exposure at all are left out.
pub fn exposure_distributions(rows: &[ExposureRow]) -> BTreeMap<u64, Vec<f64>> {
    let mut counts: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in rows {
        let v = counts.entry(r.user_id).or_insert_with(|| vec![0.0; LEVELS]);
        if r.level < LEVELS {
            v[r.level] += r.count as f64;
        }
    }
    counts
        .into_iter()
        .filter_map(|(u, mut v)| {
            let s: f64 = v.iter().sum();
            (s > 0.0).then(|| {
                v.iter_mut().for_each(|x| *x /= s);
                (u, v)
            })
        })
        .collect()
}
