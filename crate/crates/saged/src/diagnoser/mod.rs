//! Group partitioning, selection rates, disparity functions and permutation
//! tests over feature tables.

pub mod stats;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SagedError};
use crate::table::{
    fmt_f64, parse_feature_column, ColumnSuffix, Table, TableKind, Value, BASELINE_GENERATION,
    DISPARITY_COLUMNS, SUMMARY_TAIL,
};
pub use stats::{BaselineStat, Statistic};

/// A unique combination of values over the grouping columns.
pub type GroupKey = Vec<String>;

/// Feature measurements partitioned by grouping-column values.
///
/// Groups are disjoint, cover every non-missing row, and iterate in
/// lexicographic key order.
#[derive(Debug, Clone)]
pub struct GroupPartition {
    pub grouping: Vec<String>,
    pub feature: String,
    pub groups: BTreeMap<GroupKey, Vec<f64>>,
    pub missing_count: usize,
}

impl GroupPartition {
    pub fn total_n(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    pub fn pooled(&self) -> Vec<f64> {
        self.groups.values().flatten().copied().collect()
    }
}

/// Partition a feature column by the given grouping columns.
///
/// Missing feature values are excluded and counted, never silently zeroed.
pub fn partition(table: &Table, grouping: &[String], feature_column: &str) -> Result<GroupPartition> {
    let feat_idx = table.col(feature_column).ok_or_else(|| {
        SagedError::Invalid(format!("feature column `{feature_column}` not found"))
    })?;
    let group_idx: Vec<usize> = grouping
        .iter()
        .map(|c| {
            table
                .col(c)
                .ok_or_else(|| SagedError::Invalid(format!("grouping column `{c}` not found")))
        })
        .collect::<Result<_>>()?;

    let mut groups: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    let mut missing_count = 0usize;
    for row in table.rows() {
        let value = match row[feat_idx].as_num() {
            Some(v) => v,
            None => {
                missing_count += 1;
                continue;
            }
        };
        let key: Option<GroupKey> = group_idx
            .iter()
            .map(|&i| row[i].as_str().map(str::to_string))
            .collect();
        match key {
            Some(key) => groups.entry(key).or_default().push(value),
            None => missing_count += 1,
        }
    }
    if groups.is_empty() {
        return Err(SagedError::Invalid(format!(
            "feature column `{feature_column}` has no non-missing values"
        )));
    }
    Ok(GroupPartition {
        grouping: grouping.to_vec(),
        feature: feature_column.to_string(),
        groups,
        missing_count,
    })
}

/// Standard measure computed over the pooled measurement data.
#[derive(Debug, Clone, PartialEq)]
pub enum StandardBy {
    Mean,
    Median,
    Mode { bin_width: f64 },
    Quantile { q: f64 },
}

/// How a value is compared against the standard measure.
#[derive(Debug, Clone, PartialEq)]
pub enum SelectionMethod {
    LargerThan,
    SmallerThan,
    WithinRange { r: f64 },
    WithinPercentage { p: f64 },
}

/// Full specification of a selection-rate computation.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionSpec {
    pub standard_by: StandardBy,
    pub selection_method: SelectionMethod,
}

impl Default for SelectionSpec {
    /// Mean standard with larger-than selection.
    fn default() -> Self {
        SelectionSpec {
            standard_by: StandardBy::Mean,
            selection_method: SelectionMethod::LargerThan,
        }
    }
}

impl SelectionSpec {
    pub fn validate(&self) -> Result<()> {
        match &self.standard_by {
            StandardBy::Mode { bin_width } if *bin_width <= 0.0 => {
                return Err(SagedError::Invalid("selection_rate: bin_width must be > 0".into()))
            }
            StandardBy::Quantile { q } if !(0.0 < *q && *q < 1.0) => {
                return Err(SagedError::Invalid("selection_rate: q must be in (0,1)".into()))
            }
            _ => {}
        }
        match &self.selection_method {
            SelectionMethod::WithinRange { r } if *r <= 0.0 => {
                Err(SagedError::Invalid("selection_rate: r must be > 0".into()))
            }
            SelectionMethod::WithinPercentage { p } if *p <= 0.0 => {
                Err(SagedError::Invalid("selection_rate: p must be > 0".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn params(&self) -> String {
        let standard = match &self.standard_by {
            StandardBy::Mean => "mean".to_string(),
            StandardBy::Median => "median".to_string(),
            StandardBy::Mode { bin_width } => format!("mode({})", fmt_f64(*bin_width)),
            StandardBy::Quantile { q } => format!("quantile({})", fmt_f64(*q)),
        };
        let method = match &self.selection_method {
            SelectionMethod::LargerThan => "larger_than".to_string(),
            SelectionMethod::SmallerThan => "smaller_than".to_string(),
            SelectionMethod::WithinRange { r } => format!("within_range({})", fmt_f64(*r)),
            SelectionMethod::WithinPercentage { p } => {
                format!("within_percentage({})", fmt_f64(*p))
            }
        };
        format!("standard_by={standard},selection_method={method}")
    }

    fn standard(&self, pooled: &[f64]) -> Option<f64> {
        match &self.standard_by {
            StandardBy::Mean => Statistic::Mean.compute(pooled),
            StandardBy::Median => Statistic::Median.compute(pooled),
            StandardBy::Mode { bin_width } => {
                Statistic::Mode { bin_width: *bin_width }.compute(pooled)
            }
            StandardBy::Quantile { q } => Statistic::Quantile { q: *q }.compute(pooled),
        }
    }

    fn selects(&self, value: f64, standard: f64) -> Option<bool> {
        match &self.selection_method {
            SelectionMethod::LargerThan => Some(value >= standard),
            SelectionMethod::SmallerThan => Some(value <= standard),
            SelectionMethod::WithinRange { r } => Some((value - standard).abs() <= *r),
            SelectionMethod::WithinPercentage { p } => {
                if standard == 0.0 {
                    None
                } else {
                    Some((value - standard).abs() <= p * standard)
                }
            }
        }
    }
}

/// Per-group selection rates against the pooled standard measure.
///
/// `None` marks an undefined rate (within-percentage with a zero standard).
pub fn selection_rate(
    partition: &GroupPartition,
    spec: &SelectionSpec,
) -> Result<BTreeMap<GroupKey, Option<f64>>> {
    spec.validate()?;
    let pooled = partition.pooled();
    if pooled.is_empty() {
        return Err(SagedError::Invalid("selection_rate: empty partition".into()));
    }
    let standard = spec
        .standard(&pooled)
        .ok_or_else(|| SagedError::Invalid("selection_rate: standard measure undefined".into()))?;
    let mut rates = BTreeMap::new();
    for (key, values) in &partition.groups {
        let mut selected = 0usize;
        let mut undefined = false;
        for &v in values {
            match spec.selects(v, standard) {
                Some(true) => selected += 1,
                Some(false) => {}
                None => {
                    undefined = true;
                    break;
                }
            }
        }
        let rate = if undefined {
            None
        } else {
            Some(selected as f64 / values.len() as f64)
        };
        rates.insert(key.clone(), rate);
    }
    Ok(rates)
}

/// Minimum impact ratio over a set of group selection rates.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactRatio {
    /// min(SR) / max(SR); `None` when max(SR) = 0.
    pub min_ir: Option<f64>,
    pub argmin: GroupKey,
    pub argmax: GroupKey,
    pub four_fifths_violation: bool,
}

/// Min-max ratio of selection rates with the four-fifths flag.
///
/// Ties on the extremes resolve to the lexicographically smallest group key.
pub fn impact_ratio(rates: &BTreeMap<GroupKey, f64>) -> Result<ImpactRatio> {
    if rates.len() < 2 {
        return Err(SagedError::Invalid(
            "impact_ratio: need at least 2 groups".into(),
        ));
    }
    let mut iter = rates.iter();
    let (first_key, first_value) = iter.next().expect("non-empty");
    let mut min_key = first_key.clone();
    let mut min_value = *first_value;
    let mut max_key = first_key.clone();
    let mut max_value = *first_value;
    for (key, &value) in iter {
        if value < min_value {
            min_key = key.clone();
            min_value = value;
        }
        if value > max_value {
            max_key = key.clone();
            max_value = value;
        }
    }
    let min_ir = if max_value > 0.0 {
        Some(min_value / max_value)
    } else {
        None
    };
    Ok(ImpactRatio {
        min_ir,
        argmin: min_key,
        argmax: max_key,
        four_fifths_violation: min_ir.map(|ir| ir < 0.8).unwrap_or(false),
    })
}

/// Disparity function applied over the set of group statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisparityMethod {
    MinMaxRatio,
    Range,
    Std,
    MaxZscore,
    DixonQ,
}

impl DisparityMethod {
    pub fn name(&self) -> &'static str {
        match self {
            DisparityMethod::MinMaxRatio => "min_max_ratio",
            DisparityMethod::Range => "range",
            DisparityMethod::Std => "std",
            DisparityMethod::MaxZscore => "max_zscore",
            DisparityMethod::DixonQ => "dixon_q",
        }
    }

    pub fn min_groups(&self) -> usize {
        match self {
            DisparityMethod::DixonQ => 3,
            _ => 2,
        }
    }
}

/// Bias flags attached to a disparity value.
pub const FLAG_FOUR_FIFTHS: &str = "four_fifths_violation";
pub const FLAG_OUTLIER_CONCENTRATED: &str = "outlier_concentrated";

/// Result of a disparity function over group statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityOutcome {
    pub method: DisparityMethod,
    /// `None` marks the explicit undefined case (min-max ratio with max 0).
    pub value: Option<f64>,
    pub argmin: GroupKey,
    pub argmax: GroupKey,
    /// Group attaining the maximal |z| (max_zscore only).
    pub attaining: Option<GroupKey>,
    /// Dixon Q minus the critical value at alpha = 0.05 for this group count.
    pub dixon_signed: Option<f64>,
    pub flags: Vec<&'static str>,
}

/// Dixon's r10 critical values, two-sided, alpha = 0.05, for n = 3..=30.
/// Published table (Rorabacher 1991).
pub const DIXON_Q_CRITICAL_05: [f64; 28] = [
    0.970, 0.829, 0.710, 0.625, 0.568, 0.526, 0.493, 0.466, 0.444, 0.426, 0.410, 0.396, 0.384,
    0.374, 0.365, 0.356, 0.349, 0.342, 0.337, 0.331, 0.326, 0.321, 0.317, 0.312, 0.308, 0.305,
    0.301, 0.298,
];

/// Critical value for K groups, when the published table covers K.
pub fn dixon_q_critical(k: usize) -> Option<f64> {
    if (3..=30).contains(&k) {
        Some(DIXON_Q_CRITICAL_05[k - 3])
    } else {
        None
    }
}

/// Apply a disparity function to the per-group statistic values.
pub fn disparity(
    group_stats: &BTreeMap<GroupKey, f64>,
    method: DisparityMethod,
) -> Result<DisparityOutcome> {
    if group_stats.len() < method.min_groups() {
        return Err(SagedError::Invalid(format!(
            "{}: need at least {} groups, got {}",
            method.name(),
            method.min_groups(),
            group_stats.len()
        )));
    }
    let keys: Vec<&GroupKey> = group_stats.keys().collect();
    let values: Vec<f64> = group_stats.values().copied().collect();
    let mut argmin = 0usize;
    let mut argmax = 0usize;
    for (i, &v) in values.iter().enumerate() {
        if v < values[argmin] {
            argmin = i;
        }
        if v > values[argmax] {
            argmax = i;
        }
    }
    let (lo, hi) = (values[argmin], values[argmax]);

    let mut attaining = None;
    let mut dixon_signed = None;
    let mut flags = Vec::new();
    let value = match method {
        DisparityMethod::MinMaxRatio => {
            if hi == 0.0 {
                None
            } else {
                Some(lo / hi)
            }
        }
        DisparityMethod::Range => Some(hi - lo),
        DisparityMethod::Std => Some(stats::population_std(&values)),
        DisparityMethod::MaxZscore => {
            let std = stats::population_std(&values);
            if std == 0.0 {
                attaining = Some(keys[0].clone());
                Some(0.0)
            } else {
                let m = stats::mean(&values);
                let mut best = 0usize;
                let mut best_dev = f64::NEG_INFINITY;
                for (i, &v) in values.iter().enumerate() {
                    let dev = (v - m).abs();
                    if dev > best_dev {
                        best = i;
                        best_dev = dev;
                    }
                }
                attaining = Some(keys[best].clone());
                Some(best_dev / std)
            }
        }
        DisparityMethod::DixonQ => {
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let range = hi - lo;
            let raw = if range == 0.0 {
                0.0
            } else {
                let n = sorted.len();
                let gap_high = sorted[n - 1] - sorted[n - 2];
                let gap_low = sorted[1] - sorted[0];
                gap_high.max(gap_low) / range
            };
            match dixon_q_critical(group_stats.len()) {
                Some(crit) => {
                    let signed = raw - crit;
                    dixon_signed = Some(signed);
                    if signed > 0.0 {
                        flags.push(FLAG_OUTLIER_CONCENTRATED);
                    }
                }
                None => log::warn!(
                    "dixon_q: no critical value for {} groups; reporting raw Q only",
                    group_stats.len()
                ),
            }
            Some(raw)
        }
    };
    Ok(DisparityOutcome {
        method,
        value,
        argmin: keys[argmin].clone(),
        argmax: keys[argmax].clone(),
        attaining,
        dixon_signed,
        flags,
    })
}

/// Seeded permutation test of one group against its complement.
///
/// The observed statistic is the signed difference stat(group) - stat(rest),
/// tested one-sided in the observed direction. When the number of distinct
/// label assignments C(n, m) does not exceed `n_perm` the test enumerates all
/// of them and the p-value is exact; otherwise it samples `n_perm` seeded
/// shuffles and applies the add-one correction (1 + hits) / (1 + n_perm).
pub fn permutation_test(
    partition: &GroupPartition,
    statistic: &Statistic,
    group: &GroupKey,
    n_perm: usize,
    seed: u64,
) -> Result<Option<f64>> {
    if n_perm < 100 {
        return Err(SagedError::Invalid("permutation_test: n_perm must be >= 100".into()));
    }
    let group_values = partition
        .groups
        .get(group)
        .ok_or_else(|| SagedError::Invalid(format!("permutation_test: group {group:?} not found")))?;
    let complement: Vec<f64> = partition
        .groups
        .iter()
        .filter(|(k, _)| *k != group)
        .flat_map(|(_, v)| v.iter().copied())
        .collect();
    if complement.is_empty() {
        return Ok(None);
    }
    let m = group_values.len();
    let observed = match (statistic.compute(group_values), statistic.compute(&complement)) {
        (Some(a), Some(b)) => a - b,
        _ => return Ok(None),
    };

    let mut pool: Vec<f64> = group_values.clone();
    pool.extend_from_slice(&complement);
    let n = pool.len();

    let diff_for = |selected: &[usize]| -> Option<f64> {
        let mut in_group = vec![false; n];
        for &i in selected {
            in_group[i] = true;
        }
        let g: Vec<f64> = (0..n).filter(|&i| in_group[i]).map(|i| pool[i]).collect();
        let c: Vec<f64> = (0..n).filter(|&i| !in_group[i]).map(|i| pool[i]).collect();
        match (statistic.compute(&g), statistic.compute(&c)) {
            (Some(a), Some(b)) => Some(a - b),
            _ => None,
        }
    };
    let extreme = |perm: f64| {
        if observed >= 0.0 {
            perm >= observed
        } else {
            perm <= observed
        }
    };

    if let Some(total) = combination_count(n, m, n_perm as u128) {
        // exact enumeration over all label assignments, identity included
        let mut hits = 0u128;
        let mut indices: Vec<usize> = (0..m).collect();
        loop {
            if let Some(diff) = diff_for(&indices) {
                if extreme(diff) {
                    hits += 1;
                }
            }
            if !next_combination(&mut indices, n) {
                break;
            }
        }
        Ok(Some(hits as f64 / total as f64))
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        let mut hits = 0usize;
        for _ in 0..n_perm {
            order.shuffle(&mut rng);
            if let Some(diff) = diff_for(&order[..m]) {
                if extreme(diff) {
                    hits += 1;
                }
            }
        }
        Ok(Some((1 + hits) as f64 / (1 + n_perm) as f64))
    }
}

/// C(n, m) when it does not exceed `cap`.
fn combination_count(n: usize, m: usize, cap: u128) -> Option<u128> {
    let m = m.min(n - m);
    let mut c: u128 = 1;
    for i in 0..m {
        c = c.checked_mul((n - i) as u128)?;
        c /= (i + 1) as u128;
        if c > cap {
            return None;
        }
    }
    Some(c)
}

/// Advance `indices` to the next m-combination of {0..n}; false when done.
fn next_combination(indices: &mut [usize], n: usize) -> bool {
    let m = indices.len();
    let mut i = m;
    while i > 0 {
        i -= 1;
        if indices[i] < n - (m - i) {
            indices[i] += 1;
            for j in i + 1..m {
                indices[j] = indices[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Options controlling the table-level diagnosis pass.
#[derive(Debug, Clone)]
pub struct DiagnoseOptions {
    /// Grouping columns within each domain (default: concept).
    pub group_by: Vec<String>,
    /// Feature names to diagnose; empty means every feature column found.
    pub features: Vec<String>,
    pub statistics: Vec<Statistic>,
    pub baseline_stats: Vec<BaselineStat>,
    pub selection: Vec<SelectionSpec>,
    pub disparity_methods: Vec<DisparityMethod>,
    pub permutation: Option<PermutationOptions>,
}

#[derive(Debug, Clone)]
pub struct PermutationOptions {
    pub n_perm: usize,
    pub seed: u64,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        DiagnoseOptions {
            group_by: vec!["concept".to_string()],
            features: Vec::new(),
            statistics: vec![Statistic::Mean, Statistic::Variance],
            baseline_stats: vec![
                BaselineStat::Correlation,
                BaselineStat::KlDivergence { bins: 10 },
                BaselineStat::Precision { tolerance: 0.1 },
            ],
            selection: vec![SelectionSpec::default()],
            disparity_methods: vec![
                DisparityMethod::MinMaxRatio,
                DisparityMethod::Range,
                DisparityMethod::Std,
                DisparityMethod::MaxZscore,
                DisparityMethod::DixonQ,
            ],
            permutation: None,
        }
    }
}

/// Run the full diagnosis pass: summary statistics per group, then disparity
/// functions over the group statistics, per domain and feature column.
pub fn diagnose(features: &Table, opts: &DiagnoseOptions) -> Result<(Table, Table)> {
    for s in &opts.statistics {
        s.validate()?;
    }
    for s in &opts.baseline_stats {
        s.validate()?;
    }
    for s in &opts.selection {
        s.validate()?;
    }

    let generations = features.generation_names();
    let domain_idx = features
        .col("domain")
        .ok_or_else(|| SagedError::Invalid("features table has no domain column".into()))?;
    let mut domains: Vec<String> = features
        .rows()
        .filter_map(|r| r[domain_idx].as_str().map(str::to_string))
        .collect();
    domains.sort();
    domains.dedup();

    // feature columns to diagnose, in table order
    let columns: Vec<String> = features
        .columns()
        .iter()
        .filter(|name| {
            match parse_feature_column(name, &generations) {
                Some(fc) => {
                    let wanted = opts.features.is_empty() || opts.features.contains(&fc.feature);
                    wanted && matches!(fc.suffix, ColumnSuffix::Score | ColumnSuffix::ScoreCalibrated)
                }
                None => false,
            }
        })
        .cloned()
        .collect();
    if columns.is_empty() {
        return Err(SagedError::Invalid(
            "no feature columns found to diagnose".into(),
        ));
    }

    let mut summary_columns = vec!["domain".to_string()];
    summary_columns.extend(opts.group_by.iter().cloned());
    summary_columns.extend(SUMMARY_TAIL.iter().map(|s| s.to_string()));
    let mut summary = Table::new(TableKind::Summary, summary_columns);
    let mut disparity_table = Table::new(
        TableKind::Disparity,
        DISPARITY_COLUMNS.iter().map(|s| s.to_string()).collect(),
    );

    for domain in &domains {
        let domain_rows = filter_rows(features, domain_idx, domain);
        for column in &columns {
            let part = match partition(&domain_rows, &opts.group_by, column) {
                Ok(p) => p,
                Err(_) => continue, // column empty within this domain
            };

            // plain statistics and their disparity
            for stat in &opts.statistics {
                let mut group_stats: BTreeMap<GroupKey, f64> = BTreeMap::new();
                for (key, values) in &part.groups {
                    let value = stat.compute(values);
                    if let Some(v) = value {
                        group_stats.insert(key.clone(), v);
                    }
                    let p_value = match (&opts.permutation, value) {
                        (Some(popt), Some(_)) => {
                            permutation_test(&part, stat, key, popt.n_perm, popt.seed)?
                        }
                        _ => None,
                    };
                    push_summary_row(
                        &mut summary,
                        domain,
                        key,
                        column,
                        stat.name(),
                        &stat.params(),
                        value,
                        values.len(),
                        p_value,
                    )?;
                }
                push_disparity_rows(
                    &mut disparity_table,
                    domain,
                    column,
                    stat.name(),
                    &stat.params(),
                    &group_stats,
                    &opts.disparity_methods,
                    false,
                )?;
            }

            // baseline-comparison statistics (raw scores of real generations only)
            if let Some(fc) = parse_feature_column(column, &generations) {
                if fc.suffix == ColumnSuffix::Score && fc.generation != BASELINE_GENERATION {
                    let baseline_column =
                        crate::table::feature_column_name(BASELINE_GENERATION, &fc.feature);
                    if domain_rows.col(&baseline_column).is_some() {
                        for bstat in &opts.baseline_stats {
                            let mut group_stats: BTreeMap<GroupKey, f64> = BTreeMap::new();
                            for (key, _) in &part.groups {
                                let pairs = aligned_pairs(
                                    &domain_rows,
                                    &opts.group_by,
                                    key,
                                    column,
                                    &baseline_column,
                                )?;
                                let value = bstat.compute(&pairs);
                                if let Some(v) = value {
                                    group_stats.insert(key.clone(), v);
                                }
                                let m_k = pairs.iter().filter(|(v, _)| v.is_some()).count();
                                push_summary_row(
                                    &mut summary,
                                    domain,
                                    key,
                                    column,
                                    bstat.name(),
                                    &bstat.params(),
                                    value,
                                    m_k,
                                    None,
                                )?;
                            }
                            push_disparity_rows(
                                &mut disparity_table,
                                domain,
                                column,
                                bstat.name(),
                                &bstat.params(),
                                &group_stats,
                                &opts.disparity_methods,
                                false,
                            )?;
                        }
                    }
                }
            }

            // selection rates and impact ratio
            for spec in &opts.selection {
                let rates = selection_rate(&part, spec)?;
                let mut defined: BTreeMap<GroupKey, f64> = BTreeMap::new();
                for (key, rate) in &rates {
                    if let Some(r) = rate {
                        defined.insert(key.clone(), *r);
                    }
                    push_summary_row(
                        &mut summary,
                        domain,
                        key,
                        column,
                        "selection_rate",
                        &spec.params(),
                        *rate,
                        part.groups[key].len(),
                        None,
                    )?;
                }
                push_disparity_rows(
                    &mut disparity_table,
                    domain,
                    column,
                    "selection_rate",
                    &spec.params(),
                    &defined,
                    &opts.disparity_methods,
                    true,
                )?;
            }
        }
    }
    Ok((summary, disparity_table))
}

fn filter_rows(table: &Table, col: usize, value: &str) -> Table {
    let mut out = Table::new(table.kind(), table.columns().to_vec());
    for row in table.rows() {
        if row[col].as_str() == Some(value) {
            out.push_row(row.to_vec()).expect("same arity");
        }
    }
    out
}

/// Row-aligned (value, baseline) pairs for rows of one group.
fn aligned_pairs(
    table: &Table,
    grouping: &[String],
    key: &GroupKey,
    column: &str,
    baseline_column: &str,
) -> Result<Vec<(Option<f64>, Option<f64>)>> {
    let col_idx = table
        .col(column)
        .ok_or_else(|| SagedError::Invalid(format!("column `{column}` not found")))?;
    let base_idx = table
        .col(baseline_column)
        .ok_or_else(|| SagedError::Invalid(format!("column `{baseline_column}` not found")))?;
    let group_idx: Vec<usize> = grouping.iter().filter_map(|c| table.col(c)).collect();
    let mut pairs = Vec::new();
    for row in table.rows() {
        let row_key: Vec<String> = group_idx
            .iter()
            .map(|&i| row[i].as_str().unwrap_or_default().to_string())
            .collect();
        if &row_key == key {
            pairs.push((row[col_idx].as_num(), row[base_idx].as_num()));
        }
    }
    Ok(pairs)
}

#[allow(clippy::too_many_arguments)]
fn push_summary_row(
    summary: &mut Table,
    domain: &str,
    key: &GroupKey,
    feature: &str,
    statistic: &str,
    params: &str,
    value: Option<f64>,
    m_k: usize,
    p_value: Option<f64>,
) -> Result<()> {
    let mut row = vec![Value::text(domain)];
    row.extend(key.iter().map(Value::text));
    row.push(Value::text(feature));
    row.push(Value::text(statistic));
    row.push(if params.is_empty() {
        Value::Missing
    } else {
        Value::text(params)
    });
    row.push(value.map(Value::num).unwrap_or(Value::Missing));
    row.push(Value::num(m_k as f64));
    row.push(p_value.map(Value::num).unwrap_or(Value::Missing));
    summary.push_row(row)
}

#[allow(clippy::too_many_arguments)]
fn push_disparity_rows(
    table: &mut Table,
    domain: &str,
    feature: &str,
    statistic: &str,
    params: &str,
    group_stats: &BTreeMap<GroupKey, f64>,
    methods: &[DisparityMethod],
    is_selection_rate: bool,
) -> Result<()> {
    for method in methods {
        if group_stats.len() < method.min_groups() {
            continue;
        }
        let outcome = disparity(group_stats, *method)?;
        let mut flags: Vec<&str> = outcome.flags.clone();
        if is_selection_rate && *method == DisparityMethod::MinMaxRatio {
            if let Some(v) = outcome.value {
                if v < 0.8 {
                    flags.push(FLAG_FOUR_FIFTHS);
                }
            }
        }
        let key_str = |k: &GroupKey| k.join("|");
        let mut push = |method_name: &str, value: Option<f64>, flags: &[&str]| -> Result<()> {
            table.push_row(vec![
                Value::text(domain),
                Value::text(feature),
                Value::text(statistic),
                if params.is_empty() {
                    Value::Missing
                } else {
                    Value::text(params)
                },
                Value::text(method_name),
                value.map(Value::num).unwrap_or(Value::Missing),
                Value::text(key_str(&outcome.argmin)),
                Value::text(key_str(&outcome.argmax)),
                if flags.is_empty() {
                    Value::Missing
                } else {
                    Value::text(flags.join(";"))
                },
            ])
        };
        push(method.name(), outcome.value, &flags)?;
        if *method == DisparityMethod::DixonQ {
            if let Some(signed) = outcome.dixon_signed {
                push("dixon_q_signed", Some(signed), &flags)?;
            }
        }
    }
    Ok(())
}
