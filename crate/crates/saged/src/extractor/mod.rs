//! Distill responses into numeric feature columns via classifier and
//! embedding endpoints, then calibrate them against the baseline.

pub mod cluster;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use crate::endpoints::{ClassifierClient, EmbeddingClient, RetryPolicy};
use crate::error::{Result, SagedError};
use crate::table::{
    feature_column_name, parse_feature_column, ColumnSuffix, Table, TableKind, Value,
    BASELINE_GENERATION,
};
use crate::vecmath::{cosine_distance, l2_distance, mean_vector};
pub use cluster::{ClusterModel, KMeansParams};

/// Feature names with built-in classifier support; anything else is custom.
pub const REGISTERED_FEATURES: [&str; 12] = [
    "sentiment",
    "regard",
    "stereotype_gender",
    "stereotype_religion",
    "stereotype_profession",
    "stereotype_race",
    "extraversion",
    "neuroticism",
    "agreeableness",
    "conscientiousness",
    "openness",
    "toxicity",
];

#[derive(Debug, Clone)]
pub struct ExtractOptions {
    pub batch_size: usize,
    pub retry: RetryPolicy,
    /// Embeddings cached on disk keyed by content hash when set.
    pub cache_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            batch_size: 32,
            retry: RetryPolicy::default(),
            cache_dir: None,
            seed: 42,
        }
    }
}

/// Columns a feature pass runs over: every response column plus baseline.
fn generation_columns(table: &Table) -> Vec<String> {
    table.generation_names()
}

/// Apply the classifier to every (generation, feature) pair, producing
/// `{generation}_{feature}_score` columns with values in [0,1].
///
/// Empty response cells yield missing scores; endpoint failures after retries
/// leave the affected cells missing and the run continues; out-of-range
/// scores clamp with a warning.
pub fn classify_features(
    generations: &Table,
    classifier: &dyn ClassifierClient,
    features: &[String],
    opts: &ExtractOptions,
) -> Result<(Table, Vec<String>)> {
    if features.is_empty() {
        return Err(SagedError::Invalid("no features requested".into()));
    }
    let mut warnings = Vec::new();
    let mut table = generations.rekinded(TableKind::Features);
    for generation in generation_columns(generations) {
        let col = generations
            .col(&generation)
            .ok_or_else(|| SagedError::Invalid(format!("column `{generation}` missing")))?;
        let texts: Vec<Option<String>> = generations
            .rows()
            .map(|r| r[col].as_str().map(str::to_string))
            .collect();
        for feature in features {
            let mut cells: Vec<Value> = vec![Value::Missing; texts.len()];
            // batch the present texts
            let present: Vec<usize> = (0..texts.len()).filter(|&i| texts[i].is_some()).collect();
            for (i, cell) in cells.iter_mut().enumerate() {
                if texts[i].is_none() {
                    *cell = Value::Missing;
                }
            }
            if texts.iter().any(Option::is_none) {
                warnings.push(format!(
                    "{generation}/{feature}: empty response cells scored as missing (empty input)"
                ));
            }
            for batch in present.chunks(opts.batch_size.max(1)) {
                let batch_texts: Vec<String> = batch
                    .iter()
                    .map(|&i| texts[i].clone().expect("present"))
                    .collect();
                match opts.retry.run(|| classifier.classify(&batch_texts, feature)) {
                    Ok((scores, _)) => {
                        if scores.len() != batch.len() {
                            warnings.push(format!(
                                "{generation}/{feature}: score count mismatch; cells left missing"
                            ));
                            continue;
                        }
                        for (&i, score) in batch.iter().zip(scores) {
                            let clamped = score.clamp(0.0, 1.0);
                            if clamped != score {
                                warnings.push(format!(
                                    "{generation}/{feature}: score {score} clamped to [0,1] \
                                     (row {i})"
                                ));
                            }
                            cells[i] = Value::num(clamped);
                        }
                    }
                    Err(e) => {
                        warnings.push(format!(
                            "{generation}/{feature}: endpoint failed for a batch; cells missing \
                             ({e})"
                        ));
                    }
                }
            }
            table = table.with_column(&feature_column_name(&generation, feature), cells)?;
        }
    }
    Ok((table, warnings))
}

/// Content-hash keyed embedding lookup with optional disk persistence.
pub struct EmbeddingCache<'a> {
    client: &'a dyn EmbeddingClient,
    dir: Option<PathBuf>,
    memo: Mutex<HashMap<String, Vec<f64>>>,
    retry: RetryPolicy,
}

impl<'a> EmbeddingCache<'a> {
    pub fn new(client: &'a dyn EmbeddingClient, opts: &ExtractOptions) -> Self {
        EmbeddingCache {
            client,
            dir: opts.cache_dir.clone(),
            memo: Mutex::new(HashMap::new()),
            retry: opts.retry,
        }
    }

    fn key(&self, text: &str) -> String {
        let digest = Sha256::digest(format!("{}\u{1}{text}", self.client.cache_id()).as_bytes());
        hex::encode(digest)
    }

    fn disk_path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    /// Embed texts, deduplicated, serving repeats from memory or disk.
    pub fn embed(&self, texts: &[String], batch_size: usize) -> Result<Vec<Vec<f64>>> {
        let keys: Vec<String> = texts.iter().map(|t| self.key(t)).collect();
        let mut missing: Vec<(String, String)> = Vec::new(); // (key, text)
        {
            let mut memo = self.memo.lock().expect("poisoned");
            let mut seen = std::collections::BTreeSet::new();
            for (key, text) in keys.iter().zip(texts) {
                if memo.contains_key(key) || !seen.insert(key.clone()) {
                    continue;
                }
                if let Some(path) = self.disk_path(key) {
                    if let Ok(content) = std::fs::read_to_string(&path) {
                        if let Ok(vector) = serde_json::from_str::<Vec<f64>>(&content) {
                            memo.insert(key.clone(), vector);
                            continue;
                        }
                    }
                }
                missing.push((key.clone(), text.clone()));
            }
        }
        for chunk in missing.chunks(batch_size.max(1)) {
            let chunk_texts: Vec<String> = chunk.iter().map(|(_, t)| t.clone()).collect();
            let (vectors, _) = self
                .retry
                .run(|| self.client.embed(&chunk_texts))
                .map_err(|e| SagedError::Endpoint(e.to_string()))?;
            if vectors.len() != chunk.len() {
                return Err(SagedError::Endpoint("embedding count mismatch".into()));
            }
            let mut memo = self.memo.lock().expect("poisoned");
            for ((key, _), vector) in chunk.iter().zip(vectors) {
                if let Some(path) = self.disk_path(key) {
                    if let Some(parent) = path.parent() {
                        let _ = std::fs::create_dir_all(parent);
                    }
                    let _ = std::fs::write(&path, serde_json::to_string(&vector).expect("json"));
                }
                memo.insert(key.clone(), vector);
            }
        }
        let memo = self.memo.lock().expect("poisoned");
        Ok(keys
            .iter()
            .map(|k| memo.get(k).cloned().expect("filled above"))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    L2,
    Cosine,
}

impl DistanceMetric {
    pub fn feature_name(&self) -> &'static str {
        match self {
            DistanceMetric::L2 => "l2_distance",
            DistanceMetric::Cosine => "cosine_distance",
        }
    }

    pub fn compute(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            DistanceMetric::L2 => l2_distance(a, b),
            DistanceMetric::Cosine => cosine_distance(a, b),
        }
    }
}

/// Distance between each response embedding and its row's baseline embedding.
///
/// The baseline pseudo-generation gets a zero column so calibration can treat
/// every generation uniformly.
pub fn embedding_distance(
    generations: &Table,
    embedding: &dyn EmbeddingClient,
    metric: DistanceMetric,
    opts: &ExtractOptions,
) -> Result<Table> {
    let baseline_col = generations
        .col(BASELINE_GENERATION)
        .ok_or_else(|| SagedError::Invalid("baseline column missing".into()))?;
    let cache = EmbeddingCache::new(embedding, opts);
    let baselines: Vec<String> = generations
        .rows()
        .map(|r| r[baseline_col].as_str().unwrap_or_default().to_string())
        .collect();
    let baseline_vectors = cache.embed(&baselines, opts.batch_size)?;

    let mut table = generations.rekinded(TableKind::Features);
    for generation in generation_columns(generations) {
        let feature = metric.feature_name();
        let column_name = feature_column_name(&generation, feature);
        if generation == BASELINE_GENERATION {
            let zeros = vec![Value::num(0.0); generations.len()];
            table = table.with_column(&column_name, zeros)?;
            continue;
        }
        let col = generations.col(&generation).expect("generation column");
        let mut cells = Vec::with_capacity(generations.len());
        let texts: Vec<Option<String>> = generations
            .rows()
            .map(|r| r[col].as_str().map(str::to_string))
            .collect();
        let present: Vec<String> = texts.iter().flatten().cloned().collect();
        let present_vectors = cache.embed(&present, opts.batch_size)?;
        let mut it = present_vectors.into_iter();
        for (i, text) in texts.iter().enumerate() {
            match text {
                Some(_) => {
                    let vector = it.next().expect("one vector per present text");
                    cells.push(Value::num(metric.compute(&vector, &baseline_vectors[i])));
                }
                None => cells.push(Value::Missing),
            }
        }
        table = table.with_column(&column_name, cells)?;
    }
    Ok(table)
}

/// Column under which each row's baseline cluster index is stored.
pub const BASELINE_CLUSTER_COLUMN: &str = "baseline_cluster";

/// Cluster the text column per segregation group and label the clusters.
///
/// Returns the fitted models plus the input table extended with a
/// `baseline_cluster` assignment column (when clustering the baseline).
pub fn cluster_and_label(
    generations: &Table,
    embedding: &dyn EmbeddingClient,
    k: usize,
    segregation_column: &str,
    text_column: &str,
    opts: &ExtractOptions,
) -> Result<(Vec<ClusterModel>, Table)> {
    if k < 1 {
        return Err(SagedError::Invalid("k must be >= 1".into()));
    }
    let seg_col = generations
        .col(segregation_column)
        .ok_or_else(|| SagedError::Invalid(format!("column `{segregation_column}` missing")))?;
    let text_col = generations
        .col(text_column)
        .ok_or_else(|| SagedError::Invalid(format!("column `{text_column}` missing")))?;

    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, row) in generations.rows().enumerate() {
        let value = row[seg_col].as_str().unwrap_or_default().to_string();
        groups.entry(value).or_default().push(i);
    }

    let cache = EmbeddingCache::new(embedding, opts);
    let mut models = Vec::new();
    let mut assignment_cells = vec![Value::Missing; generations.len()];
    for (value, rows) in &groups {
        if rows.len() < k {
            return Err(SagedError::Invalid(format!(
                "group `{value}` has {} rows, fewer than k = {k}",
                rows.len()
            )));
        }
        let sentences: Vec<String> = rows
            .iter()
            .map(|&i| {
                generations
                    .get(i, text_col)
                    .as_str()
                    .unwrap_or_default()
                    .to_string()
            })
            .collect();
        let vectors = cache.embed(&sentences, opts.batch_size)?;
        let fit = cluster::kmeans(&vectors, &KMeansParams::new(k, opts.seed));
        let labels = cluster::label_clusters(&sentences, &vectors, &fit);
        for (&row, &assignment) in rows.iter().zip(&fit.assignments) {
            assignment_cells[row] = Value::num(assignment as f64);
        }
        models.push(ClusterModel {
            segregation_value: value.clone(),
            k,
            centroids: fit.centroids,
            labels,
            inertia: fit.inertia,
        });
    }
    let table = generations.with_column(BASELINE_CLUSTER_COLUMN, assignment_cells)?;
    Ok((models, table))
}

fn models_by_value(models: &[ClusterModel]) -> BTreeMap<&str, &ClusterModel> {
    models
        .iter()
        .map(|m| (m.segregation_value.as_str(), m))
        .collect()
}

/// Distance from each response to the nearest centroid of its group's model,
/// with the centroid's label in a companion column.
pub fn cluster_and_distance(
    generations: &Table,
    models: &[ClusterModel],
    embedding: &dyn EmbeddingClient,
    metric: DistanceMetric,
    segregation_column: &str,
    opts: &ExtractOptions,
) -> Result<Table> {
    let seg_col = generations
        .col(segregation_column)
        .ok_or_else(|| SagedError::Invalid(format!("column `{segregation_column}` missing")))?;
    let by_value = models_by_value(models);
    for row in generations.rows() {
        let value = row[seg_col].as_str().unwrap_or_default();
        if !by_value.contains_key(value) {
            return Err(SagedError::Invalid(format!(
                "no cluster model for segregation value `{value}`"
            )));
        }
    }
    let cache = EmbeddingCache::new(embedding, opts);
    let mut table = generations.rekinded(TableKind::Features);
    for generation in generation_columns(generations) {
        let col = generations.col(&generation).expect("generation column");
        let texts: Vec<Option<String>> = generations
            .rows()
            .map(|r| r[col].as_str().map(str::to_string))
            .collect();
        let present: Vec<String> = texts.iter().flatten().cloned().collect();
        let vectors = cache.embed(&present, opts.batch_size)?;
        let mut it = vectors.into_iter();
        let mut distance_cells = Vec::with_capacity(texts.len());
        let mut label_cells = Vec::with_capacity(texts.len());
        for (i, text) in texts.iter().enumerate() {
            match text {
                Some(_) => {
                    let vector = it.next().expect("one per present");
                    let value = generations.get(i, seg_col).as_str().unwrap_or_default();
                    let model = by_value[value];
                    let (nearest, _) = cluster::nearest_centroid(&vector, &model.centroids);
                    distance_cells.push(Value::num(
                        metric.compute(&vector, &model.centroids[nearest]),
                    ));
                    label_cells.push(Value::text(model.label_text(nearest)));
                }
                None => {
                    distance_cells.push(Value::Missing);
                    label_cells.push(Value::Missing);
                }
            }
        }
        table = table.with_column(
            &feature_column_name(&generation, "cluster_distance"),
            distance_cells,
        )?;
        table = table.with_column(&format!("{generation}_cluster_label"), label_cells)?;
    }
    Ok(table)
}

/// Binary pivot columns: for each generation row, 1 for the baseline-anchored
/// cluster whose combined vector (mean of member baseline embeddings) is
/// nearest, 0 elsewhere; exactly one 1 per row.
pub fn cluster_and_sort(
    generations: &Table,
    embedding: &dyn EmbeddingClient,
    segregation_column: &str,
    opts: &ExtractOptions,
) -> Result<Table> {
    let cluster_col = generations.col(BASELINE_CLUSTER_COLUMN).ok_or_else(|| {
        SagedError::Invalid(format!(
            "column `{BASELINE_CLUSTER_COLUMN}` missing; run cluster labeling first"
        ))
    })?;
    let seg_col = generations
        .col(segregation_column)
        .ok_or_else(|| SagedError::Invalid(format!("column `{segregation_column}` missing")))?;
    let baseline_col = generations
        .col(BASELINE_GENERATION)
        .ok_or_else(|| SagedError::Invalid("baseline column missing".into()))?;

    let cache = EmbeddingCache::new(embedding, opts);
    let baselines: Vec<String> = generations
        .rows()
        .map(|r| r[baseline_col].as_str().unwrap_or_default().to_string())
        .collect();
    let baseline_vectors = cache.embed(&baselines, opts.batch_size)?;

    // combined vector per (segregation value, cluster id)
    let mut members: BTreeMap<(String, u64), Vec<usize>> = BTreeMap::new();
    let mut max_cluster = 0u64;
    for (i, row) in generations.rows().enumerate() {
        let value = row[seg_col].as_str().unwrap_or_default().to_string();
        let cluster = row[cluster_col]
            .as_num()
            .ok_or_else(|| SagedError::Invalid(format!("row {i} has no baseline cluster")))?
            as u64;
        max_cluster = max_cluster.max(cluster);
        members.entry((value, cluster)).or_default().push(i);
    }
    let combined: BTreeMap<(String, u64), Vec<f64>> = members
        .iter()
        .map(|(key, rows)| {
            let vectors: Vec<Vec<f64>> =
                rows.iter().map(|&i| baseline_vectors[i].clone()).collect();
            (key.clone(), mean_vector(&vectors))
        })
        .collect();

    let mut table = generations.rekinded(TableKind::Features);
    let generation_list: Vec<String> = generation_columns(generations)
        .into_iter()
        .filter(|g| g != BASELINE_GENERATION)
        .collect();
    for generation in generation_list {
        let col = generations.col(&generation).expect("generation column");
        let texts: Vec<Option<String>> = generations
            .rows()
            .map(|r| r[col].as_str().map(str::to_string))
            .collect();
        let present: Vec<String> = texts.iter().flatten().cloned().collect();
        let vectors = cache.embed(&present, opts.batch_size)?;
        let mut it = vectors.into_iter();
        let mut pivots: Vec<Vec<Value>> =
            vec![vec![Value::Missing; texts.len()]; (max_cluster + 1) as usize];
        for (i, text) in texts.iter().enumerate() {
            if text.is_none() {
                continue;
            }
            let vector = it.next().expect("one per present");
            let value = generations.get(i, seg_col).as_str().unwrap_or_default();
            let mut best: Option<(u64, f64)> = None;
            for ((seg, cluster), center) in &combined {
                if seg != value {
                    continue;
                }
                let d = l2_distance(&vector, center);
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((*cluster, d));
                }
            }
            let chosen = best
                .ok_or_else(|| {
                    SagedError::Invalid(format!("no clusters for segregation value `{value}`"))
                })?
                .0;
            for (cluster, cells) in pivots.iter_mut().enumerate() {
                cells[i] = Value::num(if cluster as u64 == chosen { 1.0 } else { 0.0 });
            }
        }
        for (cluster, cells) in pivots.into_iter().enumerate() {
            table = table.with_column(&format!("{generation}_cluster_{cluster}_pivot"), cells)?;
        }
    }
    Ok(table)
}

/// Append `_calibrated` columns: raw minus the row's baseline score.
///
/// Raw columns are retained; a missing cell on either side propagates.
pub fn calibrate(features: &Table, baseline_generation: &str) -> Result<Table> {
    let generations = features.generation_names();
    let mut table = features.clone();
    let columns: Vec<String> = features.columns().to_vec();
    for column in &columns {
        let parsed = match parse_feature_column(column, &generations) {
            Some(fc) if fc.suffix == ColumnSuffix::Score => fc,
            _ => continue,
        };
        if parsed.generation == baseline_generation {
            continue;
        }
        let baseline_column = feature_column_name(baseline_generation, &parsed.feature);
        let base_idx = features.col(&baseline_column).ok_or_else(|| {
            SagedError::Invalid(format!(
                "baseline column `{baseline_column}` missing for feature `{}`",
                parsed.feature
            ))
        })?;
        let raw_idx = features.col(column).expect("iterating existing columns");
        let cells: Vec<Value> = features
            .rows()
            .map(|row| match (row[raw_idx].as_num(), row[base_idx].as_num()) {
                (Some(raw), Some(base)) => Value::num(raw - base),
                _ => Value::Missing,
            })
            .collect();
        table = table.with_column(&format!("{column}_calibrated"), cells)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::endpoints::mock::{
        FixtureEmbedding, MockClassifier, MockClassifierBehavior, MockEmbedding,
    };
    use crate::table::{benchmark_table, BenchmarkRecord};
    use approx::assert_abs_diff_eq;

    fn generations_fixture(rows: usize) -> Table {
        let records: Vec<BenchmarkRecord> = (0..rows)
            .map(|i| BenchmarkRecord {
                domain: "d".into(),
                concept: format!("c{}", i % 2),
                keyword: "k".into(),
                prompt: format!("prompt {i}"),
                baseline: format!("baseline k {i}"),
                source_tag: "t".into(),
            })
            .collect();
        let table = benchmark_table(&records).rekinded(TableKind::Generations);
        let cells: Vec<Value> = (0..rows).map(|i| Value::text(format!("response {i}"))).collect();
        table.with_column("m_no_role", cells).unwrap()
    }

    fn fast_opts() -> ExtractOptions {
        ExtractOptions {
            retry: RetryPolicy::no_delay(2),
            ..ExtractOptions::default()
        }
    }

    #[test]
    fn constant_stub_fills_every_cell() {
        let generations = generations_fixture(3);
        let classifier = MockClassifier {
            behavior: MockClassifierBehavior::Constant(0.5),
        };
        let (features, warnings) = classify_features(
            &generations,
            &classifier,
            &["sentiment".to_string()],
            &fast_opts(),
        )
        .unwrap();
        assert!(warnings.is_empty());
        for row in 0..3 {
            assert_eq!(
                features.cell(row, "m_no_role_sentiment_score").unwrap().as_num(),
                Some(0.5)
            );
            assert_eq!(
                features.cell(row, "baseline_sentiment_score").unwrap().as_num(),
                Some(0.5)
            );
        }
    }

    #[test]
    fn empty_response_yields_missing_cell() {
        let generations = generations_fixture(2);
        // rebuild with one response cell missing
        let mut rebuilt = Table::new(TableKind::Generations, generations.columns().to_vec());
        for (i, row) in generations.rows().enumerate() {
            let mut row = row.to_vec();
            if i == 1 {
                *row.last_mut().unwrap() = Value::Missing;
            }
            rebuilt.push_row(row).unwrap();
        }
        let classifier = MockClassifier {
            behavior: MockClassifierBehavior::Constant(0.5),
        };
        let (features, warnings) =
            classify_features(&rebuilt, &classifier, &["sentiment".to_string()], &fast_opts())
                .unwrap();
        assert!(features
            .cell(1, "m_no_role_sentiment_score")
            .unwrap()
            .is_missing());
        assert!(warnings.iter().any(|w| w.contains("empty input")));
    }

    #[test]
    fn out_of_range_scores_clamp_with_warning() {
        let generations = generations_fixture(1);
        struct Wild;
        impl ClassifierClient for Wild {
            fn classify(
                &self,
                texts: &[String],
                _feature: &str,
            ) -> crate::endpoints::EndpointResult<Vec<f64>> {
                Ok(texts.iter().map(|_| 1.5).collect())
            }
        }
        let (features, warnings) =
            classify_features(&generations, &Wild, &["sentiment".to_string()], &fast_opts())
                .unwrap();
        assert_eq!(
            features.cell(0, "m_no_role_sentiment_score").unwrap().as_num(),
            Some(1.0)
        );
        assert!(warnings.iter().any(|w| w.contains("clamped")));
    }

    #[test]
    fn identical_response_and_baseline_have_zero_distance() {
        let records = vec![BenchmarkRecord {
            domain: "d".into(),
            concept: "c".into(),
            keyword: "k".into(),
            prompt: "p".into(),
            baseline: "same text k".into(),
            source_tag: "t".into(),
        }];
        let table = benchmark_table(&records).rekinded(TableKind::Generations);
        let table = table
            .with_column("m_no_role", vec![Value::text("same text k")])
            .unwrap();
        let embedding = MockEmbedding::default();
        for metric in [DistanceMetric::L2, DistanceMetric::Cosine] {
            let features = embedding_distance(&table, &embedding, metric, &fast_opts()).unwrap();
            let col = feature_column_name("m_no_role", metric.feature_name());
            assert_eq!(features.cell(0, &col).unwrap().as_num(), Some(0.0));
        }
    }

    #[test]
    fn distance_fixture_matches_brute_force() {
        let texts = ["r0", "r1", "r2", "r3", "r4"];
        let baselines = ["b0", "b1", "b2", "b3", "b4"];
        let records: Vec<BenchmarkRecord> = (0..5)
            .map(|i| BenchmarkRecord {
                domain: "d".into(),
                concept: "c".into(),
                keyword: "k".into(),
                prompt: format!("p{i}"),
                baseline: baselines[i].into(),
                source_tag: "t".into(),
            })
            .collect();
        let mut records = records;
        for (i, r) in records.iter_mut().enumerate() {
            r.baseline = format!("k {}", baselines[i]);
        }
        let table = benchmark_table(&records).rekinded(TableKind::Generations);
        let cells: Vec<Value> = texts.iter().map(|t| Value::text(*t)).collect();
        let table = table.with_column("m_no_role", cells).unwrap();
        let embedding = MockEmbedding::default();
        let features =
            embedding_distance(&table, &embedding, DistanceMetric::L2, &fast_opts()).unwrap();
        for i in 0..5 {
            let response_vec = embedding.embed_one(texts[i]).unwrap();
            let baseline_vec = embedding.embed_one(&format!("k {}", baselines[i])).unwrap();
            let expected: f64 = response_vec
                .iter()
                .zip(&baseline_vec)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let got = features
                .cell(i, "m_no_role_l2_distance_score")
                .unwrap()
                .as_num()
                .unwrap();
            assert_abs_diff_eq!(got, expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn cluster_and_distance_zero_at_centroid_and_tie_breaks_low() {
        let vectors: BTreeMap<String, Vec<f64>> = [
            ("left".to_string(), vec![0.0, 0.0]),
            ("right".to_string(), vec![2.0, 0.0]),
            ("middle".to_string(), vec![1.0, 0.0]),
        ]
        .into_iter()
        .collect();
        let embedding = FixtureEmbedding { vectors };
        let models = vec![ClusterModel {
            segregation_value: "c".into(),
            k: 2,
            centroids: vec![vec![0.0, 0.0], vec![2.0, 0.0]],
            labels: vec![vec!["a".into()], vec!["b".into()]],
            inertia: 0.0,
        }];
        let records: Vec<BenchmarkRecord> = ["left", "middle"]
            .iter()
            .map(|t| BenchmarkRecord {
                domain: "d".into(),
                concept: "c".into(),
                keyword: "k".into(),
                prompt: format!("p {t}"),
                baseline: "k baseline".into(),
                source_tag: "t".into(),
            })
            .collect();
        let table = benchmark_table(&records).rekinded(TableKind::Generations);
        let table = table
            .with_column(
                "m_no_role",
                vec![Value::text("left"), Value::text("middle")],
            )
            .unwrap();
        // baseline cells 'k baseline' need a vector too
        let mut embedding = embedding;
        embedding
            .vectors
            .insert("k baseline".to_string(), vec![0.5, 0.5]);
        let features = cluster_and_distance(
            &table,
            &models,
            &embedding,
            DistanceMetric::L2,
            "concept",
            &fast_opts(),
        )
        .unwrap();
        assert_eq!(
            features
                .cell(0, "m_no_role_cluster_distance_score")
                .unwrap()
                .as_num(),
            Some(0.0)
        );
        // equidistant point assigns to the lower cluster index (label "a")
        assert_eq!(
            features.cell(1, "m_no_role_cluster_label").unwrap().as_str(),
            Some("a")
        );
    }

    #[test]
    fn missing_model_for_group_is_an_error() {
        let embedding = MockEmbedding::default();
        let table = generations_fixture(2);
        let models = vec![ClusterModel {
            segregation_value: "c0".into(),
            k: 1,
            centroids: vec![vec![0.0; 16]],
            labels: vec![vec!["x".into()]],
            inertia: 0.0,
        }];
        let err = cluster_and_distance(
            &table,
            &models,
            &embedding,
            DistanceMetric::L2,
            "concept",
            &fast_opts(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("c1"));
    }

    #[test]
    fn cluster_and_label_group_smaller_than_k_errors() {
        let table = generations_fixture(3); // concepts c0 (2 rows), c1 (1 row)
        let embedding = MockEmbedding::default();
        let err = cluster_and_label(&table, &embedding, 2, "concept", "baseline", &fast_opts())
            .unwrap_err();
        assert!(err.to_string().contains("c1"));
    }

    #[test]
    fn cluster_and_sort_single_cluster_assigns_all_ones() {
        let table = generations_fixture(4);
        let embedding = MockEmbedding::default();
        let (_, with_clusters) =
            cluster_and_label(&table, &embedding, 1, "concept", "baseline", &fast_opts()).unwrap();
        let pivots =
            cluster_and_sort(&with_clusters, &embedding, "concept", &fast_opts()).unwrap();
        for row in 0..4 {
            assert_eq!(
                pivots.cell(row, "m_no_role_cluster_0_pivot").unwrap().as_num(),
                Some(1.0)
            );
        }
    }

    #[test]
    fn cluster_and_sort_pivot_rows_sum_to_one() {
        let table = generations_fixture(8);
        let embedding = MockEmbedding::default();
        let (_, with_clusters) =
            cluster_and_label(&table, &embedding, 2, "concept", "baseline", &fast_opts()).unwrap();
        let pivots =
            cluster_and_sort(&with_clusters, &embedding, "concept", &fast_opts()).unwrap();
        for row in 0..8 {
            let sum: f64 = (0..2)
                .map(|c| {
                    pivots
                        .cell(row, &format!("m_no_role_cluster_{c}_pivot"))
                        .unwrap()
                        .as_num()
                        .unwrap()
                })
                .sum();
            assert_eq!(sum, 1.0);
        }
    }

    #[test]
    fn cluster_and_sort_identity_assignment() {
        // a response identical to a cluster's only baseline goes to it
        let mut vectors: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        vectors.insert("base a".into(), vec![0.0, 0.0]);
        vectors.insert("base b".into(), vec![4.0, 4.0]);
        let embedding = FixtureEmbedding { vectors };
        let records: Vec<BenchmarkRecord> = ["base a", "base b"]
            .iter()
            .map(|b| BenchmarkRecord {
                domain: "d".into(),
                concept: "c".into(),
                keyword: "base".into(),
                prompt: format!("p {b}"),
                baseline: b.to_string(),
                source_tag: "t".into(),
            })
            .collect();
        let table = benchmark_table(&records).rekinded(TableKind::Generations);
        let table = table
            .with_column(
                "m_no_role",
                vec![Value::text("base b"), Value::text("base a")],
            )
            .unwrap();
        let table = table
            .with_column(
                BASELINE_CLUSTER_COLUMN,
                vec![Value::num(0.0), Value::num(1.0)],
            )
            .unwrap();
        let pivots = cluster_and_sort(&table, &embedding, "concept", &fast_opts()).unwrap();
        // row 0 response equals cluster 1's baseline
        assert_eq!(
            pivots.cell(0, "m_no_role_cluster_1_pivot").unwrap().as_num(),
            Some(1.0)
        );
        assert_eq!(
            pivots.cell(1, "m_no_role_cluster_0_pivot").unwrap().as_num(),
            Some(1.0)
        );
    }

    #[test]
    fn calibrate_subtracts_baseline_rowwise() {
        let generations = generations_fixture(2);
        let features = generations
            .rekinded(TableKind::Features)
            .with_column(
                "baseline_sentiment_score",
                vec![Value::num(0.2), Value::num(0.2)],
            )
            .unwrap()
            .with_column(
                "m_no_role_sentiment_score",
                vec![Value::num(0.7), Value::Missing],
            )
            .unwrap();
        let calibrated = calibrate(&features, BASELINE_GENERATION).unwrap();
        assert_abs_diff_eq!(
            calibrated
                .cell(0, "m_no_role_sentiment_score_calibrated")
                .unwrap()
                .as_num()
                .unwrap(),
            0.5,
            epsilon = 1e-15
        );
        assert!(calibrated
            .cell(1, "m_no_role_sentiment_score_calibrated")
            .unwrap()
            .is_missing());
        // raw columns retained
        assert!(calibrated.col("m_no_role_sentiment_score").is_some());
    }

    #[test]
    fn calibrate_identity_gives_zero() {
        let generations = generations_fixture(2);
        let features = generations
            .rekinded(TableKind::Features)
            .with_column(
                "baseline_sentiment_score",
                vec![Value::num(0.4), Value::num(0.6)],
            )
            .unwrap()
            .with_column(
                "m_no_role_sentiment_score",
                vec![Value::num(0.4), Value::num(0.6)],
            )
            .unwrap();
        let calibrated = calibrate(&features, BASELINE_GENERATION).unwrap();
        for row in 0..2 {
            assert_eq!(
                calibrated
                    .cell(row, "m_no_role_sentiment_score_calibrated")
                    .unwrap()
                    .as_num(),
                Some(0.0)
            );
        }
    }

    #[test]
    fn calibrate_missing_baseline_column_is_an_error() {
        let generations = generations_fixture(1);
        let features = generations
            .rekinded(TableKind::Features)
            .with_column("m_no_role_sentiment_score", vec![Value::num(0.4)])
            .unwrap();
        assert!(calibrate(&features, BASELINE_GENERATION).is_err());
    }

    #[test]
    fn calibration_is_shift_invariant_bitwise_on_dyadic_grid() {
        // dyadic values make float addition exact, so the invariance is exact
        let generations = generations_fixture(4);
        let base: Vec<f64> = (0..4).map(|i| i as f64 / 64.0).collect();
        let raw: Vec<f64> = base.iter().map(|b| b + 0.25).collect();
        let shift = 0.5f64;
        let features = generations
            .rekinded(TableKind::Features)
            .with_column(
                "baseline_sentiment_score",
                base.iter().map(|&v| Value::num(v)).collect(),
            )
            .unwrap()
            .with_column(
                "m_no_role_sentiment_score",
                raw.iter().map(|&v| Value::num(v)).collect(),
            )
            .unwrap();
        let shifted = generations
            .rekinded(TableKind::Features)
            .with_column(
                "baseline_sentiment_score",
                base.iter().map(|&v| Value::num(v + shift)).collect(),
            )
            .unwrap()
            .with_column(
                "m_no_role_sentiment_score",
                raw.iter().map(|&v| Value::num(v + shift)).collect(),
            )
            .unwrap();
        let a = calibrate(&features, BASELINE_GENERATION).unwrap();
        let b = calibrate(&shifted, BASELINE_GENERATION).unwrap();
        for row in 0..4 {
            let va = a
                .cell(row, "m_no_role_sentiment_score_calibrated")
                .unwrap()
                .as_num()
                .unwrap();
            let vb = b
                .cell(row, "m_no_role_sentiment_score_calibrated")
                .unwrap()
                .as_num()
                .unwrap();
            assert_eq!(va.to_bits(), vb.to_bits());
        }
    }
}
