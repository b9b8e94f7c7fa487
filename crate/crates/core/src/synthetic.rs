//! Seed-reproducible synthetic ledgers with labeled global and local anomalies.
//!
//! Global anomalies carry a categorical value that occurs nowhere else in the
//! corpus. Local anomalies keep every marginal value common but pair them in a
//! combination that the uninjected corpus never contains.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::error::{LensError, Result};
use crate::rng::{derived_rng, rng_from_seed, stream};
use crate::schema::{Attribute, AttributeKind, AttributeSchema, AttributeValue, Corpus, RawEntry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSpec {
    pub name: String,
    pub vocabulary_size: usize,
    /// Zipf exponent of the value distribution; 0 is uniform.
    pub skew: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericSpec {
    pub name: String,
    /// Location of the underlying normal.
    pub log_mean: f64,
    pub log_std: f64,
}

/// When `source` takes value `v`, `target` takes its paired value with
/// probability `strength`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencySpec {
    pub source: String,
    pub target: String,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub entry_count: usize,
    pub seed: u64,
    pub global_anomalies: usize,
    pub local_anomalies: usize,
    /// Upper bound on the number of fresh values written into one global anomaly.
    pub max_fresh_attributes: usize,
    pub categorical: Vec<CategoricalSpec>,
    pub numeric: Vec<NumericSpec>,
    pub dependencies: Vec<DependencySpec>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let cat = |name: &str, vocabulary_size: usize, skew: f64| CategoricalSpec {
            name: name.into(),
            vocabulary_size,
            skew,
        };
        GeneratorConfig {
            entry_count: 5_000,
            seed: 2021,
            global_anomalies: 20,
            local_anomalies: 30,
            max_fresh_attributes: 2,
            categorical: vec![
                cat("payment_type", 6, 1.2),
                cat("department", 12, 1.0),
                cat("account", 40, 1.1),
                cat("vendor", 50, 1.3),
                cat("fiscal_month", 12, 0.3),
            ],
            numeric: vec![NumericSpec {
                name: "amount".into(),
                log_mean: 7.0,
                log_std: 1.2,
            }],
            dependencies: vec![
                DependencySpec {
                    source: "department".into(),
                    target: "account".into(),
                    strength: 0.9,
                },
                DependencySpec {
                    source: "vendor".into(),
                    target: "payment_type".into(),
                    strength: 0.85,
                },
            ],
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(LensError::Config(m));
        if self.entry_count == 0 {
            return err("synthetic.entry_count must be >= 1".into());
        }
        if self.categorical.is_empty() {
            return err("synthetic generator needs at least one categorical attribute".into());
        }
        let mut names = BTreeSet::new();
        for c in &self.categorical {
            if c.vocabulary_size < 2 {
                return err(format!("vocabulary of `{}` must have >= 2 values", c.name));
            }
            if !(c.skew >= 0.0 && c.skew.is_finite()) {
                return err(format!("skew of `{}` must be finite and >= 0", c.name));
            }
            if !names.insert(c.name.as_str()) {
                return err(format!("duplicate attribute `{}`", c.name));
            }
        }
        for n in &self.numeric {
            if !(n.log_std > 0.0 && n.log_mean.is_finite() && n.log_std.is_finite()) {
                return err(format!("log-normal parameters of `{}` are invalid", n.name));
            }
            if !names.insert(n.name.as_str()) {
                return err(format!("duplicate attribute `{}`", n.name));
            }
        }
        let cat_names: Vec<&str> = self.categorical.iter().map(|c| c.name.as_str()).collect();
        let mut targets = BTreeSet::new();
        for (i, d) in self.dependencies.iter().enumerate() {
            if !(0.0..=1.0).contains(&d.strength) {
                return err(format!("coupling strength {} outside [0,1]", d.strength));
            }
            if !cat_names.contains(&d.source.as_str()) || !cat_names.contains(&d.target.as_str()) {
                return err(format!(
                    "dependency {} -> {} must name categorical attributes",
                    d.source, d.target
                ));
            }
            if d.source == d.target {
                return err(format!("dependency of `{}` on itself", d.source));
            }
            if !targets.insert(d.target.as_str()) {
                return err(format!("`{}` is the target of more than one dependency", d.target));
            }
            // A source rewritten by a later dependency would break this coupling.
            if self.dependencies[i + 1..].iter().any(|later| later.target == d.source) {
                return err(format!(
                    "`{}` is rewritten after being used as a dependency source; reorder dependencies",
                    d.source
                ));
            }
        }
        if self.global_anomalies + self.local_anomalies > self.entry_count {
            return err("more anomalies requested than entries".into());
        }
        if self.max_fresh_attributes == 0 {
            return err("synthetic.max_fresh_attributes must be >= 1".into());
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<AttributeSchema> {
        let mut attrs: Vec<Attribute> = self
            .categorical
            .iter()
            .map(|c| Attribute {
                name: c.name.clone(),
                kind: AttributeKind::Categorical,
            })
            .collect();
        attrs.extend(self.numeric.iter().map(|n| Attribute {
            name: n.name.clone(),
            kind: AttributeKind::Numeric,
        }));
        AttributeSchema::new(attrs)
    }

    /// Attribute pairs coupled strongly enough to define usual combinations.
    pub fn strong_pairs(&self) -> Vec<(String, String)> {
        self.dependencies
            .iter()
            .filter(|d| d.strength >= LOCAL_MIN_COUPLING)
            .map(|d| (d.source.clone(), d.target.clone()))
            .collect()
    }
}

pub const LOCAL_MIN_COUPLING: f64 = 0.8;

pub fn value_name(attribute: &str, index: usize) -> String {
    format!("{attribute}_{index:03}")
}

fn zipf_weights(n: usize, skew: f64) -> Vec<f64> {
    (1..=n).map(|k| (k as f64).powf(-skew)).collect()
}

/// Draws a clean (anomaly-free) ledger.
pub fn generate_ledger(config: &GeneratorConfig) -> Result<Corpus> {
    config.validate()?;
    let schema = config.schema()?;
    let mut rng = rng_from_seed(config.seed);

    let samplers: Vec<WeightedIndex<f64>> = config
        .categorical
        .iter()
        .map(|c| WeightedIndex::new(zipf_weights(c.vocabulary_size, c.skew)).expect("positive weights"))
        .collect();
    // Rank order of each attribute's values is a random permutation of the labels.
    let labels: Vec<Vec<usize>> = config
        .categorical
        .iter()
        .map(|c| {
            let mut p: Vec<usize> = (0..c.vocabulary_size).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    let cat_index: HashMap<&str, usize> = config
        .categorical
        .iter()
        .enumerate()
        .map(|(i, c)| (c.name.as_str(), i))
        .collect();
    // Paired target value for every source value.
    let pairings: Vec<(usize, usize, f64, Vec<usize>)> = config
        .dependencies
        .iter()
        .map(|d| {
            let s = cat_index[d.source.as_str()];
            let t = cat_index[d.target.as_str()];
            let vt = config.categorical[t].vocabulary_size;
            let map = (0..config.categorical[s].vocabulary_size)
                .map(|_| rng.gen_range(0..vt))
                .collect();
            (s, t, d.strength, map)
        })
        .collect();
    let amount_dists: Vec<LogNormal<f64>> = config
        .numeric
        .iter()
        .map(|n| LogNormal::new(n.log_mean, n.log_std).expect("validated parameters"))
        .collect();

    let mut entries = Vec::with_capacity(config.entry_count);
    for id in 0..config.entry_count {
        let mut codes: Vec<usize> = samplers
            .iter()
            .zip(&labels)
            .map(|(s, l)| l[s.sample(&mut rng)])
            .collect();
        for (s, t, strength, map) in &pairings {
            let paired = map[codes[*s]];
            if rng.gen::<f64>() < *strength {
                codes[*t] = paired;
            } else {
                // Uncoupled draws avoid the paired value so the conditional rate equals `strength`.
                while codes[*t] == paired {
                    codes[*t] = labels[*t][samplers[*t].sample(&mut rng)];
                }
            }
        }
        let mut values: Vec<AttributeValue> = codes
            .iter()
            .zip(&config.categorical)
            .map(|(&k, c)| AttributeValue::Categorical(value_name(&c.name, k)))
            .collect();
        values.extend(
            amount_dists
                .iter()
                .map(|d| AttributeValue::Numeric((d.sample(&mut rng) * 100.0).round() / 100.0)),
        );
        entries.push(RawEntry {
            entry_id: id as u64,
            values,
        });
    }
    Ok(Corpus { schema, entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Normal,
    Global,
    Local,
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelKind::Normal => "normal",
            LabelKind::Global => "global",
            LabelKind::Local => "local",
        })
    }
}

impl std::str::FromStr for LabelKind {
    type Err = LensError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "normal" => Ok(LabelKind::Normal),
            "global" => Ok(LabelKind::Global),
            "local" => Ok(LabelKind::Local),
            other => Err(LensError::Schema(format!("unknown anomaly label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyLabel {
    pub entry_id: u64,
    pub label: LabelKind,
}

pub fn normal_labels(corpus: &Corpus) -> Vec<AnomalyLabel> {
    corpus
        .entries
        .iter()
        .map(|e| AnomalyLabel {
            entry_id: e.entry_id,
            label: LabelKind::Normal,
        })
        .collect()
}

fn check_aligned(corpus: &Corpus, labels: &[AnomalyLabel]) -> Result<()> {
    if labels.len() != corpus.entries.len()
        || labels
            .iter()
            .zip(&corpus.entries)
            .any(|(l, e)| l.entry_id != e.entry_id)
    {
        return Err(LensError::Injection("labels are not aligned with the corpus".into()));
    }
    Ok(())
}

/// Replaces `count` normal entries with global anomalies: each receives between
/// one and `max_fresh` categorical values that appear nowhere else.
pub fn inject_global_anomalies(
    corpus: &Corpus,
    labels: &[AnomalyLabel],
    count: usize,
    max_fresh: usize,
    seed: u64,
) -> Result<(Corpus, Vec<AnomalyLabel>)> {
    check_aligned(corpus, labels)?;
    let mut out = corpus.clone();
    let mut out_labels = labels.to_vec();
    if count == 0 {
        return Ok((out, out_labels));
    }
    let mut candidates: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i].label == LabelKind::Normal)
        .collect();
    if count > candidates.len() {
        return Err(LensError::Injection(format!(
            "requested {count} global anomalies but only {} normal entries exist",
            candidates.len()
        )));
    }
    let mut rng = derived_rng(seed, &[stream::GLOBAL_INJECT]);
    candidates.shuffle(&mut rng);
    let cat_pos = corpus.schema.categorical_positions();
    let existing: HashSet<&str> = corpus
        .entries
        .iter()
        .flat_map(|e| e.categorical_key())
        .collect();
    let max_fresh = max_fresh.clamp(1, cat_pos.len());
    let mut serial = 0usize;
    let mut fresh_values = HashSet::new();
    for &i in candidates.iter().take(count) {
        let k = rng.gen_range(1..=max_fresh);
        let chosen: Vec<usize> = cat_pos.choose_multiple(&mut rng, k).copied().collect();
        for p in chosen {
            let name = &corpus.schema.attributes()[p].name;
            let value = loop {
                let candidate = format!("{name}_rare_{serial:05}");
                serial += 1;
                if !existing.contains(candidate.as_str()) && !fresh_values.contains(&candidate) {
                    break candidate;
                }
            };
            fresh_values.insert(value.clone());
            out.entries[i].values[p] = AttributeValue::Categorical(value);
        }
        out_labels[i].label = LabelKind::Global;
    }
    Ok((out, out_labels))
}

/// Nearest-rank percentile of a sample.
pub fn percentile(values: &[usize], pct: f64) -> usize {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Median of the per-value frequencies of one attribute.
fn median_count(counts: &HashMap<&str, usize>) -> f64 {
    let mut c: Vec<usize> = counts.values().copied().collect();
    c.sort_unstable();
    let n = c.len();
    if n % 2 == 1 {
        c[n / 2] as f64
    } else {
        (c[n / 2 - 1] + c[n / 2]) as f64 / 2.0
    }
}

/// Frequency statistics of one attribute pair, used to define and to verify
/// local anomalies.
pub struct PairStatistics<'a> {
    pub source_counts: HashMap<&'a str, usize>,
    pub target_counts: HashMap<&'a str, usize>,
    pub joint_counts: HashMap<(&'a str, &'a str), usize>,
    pub source_median: f64,
    pub target_median: f64,
    /// 1st percentile of the per-entry joint frequency.
    pub joint_p1: usize,
}

impl<'a> PairStatistics<'a> {
    pub fn compute(corpus: &'a Corpus, source: usize, target: usize) -> Self {
        let mut source_counts = HashMap::new();
        let mut target_counts = HashMap::new();
        let mut joint_counts = HashMap::new();
        for e in &corpus.entries {
            let a = e.categorical(source).unwrap_or_default();
            let b = e.categorical(target).unwrap_or_default();
            *source_counts.entry(a).or_insert(0) += 1;
            *target_counts.entry(b).or_insert(0) += 1;
            *joint_counts.entry((a, b)).or_insert(0) += 1;
        }
        let per_entry: Vec<usize> = corpus
            .entries
            .iter()
            .map(|e| {
                joint_counts[&(
                    e.categorical(source).unwrap_or_default(),
                    e.categorical(target).unwrap_or_default(),
                )]
            })
            .collect();
        PairStatistics {
            source_median: median_count(&source_counts),
            target_median: median_count(&target_counts),
            joint_p1: percentile(&per_entry, 1.0),
            source_counts,
            target_counts,
            joint_counts,
        }
    }
}

/// Replaces `count` normal entries with local anomalies.
///
/// For an entry whose source value `v` of a strongly coupled pair is common
/// (frequency above the median), the target is rewritten to a common value `w`
/// such that `(v, w)` never occurs in the input corpus. Each injected
/// combination is used once, so its joint frequency afterwards is 1, which does
/// not exceed the 1st percentile of per-entry joint frequencies.
pub fn inject_local_anomalies(
    corpus: &Corpus,
    labels: &[AnomalyLabel],
    pairs: &[(String, String)],
    count: usize,
    seed: u64,
) -> Result<(Corpus, Vec<AnomalyLabel>)> {
    check_aligned(corpus, labels)?;
    let mut out = corpus.clone();
    let mut out_labels = labels.to_vec();
    if count == 0 {
        return Ok((out, out_labels));
    }
    if pairs.is_empty() {
        return Err(LensError::Injection(format!(
            "local anomalies need a dependency pair with coupling >= {LOCAL_MIN_COUPLING}"
        )));
    }
    let resolved: Vec<(usize, usize)> = pairs
        .iter()
        .map(|(s, t)| {
            let find = |n: &str| {
                corpus
                    .schema
                    .position(n)
                    .filter(|&p| corpus.schema.attributes()[p].kind == AttributeKind::Categorical)
                    .ok_or_else(|| LensError::Injection(format!("unknown categorical attribute `{n}`")))
            };
            Ok((find(s)?, find(t)?))
        })
        .collect::<Result<_>>()?;

    let stats: Vec<PairStatistics> = resolved
        .iter()
        .map(|&(s, t)| PairStatistics::compute(corpus, s, t))
        .collect();
    // Common target values per pair, in a stable order.
    let common_targets: Vec<Vec<&str>> = stats
        .iter()
        .map(|st| {
            let mut v: Vec<&str> = st
                .target_counts
                .iter()
                .filter(|(_, &c)| c as f64 > st.target_median)
                .map(|(k, _)| *k)
                .collect();
            v.sort_unstable();
            v
        })
        .collect();

    let mut rng = derived_rng(seed, &[stream::LOCAL_INJECT]);
    let mut candidates: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i].label == LabelKind::Normal)
        .collect();
    candidates.shuffle(&mut rng);

    let mut used: HashSet<(usize, String, String)> = HashSet::new();
    let mut injected = 0;
    let mut pair_order: Vec<usize> = (0..resolved.len()).collect();
    for i in candidates {
        if injected == count {
            break;
        }
        pair_order.shuffle(&mut rng);
        for &pi in &pair_order {
            let (s, t) = resolved[pi];
            let st = &stats[pi];
            let v = corpus.entries[i].categorical(s).unwrap_or_default();
            let current = corpus.entries[i].categorical(t).unwrap_or_default();
            if (st.source_counts[v] as f64) <= st.source_median {
                continue;
            }
            let options: Vec<&str> = common_targets[pi]
                .iter()
                .copied()
                .filter(|&w| {
                    w != current
                        && !st.joint_counts.contains_key(&(v, w))
                        && !used.contains(&(pi, v.to_string(), w.to_string()))
                })
                .collect();
            if let Some(&w) = options.choose(&mut rng) {
                used.insert((pi, v.to_string(), w.to_string()));
                out.entries[i].values[t] = AttributeValue::Categorical(w.to_string());
                out_labels[i].label = LabelKind::Local;
                injected += 1;
                break;
            }
        }
    }
    if injected < count {
        return Err(LensError::Injection(format!(
            "only {injected} of {count} local anomalies could be placed; corpus lacks unseen common combinations"
        )));
    }
    Ok((out, out_labels))
}

/// Generates a ledger and injects the configured anomalies.
pub fn generate_labeled(config: &GeneratorConfig) -> Result<(Corpus, Vec<AnomalyLabel>)> {
    let clean = generate_ledger(config)?;
    let labels = normal_labels(&clean);
    let (with_global, labels) = inject_global_anomalies(
        &clean,
        &labels,
        config.global_anomalies,
        config.max_fresh_attributes,
        config.seed,
    )?;
    inject_local_anomalies(
        &with_global,
        &labels,
        &config.strong_pairs(),
        config.local_anomalies,
        config.seed,
    )
}

pub fn write_labels_csv(path: &Path, labels: &[AnomalyLabel]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["entry_id", "label"])?;
    for l in labels {
        w.write_record([l.entry_id.to_string(), l.label.to_string()])?;
    }
    w.flush().map_err(|e| LensError::io(path, e))?;
    Ok(())
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<AnomalyLabel>> {
    if !path.exists() {
        return Err(LensError::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            let entry_id = rec
                .get(0)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| LensError::Schema("labels: invalid entry_id".into()))?;
            let label = rec
                .get(1)
                .ok_or_else(|| LensError::Schema("labels: missing label column".into()))?
                .parse()?;
            Ok(AnomalyLabel { entry_id, label })
        })
        .collect()
}

/// Aligns labels to corpus order by entry id.
pub fn align_labels(corpus: &Corpus, labels: &[AnomalyLabel]) -> Result<Vec<LabelKind>> {
    let by_id: HashMap<u64, LabelKind> = labels.iter().map(|l| (l.entry_id, l.label)).collect();
    corpus
        .entries
        .iter()
        .map(|e| {
            by_id
                .get(&e.entry_id)
                .copied()
                .ok_or_else(|| LensError::Metric(format!("missing label for entry {}", e.entry_id)))
        })
        .collect()
}
