//! Journal-entry data model, CSV ingestion and one-hot/min-max encoding.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::ops::{Deref, Range};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LensError, Result};

/// Column name reserved for entry identifiers in corpus CSVs.
pub const ENTRY_ID_COLUMN: &str = "entry_id";
pub const ENCMAP_FORMAT: &str = "lens-encmap-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Categorical,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub kind: AttributeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    attributes: Vec<Attribute>,
}

impl AttributeSchema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(LensError::Schema("empty header".into()));
        }
        let mut seen = BTreeSet::new();
        for a in &attributes {
            if a.name.is_empty() {
                return Err(LensError::Schema("empty column name".into()));
            }
            if !seen.insert(a.name.as_str()) {
                return Err(LensError::Schema(format!("duplicate column name `{}`", a.name)));
            }
        }
        let schema = AttributeSchema { attributes };
        if schema.categorical_count() == 0 {
            return Err(LensError::Schema("at least one categorical attribute is required".into()));
        }
        Ok(schema)
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn categorical_count(&self) -> usize {
        self.count(AttributeKind::Categorical)
    }

    pub fn numeric_count(&self) -> usize {
        self.count(AttributeKind::Numeric)
    }

    fn count(&self, kind: AttributeKind) -> usize {
        self.attributes.iter().filter(|a| a.kind == kind).count()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Schema positions of categorical attributes, in schema order.
    pub fn categorical_positions(&self) -> Vec<usize> {
        self.positions(AttributeKind::Categorical)
    }

    pub fn numeric_positions(&self) -> Vec<usize> {
        self.positions(AttributeKind::Numeric)
    }

    fn positions(&self, kind: AttributeKind) -> Vec<usize> {
        self.attributes
            .iter()
            .enumerate()
            .filter(|(_, a)| a.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Builds a schema in file column order.
///
/// Columns without a hint are numeric when every sampled value parses as a
/// finite real, categorical otherwise.
pub fn infer_schema(
    header: &[String],
    kind_hints: &BTreeMap<String, AttributeKind>,
    sample_rows: &[Vec<String>],
) -> Result<AttributeSchema> {
    if header.is_empty() {
        return Err(LensError::Schema("empty header".into()));
    }
    let attributes = header
        .iter()
        .enumerate()
        .map(|(col, name)| {
            let kind = kind_hints.get(name).copied().unwrap_or_else(|| {
                let numeric = !sample_rows.is_empty()
                    && sample_rows.iter().all(|row| {
                        row.get(col)
                            .and_then(|v| v.trim().parse::<f64>().ok())
                            .is_some_and(f64::is_finite)
                    });
                if numeric {
                    AttributeKind::Numeric
                } else {
                    AttributeKind::Categorical
                }
            });
            Attribute {
                name: name.clone(),
                kind,
            }
        })
        .collect();
    AttributeSchema::new(attributes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AttributeValue {
    Categorical(String),
    Numeric(f64),
}

impl AttributeValue {
    pub fn as_text(&self) -> String {
        match self {
            AttributeValue::Categorical(s) => s.clone(),
            AttributeValue::Numeric(v) => v.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEntry {
    pub entry_id: u64,
    pub values: Vec<AttributeValue>,
}

impl RawEntry {
    pub fn categorical(&self, position: usize) -> Option<&str> {
        match self.values.get(position) {
            Some(AttributeValue::Categorical(s)) => Some(s),
            _ => None,
        }
    }

    pub fn numeric(&self, position: usize) -> Option<f64> {
        match self.values.get(position) {
            Some(AttributeValue::Numeric(v)) => Some(*v),
            _ => None,
        }
    }

    /// Tuple of categorical values, used for de-duplication.
    pub fn categorical_key(&self) -> Vec<&str> {
        self.values
            .iter()
            .filter_map(|v| match v {
                AttributeValue::Categorical(s) => Some(s.as_str()),
                AttributeValue::Numeric(_) => None,
            })
            .collect()
    }
}

fn parse_row(schema: &AttributeSchema, fields: &[&str], entry_id: u64) -> Result<RawEntry> {
    if fields.len() != schema.len() {
        return Err(LensError::Schema(format!(
            "entry {entry_id}: expected {} fields, found {}",
            schema.len(),
            fields.len()
        )));
    }
    let values = schema
        .attributes()
        .iter()
        .zip(fields)
        .map(|(attr, raw)| match attr.kind {
            AttributeKind::Categorical => Ok(AttributeValue::Categorical(raw.to_string())),
            AttributeKind::Numeric => raw
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(AttributeValue::Numeric)
                .ok_or_else(|| {
                    LensError::Encoding(format!(
                        "entry {entry_id}: `{}` is not a finite number in column `{}`",
                        raw, attr.name
                    ))
                }),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RawEntry { entry_id, values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub schema: AttributeSchema,
    pub entries: Vec<RawEntry>,
}

/// Reads a comma-separated, header-first corpus.
///
/// A column named `entry_id` supplies identifiers; otherwise rows are numbered
/// from zero. Columns in `excluded` are dropped before schema inference.
pub fn read_corpus_csv(
    path: &Path,
    kind_hints: &BTreeMap<String, AttributeKind>,
    excluded: &[String],
) -> Result<Corpus> {
    if !path.exists() {
        return Err(LensError::MissingArtifact(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let id_col = header.iter().position(|h| h == ENTRY_ID_COLUMN);
    let keep: Vec<usize> = (0..header.len())
        .filter(|&i| Some(i) != id_col && !excluded.contains(&header[i]))
        .collect();
    let kept_header: Vec<String> = keep.iter().map(|&i| header[i].clone()).collect();

    let mut rows: Vec<(u64, Vec<String>)> = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record?;
        let id = match id_col {
            Some(c) => record[c].trim().parse::<u64>().map_err(|_| {
                LensError::Schema(format!("row {n}: invalid entry_id `{}`", &record[c]))
            })?,
            None => n as u64,
        };
        rows.push((id, keep.iter().map(|&i| record[i].to_string()).collect()));
    }
    let sample: Vec<Vec<String>> = rows.iter().map(|(_, r)| r.clone()).collect();
    let schema = infer_schema(&kept_header, kind_hints, &sample)?;
    let entries = rows
        .iter()
        .map(|(id, r)| {
            let fields: Vec<&str> = r.iter().map(String::as_str).collect();
            parse_row(&schema, &fields, *id)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { schema, entries })
}

pub fn write_corpus_csv(path: &Path, corpus: &Corpus) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec![ENTRY_ID_COLUMN.to_string()];
    header.extend(corpus.schema.attributes().iter().map(|a| a.name.clone()));
    writer.write_record(&header)?;
    for e in &corpus.entries {
        let mut row = vec![e.entry_id.to_string()];
        row.extend(e.values.iter().map(AttributeValue::as_text));
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| LensError::io(path, e))?;
    Ok(())
}

/// Min-max scaling into `[0, 1]`, clamping values outside the observed range.
/// A degenerate range (`max == min`) maps everything to `0.0`.
pub fn scale_numeric(x: f64, min: f64, max: f64) -> Result<f64> {
    if !(x.is_finite() && min.is_finite() && max.is_finite()) {
        return Err(LensError::Encoding(format!(
            "non-finite scaling input ({x}, {min}, {max})"
        )));
    }
    if max <= min {
        return Ok(0.0);
    }
    Ok(((x - min) / (max - min)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalBlock {
    pub attribute: String,
    pub vocabulary: Vec<String>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericRange {
    pub attribute: String,
    pub min: f64,
    pub max: f64,
}

/// Policy for categorical values missing from the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OovPolicy {
    #[default]
    Strict,
    /// Encode the block as all zeros and flag the entry.
    Lenient,
}

/// Coordinate ranges of the categorical blocks and the numeric region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    pub blocks: Vec<Range<usize>>,
    pub numeric: Range<usize>,
}

impl BlockLayout {
    pub fn dimension(&self) -> usize {
        self.numeric.end
    }

    pub fn categorical_dim(&self) -> usize {
        self.numeric.start
    }

    pub fn numeric_dim(&self) -> usize {
        self.numeric.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodingMap {
    pub format: String,
    pub categorical: Vec<CategoricalBlock>,
    pub numeric: Vec<NumericRange>,
    #[serde(skip)]
    index: Vec<HashMap<String, usize>>,
}

impl PartialEq for EncodingMap {
    fn eq(&self, other: &Self) -> bool {
        self.format == other.format
            && self.categorical == other.categorical
            && self.numeric == other.numeric
    }
}

impl EncodingMap {
    fn with_index(mut self) -> Self {
        self.index = self
            .categorical
            .iter()
            .map(|b| {
                b.vocabulary
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v.clone(), i))
                    .collect()
            })
            .collect();
        self
    }

    pub fn build(entries: &[RawEntry], schema: &AttributeSchema) -> Result<Self> {
        if entries.is_empty() {
            return Err(LensError::Encoding("cannot build an encoding map from an empty corpus".into()));
        }
        let cat_pos = schema.categorical_positions();
        let num_pos = schema.numeric_positions();
        let mut vocabularies: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); cat_pos.len()];
        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); num_pos.len()];
        for e in entries {
            if e.values.len() != schema.len() {
                return Err(LensError::Schema(format!(
                    "entry {} has {} values, schema has {}",
                    e.entry_id,
                    e.values.len(),
                    schema.len()
                )));
            }
            for (j, &p) in cat_pos.iter().enumerate() {
                let v = e.categorical(p).ok_or_else(|| {
                    LensError::Schema(format!("entry {}: expected categorical value", e.entry_id))
                })?;
                vocabularies[j].insert(v);
            }
            for (l, &p) in num_pos.iter().enumerate() {
                let v = e.numeric(p).ok_or_else(|| {
                    LensError::Schema(format!("entry {}: expected numeric value", e.entry_id))
                })?;
                if !v.is_finite() {
                    return Err(LensError::Encoding(format!(
                        "entry {}: non-finite numeric value",
                        e.entry_id
                    )));
                }
                ranges[l].0 = ranges[l].0.min(v);
                ranges[l].1 = ranges[l].1.max(v);
            }
        }
        let mut offset = 0;
        let categorical = cat_pos
            .iter()
            .zip(vocabularies)
            .map(|(&p, vocab)| {
                let block = CategoricalBlock {
                    attribute: schema.attributes()[p].name.clone(),
                    vocabulary: vocab.into_iter().map(str::to_string).collect(),
                    offset,
                };
                offset += block.vocabulary.len();
                block
            })
            .collect();
        let numeric = num_pos
            .iter()
            .zip(ranges)
            .map(|(&p, (min, max))| NumericRange {
                attribute: schema.attributes()[p].name.clone(),
                min,
                max,
            })
            .collect();
        Ok(EncodingMap {
            format: ENCMAP_FORMAT.to_string(),
            categorical,
            numeric,
            index: Vec::new(),
        }
        .with_index())
    }

    pub fn categorical_dim(&self) -> usize {
        self.categorical.iter().map(|b| b.vocabulary.len()).sum()
    }

    pub fn dimension(&self) -> usize {
        self.categorical_dim() + self.numeric.len()
    }

    pub fn layout(&self) -> BlockLayout {
        let cat = self.categorical_dim();
        BlockLayout {
            blocks: self
                .categorical
                .iter()
                .map(|b| b.offset..b.offset + b.vocabulary.len())
                .collect(),
            numeric: cat..cat + self.numeric.len(),
        }
    }

    /// Encodes one entry. Returns the vector and whether any block fell back
    /// to the lenient all-zero encoding.
    pub fn encode_with_flag(
        &self,
        raw: &RawEntry,
        schema: &AttributeSchema,
        policy: OovPolicy,
    ) -> Result<(EncodedEntry, bool)> {
        let mut out = vec![0.0; self.dimension()];
        let mut flagged = false;
        for ((block, index), p) in self
            .categorical
            .iter()
            .zip(&self.index)
            .zip(schema.categorical_positions())
        {
            let value = raw.categorical(p).ok_or_else(|| {
                LensError::Schema(format!("entry {}: expected categorical value", raw.entry_id))
            })?;
            match index.get(value) {
                Some(&k) => out[block.offset + k] = 1.0,
                None if policy == OovPolicy::Lenient => flagged = true,
                None => {
                    return Err(LensError::Encoding(format!(
                        "entry {}: value `{value}` of `{}` is not in the vocabulary",
                        raw.entry_id, block.attribute
                    )))
                }
            }
        }
        let base = self.categorical_dim();
        for (l, (range, p)) in self
            .numeric
            .iter()
            .zip(schema.numeric_positions())
            .enumerate()
        {
            let v = raw.numeric(p).ok_or_else(|| {
                LensError::Schema(format!("entry {}: expected numeric value", raw.entry_id))
            })?;
            out[base + l] = scale_numeric(v, range.min, range.max)?;
        }
        Ok((EncodedEntry(out), flagged))
    }

    pub fn encode(&self, raw: &RawEntry, schema: &AttributeSchema, policy: OovPolicy) -> Result<EncodedEntry> {
        self.encode_with_flag(raw, schema, policy).map(|(e, _)| e)
    }

    pub fn encode_all(&self, corpus: &Corpus) -> Result<Vec<EncodedEntry>> {
        corpus
            .entries
            .iter()
            .map(|e| self.encode(e, &corpus.schema, OovPolicy::Strict))
            .collect()
    }

    /// Recovers the categorical values of an encoded vector by block argmax.
    pub fn decode_categorical(&self, encoded: &[f64]) -> Vec<String> {
        self.categorical
            .iter()
            .map(|b| {
                let block = &encoded[b.offset..b.offset + b.vocabulary.len()];
                let k = argmax(block);
                b.vocabulary[k].clone()
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: EncodingMap = serde_json::from_str(text)?;
        if map.format != ENCMAP_FORMAT {
            return Err(LensError::Encoding(format!(
                "unsupported encoding map format `{}`, expected `{ENCMAP_FORMAT}`",
                map.format
            )));
        }
        let mut expected = 0;
        for b in &map.categorical {
            if b.offset != expected {
                return Err(LensError::Encoding(format!(
                    "block `{}` offset {} breaks the contiguous layout",
                    b.attribute, b.offset
                )));
            }
            let unique: BTreeSet<&String> = b.vocabulary.iter().collect();
            if unique.len() != b.vocabulary.len() {
                return Err(LensError::Encoding(format!("duplicate vocabulary in `{}`", b.attribute)));
            }
            expected += b.vocabulary.len();
        }
        if map.numeric.iter().any(|r| r.min > r.max) {
            return Err(LensError::Encoding("numeric range with min > max".into()));
        }
        Ok(map.with_index())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| LensError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(LensError::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| LensError::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Dense encoded entry: categorical one-hot blocks followed by scaled numerics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedEntry(pub Vec<f64>);

impl Deref for EncodedEntry {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for EncodedEntry {
    fn from(v: Vec<f64>) -> Self {
        EncodedEntry(v)
    }
}

/// True when every categorical block holds exactly one `1` and zeros elsewhere.
pub fn is_valid_one_hot(x: &[f64], layout: &BlockLayout) -> bool {
    layout.blocks.iter().all(|b| {
        let block = &x[b.clone()];
        block.iter().filter(|v| **v == 1.0).count() == 1
            && block.iter().all(|v| *v == 0.0 || *v == 1.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hints(pairs: &[(&str, AttributeKind)]) -> BTreeMap<String, AttributeKind> {
        pairs.iter().map(|(n, k)| (n.to_string(), *k)).collect()
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn dept_amount(values: &[(&str, f64)]) -> (AttributeSchema, Vec<RawEntry>) {
        let schema = infer_schema(
            &names(&["dept", "amount"]),
            &hints(&[("dept", AttributeKind::Categorical), ("amount", AttributeKind::Numeric)]),
            &[],
        )
        .unwrap();
        let entries = values
            .iter()
            .enumerate()
            .map(|(i, (d, a))| RawEntry {
                entry_id: i as u64,
                values: vec![
                    AttributeValue::Categorical(d.to_string()),
                    AttributeValue::Numeric(*a),
                ],
            })
            .collect();
        (schema, entries)
    }

    #[test]
    fn minimal_schema() {
        let (schema, _) = dept_amount(&[]);
        assert_eq!(schema.categorical_count(), 1);
        assert_eq!(schema.numeric_count(), 1);
    }

    #[test]
    fn ten_categorical_one_numeric() {
        let mut header: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
        header.push("amount".into());
        let rows = vec![{
            let mut r: Vec<String> = (0..10).map(|i| format!("v{i}")).collect();
            r.push("12.5".into());
            r
        }];
        let schema = infer_schema(&header, &BTreeMap::new(), &rows).unwrap();
        assert_eq!(schema.categorical_count(), 10);
        assert_eq!(schema.numeric_count(), 1);
    }

    #[test]
    fn duplicate_and_empty_headers_are_rejected() {
        assert!(infer_schema(&names(&["dept", "dept"]), &BTreeMap::new(), &[]).is_err());
        assert!(infer_schema(&[], &BTreeMap::new(), &[]).is_err());
    }

    #[test]
    fn vocabulary_is_deduplicated_and_sorted() {
        let (schema, entries) = dept_amount(&[("B", 1.0), ("A", 2.0), ("B", 3.0), ("C", 4.0)]);
        let map = EncodingMap::build(&entries, &schema).unwrap();
        assert_eq!(map.categorical[0].vocabulary, names(&["A", "B", "C"]));
        assert_eq!(map.dimension(), 4);
    }

    #[test]
    fn constant_numeric_column() {
        let (schema, entries) = dept_amount(&[("A", 7.0), ("B", 7.0)]);
        let map = EncodingMap::build(&entries, &schema).unwrap();
        assert_eq!((map.numeric[0].min, map.numeric[0].max), (7.0, 7.0));
        assert_eq!(map.encode(&entries[0], &schema, OovPolicy::Strict).unwrap()[2], 0.0);
    }

    #[test]
    fn scaling_rules() {
        assert_eq!(scale_numeric(5.0, 0.0, 10.0).unwrap(), 0.5);
        assert_eq!(scale_numeric(0.0, 0.0, 10.0).unwrap(), 0.0);
        let unclamped = (12.0 - 0.0) / (10.0 - 0.0);
        assert_eq!(unclamped, 1.2);
        assert_eq!(scale_numeric(12.0, 0.0, 10.0).unwrap(), 1.0);
        assert!(scale_numeric(f64::NAN, 0.0, 1.0).is_err());
    }

    #[test]
    fn encode_entry_composition() {
        let (schema, entries) = dept_amount(&[("A", 0.0), ("B", 5.0), ("C", 10.0)]);
        let map = EncodingMap::build(&entries, &schema).unwrap();
        let e = map.encode(&entries[1], &schema, OovPolicy::Strict).unwrap();
        assert_eq!(e.0, vec![0.0, 1.0, 0.0, 0.5]);
        assert!(is_valid_one_hot(&e, &map.layout()));
    }

    #[test]
    fn out_of_vocabulary_policies() {
        let (schema, entries) = dept_amount(&[("A", 0.0), ("B", 5.0), ("C", 10.0)]);
        let map = EncodingMap::build(&entries, &schema).unwrap();
        let (_, unknown) = dept_amount(&[("Z", 1.0)]);
        assert!(map.encode(&unknown[0], &schema, OovPolicy::Strict).is_err());
        let (e, flagged) = map
            .encode_with_flag(&unknown[0], &schema, OovPolicy::Lenient)
            .unwrap();
        assert!(flagged);
        assert_eq!(&e[..3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_numeric_is_rejected() {
        let (schema, entries) = dept_amount(&[("A", f64::INFINITY)]);
        assert!(EncodingMap::build(&entries, &schema).is_err());
    }

    #[test]
    fn json_round_trip_and_format_guard() {
        let (schema, entries) = dept_amount(&[("B", 1.0), ("A", 2.0)]);
        let map = EncodingMap::build(&entries, &schema).unwrap();
        let back = EncodingMap::from_json(&map.to_json().unwrap()).unwrap();
        assert_eq!(back, map);
        assert_eq!(
            back.encode(&entries[0], &schema, OovPolicy::Strict).unwrap(),
            map.encode(&entries[0], &schema, OovPolicy::Strict).unwrap()
        );
        let bad = map.to_json().unwrap().replace(ENCMAP_FORMAT, "other-v9");
        assert!(EncodingMap::from_json(&bad).is_err());
    }

    #[test]
    fn csv_round_trip_with_excluded_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        fs::write(&path, "entry_id,dept,note,amount\n3,\"B, Inc\",x,5\n9,A,y,7.5\n").unwrap();
        let corpus = read_corpus_csv(&path, &BTreeMap::new(), &["note".to_string()]).unwrap();
        assert_eq!(corpus.schema.len(), 2);
        assert_eq!(corpus.schema.numeric_count(), 1);
        assert_eq!(corpus.entries[0].entry_id, 3);
        assert_eq!(corpus.entries[0].categorical(0), Some("B, Inc"));
        let out = dir.path().join("d.csv");
        write_corpus_csv(&out, &corpus).unwrap();
        let again = read_corpus_csv(&out, &BTreeMap::new(), &[]).unwrap();
        assert_eq!(again, corpus);
    }
}
