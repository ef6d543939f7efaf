//! Candidate pool ingestion and the feature schema.
//!
//! The canonical on-disk format is line-delimited JSON, one record per line:
//! `{"id", "composition", "atoms":[{"el","x","y","z"}...], "e_co", "e_h", "meta":{}}`.
//! Element properties (mass, electronegativity, radius) ship as a versioned
//! CSV in `data/element_properties.csv`.

mod convert;

pub use convert::{convert_external, ConvertReport, ExternalFormat};

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate id: {0}")]
    DuplicateId(String),
    #[error("structure {id} has {n_atoms} atoms, exceeding the configured maximum {max_atoms}")]
    TooManyAtoms {
        id: String,
        n_atoms: usize,
        max_atoms: usize,
    },
    #[error("no properties for element {0}")]
    MissingProperty(String),
    #[error("unsupported external format: {0}")]
    UnsupportedFormat(String),
    #[error("label for unknown id: {0}")]
    UnknownLabelId(String),
    #[error("label out of range for id {id}: {value}")]
    LabelOutOfRange { id: String, value: f64 },
}

/// One atom: element symbol plus Cartesian coordinates in Angstrom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub el: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// One candidate structure with its CO and H adsorption energies (eV).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicStructure {
    pub id: String,
    pub composition: String,
    pub atoms: Vec<Atom>,
    pub e_co: f64,
    pub e_h: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

/// Normalized activity and selectivity for one candidate, plus the
/// feasibility class derived from the selectivity threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub activity: f64,
    pub selectivity: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub structures: Vec<AtomicStructure>,
    pub labels: HashMap<String, Labels>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.structures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.structures.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&AtomicStructure> {
        self.structures.iter().find(|s| s.id == id)
    }

    /// Attach labels. Every key must name a structure and values must lie in [0, 1].
    pub fn set_labels(&mut self, labels: HashMap<String, Labels>) -> Result<(), DataError> {
        let ids: HashSet<&str> = self.structures.iter().map(|s| s.id.as_str()).collect();
        for (id, l) in &labels {
            if !ids.contains(id.as_str()) {
                return Err(DataError::UnknownLabelId(id.clone()));
            }
            for v in [l.activity, l.selectivity] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(DataError::LabelOutOfRange {
                        id: id.clone(),
                        value: v,
                    });
                }
            }
        }
        self.labels = labels;
        Ok(())
    }
}

/// Per-element scalar properties used as point features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElementProperties {
    /// Atomic mass, amu.
    pub mass: f64,
    /// Pauling electronegativity.
    pub electronegativity: f64,
    /// Atomic radius, pm.
    pub radius: f64,
}

/// Maps element symbols to feature columns. `feature_width` is always
/// `|vocab| + 3` property columns `+ 3` coordinate columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub element_vocab: Vec<String>,
    pub element_properties: BTreeMap<String, ElementProperties>,
    pub max_atoms: usize,
}

impl FeatureSchema {
    pub fn feature_width(&self) -> usize {
        self.element_vocab.len() + 6
    }

    pub fn vocab_index(&self, el: &str) -> Option<usize> {
        self.element_vocab.iter().position(|v| v == el)
    }
}

/// Default maximum atom count per structure.
pub const DEFAULT_MAX_ATOMS: usize = 147;

/// Element property table bundled with the crate.
pub const BUNDLED_PROPERTY_TABLE: &str = include_str!("../../data/element_properties.csv");

/// Parse a property table from CSV text with columns
/// `symbol,mass,electronegativity,radius`.
pub fn parse_property_table(text: &str) -> Result<BTreeMap<String, ElementProperties>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut table = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| DataError::Parse {
            line: i + 2,
            reason: e.to_string(),
        })?;
        let field = |j: usize| -> Result<&str, DataError> {
            rec.get(j).ok_or(DataError::Parse {
                line: i + 2,
                reason: format!("missing column {j}"),
            })
        };
        let num = |j: usize| -> Result<f64, DataError> {
            field(j)?.parse::<f64>().map_err(|e| DataError::Parse {
                line: i + 2,
                reason: e.to_string(),
            })
        };
        table.insert(
            field(0)?.to_string(),
            ElementProperties {
                mass: num(1)?,
                electronegativity: num(2)?,
                radius: num(3)?,
            },
        );
    }
    Ok(table)
}

pub fn load_property_table(path: &Path) -> Result<BTreeMap<String, ElementProperties>, DataError> {
    let text = read_to_string(path)?;
    parse_property_table(&text)
}

fn read_to_string(path: &Path) -> Result<String, DataError> {
    if !path.exists() {
        return Err(DataError::FileNotFound(path.display().to_string()));
    }
    Ok(std::fs::read_to_string(path)?)
}

/// Load a canonical line-delimited dataset. Duplicate ids and structures
/// exceeding `max_atoms` are rejected.
pub fn load_dataset(path: &Path, max_atoms: usize) -> Result<Dataset, DataError> {
    if !path.exists() {
        return Err(DataError::FileNotFound(path.display().to_string()));
    }
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut seen = HashSet::new();
    let mut structures = Vec::new();
    let mut labels = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CanonicalRecord =
            serde_json::from_str(&line).map_err(|e| DataError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
        if rec.structure.atoms.is_empty() {
            return Err(DataError::Parse {
                line: i + 1,
                reason: "structure has no atoms".into(),
            });
        }
        if rec.structure.atoms.len() > max_atoms {
            return Err(DataError::TooManyAtoms {
                id: rec.structure.id.clone(),
                n_atoms: rec.structure.atoms.len(),
                max_atoms,
            });
        }
        if !seen.insert(rec.structure.id.clone()) {
            return Err(DataError::DuplicateId(rec.structure.id));
        }
        if let Some(l) = rec.labels {
            labels.insert(rec.structure.id.clone(), l);
        }
        structures.push(rec.structure);
    }
    let mut ds = Dataset {
        structures,
        labels: HashMap::new(),
    };
    ds.set_labels(labels)?;
    Ok(ds)
}

/// Write a dataset in canonical form: one JSON record per line, labels
/// inlined when present. Output is deterministic for a given dataset.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for s in &dataset.structures {
        let rec = CanonicalRecord {
            structure: s.clone(),
            labels: dataset.labels.get(&s.id).copied(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| DataError::Parse {
            line: 0,
            reason: e.to_string(),
        })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CanonicalRecord {
    #[serde(flatten)]
    structure: AtomicStructure,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Labels>,
}

/// Build the feature schema for a dataset: sorted distinct element vocabulary
/// plus the property rows backing each symbol. Independent of record order.
pub fn build_schema(
    dataset: &Dataset,
    property_table: &BTreeMap<String, ElementProperties>,
    max_atoms: usize,
) -> Result<FeatureSchema, DataError> {
    let mut vocab: BTreeSet<&str> = BTreeSet::new();
    for s in &dataset.structures {
        for a in &s.atoms {
            vocab.insert(&a.el);
        }
    }
    let mut props = BTreeMap::new();
    for el in &vocab {
        let p = property_table
            .get(*el)
            .ok_or_else(|| DataError::MissingProperty(el.to_string()))?;
        props.insert(el.to_string(), *p);
    }
    Ok(FeatureSchema {
        element_vocab: vocab.into_iter().map(String::from).collect(),
        element_properties: props,
        max_atoms,
    })
}
