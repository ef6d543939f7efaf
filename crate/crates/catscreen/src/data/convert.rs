//! Conversion of external adsorption datasets into the canonical format.
//!
//! The supported external layout, tag `gaspy-jsonl`, is line-delimited JSON
//! with one adsorption calculation per line:
//!
//! ```text
//! {"adsorbate":"CO"|"H", "composition":"Al8Cu24", "miller":[h,k,l],
//!  "shift":0.25, "top":true, "site":[x,y,z], "energy":-0.6,
//!  "atoms":[{"el","x","y","z"}...]}
//! ```
//!
//! CO and H entries are paired when they share the surface-and-site key
//! `(composition, miller, shift, top, site)`, with site coordinates compared
//! at 1e-3 Angstrom resolution. Pairs whose energies fall outside the active
//! volcano-map domains are dropped, since such candidates cannot be labeled.

use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Atom, AtomicStructure, DataError, Dataset};
use crate::volcano::VolcanoMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExternalFormat {
    GaspyJsonl,
}

impl std::str::FromStr for ExternalFormat {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaspy-jsonl" => Ok(Self::GaspyJsonl),
            other => Err(DataError::UnsupportedFormat(other.to_string())),
        }
    }
}

/// Outcome counters for a conversion run. Pairing failures are reported,
/// not fatal.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConvertReport {
    pub records_read: usize,
    pub pairs_written: usize,
    pub dropped_out_of_range: usize,
    pub unpaired_co: usize,
    pub unpaired_h: usize,
}

#[derive(Debug, Deserialize)]
struct ExternalRecord {
    adsorbate: String,
    composition: String,
    miller: [i64; 3],
    shift: f64,
    top: bool,
    site: [f64; 3],
    energy: f64,
    atoms: Vec<Atom>,
}

/// Pairing key: composition + miller + shift + top + site, with continuous
/// fields quantized so float round-trips cannot split a pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct PairKey {
    composition: String,
    miller: [i64; 3],
    shift_milli: i64,
    top: bool,
    site_milli: [i64; 3],
}

impl PairKey {
    fn of(r: &ExternalRecord) -> Self {
        let q = |v: f64| (v * 1000.0).round() as i64;
        Self {
            composition: r.composition.clone(),
            miller: r.miller,
            shift_milli: q(r.shift),
            top: r.top,
            site_milli: [q(r.site[0]), q(r.site[1]), q(r.site[2])],
        }
    }
}

/// Convert an external file to the canonical line-delimited format at `dst`.
/// The structure snapshot of each pair comes from the CO record. Output
/// order is sorted by pairing key, so source record order never matters.
pub fn convert_external(
    src: &Path,
    format: ExternalFormat,
    dst: &Path,
    act_map: &VolcanoMap,
    sel_map: &VolcanoMap,
) -> Result<ConvertReport, DataError> {
    match format {
        ExternalFormat::GaspyJsonl => convert_gaspy(src, dst, act_map, sel_map),
    }
}

fn convert_gaspy(
    src: &Path,
    dst: &Path,
    act_map: &VolcanoMap,
    sel_map: &VolcanoMap,
) -> Result<ConvertReport, DataError> {
    if !src.exists() {
        return Err(DataError::FileNotFound(src.display().to_string()));
    }
    let reader = std::io::BufReader::new(std::fs::File::open(src)?);

    let mut co: BTreeMap<PairKey, ExternalRecord> = BTreeMap::new();
    let mut h: BTreeMap<PairKey, ExternalRecord> = BTreeMap::new();
    let mut report = ConvertReport::default();

    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExternalRecord = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        report.records_read += 1;
        let key = PairKey::of(&rec);
        match rec.adsorbate.as_str() {
            "CO" => {
                co.insert(key, rec);
            }
            "H" => {
                h.insert(key, rec);
            }
            other => {
                return Err(DataError::Parse {
                    line: i + 1,
                    reason: format!("unknown adsorbate {other:?}"),
                })
            }
        }
    }

    let mut structures = Vec::new();
    for (key, co_rec) in &co {
        let Some(h_rec) = h.get(key) else {
            report.unpaired_co += 1;
            continue;
        };
        if !act_map.contains(co_rec.energy) || !sel_map.contains(h_rec.energy) {
            report.dropped_out_of_range += 1;
            continue;
        }
        let mut meta = BTreeMap::new();
        meta.insert(
            "miller".to_string(),
            format!("{},{},{}", key.miller[0], key.miller[1], key.miller[2]),
        );
        meta.insert("shift".to_string(), format!("{}", co_rec.shift));
        meta.insert("top".to_string(), format!("{}", co_rec.top));
        let id = format!(
            "{}_m{}{}{}_s{}_{}_{}",
            key.composition,
            key.miller[0],
            key.miller[1],
            key.miller[2],
            key.shift_milli,
            if key.top { "t" } else { "b" },
            format_args!(
                "{}:{}:{}",
                key.site_milli[0], key.site_milli[1], key.site_milli[2]
            ),
        );
        structures.push(AtomicStructure {
            id,
            composition: key.composition.clone(),
            atoms: co_rec.atoms.clone(),
            e_co: co_rec.energy,
            e_h: h_rec.energy,
            meta,
        });
    }
    report.unpaired_h = h.len() - (co.len() - report.unpaired_co);
    report.pairs_written = structures.len();

    let ds = Dataset {
        structures,
        labels: Default::default(),
    };
    let file = std::fs::File::create(dst)?;
    let mut w = BufWriter::new(file);
    for s in &ds.structures {
        serde_json::to_writer(&mut w, s).map_err(|e| DataError::Parse {
            line: 0,
            reason: e.to_string(),
        })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_dataset, DEFAULT_MAX_ATOMS};

    fn rec(adsorbate: &str, energy: f64, shift: f64) -> String {
        format!(
            r#"{{"adsorbate":"{adsorbate}","composition":"Al8Cu24","miller":[1,1,1],"shift":{shift},"top":true,"site":[0.1,0.2,0.3],"energy":{energy},"atoms":[{{"el":"Cu","x":0,"y":0,"z":0}}]}}"#
        )
    }

    fn maps() -> (VolcanoMap, VolcanoMap) {
        (
            VolcanoMap::default_activity(),
            VolcanoMap::default_selectivity(),
        )
    }

    #[test]
    fn empty_source_gives_empty_output() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src.jsonl");
        let dst = dir.path().join("dst.jsonl");
        std::fs::write(&src, "").unwrap();
        let (a, s) = maps();
        let report = convert_external(&src, ExternalFormat::GaspyJsonl, &dst, &a, &s).unwrap();
        assert_eq!(report.pairs_written, 0);
        assert_eq!(std::fs::read_to_string(&dst).unwrap(), "");
    }

    #[test]
    fn one_co_one_h_pairs_up() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src.jsonl");
        let dst = dir.path().join("dst.jsonl");
        let mut f = std::fs::File::create(&src).unwrap();
        writeln!(f, "{}", rec("CO", -0.7, 0.25)).unwrap();
        writeln!(f, "{}", rec("H", 0.2, 0.25)).unwrap();
        let (a, s) = maps();
        let report = convert_external(&src, ExternalFormat::GaspyJsonl, &dst, &a, &s).unwrap();
        assert_eq!(report.pairs_written, 1);
        let ds = load_dataset(&dst, DEFAULT_MAX_ATOMS).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.structures[0].e_co, -0.7);
        assert_eq!(ds.structures[0].e_h, 0.2);
    }

    #[test]
    fn pairing_is_symmetric_in_record_order() {
        let dir = tempfile::tempdir().unwrap();
        let (a, s) = maps();
        let lines = [
            rec("CO", -0.7, 0.25),
            rec("H", 0.2, 0.25),
            rec("CO", -0.5, 0.5),
            rec("H", 0.4, 0.5),
        ];
        let mut outputs = Vec::new();
        for order in [[0usize, 1, 2, 3], [3, 2, 1, 0]] {
            let src = dir.path().join(format!("src{}.jsonl", order[0]));
            let dst = dir.path().join(format!("dst{}.jsonl", order[0]));
            let mut f = std::fs::File::create(&src).unwrap();
            for &i in &order {
                writeln!(f, "{}", lines[i]).unwrap();
            }
            convert_external(&src, ExternalFormat::GaspyJsonl, &dst, &a, &s).unwrap();
            outputs.push(std::fs::read(&dst).unwrap());
        }
        assert_eq!(outputs[0], outputs[1]);
    }

    #[test]
    fn out_of_range_pairs_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src.jsonl");
        let dst = dir.path().join("dst.jsonl");
        let mut f = std::fs::File::create(&src).unwrap();
        // e_co = -5.0 is outside the activity domain
        writeln!(f, "{}", rec("CO", -5.0, 0.25)).unwrap();
        writeln!(f, "{}", rec("H", 0.2, 0.25)).unwrap();
        let (a, s) = maps();
        let report = convert_external(&src, ExternalFormat::GaspyJsonl, &dst, &a, &s).unwrap();
        assert_eq!(report.dropped_out_of_range, 1);
        assert_eq!(report.pairs_written, 0);
    }

    #[test]
    fn unpaired_records_counted() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src.jsonl");
        let dst = dir.path().join("dst.jsonl");
        let mut f = std::fs::File::create(&src).unwrap();
        writeln!(f, "{}", rec("CO", -0.7, 0.25)).unwrap();
        writeln!(f, "{}", rec("H", 0.2, 0.75)).unwrap();
        let (a, s) = maps();
        let report = convert_external(&src, ExternalFormat::GaspyJsonl, &dst, &a, &s).unwrap();
        assert_eq!(report.unpaired_co, 1);
        assert_eq!(report.unpaired_h, 1);
        assert_eq!(report.pairs_written, 0);
    }
}
