//! Text formats: extended-XYZ clouds and JSON-lines dataset indices.
//!
//! XYZ layout: line 1 is the atom count, line 2 holds space-separated
//! `key=value` metadata, then one `element x y z` row per atom with six
//! decimals. Values never contain spaces.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::molsys::{AtomCloud, ComplexRecord, Element, Labels, MoleculeCloud, PocketCloud, Vocab};

pub type Metadata = Vec<(String, String)>;

pub fn write_xyz(cloud: &AtomCloud, meta: &[(&str, String)]) -> String {
    let mut out = String::new();
    writeln!(out, "{}", cloud.len()).unwrap();
    let line: Vec<String> = meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
    writeln!(out, "{}", line.join(" ")).unwrap();
    for (i, p) in cloud.coords.iter().enumerate() {
        writeln!(out, "{} {:.6} {:.6} {:.6}", cloud.element(i), p[0], p[1], p[2]).unwrap();
    }
    out
}

pub fn parse_xyz(text: &str, vocab: &Vocab) -> Result<(AtomCloud, Metadata)> {
    let mut lines = text.lines();
    let n: usize = lines
        .next()
        .ok_or_else(|| Error::Parse("missing atom count".into()))?
        .trim()
        .parse()
        .map_err(|e| Error::Parse(format!("atom count: {e}")))?;
    let meta_line = lines.next().ok_or_else(|| Error::Parse("missing metadata line".into()))?;
    let mut meta = Vec::new();
    for tok in meta_line.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| Error::Parse(format!("metadata token `{tok}`")))?;
        meta.push((k.to_string(), v.to_string()));
    }
    let mut coords = Vec::with_capacity(n);
    let mut types = Vec::with_capacity(n);
    for (row, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let mut it = line.split_whitespace();
        let sym = it.next().ok_or_else(|| Error::Parse(format!("row {row}: empty")))?;
        let e = Element::from_symbol(sym).ok_or_else(|| Error::Parse(format!("row {row}: unknown element `{sym}`")))?;
        let t = vocab.index_of(e).ok_or_else(|| Error::Parse(format!("row {row}: element {e} not in vocabulary")))?;
        let mut p = [0.0; 3];
        for c in &mut p {
            *c = it
                .next()
                .ok_or_else(|| Error::Parse(format!("row {row}: missing coordinate")))?
                .parse()
                .map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
        }
        coords.push(p);
        types.push(t);
    }
    if coords.len() != n {
        return Err(Error::Parse(format!("expected {n} atoms, found {}", coords.len())));
    }
    Ok((AtomCloud::new(coords, types, vocab.clone())?, meta))
}

pub fn read_xyz(path: &Path, vocab: &Vocab) -> Result<(AtomCloud, Metadata)> {
    parse_xyz(&fs::read_to_string(path)?, vocab)
}

pub fn meta_get<'a>(meta: &'a Metadata, key: &str) -> Option<&'a str> {
    meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

/// One line of a dataset split's `index.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub pocket: String,
    pub ligand: String,
    pub delta_g: f64,
    pub qed: f64,
    pub sa: f64,
}

pub const INDEX_FILE: &str = "index.jsonl";

/// Writes records as `<id>_pocket.xyz`, `<id>_ligand.xyz` plus `index.jsonl`.
pub fn write_split(dir: &Path, records: &[ComplexRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut index = String::new();
    for r in records {
        let pocket_file = format!("{}_pocket.xyz", r.id);
        let ligand_file = format!("{}_ligand.xyz", r.id);
        fs::write(dir.join(&pocket_file), write_xyz(r.pocket.cloud(), &[("id", r.id.clone()), ("source", "pocket".into())]))?;
        fs::write(
            dir.join(&ligand_file),
            write_xyz(&r.ligand, &[("id", r.id.clone()), ("source", "reference".into()), ("t", "0".into())]),
        )?;
        let entry = IndexEntry {
            id: r.id.clone(),
            pocket: pocket_file,
            ligand: ligand_file,
            delta_g: r.labels.delta_g,
            qed: r.labels.qed,
            sa: r.labels.sa,
        };
        index.push_str(&serde_json::to_string(&entry)?);
        index.push('\n');
    }
    fs::write(dir.join(INDEX_FILE), index)?;
    Ok(())
}

pub fn read_split(dir: &Path, vocab: &Vocab) -> Result<Vec<ComplexRecord>> {
    let text = fs::read_to_string(dir.join(INDEX_FILE))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let e: IndexEntry = serde_json::from_str(line)?;
        let (pocket, _) = read_xyz(&dir.join(&e.pocket), vocab)?;
        let (ligand, _) = read_xyz(&dir.join(&e.ligand), vocab)?;
        out.push(ComplexRecord {
            id: e.id,
            pocket: PocketCloud::from_cloud(pocket),
            ligand: MoleculeCloud(ligand),
            labels: Labels { delta_g: e.delta_g, qed: e.qed, sa: e.sa },
        });
    }
    Ok(out)
}
