//! Feature schema and class taxonomy.
//!
//! A [`FeatureCatalog`] knows which CSV columns are kept, in which canonical
//! order, and which are discarded (identity columns, constant columns and
//! duplicated columns). [`resolve_columns`] applies the catalog to a concrete
//! header and produces a [`ColumnPlan`] that the ingest stage executes.
//!
//! Both the catalog and the label alias table are data: the defaults ship in
//! `data/*.toml` and can be replaced with a user-edited copy.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of retained features for a full CICDDoS2019 header.
pub const RETAINED_FEATURES: usize = 60;

/// Current version of the catalog and label config formats.
pub const CONFIG_VERSION: u32 = 1;

const DEFAULT_CATALOG: &str = include_str!("../data/catalog.toml");
const DEFAULT_LABELS: &str = include_str!("../data/labels.toml");

/// Image class, `C0` through `C11`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ClassLabel(u8);

const CLASS_NAMES: [&str; 12] = [
    "Syn", "TFTP", "UDPLag", "DNS", "LDAP", "MSSQL", "NetBIOS", "NTP", "SNMP", "SSDP", "UDP",
    "Normal",
];

impl ClassLabel {
    pub const COUNT: usize = 12;
    pub const NORMAL: ClassLabel = ClassLabel(11);

    pub fn new(id: u8) -> Option<Self> {
        ((id as usize) < Self::COUNT).then_some(ClassLabel(id))
    }

    pub fn all() -> impl Iterator<Item = ClassLabel> {
        (0..Self::COUNT as u8).map(ClassLabel)
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.index()]
    }

    /// Every class except `C11` (normal traffic) is an attack.
    pub fn is_attack(self) -> bool {
        self != Self::NORMAL
    }

    /// Short tag used for directory names and chart axes, e.g. `C3`.
    pub fn tag(self) -> String {
        format!("C{}", self.0)
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        tag.strip_prefix('C')?.parse().ok().and_then(Self::new)
    }
}

impl TryFrom<u8> for ClassLabel {
    type Error = String;

    fn try_from(id: u8) -> std::result::Result<Self, Self::Error> {
        ClassLabel::new(id).ok_or_else(|| format!("class id {id} out of range 0..12"))
    }
}

impl From<ClassLabel> for u8 {
    fn from(label: ClassLabel) -> u8 {
        label.0
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{} ({})", self.0, self.name())
    }
}

/// Trims and collapses internal runs of whitespace.
pub fn normalize_name(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn match_key(raw: &str) -> String {
    normalize_name(raw).to_lowercase()
}

/// Why a column is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropKind {
    Identity,
    Constant,
    Duplicate,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub retained: bool,
    /// Position in the canonical retained order; `None` for dropped names.
    pub column_index: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    version: u32,
    label_column: String,
    features: Vec<String>,
    drop_identity: Vec<String>,
    drop_constant: Vec<String>,
    drop_duplicate: Vec<String>,
    #[serde(default)]
    reference_header: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct FeatureCatalog {
    features: Vec<FeatureSpec>,
    label_column: String,
    drop_identity: Vec<String>,
    drop_constant: Vec<String>,
    drop_duplicate: Vec<String>,
    reference_header: Vec<String>,
    retained_by_key: HashMap<String, usize>,
    drop_by_key: HashMap<String, DropKind>,
}

impl FeatureCatalog {
    /// The built-in CICDDoS2019 catalog.
    pub fn cicddos2019() -> Self {
        Self::from_toml_str(DEFAULT_CATALOG, Path::new("<builtin catalog>"))
            .expect("built-in catalog is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let config_err = |message: String| Error::Config {
            path: origin.to_path_buf(),
            message,
        };
        let file: CatalogFile = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        if file.version != CONFIG_VERSION {
            return Err(config_err(format!(
                "unsupported catalog version {} (expected {CONFIG_VERSION})",
                file.version
            )));
        }

        let mut retained_by_key = HashMap::new();
        let mut features = Vec::new();
        for name in &file.features {
            let name = normalize_name(name);
            let index = features.len();
            if retained_by_key.insert(name.to_lowercase(), index).is_some() {
                return Err(config_err(format!("feature {name:?} listed twice")));
            }
            features.push(FeatureSpec {
                name,
                retained: true,
                column_index: Some(index),
            });
        }

        let mut drop_by_key = HashMap::new();
        let lists = [
            (DropKind::Identity, &file.drop_identity),
            (DropKind::Constant, &file.drop_constant),
            (DropKind::Duplicate, &file.drop_duplicate),
        ];
        for (kind, names) in lists {
            for name in names {
                let key = match_key(name);
                if let Some(previous) = drop_by_key.insert(key, kind) {
                    return Err(config_err(format!(
                        "{name:?} appears in drop lists {previous:?} and {kind:?}"
                    )));
                }
                // A duplicate-list name may also be retained: the list then
                // refers to the second copy of that column.
                if kind != DropKind::Duplicate && retained_by_key.contains_key(&match_key(name)) {
                    return Err(config_err(format!(
                        "{name:?} is both retained and in the {kind:?} drop list"
                    )));
                }
                if !retained_by_key.contains_key(&match_key(name)) {
                    features.push(FeatureSpec {
                        name: normalize_name(name),
                        retained: false,
                        column_index: None,
                    });
                }
            }
        }

        let norm = |v: &[String]| v.iter().map(|s| normalize_name(s)).collect::<Vec<_>>();
        Ok(FeatureCatalog {
            features,
            label_column: normalize_name(&file.label_column),
            drop_identity: norm(&file.drop_identity),
            drop_constant: norm(&file.drop_constant),
            drop_duplicate: norm(&file.drop_duplicate),
            reference_header: norm(&file.reference_header),
            retained_by_key,
            drop_by_key,
        })
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn retained(&self) -> impl Iterator<Item = &FeatureSpec> {
        self.features.iter().filter(|f| f.retained)
    }

    pub fn retained_names(&self) -> Vec<String> {
        self.retained().map(|f| f.name.clone()).collect()
    }

    pub fn retained_count(&self) -> usize {
        self.retained_by_key.len()
    }

    pub fn label_column(&self) -> &str {
        &self.label_column
    }

    pub fn drop_identity(&self) -> &[String] {
        &self.drop_identity
    }

    pub fn drop_constant(&self) -> &[String] {
        &self.drop_constant
    }

    pub fn drop_duplicate(&self) -> &[String] {
        &self.drop_duplicate
    }

    /// Content hash of the schema: feature order, label column and drop lists.
    pub fn identity(&self) -> String {
        crate::ident::fingerprint(&(
            &self.features,
            &self.label_column,
            &self.drop_identity,
            &self.drop_constant,
            &self.drop_duplicate,
        ))
    }

    /// Full header of a CICDDoS2019 export, if the catalog declares one.
    pub fn reference_header(&self) -> &[String] {
        &self.reference_header
    }

    fn retained_index(&self, key: &str) -> Option<usize> {
        self.retained_by_key.get(key).copied()
    }

    fn is_known(&self, key: &str) -> bool {
        self.retained_by_key.contains_key(key) || self.drop_by_key.contains_key(key)
    }
}

/// What the ingest stage does with one header column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action")]
pub enum ColumnAction {
    Retain { index: usize },
    Drop { kind: DropKind },
    Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetainedColumn {
    /// Position in the CSV header.
    pub position: usize,
    /// Canonical catalog index.
    pub feature_index: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "warning")]
pub enum PlanWarning {
    UnknownColumn { name: String },
    PartialSchema { found: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnPlan {
    /// Whitespace-normalized header, as read.
    pub header: Vec<String>,
    pub actions: Vec<ColumnAction>,
    pub label_position: usize,
    /// Retained columns in canonical order; record values follow this order.
    pub retained: Vec<RetainedColumn>,
    pub warnings: Vec<PlanWarning>,
}

impl ColumnPlan {
    pub fn retained_count(&self) -> usize {
        self.retained.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.retained.iter().map(|c| c.name.clone()).collect()
    }

    pub fn dropped(&self, kind: DropKind) -> usize {
        self.actions
            .iter()
            .filter(|a| matches!(a, ColumnAction::Drop { kind: k } if *k == kind))
            .count()
    }

    /// Columns dropped because a catalog drop list names them.
    pub fn drop_listed(&self) -> usize {
        self.dropped(DropKind::Identity)
            + self.dropped(DropKind::Constant)
            + self.dropped(DropKind::Duplicate)
    }

    /// Whether `header` (as read from a file) is the header this plan was
    /// resolved from.
    pub fn matches_header<S: AsRef<str>>(&self, header: &[S]) -> bool {
        header.len() == self.header.len()
            && header
                .iter()
                .zip(&self.header)
                .all(|(a, b)| match_key(a.as_ref()) == match_key(b))
    }
}

/// Splits a pandas de-duplication suffix (`Name.1`) off a known column name.
fn split_copy_suffix<'a>(key: &'a str, catalog: &FeatureCatalog) -> Option<&'a str> {
    let (base, suffix) = key.rsplit_once('.')?;
    let is_counter = !suffix.is_empty() && suffix.bytes().all(|b| b.is_ascii_digit());
    (is_counter && catalog.is_known(base)).then_some(base)
}

/// Maps every header column onto a [`ColumnAction`].
///
/// Canonical indices come from the catalog, so the plan does not depend on
/// the column order of the file. The first occurrence of a retained name is
/// kept; any later copy (repeated name or `.N` suffix) is dropped as a
/// duplicate. Unknown columns are dropped with a warning.
pub fn resolve_columns<S: AsRef<str>>(header: &[S], catalog: &FeatureCatalog) -> Result<ColumnPlan> {
    let label_key = match_key(catalog.label_column());
    let mut actions = Vec::with_capacity(header.len());
    let mut retained = Vec::new();
    let mut warnings = Vec::new();
    let mut label_position = None;
    let mut seen = HashSet::new();

    for (position, raw) in header.iter().enumerate() {
        let name = normalize_name(raw.as_ref());
        let key = name.to_lowercase();

        if key == label_key && label_position.is_none() {
            label_position = Some(position);
            actions.push(ColumnAction::Label);
            continue;
        }

        let (base, is_copy) = match split_copy_suffix(&key, catalog) {
            Some(base) => (base.to_string(), true),
            None => (key.clone(), false),
        };

        let action = if let Some(index) = catalog.retained_index(&base) {
            if !is_copy && seen.insert(base.clone()) {
                retained.push(RetainedColumn {
                    position,
                    feature_index: index,
                    name: catalog.features[index].name.clone(),
                });
                ColumnAction::Retain { index }
            } else {
                ColumnAction::Drop {
                    kind: DropKind::Duplicate,
                }
            }
        } else if let Some(&kind) = catalog.drop_by_key.get(&base) {
            ColumnAction::Drop { kind }
        } else {
            warnings.push(PlanWarning::UnknownColumn { name: name.clone() });
            ColumnAction::Drop {
                kind: DropKind::Unknown,
            }
        };
        actions.push(action);
    }

    let label_position = label_position.ok_or_else(|| {
        Error::Schema(format!(
            "header has no {:?} column",
            catalog.label_column()
        ))
    })?;

    retained.sort_by_key(|c| c.feature_index);
    if retained.len() < catalog.retained_count() {
        warnings.push(PlanWarning::PartialSchema {
            found: retained.len(),
            expected: catalog.retained_count(),
        });
    }
    for w in &warnings {
        log::warn!("column plan: {w:?}");
    }

    Ok(ColumnPlan {
        header: header.iter().map(|h| normalize_name(h.as_ref())).collect(),
        actions,
        label_position,
        retained,
        warnings,
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelFile {
    version: u32,
    class: Vec<LabelEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelEntry {
    id: u8,
    aliases: Vec<String>,
}

/// Case-insensitive raw-label to [`ClassLabel`] lookup.
#[derive(Debug, Clone)]
pub struct LabelMap {
    by_key: HashMap<String, ClassLabel>,
}

impl LabelMap {
    pub fn cicddos2019() -> Self {
        Self::from_toml_str(DEFAULT_LABELS, Path::new("<builtin labels>"))
            .expect("built-in label table is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let config_err = |message: String| Error::Config {
            path: origin.to_path_buf(),
            message,
        };
        let file: LabelFile = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        if file.version != CONFIG_VERSION {
            return Err(config_err(format!(
                "unsupported label table version {}",
                file.version
            )));
        }
        let mut by_key = HashMap::new();
        for entry in file.class {
            let label = ClassLabel::new(entry.id)
                .ok_or_else(|| config_err(format!("class id {} out of range", entry.id)))?;
            // The canonical class name and tag always resolve.
            for alias in entry
                .aliases
                .iter()
                .map(String::as_str)
                .chain([label.name(), label.tag().as_str()])
            {
                let key = match_key(alias);
                match by_key.insert(key, label) {
                    Some(other) if other != label => {
                        return Err(config_err(format!(
                            "alias {alias:?} maps to both {other} and {label}"
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(LabelMap { by_key })
    }

    /// Resolves a raw label; `None` means the row is rejected as
    /// `unknown_label`.
    pub fn map_label(&self, raw: &str) -> Option<ClassLabel> {
        self.by_key.get(&match_key(raw)).copied()
    }

    /// Aliases grouped by class, sorted; for reports and debugging.
    pub fn aliases(&self) -> BTreeMap<ClassLabel, Vec<String>> {
        let mut out: BTreeMap<ClassLabel, Vec<String>> = BTreeMap::new();
        for (key, label) in &self.by_key {
            out.entry(*label).or_default().push(key.clone());
        }
        out.values_mut().for_each(|v| v.sort());
        out
    }
}
