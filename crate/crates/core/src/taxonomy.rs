//! The label hierarchy: 99 nationalities, 14 regions, 6 continents.
//!
//! The shipped mapping lives in `data/taxonomy.tsv` (one
//! `nationality<TAB>region<TAB>continent` line per nationality) and is
//! checked against the reference region table on load. Frequency bins
//! (Head/Mid/Tail) are derived from training counts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const SHIPPED_TSV: &str = include_str!("../data/taxonomy.tsv");

/// Reference region table: (region, continent, nationality count, train samples).
pub const REGION_TABLE: [(&str, &str, usize, usize); 14] = [
    ("Eastern Europe", "Europe", 15, 9_600),
    ("Africa", "Africa", 15, 8_598),
    ("Western Europe", "Europe", 11, 7_040),
    ("South America", "Americas", 10, 6_285),
    ("Middle East", "Middle East", 10, 5_837),
    ("Southeast Asia", "Asia", 7, 4_480),
    ("South Asia", "Asia", 6, 3_801),
    ("Central America & Caribbean", "Americas", 7, 3_625),
    ("Southern Europe", "Europe", 5, 3_091),
    ("East Asia", "Asia", 5, 2_964),
    ("North America", "Americas", 3, 1_920),
    ("Caucasus & Central Asia", "Asia", 2, 1_280),
    ("Oceania", "Oceania", 2, 1_116),
    ("Northern Europe", "Europe", 1, 640),
];

pub const CONTINENTS: [&str; 6] = [
    "Africa",
    "Americas",
    "Asia",
    "Europe",
    "Middle East",
    "Oceania",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("missing count for label `{0}`")]
    MissingLabel(String),
    #[error("taxonomy line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("taxonomy failed validation: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Nationality,
    Region,
    Continent,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Self::Nationality, Self::Region, Self::Continent];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Nationality => "nationality",
            Self::Region => "region",
            Self::Continent => "continent",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nationality" | "nat" => Ok(Self::Nationality),
            "region" => Ok(Self::Region),
            "continent" => Ok(Self::Continent),
            other => Err(format!("unknown granularity `{other}`")),
        }
    }
}

/// An ordered, duplicate-free set of canonical labels at one granularity.
///
/// Labels are kept in ascending byte order so that index order and the
/// "label ascending" tie-break agree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    labels: Vec<String>,
    granularity: Granularity,
}

impl LabelSpace {
    pub fn new<I, S>(labels: I, granularity: Granularity) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = labels
            .into_iter()
            .map(|l| l.as_ref().trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        Self {
            labels: set.into_iter().collect(),
            granularity,
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels
            .binary_search_by(|l| l.as_str().cmp(label.trim()))
            .ok()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }

    /// Trimmed, exact-match canonical form of `label`, if it belongs to the space.
    pub fn canonical(&self, label: &str) -> Option<&str> {
        self.index_of(label).map(|i| self.labels[i].as_str())
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }
}

/// Nationality -> region -> continent mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyMap {
    pub nat_to_region: BTreeMap<String, String>,
    pub region_to_continent: BTreeMap<String, String>,
}

impl TaxonomyMap {
    pub fn empty() -> Self {
        Self {
            nat_to_region: BTreeMap::new(),
            region_to_continent: BTreeMap::new(),
        }
    }

    pub fn shipped() -> Self {
        Self::parse_tsv(SHIPPED_TSV).expect("shipped taxonomy parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path).map_err(|e| TaxonomyError::Io(e.to_string()))?;
        Self::parse_tsv(&text)
    }

    pub fn parse_tsv(text: &str) -> Result<Self, TaxonomyError> {
        let mut map = Self::empty();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = raw.split('\t').map(str::trim).collect();
            if cols.len() != 3 || cols.iter().any(|c| c.is_empty()) {
                return Err(TaxonomyError::Format {
                    line,
                    reason: "expected nationality<TAB>region<TAB>continent".into(),
                });
            }
            let (nat, region, continent) = (cols[0], cols[1], cols[2]);
            if map
                .nat_to_region
                .insert(nat.to_string(), region.to_string())
                .is_some()
            {
                return Err(TaxonomyError::Format {
                    line,
                    reason: format!("duplicate nationality `{nat}`"),
                });
            }
            match map.region_to_continent.get(region) {
                Some(c) if c != continent => {
                    return Err(TaxonomyError::Format {
                        line,
                        reason: format!("region `{region}` already mapped to `{c}`"),
                    })
                }
                _ => {
                    map.region_to_continent
                        .insert(region.to_string(), continent.to_string());
                }
            }
        }
        Ok(map)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (nat, region) in &self.nat_to_region {
            let continent = self
                .region_to_continent
                .get(region)
                .map(String::as_str)
                .unwrap_or("");
            out.push_str(&format!("{nat}\t{region}\t{continent}\n"));
        }
        out
    }
}

/// A validated taxonomy with its label spaces at every granularity.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    map: TaxonomyMap,
    nationalities: LabelSpace,
    regions: LabelSpace,
    continents: LabelSpace,
}

impl Taxonomy {
    /// The shipped mapping, validated against the reference region table.
    pub fn shipped() -> Self {
        let map = TaxonomyMap::shipped();
        let labels: Vec<String> = map.nat_to_region.keys().cloned().collect();
        let report = validate_taxonomy(&map, &labels);
        assert!(report.passed, "shipped taxonomy invalid: {report:?}");
        Self::from_map(map)
    }

    /// Validates `map` against the reference table and builds label spaces.
    pub fn validated(map: TaxonomyMap, expected_labels: &[String]) -> Result<Self, TaxonomyError> {
        let report = validate_taxonomy(&map, expected_labels);
        if !report.passed {
            return Err(TaxonomyError::Invalid(report.summary()));
        }
        Ok(Self::from_map(map))
    }

    /// Builds label spaces without checking the reference table (for tests
    /// and small synthetic hierarchies).
    pub fn from_map(map: TaxonomyMap) -> Self {
        let nationalities = LabelSpace::new(map.nat_to_region.keys(), Granularity::Nationality);
        let regions = LabelSpace::new(map.nat_to_region.values(), Granularity::Region);
        let continents = LabelSpace::new(
            regions
                .labels()
                .iter()
                .filter_map(|r| map.region_to_continent.get(r)),
            Granularity::Continent,
        );
        Self {
            map,
            nationalities,
            regions,
            continents,
        }
    }

    pub fn map(&self) -> &TaxonomyMap {
        &self.map
    }

    pub fn label_space(&self, level: Granularity) -> &LabelSpace {
        match level {
            Granularity::Nationality => &self.nationalities,
            Granularity::Region => &self.regions,
            Granularity::Continent => &self.continents,
        }
    }

    /// Maps a nationality label to its label at `level`.
    pub fn project(&self, label: &str, level: Granularity) -> Result<&str, TaxonomyError> {
        let nat = self
            .nationalities
            .canonical(label)
            .ok_or_else(|| TaxonomyError::UnknownLabel(label.to_string()))?;
        match level {
            Granularity::Nationality => Ok(nat),
            Granularity::Region => Ok(self.map.nat_to_region[nat].as_str()),
            Granularity::Continent => {
                let region = &self.map.nat_to_region[nat];
                self.map
                    .region_to_continent
                    .get(region)
                    .map(String::as_str)
                    .ok_or_else(|| TaxonomyError::UnknownLabel(region.clone()))
            }
        }
    }

    pub fn region_of(&self, nationality: &str) -> Option<&str> {
        self.map
            .nat_to_region
            .get(nationality.trim())
            .map(String::as_str)
    }

    pub fn continent_of_region(&self, region: &str) -> Option<&str> {
        self.map
            .region_to_continent
            .get(region.trim())
            .map(String::as_str)
    }

    /// Regions of `continent`, ascending.
    pub fn regions_of(&self, continent: &str) -> Vec<&str> {
        self.regions
            .labels()
            .iter()
            .filter(|r| self.map.region_to_continent.get(*r).map(String::as_str) == Some(continent))
            .map(String::as_str)
            .collect()
    }

    /// Nationalities of `region`, ascending.
    pub fn nationalities_of(&self, region: &str) -> Vec<&str> {
        self.map
            .nat_to_region
            .iter()
            .filter(|(_, r)| r.as_str() == region)
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub unmapped: Vec<String>,
    pub unexpected: Vec<String>,
    /// Actual minus reference nationality count, for every reference region
    /// and any extra region found in the map.
    pub region_deltas: BTreeMap<String, i64>,
    pub continent_mismatches: Vec<String>,
}

impl ValidationReport {
    pub fn summary(&self) -> String {
        let bad: Vec<String> = self
            .region_deltas
            .iter()
            .filter(|(_, d)| **d != 0)
            .map(|(r, d)| format!("{r}: {d:+}"))
            .collect();
        format!(
            "{} unmapped, {} unexpected, region deltas [{}], continent mismatches [{}]",
            self.unmapped.len(),
            self.unexpected.len(),
            bad.join(", "),
            self.continent_mismatches.join(", ")
        )
    }
}

/// Checks a mapping against the reference region table.
///
/// `expected_labels` is the nationality label set the map must cover.
pub fn validate_taxonomy(map: &TaxonomyMap, expected_labels: &[String]) -> ValidationReport {
    let expected: BTreeSet<&str> = expected_labels.iter().map(|s| s.trim()).collect();
    let unmapped: Vec<String> = expected
        .iter()
        .filter(|l| !map.nat_to_region.contains_key(**l))
        .map(|l| l.to_string())
        .collect();
    let unexpected: Vec<String> = map
        .nat_to_region
        .keys()
        .filter(|l| !expected.contains(l.as_str()))
        .cloned()
        .collect();

    let mut actual: BTreeMap<&str, i64> = BTreeMap::new();
    for region in map.nat_to_region.values() {
        *actual.entry(region.as_str()).or_default() += 1;
    }
    let mut region_deltas = BTreeMap::new();
    let mut continent_mismatches = Vec::new();
    for (region, continent, count, _) in REGION_TABLE {
        let got = actual.remove(region).unwrap_or(0);
        region_deltas.insert(region.to_string(), got - count as i64);
        if got > 0 && map.region_to_continent.get(region).map(String::as_str) != Some(continent) {
            continent_mismatches.push(region.to_string());
        }
    }
    for (region, got) in actual {
        region_deltas.insert(region.to_string(), got);
    }

    let passed = unmapped.is_empty()
        && unexpected.is_empty()
        && region_deltas.values().all(|d| *d == 0)
        && continent_mismatches.is_empty();
    ValidationReport {
        passed,
        unmapped,
        unexpected,
        region_deltas,
        continent_mismatches,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FrequencyBin {
    Head,
    Mid,
    Tail,
}

impl FrequencyBin {
    pub const ALL: [FrequencyBin; 3] = [Self::Head, Self::Mid, Self::Tail];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Head => "Head",
            Self::Mid => "Mid",
            Self::Tail => "Tail",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyBins {
    pub bin_of: BTreeMap<String, FrequencyBin>,
}

impl FrequencyBins {
    pub fn get(&self, label: &str) -> Option<FrequencyBin> {
        self.bin_of.get(label).copied()
    }

    /// Labels in `bin`, ascending.
    pub fn members(&self, bin: FrequencyBin) -> Vec<&str> {
        self.bin_of
            .iter()
            .filter(|(_, b)| **b == bin)
            .map(|(l, _)| l.as_str())
            .collect()
    }
}

/// Splits the label space into equal thirds by training count.
///
/// Order is (count desc, label asc); rank `r` (0-based) of `n` labels goes to
/// bin `floor(3r / n)`, which gives 33/33/33 for 99 labels.
pub fn assign_frequency_bins(
    train_counts: &BTreeMap<String, usize>,
    labels: &LabelSpace,
) -> Result<FrequencyBins, TaxonomyError> {
    assign_frequency_bins_with_tiebreak(train_counts, None, labels)
}

/// As [`assign_frequency_bins`], but labels with equal training counts are
/// ordered by `tiebreak` (descending) before falling back to the label.
///
/// With the per-class cap most labels share the maximal training count,
/// so the corpus frequency before capping is the natural secondary key.
pub fn assign_frequency_bins_with_tiebreak(
    train_counts: &BTreeMap<String, usize>,
    tiebreak: Option<&BTreeMap<String, usize>>,
    labels: &LabelSpace,
) -> Result<FrequencyBins, TaxonomyError> {
    let mut ranked: Vec<(&str, usize, usize)> = Vec::with_capacity(labels.len());
    for label in labels.labels() {
        let count = *train_counts
            .get(label)
            .ok_or_else(|| TaxonomyError::MissingLabel(label.clone()))?;
        let secondary = match tiebreak {
            Some(t) => *t
                .get(label)
                .ok_or_else(|| TaxonomyError::MissingLabel(label.clone()))?,
            None => 0,
        };
        ranked.push((label, count, secondary));
    }
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.cmp(&a.2)).then_with(|| a.0.cmp(b.0)));
    let n = ranked.len();
    let bin_of = ranked
        .into_iter()
        .enumerate()
        .map(|(rank, (label, _, _))| {
            let bin = FrequencyBin::ALL[(3 * rank / n).min(2)];
            (label.to_string(), bin)
        })
        .collect();
    Ok(FrequencyBins { bin_of })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shipped_labels() -> Vec<String> {
        TaxonomyMap::shipped()
            .nat_to_region
            .keys()
            .cloned()
            .collect()
    }

    #[test]
    fn shipped_taxonomy_matches_reference_table() {
        let map = TaxonomyMap::shipped();
        let report = validate_taxonomy(&map, &shipped_labels());
        assert!(report.passed, "{}", report.summary());
        assert!(report.region_deltas.values().all(|d| *d == 0));
        assert_eq!(report.region_deltas.len(), 14);
        let tax = Taxonomy::shipped();
        assert_eq!(tax.label_space(Granularity::Nationality).len(), 99);
        assert_eq!(tax.label_space(Granularity::Region).len(), 14);
        assert_eq!(tax.label_space(Granularity::Continent).len(), 6);
        assert_eq!(
            tax.label_space(Granularity::Continent).labels(),
            CONTINENTS.map(String::from)
        );
    }

    #[test]
    fn projection_examples() {
        let tax = Taxonomy::shipped();
        assert_eq!(
            tax.project("Japanese", Granularity::Nationality).unwrap(),
            "Japanese"
        );
        assert_eq!(
            tax.project("Belarusian", Granularity::Region).unwrap(),
            "Eastern Europe"
        );
        assert_eq!(
            tax.project("Welsh", Granularity::Region).unwrap(),
            "Western Europe"
        );
        assert_eq!(
            tax.project("Welsh", Granularity::Continent).unwrap(),
            "Europe"
        );
        assert_eq!(
            tax.project(" Welsh ", Granularity::Continent).unwrap(),
            "Europe"
        );
        assert_eq!(
            tax.project("Atlantean", Granularity::Region),
            Err(TaxonomyError::UnknownLabel("Atlantean".into()))
        );
        assert!(tax.project("welsh", Granularity::Region).is_err());
    }

    #[test]
    fn projection_composes() {
        let tax = Taxonomy::shipped();
        for nat in tax.label_space(Granularity::Nationality).labels() {
            let region = tax.project(nat, Granularity::Region).unwrap();
            let continent = tax.project(nat, Granularity::Continent).unwrap();
            assert_eq!(tax.continent_of_region(region), Some(continent));
        }
    }

    #[test]
    fn same_region_pairs_from_error_tables() {
        let tax = Taxonomy::shipped();
        let same = [
            ("English", "British"),
            ("Tamil", "Indian"),
            ("Welsh", "British"),
            ("Uruguayan", "Argentine"),
            ("Belarusian", "Russian"),
            ("Taiwanese", "Chinese"),
            ("Paraguayan", "Argentine"),
            ("Moldovan", "Romanian"),
            ("Czech", "Slovak"),
            ("Austrian", "German"),
            ("Tunisian", "Moroccan"),
            ("Kenyan", "Ugandan"),
        ];
        let cross = [
            ("Cuban", "Mexican"),
            ("Jamaican", "American"),
            ("Australian", "American"),
            ("Brazilian", "Portuguese"),
            ("Peruvian", "Mexican"),
            ("Ecuadorian", "Mexican"),
        ];
        for (a, b) in same {
            assert_eq!(tax.region_of(a), tax.region_of(b), "{a} / {b}");
        }
        for (a, b) in cross {
            assert_ne!(tax.region_of(a), tax.region_of(b), "{a} / {b}");
        }
    }

    #[test]
    fn moving_one_label_reports_deltas() {
        let mut map = TaxonomyMap::shipped();
        map.nat_to_region.insert("Russian".into(), "Africa".into());
        let report = validate_taxonomy(&map, &shipped_labels());
        assert!(!report.passed);
        assert_eq!(report.region_deltas["Eastern Europe"], -1);
        assert_eq!(report.region_deltas["Africa"], 1);
        assert_eq!(
            report.region_deltas.values().filter(|d| **d != 0).count(),
            2
        );
    }

    #[test]
    fn empty_map_reports_all_unmapped() {
        let report = validate_taxonomy(&TaxonomyMap::empty(), &shipped_labels());
        assert!(!report.passed);
        assert_eq!(report.unmapped.len(), 99);
    }

    #[test]
    fn tsv_round_trip() {
        let map = TaxonomyMap::shipped();
        assert_eq!(TaxonomyMap::parse_tsv(&map.to_tsv()).unwrap(), map);
        assert_eq!(SHIPPED_TSV.lines().count(), 99);
    }

    #[test]
    fn malformed_tsv_reports_line() {
        let err = TaxonomyMap::parse_tsv("A\tR\tC\nB\tR\n").unwrap_err();
        assert!(matches!(err, TaxonomyError::Format { line: 2, .. }));
        let err = TaxonomyMap::parse_tsv("A\tR\tC\nB\tR\tD\n").unwrap_err();
        assert!(matches!(err, TaxonomyError::Format { line: 2, .. }));
    }

    #[test]
    fn bins_with_equal_counts_follow_label_order() {
        let space = Taxonomy::shipped()
            .label_space(Granularity::Nationality)
            .clone();
        let counts = space.labels().iter().map(|l| (l.clone(), 7)).collect();
        let bins = assign_frequency_bins(&counts, &space).unwrap();
        for (i, label) in space.labels().iter().enumerate() {
            assert_eq!(bins.get(label), Some(FrequencyBin::ALL[i / 33]));
        }
    }

    #[test]
    fn capped_labels_fill_head() {
        let space = Taxonomy::shipped()
            .label_space(Granularity::Nationality)
            .clone();
        let mut counts = BTreeMap::new();
        for (i, label) in space.labels().iter().enumerate() {
            // every third label reaches the 640-sample cap
            counts.insert(label.clone(), if i % 3 == 0 { 640 } else { 400 + i });
        }
        let bins = assign_frequency_bins(&counts, &space).unwrap();
        let head: BTreeSet<&str> = bins.members(FrequencyBin::Head).into_iter().collect();
        let capped: BTreeSet<&str> = counts
            .iter()
            .filter(|(_, c)| **c == 640)
            .map(|(l, _)| l.as_str())
            .collect();
        assert_eq!(head, capped);
    }

    #[test]
    fn tiebreak_orders_capped_labels() {
        let space = LabelSpace::new(["A", "B", "C"], Granularity::Nationality);
        let train = BTreeMap::from([
            ("A".to_string(), 640),
            ("B".to_string(), 640),
            ("C".to_string(), 640),
        ]);
        let raw = BTreeMap::from([
            ("A".to_string(), 900),
            ("B".to_string(), 5000),
            ("C".to_string(), 900),
        ]);
        let bins = assign_frequency_bins_with_tiebreak(&train, Some(&raw), &space).unwrap();
        assert_eq!(bins.members(FrequencyBin::Head), ["B"]);
        assert_eq!(bins.members(FrequencyBin::Mid), ["A"]);
        assert_eq!(bins.members(FrequencyBin::Tail), ["C"]);
    }

    #[test]
    fn missing_count_is_an_error() {
        let space = LabelSpace::new(["A", "B", "C"], Granularity::Nationality);
        let counts = BTreeMap::from([("A".to_string(), 1), ("B".to_string(), 2)]);
        assert_eq!(
            assign_frequency_bins(&counts, &space),
            Err(TaxonomyError::MissingLabel("C".into()))
        );
    }

    #[test]
    fn label_space_canonicalisation() {
        let space = LabelSpace::new([" B", "A", "B", ""], Granularity::Region);
        assert_eq!(space.labels(), ["A".to_string(), "B".to_string()]);
        assert_eq!(space.canonical(" B "), Some("B"));
        assert_eq!(space.canonical("b"), None);
    }
}
