//! Record data model, file formats, temporal splits, and the synthetic
//! dataset generator.
//!
//! A [`Record`] is one consumption event: *who* (`user_id`), *when*
//! (`time_slot`, a half-hour bin, plus `day_index` for splitting), *where*
//! (`location_id`, a functional zone), *why* (`need_id`, one of the closed-set
//! living needs) and *what* (`service_id`). Records travel as JSON lines with
//! short keys `u,t,l,n,s,d` and an optional `review`.
//!
//! The synthetic generator plants a preference structure we can test
//! against: each user draws a latent need-affinity distribution, each
//! spatiotemporal context draws a latent need prior, and a record's need is
//! sampled proportionally to `(affinity * prior)^sharpness`. High sharpness
//! makes the planted preferences nearly deterministic; sharpness near zero
//! flattens them to uniform.

use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of half-hour bins in a day. Fixed: slots are `0..48`.
pub const TIME_SLOT_COUNT: u8 = 48;

/// One consumption event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    #[serde(rename = "u")]
    pub user_id: u64,
    #[serde(rename = "t")]
    pub time_slot: u8,
    #[serde(rename = "l")]
    pub location_id: u32,
    #[serde(rename = "n")]
    pub need_id: u32,
    #[serde(rename = "s")]
    pub service_id: u32,
    #[serde(rename = "d")]
    pub day_index: u32,
    #[serde(rename = "review", default, skip_serializing_if = "Option::is_none")]
    pub review_text: Option<String>,
}

impl Record {
    /// Check catalog-dependent id ranges. Intrinsic ranges (time_slot) are
    /// already enforced by [`parse_record_line`].
    pub fn validate_against(&self, catalogs: &Catalogs) -> Result<()> {
        if self.location_id as usize >= catalogs.locations.len() {
            return Err(Error::field(
                "location_id",
                format!(
                    "{} out of range (have {} locations)",
                    self.location_id,
                    catalogs.locations.len()
                ),
            ));
        }
        if self.need_id as usize >= catalogs.needs.len() {
            return Err(Error::field(
                "need_id",
                format!(
                    "{} out of range (have {} needs)",
                    self.need_id,
                    catalogs.needs.len()
                ),
            ));
        }
        if self.service_id as usize >= catalogs.services.len() {
            return Err(Error::field(
                "service_id",
                format!(
                    "{} out of range (have {} services)",
                    self.service_id,
                    catalogs.services.len()
                ),
            ));
        }
        Ok(())
    }
}

/// A spatiotemporal context: one node exists per distinct (time_slot,
/// location_id) pair observed in training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContextKey {
    pub time_slot: u8,
    pub location_id: u32,
}

impl ContextKey {
    pub fn of(record: &Record) -> ContextKey {
        ContextKey {
            time_slot: record.time_slot,
            location_id: record.location_id,
        }
    }
}

/// One catalog service: display name, one-line description, and the single
/// need it fulfills (an index into `Catalogs::needs`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceEntry {
    pub name: String,
    pub desc: String,
    pub fulfills_need: u32,
}

/// The three name catalogs: closed-set needs, services, functional-zone
/// locations. Ids in records index into these lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalogs {
    pub needs: Vec<String>,
    pub services: Vec<ServiceEntry>,
    pub locations: Vec<String>,
}

/// The default closed-set need taxonomy (21 entries).
pub fn default_need_names() -> Vec<String> {
    [
        "Good food",
        "A quick meal",
        "Cooking at home",
        "A group meal",
        "Social drinking",
        "Business travel",
        "Personal grooming",
        "Group gathering",
        "Home supplies",
        "Physical fitness",
        "Pet companionship",
        "Light refreshments",
        "Family bonding",
        "Vehicle service",
        "Recreation",
        "Body relaxation",
        "Beauty",
        "Leisure travel",
        "Child education",
        "Skill development",
        "Daily essentials",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// The default functional-zone location names (14 entries).
pub fn default_location_names() -> Vec<String> {
    [
        "residential area",
        "business district",
        "commercial street",
        "university campus",
        "industrial park",
        "transportation hub",
        "hospital zone",
        "scenic area",
        "sports complex",
        "cultural venue",
        "suburban town",
        "tech park",
        "old town",
        "waterfront district",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

impl Catalogs {
    /// Names must be unique per list and every service's `fulfills_need`
    /// must resolve.
    pub fn validate(&self) -> Result<()> {
        for (label, names) in [("needs", &self.needs), ("locations", &self.locations)] {
            let mut seen = HashSet::new();
            for name in names {
                if !seen.insert(name.as_str()) {
                    return Err(Error::field(label, format!("duplicate name {name:?}")));
                }
            }
        }
        let mut seen = HashSet::new();
        for service in &self.services {
            if !seen.insert(service.name.as_str()) {
                return Err(Error::field(
                    "services",
                    format!("duplicate name {:?}", service.name),
                ));
            }
            if service.fulfills_need as usize >= self.needs.len() {
                return Err(Error::field(
                    "fulfills_need",
                    format!(
                        "{} out of range for service {:?}",
                        service.fulfills_need, service.name
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Catalogs> {
        let text = std::fs::read_to_string(path)?;
        let catalogs: Catalogs = serde_json::from_str(&text)?;
        catalogs.validate()?;
        Ok(catalogs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Service ids grouped by the need they fulfill, in catalog order.
    pub fn services_by_need(&self) -> Vec<Vec<u32>> {
        let mut by_need = vec![Vec::new(); self.needs.len()];
        for (id, service) in self.services.iter().enumerate() {
            by_need[service.fulfills_need as usize].push(id as u32);
        }
        by_need
    }
}

/// Chronological partition of a record set.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<Record>,
    pub validation: Vec<Record>,
    pub test: Vec<Record>,
}

/// Parse one JSON line into a [`Record`]. Unknown extra keys are ignored;
/// `time_slot` is range-checked here because it needs no catalog.
pub fn parse_record_line(line: &str) -> Result<Record> {
    let record: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: 0, // rewritten by the readers, which know the real number
        message: e.to_string(),
    })?;
    if record.time_slot >= TIME_SLOT_COUNT {
        return Err(Error::field(
            "time_slot",
            format!(
                "out of range: {} (max {})",
                record.time_slot,
                TIME_SLOT_COUNT - 1
            ),
        ));
    }
    Ok(record)
}

/// Read a JSON-lines record stream. Blank lines are skipped; errors carry
/// 1-based line numbers. When `catalogs` is given, location/need/service ids
/// are range-checked too.
pub fn read_records(reader: impl BufRead, catalogs: Option<&Catalogs>) -> Result<Vec<Record>> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let number = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_record_line(&line).map_err(|e| at_line(e, number))?;
        if let Some(catalogs) = catalogs {
            record
                .validate_against(catalogs)
                .map_err(|e| at_line(e, number))?;
        }
        records.push(record);
    }
    Ok(records)
}

fn at_line(err: Error, number: usize) -> Error {
    match err {
        Error::Parse { message, .. } => Error::Parse {
            line: number,
            message,
        },
        Error::Validation(message) => Error::Validation(format!("line {number}: {message}")),
        other => other,
    }
}

pub fn read_records_file(path: &Path, catalogs: Option<&Catalogs>) -> Result<Vec<Record>> {
    let file = std::fs::File::open(path)?;
    read_records(std::io::BufReader::new(file), catalogs)
}

/// Serialize records as JSON lines (inverse of [`read_records`]).
pub fn write_records(records: &[Record], mut writer: impl std::io::Write) -> Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_records_file(records: &[Record], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut writer = std::io::BufWriter::new(file);
    write_records(records, &mut writer)
}

/// Map minutes since midnight to a half-hour slot.
pub fn time_bucket(minutes_since_midnight: u32) -> Result<u8> {
    if minutes_since_midnight >= 1440 {
        return Err(Error::field(
            "minutes_since_midnight",
            format!("out of range: {minutes_since_midnight} (max 1439)"),
        ));
    }
    Ok((minutes_since_midnight / 30) as u8)
}

/// Partition records chronologically by `day_index`. The three window sizes
/// must add up to the day span of the data (`max day_index + 1`).
pub fn split_by_time(
    records: &[Record],
    train_days: u32,
    val_days: u32,
    test_days: u32,
) -> Result<DatasetSplits> {
    if records.is_empty() {
        return Err(Error::Config("cannot split an empty record set".into()));
    }
    let span = records.iter().map(|r| r.day_index).max().unwrap_or(0) + 1;
    let requested = train_days + val_days + test_days;
    if requested != span {
        return Err(Error::Config(format!(
            "split windows {train_days}+{val_days}+{test_days}={requested} do not cover the data's day span {span}"
        )));
    }
    let mut splits = DatasetSplits {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for record in records {
        if record.day_index < train_days {
            splits.train.push(record.clone());
        } else if record.day_index < train_days + val_days {
            splits.validation.push(record.clone());
        } else {
            splits.test.push(record.clone());
        }
    }
    Ok(splits)
}

/// Knobs for the synthetic generator. `seed` fully determines the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub user_count: usize,
    pub location_count: usize,
    pub need_count: usize,
    pub service_count: usize,
    pub total_days: usize,
    /// Mean of the per-user per-day Poisson record count.
    pub records_per_user_per_day: f64,
    /// Exponent on the planted affinity×prior product; must be > 0.
    /// Small values flatten need choice toward uniform, large values make
    /// the planted preference nearly deterministic.
    pub preference_sharpness: f64,
    pub seed: u64,
    /// Optional explicit need names (e.g. to align the catalog with a need
    /// framework's leaves). Overrides `need_count` when set.
    pub need_names: Option<Vec<String>>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            user_count: 50,
            location_count: 14,
            need_count: 21,
            service_count: 200,
            total_days: 120,
            records_per_user_per_day: 1.0,
            preference_sharpness: 4.0,
            seed: 42,
            need_names: None,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("user_count", self.user_count),
            ("location_count", self.location_count),
            ("need_count", self.effective_need_count()),
            ("service_count", self.service_count),
            ("total_days", self.total_days),
        ] {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.service_count < self.effective_need_count() {
            return Err(Error::Config(format!(
                "service_count {} must be at least need_count {} so every need has a fulfilling service",
                self.service_count,
                self.effective_need_count()
            )));
        }
        if self.records_per_user_per_day.is_nan() || self.records_per_user_per_day <= 0.0 {
            return Err(Error::Config(
                "records_per_user_per_day must be positive".into(),
            ));
        }
        if self.preference_sharpness.is_nan() || self.preference_sharpness <= 0.0 {
            return Err(Error::Config(
                "preference_sharpness must be positive".into(),
            ));
        }
        Ok(())
    }

    fn effective_need_count(&self) -> usize {
        match &self.need_names {
            Some(names) => names.len(),
            None => self.need_count,
        }
    }
}

/// Concentration of the Dirichlet draws behind user affinities and context
/// priors. Below 1.0 both land on a handful of dominant needs, which is what
/// gives the planted preferences their contrast.
const DIRICHLET_ALPHA: f64 = 0.3;

/// Venue nouns cycled into templated service names.
const VENUE_NOUNS: [&str; 10] = [
    "corner", "express", "house", "studio", "lounge", "station", "hub", "workshop", "club",
    "pavilion",
];

/// Generate catalogs plus a planted-preference record stream. Pure function
/// of the config (single-threaded, one ChaCha stream, fixed draw order).
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<(Catalogs, Vec<Record>)> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);

    let needs = match &config.need_names {
        Some(names) => names.clone(),
        None => {
            let mut names = default_need_names();
            names.truncate(config.need_count);
            for k in names.len()..config.need_count {
                names.push(format!("Everyday need #{k}"));
            }
            names
        }
    };
    let mut locations = default_location_names();
    locations.truncate(config.location_count);
    for k in locations.len()..config.location_count {
        locations.push(format!("functional zone #{k}"));
    }

    let need_count = needs.len();
    let services: Vec<ServiceEntry> = (0..config.service_count)
        .map(|k| {
            let need_id = (k % need_count) as u32;
            let need_name = &needs[need_id as usize];
            let adjective = need_adjective(need_name);
            let venue = VENUE_NOUNS[(k / need_count) % VENUE_NOUNS.len()];
            ServiceEntry {
                name: format!("{adjective} {venue} #{k}"),
                desc: format!("Fulfills the living need of {need_name}."),
                fulfills_need: need_id,
            }
        })
        .collect();

    let catalogs = Catalogs {
        needs,
        services,
        locations,
    };
    catalogs.validate()?;
    let services_by_need = catalogs.services_by_need();

    // Latent preference structure. Draw order is fixed: users first, then
    // contexts in (slot, location) order, so the stream never depends on
    // which records get generated later.
    let gamma = Gamma::new(DIRICHLET_ALPHA, 1.0)
        .map_err(|e| Error::Config(format!("invalid Dirichlet alpha: {e}")))?;
    let user_affinity: Vec<Vec<f64>> = (0..config.user_count)
        .map(|_| dirichlet(&gamma, need_count, &mut rng))
        .collect();
    let slot_count = TIME_SLOT_COUNT as usize;
    let context_prior: Vec<Vec<f64>> = (0..slot_count * config.location_count)
        .map(|_| dirichlet(&gamma, need_count, &mut rng))
        .collect();

    let poisson = Poisson::new(config.records_per_user_per_day)
        .map_err(|e| Error::Config(format!("invalid record rate: {e}")))?;

    let mut records = Vec::new();
    let mut weights = vec![0.0f64; need_count];
    for day in 0..config.total_days {
        for (user, affinity) in user_affinity.iter().enumerate() {
            let count = poisson.sample(&mut rng) as usize;
            for _ in 0..count {
                let slot = rng.random_range(0..slot_count);
                let location = rng.random_range(0..config.location_count);
                let prior = &context_prior[slot * config.location_count + location];
                let mut total = 0.0;
                for n in 0..need_count {
                    let w = (affinity[n] * prior[n]).powf(config.preference_sharpness);
                    weights[n] = w;
                    total += w;
                }
                let need = if total > 0.0 && total.is_finite() {
                    sample_categorical(&weights, total, &mut rng)
                } else {
                    // All mass underflowed (extreme sharpness); fall back to
                    // the planted argmax, which is the distribution's limit.
                    argmax_product(affinity, prior)
                };
                let candidates = &services_by_need[need];
                let service = candidates[rng.random_range(0..candidates.len())];
                records.push(Record {
                    user_id: user as u64,
                    time_slot: slot as u8,
                    location_id: location as u32,
                    need_id: need as u32,
                    service_id: service,
                    day_index: day as u32,
                    review_text: None,
                });
            }
        }
    }
    Ok((catalogs, records))
}

/// Strip a leading article and lowercase, so "A quick meal" becomes the
/// service-name stem "quick meal".
fn need_adjective(need_name: &str) -> String {
    let lower = need_name.to_lowercase();
    for article in ["a ", "an ", "the "] {
        if let Some(rest) = lower.strip_prefix(article) {
            return rest.to_string();
        }
    }
    lower
}

fn dirichlet(gamma: &Gamma<f64>, k: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total <= 0.0 {
        // Vanishingly rare at alpha=0.3, but keep the output a distribution.
        return vec![1.0 / k as f64; k];
    }
    for d in &mut draws {
        *d /= total;
    }
    draws
}

fn sample_categorical(weights: &[f64], total: f64, rng: &mut ChaCha12Rng) -> usize {
    let mut target = rng.random_range(0.0..total);
    for (idx, w) in weights.iter().enumerate() {
        target -= w;
        if target < 0.0 {
            return idx;
        }
    }
    weights.len() - 1 // numeric edge: ran off the end by rounding
}

fn argmax_product(a: &[f64], b: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for i in 0..a.len() {
        let v = a[i] * b[i];
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_plain_record() {
        let record = parse_record_line(r#"{"u":3,"t":17,"l":2,"n":5,"s":101,"d":7}"#).unwrap();
        assert_eq!(
            record,
            Record {
                user_id: 3,
                time_slot: 17,
                location_id: 2,
                need_id: 5,
                service_id: 101,
                day_index: 7,
                review_text: None,
            }
        );
    }

    #[test]
    fn parse_boundary_zero_record() {
        let record = parse_record_line(r#"{"u":0,"t":0,"l":0,"n":0,"s":0,"d":0}"#).unwrap();
        assert_eq!(record.user_id, 0);
        assert_eq!(record.time_slot, 0);
        assert_eq!(record.day_index, 0);
    }

    #[test]
    fn parse_rejects_slot_48() {
        let err = parse_record_line(r#"{"u":1,"t":48,"l":0,"n":0,"s":0,"d":0}"#).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("time_slot"), "got: {message}");
        assert!(message.contains("out of range"), "got: {message}");
    }

    #[test]
    fn parse_rejects_negative_id() {
        let err = parse_record_line(r#"{"u":-1,"t":0,"l":0,"n":0,"s":0,"d":0}"#).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "got: {err}");
    }

    #[test]
    fn parse_ignores_unknown_keys_and_reads_review() {
        let record = parse_record_line(
            r#"{"u":1,"t":2,"l":3,"n":4,"s":5,"d":6,"review":"tasty","extra":1}"#,
        )
        .unwrap();
        assert_eq!(record.review_text.as_deref(), Some("tasty"));
    }

    #[test]
    fn read_records_reports_line_numbers() {
        let input = "{\"u\":1,\"t\":2,\"l\":3,\"n\":4,\"s\":5,\"d\":6}\nnot json\n";
        let err = read_records(input.as_bytes(), None).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn read_records_checks_catalog_ranges() {
        let catalogs = tiny_catalogs();
        let input = r#"{"u":1,"t":2,"l":9,"n":0,"s":0,"d":0}"#;
        let err = read_records(input.as_bytes(), Some(&catalogs)).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("location_id"), "got: {message}");
    }

    #[test]
    fn record_round_trip() {
        let record = Record {
            user_id: 12,
            time_slot: 47,
            location_id: 3,
            need_id: 20,
            service_id: 199,
            day_index: 119,
            review_text: Some("late snack".into()),
        };
        let line = serde_json::to_string(&record).unwrap();
        assert_eq!(parse_record_line(&line).unwrap(), record);
    }

    #[test]
    fn time_bucket_bins() {
        assert_eq!(time_bucket(0).unwrap(), 0);
        assert_eq!(time_bucket(30).unwrap(), 1);
        assert_eq!(time_bucket(29).unwrap(), 0);
        assert_eq!(time_bucket(1020).unwrap(), 34);
        assert_eq!(time_bucket(1439).unwrap(), 47);
        assert!(time_bucket(1440).is_err());
    }

    fn record_on_day(day: u32) -> Record {
        Record {
            user_id: 1,
            time_slot: 0,
            location_id: 0,
            need_id: 0,
            service_id: 0,
            day_index: day,
            review_text: None,
        }
    }

    #[test]
    fn split_default_windows() {
        let records: Vec<Record> = (0..120).map(record_on_day).collect();
        let splits = split_by_time(&records, 96, 12, 12).unwrap();
        assert_eq!(splits.train.len(), 96);
        assert_eq!(splits.validation.len(), 12);
        assert_eq!(splits.test.len(), 12);
        assert!(splits.train.iter().all(|r| r.day_index <= 95));
        assert!(splits
            .validation
            .iter()
            .all(|r| (96..=107).contains(&r.day_index)));
        assert!(splits.test.iter().all(|r| r.day_index >= 108));
    }

    #[test]
    fn split_minimal_three_days() {
        let records: Vec<Record> = (0..3).map(record_on_day).collect();
        let splits = split_by_time(&records, 1, 1, 1).unwrap();
        assert_eq!(
            (
                splits.train.len(),
                splits.validation.len(),
                splits.test.len()
            ),
            (1, 1, 1)
        );
    }

    #[test]
    fn split_rejects_window_mismatch() {
        let records: Vec<Record> = (0..120).map(record_on_day).collect();
        let err = split_by_time(&records, 100, 12, 12).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got: {err}");
    }

    #[test]
    fn split_conserves_records() {
        let records: Vec<Record> = (0..57).map(|i| record_on_day(i % 10)).collect();
        let splits = split_by_time(&records, 5, 3, 2).unwrap();
        let mut rejoined = splits.train.clone();
        rejoined.extend(splits.validation.clone());
        rejoined.extend(splits.test.clone());
        assert_eq!(rejoined.len(), records.len());
        // Same multiset: count per day matches.
        for day in 0..10 {
            let before = records.iter().filter(|r| r.day_index == day).count();
            let after = rejoined.iter().filter(|r| r.day_index == day).count();
            assert_eq!(before, after, "day {day}");
        }
    }

    fn tiny_catalogs() -> Catalogs {
        Catalogs {
            needs: vec!["eat".into(), "rest".into()],
            services: vec![
                ServiceEntry {
                    name: "diner".into(),
                    desc: "food".into(),
                    fulfills_need: 0,
                },
                ServiceEntry {
                    name: "inn".into(),
                    desc: "sleep".into(),
                    fulfills_need: 1,
                },
            ],
            locations: vec!["downtown".into()],
        }
    }

    #[test]
    fn catalogs_reject_duplicates_and_bad_links() {
        let mut catalogs = tiny_catalogs();
        catalogs.needs.push("eat".into());
        assert!(catalogs.validate().is_err());

        let mut catalogs = tiny_catalogs();
        catalogs.services[1].fulfills_need = 9;
        assert!(catalogs.validate().is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let config = SyntheticConfig {
            user_count: 5,
            total_days: 10,
            ..Default::default()
        };
        let (cat_a, rec_a) = generate_synthetic(&config).unwrap();
        let (cat_b, rec_b) = generate_synthetic(&config).unwrap();
        assert_eq!(cat_a, cat_b);
        assert_eq!(rec_a, rec_b);
        // And byte-identical once serialized.
        let mut bytes_a = Vec::new();
        let mut bytes_b = Vec::new();
        write_records(&rec_a, &mut bytes_a).unwrap();
        write_records(&rec_b, &mut bytes_b).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn generated_record_count_within_poisson_tolerance() {
        let config = SyntheticConfig::default();
        let (_, records) = generate_synthetic(&config).unwrap();
        let expected: f64 = 50.0 * 120.0 * 1.0;
        let sd = expected.sqrt();
        let count = records.len() as f64;
        assert!(
            (count - expected).abs() < 4.0 * sd,
            "got {count} records, expected ≈{expected}±{:.0}",
            4.0 * sd
        );
    }

    #[test]
    fn generated_links_respect_catalog_table() {
        let config = SyntheticConfig {
            user_count: 10,
            total_days: 20,
            ..Default::default()
        };
        let (catalogs, records) = generate_synthetic(&config).unwrap();
        for record in &records {
            record.validate_against(&catalogs).unwrap();
            let service = &catalogs.services[record.service_id as usize];
            assert_eq!(
                service.fulfills_need, record.need_id,
                "record's service must fulfill the record's need"
            );
        }
    }

    #[test]
    fn every_need_has_a_service() {
        let (catalogs, _) = generate_synthetic(&SyntheticConfig::default()).unwrap();
        for (need_id, services) in catalogs.services_by_need().iter().enumerate() {
            assert!(!services.is_empty(), "need {need_id} has no services");
        }
    }

    #[test]
    fn vanishing_sharpness_flattens_need_choice() {
        let config = SyntheticConfig {
            user_count: 4,
            need_count: 6,
            service_count: 12,
            total_days: 400,
            records_per_user_per_day: 2.0,
            preference_sharpness: 1e-6,
            ..Default::default()
        };
        let (_, records) = generate_synthetic(&config).unwrap();
        // Chi-square against uniform over the 6 needs, pooled across users.
        let mut counts = [0usize; 6];
        for r in &records {
            counts[r.need_id as usize] += 1;
        }
        let n = records.len() as f64;
        let expected = n / 6.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 5 degrees of freedom; 99.9th percentile ≈ 20.5. Generous bound —
        // this is a sanity check that the exponent really flattens choice.
        assert!(
            chi2 < 25.0,
            "chi-square {chi2:.1} too far from uniform: {counts:?}"
        );
    }

    #[test]
    fn sharp_preferences_are_planted() {
        // With high sharpness the per-(user,context) need choice should be
        // heavily concentrated: most records land on the planted argmax.
        let config = SyntheticConfig {
            user_count: 10,
            total_days: 60,
            ..Default::default()
        };
        let (_, records) = generate_synthetic(&config).unwrap();
        // Group by (user, slot, loc) and measure modal share.
        use std::collections::HashMap;
        let mut by_ctx: HashMap<(u64, u8, u32), HashMap<u32, usize>> = HashMap::new();
        for r in &records {
            *by_ctx
                .entry((r.user_id, r.time_slot, r.location_id))
                .or_default()
                .entry(r.need_id)
                .or_default() += 1;
        }
        let (mut modal, mut total) = (0usize, 0usize);
        for needs in by_ctx.values() {
            modal += needs.values().max().copied().unwrap_or(0);
            total += needs.values().sum::<usize>();
        }
        let share = modal as f64 / total as f64;
        assert!(
            share > 0.85,
            "modal need share {share:.3} too low for sharp preferences"
        );
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let bad = SyntheticConfig {
            service_count: 5,
            need_count: 21,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SyntheticConfig {
            preference_sharpness: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SyntheticConfig {
            total_days: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn need_names_override_aligns_catalog() {
        let names = vec!["Alpha".to_string(), "Beta".to_string(), "Gamma".to_string()];
        let config = SyntheticConfig {
            need_names: Some(names.clone()),
            service_count: 9,
            user_count: 2,
            total_days: 3,
            ..Default::default()
        };
        let (catalogs, _) = generate_synthetic(&config).unwrap();
        assert_eq!(catalogs.needs, names);
        for service in &catalogs.services {
            let need = &catalogs.needs[service.fulfills_need as usize];
            assert!(
                service.desc.contains(need.as_str()),
                "desc should name the need"
            );
        }
    }
}
