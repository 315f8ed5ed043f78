//! The three-tier living-needs framework: top levels fixed to Maslow's
//! hierarchy, categories and leaf needs grounded in the service catalog.
//!
//! The framework travels as an indented bullet list (two spaces per tier),
//! matching its shape inside refinement prompts. A vetted copy is bundled
//! with the crate and used as the default; LLM-built frameworks must pass the
//! same parse + validate gate before anything downstream sees them.

use serde::{Deserialize, Serialize};

use crate::corpus::Catalogs;
use crate::error::{Error, Result};
use crate::orchestrate::{estimate_tokens, CompletionRequest, LlmClient, Prompt};

/// The five top levels, in the only order the parser accepts.
pub const TOP_LEVEL_NAMES: [&str; 5] = [
    "Physiological Needs",
    "Safety Needs",
    "Social Belonging Needs",
    "Esteem Needs",
    "Self-Actualization Needs",
];

/// Instruction paragraph of framework-construction prompts. Placed below the
/// service list; clients key on this text verbatim.
pub const FRAMEWORK_REQUEST: &str = "These are life services on a platform that can meet human living needs. Based on this list, along with Maslow's hierarchy of needs, please generate a three-tiered framework of human living needs, ensuring that each need can be fulfilled by the listed services.";

/// Lines bracketing the carried-forward framework in batch prompts after the
/// first.
const CONTINUATION_INTRO: &str = "A framework drafted from earlier batches of the service list is:";
const CONTINUATION_REQUEST: &str = "Please extend or adjust this framework so the services above are also covered, and reply with the complete updated framework.";

/// A second-tier grouping and its leaf needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedCategory {
    pub name: String,
    pub leaves: Vec<String>,
}

/// One of the five fixed top levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedLevel {
    pub name: String,
    pub categories: Vec<NeedCategory>,
}

/// A parsed, structurally valid framework. Construction goes through
/// [`parse_framework`], which enforces the tier and naming invariants, so a
/// value of this type is always well-formed. Immutable after parse;
/// concurrent reads are safe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedFramework {
    pub levels: Vec<NeedLevel>,
}

impl NeedFramework {
    /// Leaves in framework (traversal) order.
    pub fn leaves(&self) -> impl Iterator<Item = &str> {
        self.levels
            .iter()
            .flat_map(|l| l.categories.iter())
            .flat_map(|c| c.leaves.iter())
            .map(String::as_str)
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().count()
    }

    pub fn category_count(&self) -> usize {
        self.levels.iter().map(|l| l.categories.len()).sum()
    }
}

/// Parse the indented-bullet framework format. Structural violations —
/// wrong tier depth, unknown or out-of-order top level, duplicate leaf,
/// childless level or category — are rejected with the offending line.
pub fn parse_framework(text: &str) -> Result<NeedFramework> {
    let mut levels: Vec<NeedLevel> = Vec::new();
    let mut seen_leaves: Vec<&str> = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let at = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let indent_len = raw_line.len() - raw_line.trim_start_matches(' ').len();
        let body = &raw_line[indent_len..];
        if body.starts_with('\t') || raw_line[..indent_len].contains('\t') {
            return Err(at(
                "tabs are not allowed; indent with two spaces per tier".into()
            ));
        }
        let name = body
            .strip_prefix("- ")
            .ok_or_else(|| at(format!("expected a \"- \" bullet, got {body:?}")))?
            .trim();
        if name.is_empty() {
            return Err(at("empty item name".into()));
        }
        if indent_len % 2 != 0 {
            return Err(at(format!(
                "indentation of {indent_len} spaces is not a multiple of two"
            )));
        }
        let depth = indent_len / 2;
        match depth {
            0 => {
                let position = levels.len();
                match TOP_LEVEL_NAMES.get(position) {
                    Some(&expected) if name == expected => {
                        levels.push(NeedLevel {
                            name: name.to_string(),
                            categories: Vec::new(),
                        });
                    }
                    _ if !TOP_LEVEL_NAMES.contains(&name) => {
                        return Err(at(format!("unknown top level {name:?}")));
                    }
                    Some(&expected) => {
                        return Err(at(format!(
                            "top level {name:?} out of order (expected {expected:?})"
                        )));
                    }
                    None => {
                        return Err(at(format!(
                            "more than {} top levels",
                            TOP_LEVEL_NAMES.len()
                        )))
                    }
                }
            }
            1 => {
                let level = levels
                    .last_mut()
                    .ok_or_else(|| at(format!("category {name:?} appears before any top level")))?;
                level.categories.push(NeedCategory {
                    name: name.to_string(),
                    leaves: Vec::new(),
                });
            }
            2 => {
                let category = levels
                    .last_mut()
                    .and_then(|l| l.categories.last_mut())
                    .ok_or_else(|| at(format!("leaf {name:?} appears before any category")))?;
                if seen_leaves.contains(&name) {
                    return Err(at(format!("duplicate leaf need {name:?}")));
                }
                category.leaves.push(name.to_string());
                seen_leaves.push(name);
            }
            _ => return Err(at("tier depth exceeds 3".into())),
        }
    }
    if let Some(expected) = TOP_LEVEL_NAMES.get(levels.len()) {
        return Err(Error::Validation(format!("missing top level {expected:?}")));
    }
    for level in &levels {
        if level.categories.is_empty() {
            return Err(Error::Validation(format!(
                "top level {:?} has no categories",
                level.name
            )));
        }
        for category in &level.categories {
            if category.leaves.is_empty() {
                return Err(Error::Validation(format!(
                    "category {:?} has no leaf needs",
                    category.name
                )));
            }
        }
    }
    Ok(NeedFramework { levels })
}

/// Render a framework back to the bullet format. `parse_framework` of the
/// result reproduces the input structure exactly.
pub fn serialize_framework(framework: &NeedFramework) -> String {
    let mut out = String::new();
    for level in &framework.levels {
        out.push_str(&format!("- {}\n", level.name));
        for category in &level.categories {
            out.push_str(&format!("  - {}\n", category.name));
            for leaf in &category.leaves {
                out.push_str(&format!("    - {leaf}\n"));
            }
        }
    }
    out
}

const BUNDLED_FRAMEWORK: &str = include_str!("../data/living_needs_framework.txt");

/// The vetted framework shipped with the crate (5 levels, 12 categories,
/// 25 leaves).
pub fn default_framework() -> NeedFramework {
    parse_framework(BUNDLED_FRAMEWORK).expect("bundled framework must parse")
}

/// Per-leaf service coverage. A leaf is covered by a service when the
/// service's linked closed-set need equals the leaf name (ignoring case), or
/// the leaf name appears verbatim (ignoring case) in the service's name or
/// description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeafCoverage {
    pub leaf: String,
    pub services: Vec<u32>,
}

/// Report-only validation result: which services back each leaf, and which
/// leaves none do.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameworkReport {
    pub coverage: Vec<LeafCoverage>,
    pub unmatched: Vec<String>,
}

impl FrameworkReport {
    pub fn passed(&self) -> bool {
        self.unmatched.is_empty()
    }
}

/// Check that every leaf can be fulfilled by at least one catalog service.
pub fn validate_framework(framework: &NeedFramework, catalogs: &Catalogs) -> FrameworkReport {
    let mut coverage = Vec::new();
    let mut unmatched = Vec::new();
    for leaf in framework.leaves() {
        let leaf_lower = leaf.to_lowercase();
        let services: Vec<u32> = catalogs
            .services
            .iter()
            .enumerate()
            .filter(|(_, s)| {
                let linked_need = &catalogs.needs[s.fulfills_need as usize];
                linked_need.eq_ignore_ascii_case(leaf)
                    || s.name.to_lowercase().contains(&leaf_lower)
                    || s.desc.to_lowercase().contains(&leaf_lower)
            })
            .map(|(i, _)| i as u32)
            .collect();
        if services.is_empty() {
            unmatched.push(leaf.to_string());
        }
        coverage.push(LeafCoverage {
            leaf: leaf.to_string(),
            services,
        });
    }
    FrameworkReport {
        coverage,
        unmatched,
    }
}

/// Split the service list into batches whose prompts fit `token_budget`.
/// Every batch carries at least one service, so a single name wider than the
/// budget still goes through (the guard downstream will refuse to send it).
pub fn plan_service_batches(services: &[String], token_budget: usize) -> Result<Vec<Vec<String>>> {
    if services.is_empty() {
        return Err(Error::Validation(
            "framework construction needs at least one service".into(),
        ));
    }
    // Instruction plus continuation boilerplate count against every batch.
    let overhead = estimate_tokens(FRAMEWORK_REQUEST)
        + estimate_tokens(CONTINUATION_INTRO)
        + estimate_tokens(CONTINUATION_REQUEST);
    let mut batches: Vec<Vec<String>> = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let mut current_tokens = overhead;
    for service in services {
        let cost = estimate_tokens(service).max(1);
        if !current.is_empty() && current_tokens + cost > token_budget {
            batches.push(std::mem::take(&mut current));
            current_tokens = overhead;
        }
        current_tokens += cost;
        current.push(service.clone());
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(batches)
}

/// Build one framework-construction prompt: the service list (one name per
/// line), the request, and — for batches after the first — the framework
/// drafted so far.
pub fn build_framework_prompt(services: &[String], drafted: Option<&str>) -> Result<Prompt> {
    if services.is_empty() {
        return Err(Error::Validation(
            "framework prompt needs at least one service".into(),
        ));
    }
    let list = services.join("\n");
    let text = match drafted {
        None => format!("{list}\n\n{FRAMEWORK_REQUEST}"),
        Some(prior) => format!(
            "{list}\n\n{FRAMEWORK_REQUEST}\n\n{CONTINUATION_INTRO}\n{prior}\n{CONTINUATION_REQUEST}",
            prior = prior.trim_end(),
        ),
    };
    Ok(Prompt::new(String::new(), text))
}

/// Drive a client through the batched construction prompts, then gate the
/// final text through parse + validate. Catalog validation is skipped when
/// `catalogs` is None (no linkage to check against).
pub fn build_framework(
    client: &dyn LlmClient,
    services: &[String],
    token_budget: usize,
    catalogs: Option<&Catalogs>,
) -> Result<NeedFramework> {
    let batches = plan_service_batches(services, token_budget)?;
    let mut drafted: Option<String> = None;
    for batch in &batches {
        let prompt = build_framework_prompt(batch, drafted.as_deref())?;
        let response = client.complete(&CompletionRequest {
            prompt: &prompt.rendered,
            temperature: 0.0,
            max_output_tokens: 1024,
        })?;
        drafted = Some(response);
    }
    let text = drafted.ok_or_else(|| Error::Provider("no framework text produced".into()))?;
    let framework = parse_framework(&text)?;
    if let Some(catalogs) = catalogs {
        let report = validate_framework(&framework, catalogs);
        if !report.passed() {
            return Err(Error::Validation(format!(
                "constructed framework leaves no service can fulfill: {}",
                report.unmatched.join(", ")
            )));
        }
    }
    Ok(framework)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, ServiceEntry, SyntheticConfig};
    use proptest::prelude::*;

    #[test]
    fn bundled_framework_has_frozen_shape() {
        let f = default_framework();
        assert_eq!(f.levels.len(), 5);
        assert_eq!(f.category_count(), 12);
        assert_eq!(f.leaf_count(), 25);
        let names: Vec<&str> = f.levels.iter().map(|l| l.name.as_str()).collect();
        assert_eq!(names, TOP_LEVEL_NAMES);
        let leaves: Vec<&str> = f.leaves().collect();
        assert_eq!(leaves.first(), Some(&"Home meals"));
        assert_eq!(leaves.last(), Some(&"Outdoor and experiential activities"));
    }

    #[test]
    fn bundled_framework_round_trips() {
        let f = default_framework();
        assert_eq!(parse_framework(&serialize_framework(&f)).unwrap(), f);
    }

    #[test]
    fn four_tier_list_is_rejected() {
        let mut text = serialize_framework(&default_framework());
        text.push_str("      - too deep\n");
        let err = parse_framework(&text).unwrap_err();
        assert!(err.to_string().contains("tier depth exceeds 3"), "{err}");
    }

    #[test]
    fn unknown_top_level_is_rejected() {
        let text = "- Basic Needs\n  - Diet\n    - Meals\n";
        let err = parse_framework(text).unwrap_err();
        assert!(err.to_string().contains("unknown top level"), "{err}");
    }

    #[test]
    fn out_of_order_top_levels_are_rejected() {
        let text = "- Safety Needs\n  - Diet\n    - Meals\n";
        let err = parse_framework(text).unwrap_err();
        assert!(err.to_string().contains("out of order"), "{err}");
    }

    #[test]
    fn duplicate_leaf_is_rejected_by_name() {
        let mut f = default_framework();
        let dup = "Home meals".to_string();
        f.levels[1].categories[0].leaves.push(dup);
        let err = parse_framework(&serialize_framework(&f)).unwrap_err();
        assert!(err.to_string().contains("Home meals"), "{err}");
    }

    #[test]
    fn missing_top_level_is_rejected() {
        let mut f = default_framework();
        f.levels.pop();
        let err = parse_framework(&serialize_framework(&f)).unwrap_err();
        assert!(
            err.to_string().contains("Self-Actualization Needs"),
            "{err}"
        );
    }

    #[test]
    fn orphan_tiers_are_rejected() {
        assert!(parse_framework("  - Diet\n").is_err());
        assert!(parse_framework("    - Meals\n").is_err());
        let childless = "- Physiological Needs\n";
        assert!(parse_framework(childless).is_err());
    }

    #[test]
    fn odd_indentation_is_rejected() {
        let text = "- Physiological Needs\n   - Diet\n    - Meals\n";
        let err = parse_framework(text).unwrap_err();
        assert!(err.to_string().contains("multiple of two"), "{err}");
    }

    #[test]
    fn empty_category_is_rejected() {
        let mut text = String::from("- Physiological Needs\n  - Basic Diet\n");
        for level in &TOP_LEVEL_NAMES[1..] {
            text.push_str(&format!(
                "- {level}\n  - Filler\n    - Filler leaf {level}\n"
            ));
        }
        let err = parse_framework(&text).unwrap_err();
        assert!(err.to_string().contains("Basic Diet"), "{err}");
    }

    proptest! {
        #[test]
        fn arbitrary_frameworks_round_trip(shape in proptest::collection::vec((1usize..4, 1usize..4), 5)) {
            let mut levels = Vec::new();
            for (li, &(cats, leaves)) in shape.iter().enumerate() {
                let mut categories = Vec::new();
                for ci in 0..cats {
                    let leaves = (0..leaves)
                        .map(|fi| format!("leaf {li} {ci} {fi}"))
                        .collect();
                    categories.push(NeedCategory { name: format!("category {li} {ci}"), leaves });
                }
                levels.push(NeedLevel { name: TOP_LEVEL_NAMES[li].to_string(), categories });
            }
            let f = NeedFramework { levels };
            prop_assert_eq!(parse_framework(&serialize_framework(&f)).unwrap(), f);
        }
    }

    /// Synthetic catalog whose closed-set needs are exactly the framework
    /// leaves, so linkage alone must cover everything.
    fn aligned_catalog() -> Catalogs {
        let leaves: Vec<String> = default_framework().leaves().map(str::to_string).collect();
        let config = SyntheticConfig {
            need_names: Some(leaves),
            service_count: 50,
            ..SyntheticConfig::default()
        };
        let (catalogs, _) = generate_synthetic(&config).unwrap();
        catalogs
    }

    #[test]
    fn aligned_synthetic_catalog_validates_clean() {
        let report = validate_framework(&default_framework(), &aligned_catalog());
        assert!(report.passed(), "unmatched: {:?}", report.unmatched);
        assert!(report.coverage.iter().all(|c| !c.services.is_empty()));
    }

    #[test]
    fn uncoverable_leaf_is_reported() {
        let mut f = default_framework();
        f.levels[4].categories[1].leaves.push("Space travel".into());
        let report = validate_framework(&f, &aligned_catalog());
        assert_eq!(report.unmatched, vec!["Space travel".to_string()]);
    }

    #[test]
    fn dropping_a_service_category_reports_its_leaves() {
        let f = default_framework();
        let leaves: Vec<String> = f.leaves().map(str::to_string).collect();
        // One service per leaf, linked by need id; generic names so only the
        // linkage (not text containment) can match.
        let services: Vec<ServiceEntry> = leaves
            .iter()
            .enumerate()
            .map(|(i, _)| ServiceEntry {
                name: format!("service #{i}"),
                desc: "General purpose venue.".into(),
                fulfills_need: i as u32,
            })
            .collect();
        let full = Catalogs {
            needs: leaves.clone(),
            services,
            locations: vec!["zone".into()],
        };
        assert!(validate_framework(&f, &full).passed());

        let dropped = "Home meals";
        let mut pruned = full.clone();
        pruned
            .services
            .retain(|s| full.needs[s.fulfills_need as usize] != dropped);
        let report = validate_framework(&f, &pruned);
        assert_eq!(report.unmatched, vec![dropped.to_string()]);
    }

    #[test]
    fn small_service_lists_fit_one_prompt() {
        let services: Vec<String> = (0..10).map(|i| format!("service {i}")).collect();
        let batches = plan_service_batches(&services, 2000).unwrap();
        assert_eq!(batches.len(), 1);
        let prompt = build_framework_prompt(&batches[0], None).unwrap();
        for s in &services {
            assert!(prompt.rendered.contains(s));
        }
        assert!(prompt.rendered.ends_with(FRAMEWORK_REQUEST));
        // Determinism: same inputs, same bytes.
        assert_eq!(prompt, build_framework_prompt(&batches[0], None).unwrap());
    }

    #[test]
    fn oversized_service_lists_partition_into_batches() {
        let services: Vec<String> = (0..10_000)
            .map(|i| format!("templated service name number {i}"))
            .collect();
        let batches = plan_service_batches(&services, 2000).unwrap();
        assert!(batches.len() >= 2, "got {} batches", batches.len());
        let flattened: Vec<String> = batches.concat();
        assert_eq!(flattened, services);
        for batch in &batches {
            let prompt = build_framework_prompt(batch, Some("- draft")).unwrap();
            assert!(prompt.token_count_estimate <= 2000 + estimate_tokens("- draft") + 2);
        }
    }

    #[test]
    fn empty_service_list_is_rejected() {
        assert!(plan_service_batches(&[], 100).is_err());
        assert!(build_framework_prompt(&[], None).is_err());
    }

    /// Counts calls and always answers with the bundled framework.
    struct CountingClient {
        calls: std::sync::Mutex<Vec<String>>,
        answer: String,
    }

    impl LlmClient for CountingClient {
        fn provider_id(&self) -> &str {
            "counting"
        }
        fn complete(&self, request: &CompletionRequest) -> Result<String> {
            self.calls.lock().unwrap().push(request.prompt.to_string());
            Ok(self.answer.clone())
        }
    }

    #[test]
    fn build_framework_carries_draft_across_batches() {
        let services: Vec<String> = (0..400).map(|i| format!("wide service name {i}")).collect();
        let client = CountingClient {
            calls: std::sync::Mutex::new(Vec::new()),
            answer: serialize_framework(&default_framework()),
        };
        let built = build_framework(&client, &services, 300, None).unwrap();
        assert_eq!(built, default_framework());
        let calls = client.calls.into_inner().unwrap();
        assert!(calls.len() >= 2);
        assert!(!calls[0].contains(CONTINUATION_INTRO));
        for call in &calls[1..] {
            assert!(call.contains(CONTINUATION_INTRO));
            assert!(call.contains("- Physiological Needs"));
        }
    }

    #[test]
    fn build_framework_rejects_malformed_output() {
        let client = CountingClient {
            calls: std::sync::Mutex::new(Vec::new()),
            answer: "not a framework".into(),
        };
        let services = vec!["service".to_string()];
        assert!(build_framework(&client, &services, 1000, None).is_err());
    }

    #[test]
    fn build_framework_rejects_uncovered_output() {
        let mut f = default_framework();
        f.levels[0].categories[0]
            .leaves
            .push("Orbital tourism".into());
        let client = CountingClient {
            calls: std::sync::Mutex::new(Vec::new()),
            answer: serialize_framework(&f),
        };
        let services = vec!["service".to_string()];
        let catalogs = aligned_catalog();
        let err = build_framework(&client, &services, 1000, Some(&catalogs)).unwrap_err();
        assert!(err.to_string().contains("Orbital tourism"), "{err}");
    }
}
