//! Question templates. `{Y}` is the queried tail entity, `{X}` a candidate
//! head, `{Z}` a count, and `{x}` a head entity whose tails are asked for.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Open,
    Verification,
    Counting,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaTemplate {
    pub id: String,
    pub relation: String,
    pub pattern: String,
    pub mode: Mode,
}

/// Which side of the triple the reference entity sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// `{Y}`: the reference is the tail, answers are heads.
    Tail,
    /// `{x}`: the reference is the head, answers are tails.
    Head,
}

impl QaTemplate {
    pub fn new(id: impl Into<String>, relation: impl Into<String>, pattern: impl Into<String>, mode: Mode) -> Self {
        Self { id: id.into(), relation: relation.into(), pattern: pattern.into(), mode }
    }

    fn has(&self, slot: &str) -> bool {
        self.pattern.contains(slot)
    }

    pub fn slot(&self) -> Slot {
        if self.has("{x}") {
            Slot::Head
        } else {
            Slot::Tail
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (x, y, z, lower) = (self.has("{X}"), self.has("{Y}"), self.has("{Z}"), self.has("{x}"));
        let ok = match self.mode {
            Mode::Open => (y ^ lower) && !x && !z,
            Mode::Verification => x && y && !z && !lower,
            Mode::Counting => y && !x && !lower,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("template `{}` has slots inconsistent with mode {:?}", self.id, self.mode)))
        }
    }

    pub fn render(&self, x: Option<&str>, y: &str, z: Option<usize>) -> String {
        let mut q = self.pattern.replace("{Y}", y).replace("{x}", y);
        if let Some(x) = x {
            q = q.replace("{X}", x);
        }
        if let Some(z) = z {
            q = q.replace("{Z}", &z.to_string());
        }
        q
    }
}

/// Reads a JSON array of templates.
pub fn load_templates(path: impl AsRef<Path>) -> Result<Vec<QaTemplate>> {
    let templates: Vec<QaTemplate> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    for t in &templates {
        t.validate()?;
    }
    Ok(templates)
}

/// Relation labels of the company-ownership graph.
pub mod co_relations {
    pub const OWN: &str = "own";
    pub const CONTROL: &str = "control";
    pub const ULTIMATE_CONTROL: &str = "ultimate_control";
    pub const ROLE: &str = "role";
    pub const QUALIFIED_HOLDING: &str = "qualified_holding";
    pub const REACHABLE: &str = "reachable";
    pub const INFLUENCE: &str = "influence";

    pub const ALL: [&str; 7] = [OWN, CONTROL, ULTIMATE_CONTROL, ROLE, QUALIFIED_HOLDING, REACHABLE, INFLUENCE];
}

/// The company-ownership template families: per relation, open and
/// verification questions plus the counting ("reasoning") pair.
pub fn co_templates() -> Vec<QaTemplate> {
    use co_relations::*;
    use Mode::*;
    let table: &[(&str, &[&str], &[&str], &[&str])] = &[
        (
            ULTIMATE_CONTROL,
            &[
                "Who is the ultimate controller of {Y}?",
                "Who holds ultimate control over {Y}?",
                "Which company or person is the ultimate controller of {Y}?",
            ],
            &[
                "Is it true that {X} is the ultimate controller of {Y}?",
                "Does {X} have ultimate control over {Y}?",
                "Can we confirm that {X} is the top controller of {Y}?",
            ],
            &[],
        ),
        (
            CONTROL,
            &["Who controls {Y}?", "Who is the controller of {Y}?", "Which company or person has control over {Y}?"],
            &[
                "Does {X} control {Y}?",
                "Is it true that {X} has control over {Y}?",
                "Can we verify that {X} is a controller of {Y}?",
            ],
            &[
                "How many companies and/or people control {Y}?",
                "Is it true that {Y} is controlled by {Z} companies and/or people?",
            ],
        ),
        (
            OWN,
            &["Who owns {Y}?", "Who is the owner of {Y}?", "Which entity is the owner of {Y}?"],
            &[
                "Is it true that {X} owns shares of {Y}?",
                "Does {X} have ownership over {Y}?",
                "Can we confirm that {X} owns shares in {Y}?",
            ],
            &["How many companies own {Y}?", "Is it true that {Y} is owned by {Z} companies and/or people?"],
        ),
        (
            ROLE,
            &["Who has a role in {Y}?", "Who takes a role in {Y}?", "Which company or person assumes a role with {Y}?"],
            &[
                "Does {X} have a role in {Y}?",
                "Is it true that {X} is assigned a role in {Y}?",
                "Can we confirm that {X} plays a role in {Y}?",
            ],
            &["How many entities have a role in {Y}?", "Is it true that {Y} has {Z} entities assuming a role in it?"],
        ),
        (
            QUALIFIED_HOLDING,
            &[
                "Who has qualified holdings in {Y}?",
                "Who is a qualified holder of {Y}?",
                "Which company or person holds a qualified position in {Y}?",
            ],
            &[
                "Is it true that {X} has qualified holdings in {Y}?",
                "Does {X} qualify as a holder in {Y}?",
                "Can we confirm that {X} is a qualified holder of {Y}?",
            ],
            &[
                "How many entities have qualified holdings in {Y}?",
                "Is it true that {Y} has {Z} entities with qualified holdings?",
            ],
        ),
        (
            REACHABLE,
            &[],
            &[
                "Is it true that {X} is connected to {Y}?",
                "Can {X} reach {Y} through any connections?",
                "Does {X} have a connection to {Y}?",
                "Is it possible for {X} to be accessed by {Y}?",
            ],
            &[
                "How many entities can reach {Y} through any connections?",
                "Is it true that {Y} is connected with {Z} companies and/or people?",
            ],
        ),
        (
            INFLUENCE,
            &["Who influences {Y}?", "Who has influence over {Y}?"],
            &[
                "Is it true that {X} influences {Y}?",
                "Does {X} have influence on {Y}?",
                "Can {X} influence {Y}?",
                "Is there evidence that {X} exerts influence over {Y}?",
            ],
            &[
                "How many companies and/or people influence {Y}?",
                "Is it true that {Y} is influenced by {Z} companies and/or people?",
            ],
        ),
    ];
    let mut out = Vec::new();
    for (rel, open, verif, count) in table {
        for (mode, list, tag) in [(Open, *open, "open"), (Verification, *verif, "verification"), (Counting, *count, "counting")] {
            for (i, p) in list.iter().enumerate() {
                out.push(QaTemplate::new(format!("{rel}.{tag}.{i}"), *rel, *p, mode));
            }
        }
    }
    out
}

/// A sample of head-slot templates in the style of the YAGO3-10 query set.
pub fn yago_templates() -> Vec<QaTemplate> {
    [
        ("wasBornIn", "Where was {x} born?"),
        ("worksAt", "Where does {x} work?"),
        ("isLocatedIn", "Where is {x} located?"),
        ("hasCapital", "What is the capital of {x}?"),
        ("isMarriedTo", "Who is {x} married to?"),
        ("playsFor", "Which team does {x} play for?"),
        ("isCitizenOf", "Which country is {x} a citizen of?"),
        ("owns", "What is owned by {x}?"),
    ]
    .into_iter()
    .map(|(r, p)| QaTemplate::new(format!("{r}.open.0"), r, p, Mode::Open))
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_templates_validate() {
        for t in co_templates().iter().chain(&yago_templates()) {
            t.validate().unwrap();
        }
        assert_eq!(co_templates().iter().filter(|t| t.relation == "control").count(), 8);
    }

    #[test]
    fn rendering() {
        let t = QaTemplate::new("c", "control", "Who controls {Y}?", Mode::Open);
        assert_eq!(t.render(None, "MyBank", None), "Who controls MyBank?");
        let y = QaTemplate::new("y", "wasBornIn", "Where was {x} born?", Mode::Open);
        assert_eq!(y.slot(), Slot::Head);
        assert_eq!(y.render(None, "Dante", None), "Where was Dante born?");
    }

    #[test]
    fn slot_validation() {
        assert!(QaTemplate::new("b", "r", "Does {X} own?", Mode::Verification).validate().is_err());
        assert!(QaTemplate::new("b", "r", "Who {X} {Y}?", Mode::Open).validate().is_err());
    }
}
