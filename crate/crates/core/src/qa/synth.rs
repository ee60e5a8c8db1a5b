//! Synthetic company-ownership graphs with engineered name collisions.
//!
//! Each component is a small ownership DAG: a few persons at the top and
//! companies below, with integer percentage shares. Derived relations follow
//! the usual corporate definitions: control is a majority held directly or
//! through already-controlled companies, ultimate control is control by an
//! uncontrolled party.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::templates::co_relations as rel;
use crate::kg::KnowledgeGraph;

const FIRST_NAMES: &[&str] = &[
    "MARIO", "LUCA", "GIULIA", "ANNA", "MARCO", "SARA", "PAOLO", "ELENA", "FRANCO", "CHIARA", "PIETRO", "LAURA",
    "ENZO", "MARTA", "DARIO", "IRENE",
];

const SURNAMES: &[&str] = &[
    "ROSSI", "BIANCHI", "ORSINI", "CIPOLLA", "SANTORO", "MUTI", "DESIO", "VIOLA", "BORRANI", "DOVARA", "BRICCIALDI",
    "BORSELLINO", "FERRARI", "ESPOSITO", "ROMANO", "COLOMBO", "RICCI", "MARINO", "GRECO", "BRUNO", "GALLO", "CONTI",
    "DE LUCA", "MANCINI", "COSTA", "GIORDANO", "RIZZO", "LOMBARDI", "MORETTI", "BARBIERI", "FONTANA", "CARUSO",
    "MARIANI", "FERRARA", "SANTINI", "RINALDI", "LEONE", "LONGO", "GENTILE", "MARTINI", "VITALE", "SERRA",
    "VALENTINI", "PELLEGRINI", "PALUMBO", "SANNA", "FARINA", "RIVA", "MONTI", "CATTANEO", "MORELLI", "AMATO",
    "SILVESTRI", "MAZZA", "TESTA", "GRASSI", "PARISI", "VILLA", "CONTE", "FERRI", "FABBRI", "BELLINI", "BASILE",
    "SALA", "DONATI", "BENEDETTI", "NERI", "BIANCO", "FIORE", "CARBONE", "ORLANDO",
];

/// Trailing legal-form tokens recognised on company labels.
pub const LEGAL_FORMS: &[&str] = &["SPA", "S.R.L.", "GROUP", "E FIGLI"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthCoConfig {
    pub n_components: usize,
    pub persons_per_component: usize,
    pub companies_per_component: usize,
    pub collision_pairs: usize,
    pub seed: u64,
}

impl Default for SynthCoConfig {
    fn default() -> Self {
        Self { n_components: 20, persons_per_component: 3, companies_per_component: 7, collision_pairs: 8, seed: 0 }
    }
}

/// A direct holding of `percent` of `owned` by `owner`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Share {
    pub owner: String,
    pub owned: String,
    pub percent: u32,
}

/// Label with spacing, hyphens and a trailing legal form removed. Two
/// distinct labels with the same key form a name collision.
pub fn collision_key(label: &str) -> String {
    let mut s = label.trim().to_uppercase();
    for form in LEGAL_FORMS {
        if let Some(stripped) = s.strip_suffix(form) {
            if stripped.is_empty() || stripped.ends_with(' ') {
                s = stripped.to_owned();
                break;
            }
        }
    }
    s.chars().filter(|c| !c.is_whitespace() && *c != '-').collect()
}

/// Groups of entity labels sharing a collision key, each sorted, in key order.
pub fn collision_groups<'a>(labels: impl IntoIterator<Item = &'a str>) -> Vec<Vec<String>> {
    let mut by_key: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for l in labels {
        by_key.entry(collision_key(l)).or_default().push(l.to_owned());
    }
    by_key
        .into_values()
        .filter(|v| v.len() > 1)
        .map(|mut v| {
            v.sort();
            v
        })
        .collect()
}

/// Control and ultimate-control pairs `(controller, controlled)` implied by
/// a share list, both sorted.
///
/// X controls Y when X's direct share in Y plus the shares held in Y by
/// companies X already controls exceeds 50%, iterated to a fixpoint.
pub fn derive_control(shares: &[Share]) -> (Vec<(String, String)>, Vec<(String, String)>) {
    let parties: BTreeSet<&str> = shares.iter().flat_map(|s| [s.owner.as_str(), s.owned.as_str()]).collect();
    let mut controls: BTreeSet<(&str, &str)> = BTreeSet::new();
    loop {
        let mut grew = false;
        for &x in &parties {
            for &y in &parties {
                if x == y || controls.contains(&(x, y)) {
                    continue;
                }
                let held: u32 = shares
                    .iter()
                    .filter(|s| s.owned == y && (s.owner == x || controls.contains(&(x, s.owner.as_str()))))
                    .map(|s| s.percent)
                    .sum();
                if held > 50 {
                    controls.insert((x, y));
                    grew = true;
                }
            }
        }
        if !grew {
            break;
        }
    }
    let controlled: HashSet<&str> = controls.iter().map(|&(_, y)| y).collect();
    let own = |v: &BTreeSet<(&str, &str)>| v.iter().map(|&(a, b)| (a.to_owned(), b.to_owned())).collect::<Vec<_>>();
    let ultimate: BTreeSet<(&str, &str)> = controls.iter().copied().filter(|(x, _)| !controlled.contains(x)).collect();
    (own(&controls), own(&ultimate))
}

struct Labels {
    rng: ChaCha8Rng,
    used: HashSet<String>,
    keys: HashSet<String>,
}

impl Labels {
    fn fresh(&mut self, make: impl Fn(&mut ChaCha8Rng) -> String) -> String {
        loop {
            let l = make(&mut self.rng);
            let k = collision_key(&l);
            if !self.used.contains(&l) && !self.keys.contains(&k) {
                self.used.insert(l.clone());
                self.keys.insert(k);
                return l;
            }
        }
    }

    fn person(&mut self) -> String {
        self.fresh(|r| format!("{} {}", FIRST_NAMES.choose(r).unwrap(), SURNAMES.choose(r).unwrap()))
    }

    fn company(&mut self) -> String {
        self.fresh(|r| {
            let a = SURNAMES.choose(r).unwrap();
            let stem = if r.random_bool(0.35) { format!("{a}-{}", SURNAMES.choose(r).unwrap()) } else { a.to_string() };
            format!("{stem} {}", LEGAL_FORMS.choose(r).unwrap())
        })
    }

    /// Two labels differing only by spacing or suffix: `S1 S2 SPA` /
    /// `S1  S2 SPA`, identical once whitespace is collapsed, or `S1S2` /
    /// `S1 S2 SPA`.
    fn collision(&mut self, spacing_only: bool) -> (String, String) {
        loop {
            let (a, b) = (*SURNAMES.choose(&mut self.rng).unwrap(), *SURNAMES.choose(&mut self.rng).unwrap());
            if a == b || a.contains(' ') || b.contains(' ') {
                continue;
            }
            let (first, second) = if spacing_only {
                (format!("{a} {b} SPA"), format!("{a}  {b} SPA"))
            } else {
                (format!("{a}{b}"), format!("{a} {b} SPA"))
            };
            let k = collision_key(&first);
            if self.keys.contains(&k) || self.used.contains(&first) || self.used.contains(&second) {
                continue;
            }
            self.keys.insert(k);
            self.used.insert(first.clone());
            self.used.insert(second.clone());
            return (first, second);
        }
    }
}

/// Generated graph plus the share list it was derived from.
#[derive(Debug, Clone)]
pub struct SynthCo {
    pub kg: KnowledgeGraph,
    pub shares: Vec<Share>,
    pub collision_pairs: Vec<(String, String)>,
}

pub fn synth_co_graph(config: &SynthCoConfig) -> SynthCo {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut labels = Labels { rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x1abe1), used: HashSet::new(), keys: HashSet::new() };
    let n_comp = config.n_components.max(1);
    let n_companies = config.companies_per_component.max(1);

    // Collision members replace non-root companies; the two halves of a pair
    // go to different components so their controllers are disjoint.
    let mut slots: Vec<Vec<Option<String>>> = vec![vec![None; n_companies]; n_comp];
    let mut pairs = Vec::new();
    let mut free: Vec<(usize, usize)> = (0..n_comp).flat_map(|c| (1..n_companies).map(move |i| (c, i))).collect();
    free.shuffle(&mut rng);
    for p in 0..config.collision_pairs {
        let (plain, suffixed) = labels.collision(p % 3 != 2);
        let Some(first) = free.pop() else { break };
        let Some(pos) = free.iter().rposition(|&(c, _)| c != first.0) else { break };
        let second = free.remove(pos);
        slots[first.0][first.1] = Some(plain.clone());
        slots[second.0][second.1] = Some(suffixed.clone());
        pairs.push((plain, suffixed));
    }

    let mut shares = Vec::new();
    let mut roles = Vec::new();
    let mut entities = Vec::new();
    for comp in slots {
        let persons: Vec<String> = (0..config.persons_per_component).map(|_| labels.person()).collect();
        let companies: Vec<String> = comp.into_iter().map(|s| s.unwrap_or_else(|| labels.company())).collect();
        for (i, company) in companies.iter().enumerate() {
            // Owners come from persons and earlier companies, so the
            // component stays acyclic; a preferential bias towards early
            // companies yields a few hubs.
            let mut pool: Vec<&String> = persons.iter().collect();
            for (j, c) in companies[..i].iter().enumerate() {
                for _ in 0..(i - j).min(3) {
                    pool.push(c);
                }
            }
            let want = rng.random_range(1..=3usize).min(persons.len() + i);
            let mut owners: Vec<&String> = Vec::new();
            while owners.len() < want {
                let o = *pool.choose(&mut rng).expect("non-empty owner pool");
                if !owners.contains(&o) {
                    owners.push(o);
                }
            }
            let total = if rng.random_bool(0.7) { 100 } else { rng.random_range(60..=95) };
            let mut cuts: Vec<u32> = (0..owners.len() - 1).map(|_| rng.random_range(5..total - 5)).collect();
            cuts.sort_unstable();
            let mut prev = 0;
            for (k, o) in owners.iter().enumerate() {
                let next = cuts.get(k).copied().unwrap_or(total);
                let pct = (next - prev).max(1);
                prev = next;
                shares.push(Share { owner: (*o).clone(), owned: company.clone(), percent: pct });
            }
            let n_roles = rng.random_range(1..=2usize).min(persons.len());
            for p in persons.choose_multiple(&mut rng, n_roles) {
                roles.push((p.clone(), company.clone()));
            }
        }
        entities.extend(persons);
        entities.extend(companies);
    }

    let mut kg = KnowledgeGraph::default();
    for e in &entities {
        kg.add_entity(e);
    }
    for s in &shares {
        kg.insert(&s.owner, rel::OWN, &s.owned);
    }
    let (control, ultimate) = derive_control(&shares);
    for (x, y) in &control {
        kg.insert(x, rel::CONTROL, y);
    }
    for (x, y) in &ultimate {
        kg.insert(x, rel::ULTIMATE_CONTROL, y);
    }
    for (p, c) in &roles {
        kg.insert(p, rel::ROLE, c);
    }
    for s in &shares {
        if s.percent >= 10 {
            kg.insert(&s.owner, rel::QUALIFIED_HOLDING, &s.owned);
        }
        if (20..=50).contains(&s.percent) {
            kg.insert(&s.owner, rel::INFLUENCE, &s.owned);
        }
    }
    for (x, y) in reachability(&shares) {
        kg.insert(&x, rel::REACHABLE, &y);
    }
    SynthCo { kg, shares, collision_pairs: pairs }
}

/// Pairs connected by an ownership path of length at least one.
fn reachability(shares: &[Share]) -> Vec<(String, String)> {
    let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in shares {
        out.entry(s.owner.as_str()).or_default().push(s.owned.as_str());
    }
    let mut pairs = Vec::new();
    for &start in out.keys() {
        let mut seen = BTreeSet::new();
        let mut stack = out[start].clone();
        while let Some(n) = stack.pop() {
            if seen.insert(n) {
                if let Some(next) = out.get(n) {
                    stack.extend(next);
                }
            }
        }
        pairs.extend(seen.into_iter().map(|y| (start.to_owned(), y.to_owned())));
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::EntityId;

    fn share(o: &str, d: &str, p: u32) -> Share {
        Share { owner: o.into(), owned: d.into(), percent: p }
    }

    #[test]
    fn keys() {
        assert_eq!(collision_key("BetaCorp"), collision_key("Beta Corp Spa"));
        assert_eq!(collision_key("ROSSI BIANCHI"), collision_key("ROSSI BIANCHI SPA"));
        assert_eq!(collision_key("CIPOLLA-SANTORO E FIGLI"), "CIPOLLASANTORO");
        assert_ne!(collision_key("ORSINI SPA"), collision_key("ORSINI GROUP S"));
    }

    #[test]
    fn hand_built_control() {
        // A holds 60% of B and 30% of C; B holds 30% of C; C holds 51% of D.
        let shares = [share("A", "B", 60), share("A", "C", 30), share("B", "C", 30), share("C", "D", 51)];
        let (control, ultimate) = derive_control(&shares);
        let pairs = |v: &[(&str, &str)]| v.iter().map(|&(a, b)| (a.to_owned(), b.to_owned())).collect::<Vec<_>>();
        assert_eq!(control, pairs(&[("A", "B"), ("A", "C"), ("A", "D"), ("C", "D")]));
        assert_eq!(ultimate, pairs(&[("A", "B"), ("A", "C"), ("A", "D")]));
    }

    #[test]
    fn no_majority_no_control() {
        let (control, _) = derive_control(&[share("A", "B", 50), share("C", "B", 50)]);
        assert!(control.is_empty());
    }

    #[test]
    fn without_collisions_labels_are_distinct() {
        let g = synth_co_graph(&SynthCoConfig { collision_pairs: 0, ..Default::default() });
        assert_eq!(g.kg.num_entities(), 200);
        assert!(collision_groups(g.kg.entities().labels().iter().map(String::as_str)).is_empty());
    }

    #[test]
    fn collision_pairs_have_disjoint_controllers() {
        let g = synth_co_graph(&SynthCoConfig { collision_pairs: 5, ..Default::default() });
        let groups = collision_groups(g.kg.entities().labels().iter().map(String::as_str));
        assert_eq!(groups.len(), 5);
        let control = g.kg.relation(rel::CONTROL).unwrap();
        for (a, b) in &g.collision_pairs {
            let ca: HashSet<EntityId> = g.kg.heads(control, g.kg.entity(a).unwrap()).unwrap().iter().copied().collect();
            let cb: HashSet<EntityId> = g.kg.heads(control, g.kg.entity(b).unwrap()).unwrap().iter().copied().collect();
            assert!(ca.is_disjoint(&cb));
        }
    }

    #[test]
    fn deterministic() {
        let c = SynthCoConfig { seed: 9, ..Default::default() };
        assert_eq!(synth_co_graph(&c).kg.to_tsv(), synth_co_graph(&c).kg.to_tsv());
    }
}
