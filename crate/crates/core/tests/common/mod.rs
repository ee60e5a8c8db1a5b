//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use kgalign::kg::{EmbeddingTable, EntityId, KnowledgeGraph, Triple};
use kgalign::kge::score;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn words(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in s.split_whitespace() {
        let mut w: String = raw.to_lowercase();
        while let Some(c) = w.chars().last() {
            if ",.;:!?".contains(c) {
                w.pop();
            } else {
                break;
            }
        }
        if !w.is_empty() {
            out.push(w);
        }
    }
    out
}

/// Every contiguous n-gram, joined with a separator no token contains.
pub fn grams(tokens: &[String], n: usize) -> Vec<String> {
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let mut i = 0;
    while i + n <= tokens.len() {
        out.push(tokens[i..i + n].join("\u{1}"));
        i += 1;
    }
    out
}

/// Multiset intersection size by repeated removal.
pub fn overlap(pred: &[String], reference: &[String]) -> usize {
    let mut pool: Vec<&String> = reference.iter().collect();
    let mut hits = 0;
    for p in pred {
        if let Some(pos) = pool.iter().position(|r| *r == p) {
            pool.remove(pos);
            hits += 1;
        }
    }
    hits
}

pub fn f1(hits: usize, np: usize, nr: usize) -> f64 {
    if hits == 0 || np == 0 || nr == 0 {
        return 0.0;
    }
    let p = hits as f64 / np as f64;
    let r = hits as f64 / nr as f64;
    2.0 * p * r / (p + r)
}

pub fn em(p: &str, r: &str) -> f64 {
    if words(p) == words(r) {
        1.0
    } else {
        0.0
    }
}

pub fn token_f1(p: &str, r: &str) -> f64 {
    let (p, r) = (words(p), words(r));
    if p.is_empty() && r.is_empty() {
        return 1.0;
    }
    f1(overlap(&p, &r), p.len(), r.len())
}

pub fn rouge_n(p: &str, r: &str, n: usize) -> f64 {
    let (p, r) = (grams(&words(p), n), grams(&words(r), n));
    f1(overlap(&p, &r), p.len(), r.len())
}

/// Quadratic LCS table, `t[i][j]` = LCS of `a[..i]`, `b[..j]`.
pub fn lcs(a: &[String], b: &[String]) -> Vec<Vec<usize>> {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 0..a.len() {
        for j in 0..b.len() {
            t[i + 1][j + 1] = if a[i] == b[j] { t[i][j] + 1 } else { std::cmp::max(t[i][j + 1], t[i + 1][j]) };
        }
    }
    t
}

pub fn rouge_l(p: &str, r: &str) -> f64 {
    let (p, r) = (words(p), words(r));
    f1(lcs(&p, &r)[p.len()][r.len()], p.len(), r.len())
}

/// Reference positions on one LCS; ties move left along the candidate.
fn lcs_hits(reference: &[String], cand: &[String]) -> Vec<usize> {
    let t = lcs(reference, cand);
    let mut i = reference.len();
    let mut j = cand.len();
    let mut hits = Vec::new();
    loop {
        if i == 0 || j == 0 {
            break;
        }
        if reference[i - 1] == cand[j - 1] {
            hits.push(i - 1);
            i -= 1;
            j -= 1;
        } else if t[i][j] == t[i][j - 1] {
            j -= 1;
        } else {
            i -= 1;
        }
    }
    hits
}

pub fn rouge_lsum(p: &str, r: &str) -> f64 {
    let split = |s: &str| -> Vec<Vec<String>> { s.lines().map(words).filter(|w| !w.is_empty()).collect() };
    let (ps, rs) = (split(p), split(r));
    let np: usize = ps.iter().map(|s| s.len()).sum();
    let nr: usize = rs.iter().map(|s| s.len()).sum();
    let mut hits = 0;
    for rseg in &rs {
        let mut seen = std::collections::BTreeSet::new();
        for pseg in &ps {
            seen.extend(lcs_hits(rseg, pseg));
        }
        hits += seen.len();
    }
    f1(hits, np, nr)
}

pub fn bleu(p: &str, r: &str, k: usize) -> f64 {
    let (p, r) = (words(p), words(r));
    if p.is_empty() {
        return 0.0;
    }
    let bp = if p.len() > r.len() { 1.0 } else { (1.0 - r.len() as f64 / p.len() as f64).exp() };
    let mut logs = 0.0;
    for n in 1..=k {
        let pg = grams(&p, n);
        let hits = overlap(&pg, &grams(&r, n));
        let prec = if n > 1 && hits == 0 {
            1.0 / (pg.len() + 1) as f64
        } else if pg.is_empty() {
            0.0
        } else {
            hits as f64 / pg.len() as f64
        };
        if prec == 0.0 {
            return 0.0;
        }
        logs += prec.ln();
    }
    bp * (logs / k as f64).exp()
}

pub fn rwb(p: &str, r: &str) -> f64 {
    (4.0 * bleu(p, r, 1) + 3.0 * bleu(p, r, 2) + 2.0 * bleu(p, r, 3) + bleu(p, r, 4)) / 10.0
}

/// Short strings over a small vocabulary, with case, punctuation and line
/// breaks mixed in.
pub fn random_pairs(n: usize, seed: u64) -> Vec<(String, String)> {
    const VOCAB: [&str; 9] = ["a", "b", "c", "d", "SPA", "Rossi", "e", "figli", "x"];
    const TAILS: [&str; 4] = ["", ",", ".", "?"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let one = |rng: &mut ChaCha8Rng| {
        let len = rng.random_range(0..9);
        let mut s = String::new();
        for i in 0..len {
            if i > 0 {
                s.push_str(if rng.random_bool(0.15) { "\n" } else { " " });
            }
            let w = VOCAB[rng.random_range(0..VOCAB.len())];
            s.push_str(&if rng.random_bool(0.2) { w.to_uppercase() } else { w.to_owned() });
            s.push_str(TAILS[rng.random_range(0..TAILS.len())]);
        }
        s
    };
    (0..n).map(|_| (one(&mut rng), one(&mut rng))).collect()
}

/// Random tree over `n` entities: node `i > 0` hangs off a uniformly chosen
/// earlier node through one of `relations` relations.
pub fn random_tree(n: usize, relations: usize, seed: u64) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kg = KnowledgeGraph::new();
    kg.add_entity("e0");
    for i in 1..n {
        let parent = rng.random_range(0..i);
        let r = rng.random_range(0..relations);
        kg.insert(&format!("e{parent}"), &format!("r{r}"), &format!("e{i}"));
    }
    kg
}

/// Filtered ranks by scoring and sorting every corruption.
pub fn brute_force_ranks(kg: &KnowledgeGraph, table: &EmbeddingTable, triples: &[Triple]) -> Vec<(usize, usize)> {
    let known: HashMap<Triple, ()> = kg.triples().iter().chain(triples).map(|t| (*t, ())).collect();
    let rank = |t: &Triple, tail: bool| {
        let truth = score(t.head, t.relation, t.tail, table).unwrap();
        let mut scores: Vec<f64> = (0..kg.num_entities())
            .map(|c| if tail { Triple { tail: EntityId(c), ..*t } } else { Triple { head: EntityId(c), ..*t } })
            .filter(|c| !known.contains_key(c))
            .map(|c| score(c.head, c.relation, c.tail, table).unwrap())
            .collect();
        scores.sort_by(f64::total_cmp);
        1 + scores.partition_point(|&s| s <= truth)
    };
    triples.iter().map(|t| (rank(t, false), rank(t, true))).collect()
}

pub mod grad {
    use kgalign::lm::{backward, example_loss, Example, GradScope, LmConfig, LmParams, ENT};
    use kgalign::projection::{project, project_gradients, ProjectionParams, ProjectionSpec};
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub const STEP: f64 = 1e-6;

    /// Relative error with a 1e-3 magnitude floor: gradients that vanish
    /// structurally (e.g. key biases, which softmax ignores) are compared at
    /// an absolute 1e-7, well above finite-difference round-off.
    pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
    }

    pub fn central<F: FnMut(f64) -> f64>(x: f64, mut f: F) -> f64 {
        (f(x + STEP) - f(x - STEP)) / (2.0 * STEP)
    }

    pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
        Array1::from_shape_simple_fn(n, || rng.random_range(-1.0..1.0))
    }

    /// Worst relative error over every parameter and input coordinate of
    /// `cases` random projections, with a random upstream gradient.
    pub fn projection_error(spec: &ProjectionSpec, cases: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut worst: f64 = 0.0;
        for case in 0..cases {
            let mut params = ProjectionParams::init(spec, case as u64).unwrap();
            for l in &mut params.layers {
                l.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            }
            let x = random_vec(&mut rng, spec.input_dim);
            let up = random_vec(&mut rng, spec.output_dim);
            let objective = |p: &ProjectionParams, x: &Array1<f64>| project(spec, p, x.view()).unwrap().dot(&up);
            let g = project_gradients(spec, &params, x.view(), up.view()).unwrap();
            for (i, a) in g.params.values().enumerate() {
                let orig = params.values().nth(i).unwrap();
                let n = central(orig, |v| {
                    let mut p = params.clone();
                    *p.values_mut().nth(i).unwrap() = v;
                    objective(&p, &x)
                });
                worst = worst.max(rel_err(a, n));
            }
            for i in 0..x.len() {
                let n = central(x[i], |v| {
                    let mut xx = x.clone();
                    xx[i] = v;
                    objective(&params, &xx)
                });
                worst = worst.max(rel_err(g.input[i], n));
            }
        }
        worst
    }

    /// `d_q = 8`, one layer, `V = 16`, weights perturbed away from the
    /// near-linear init regime so every path matters.
    pub fn tiny_lm(seed: u64) -> LmParams {
        let mut params =
            LmParams::init(&LmConfig { vocab_size: 16, model_dim: 8, layers: 1, heads: 2, context_len: 10, seed })
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for (_, mut t) in params.tensors_mut() {
            t.mapv_inplace(|v| v + rng.random_range(-0.4..0.4));
        }
        params
    }

    pub fn lm_example(rng: &mut ChaCha8Rng, with_prefix: bool) -> Example {
        let len = 7;
        let mut tokens: Vec<u32> = (0..len).map(|_| rng.random_range(5..16)).collect();
        let prefix = with_prefix.then(|| {
            tokens[1] = ENT;
            random_vec(rng, 8)
        });
        let loss_mask = (0..len).map(|i| i >= 3).collect();
        Example { tokens, loss_mask, prefix }
    }

    /// Worst relative error over every model parameter, and over the prefix
    /// vector when the example carries one.
    pub fn lm_error(seed: u64, with_prefix: bool) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(99 + seed);
        let params = tiny_lm(seed);
        let ex = lm_example(&mut rng, with_prefix);
        let g = backward(&params, &ex, GradScope::All).unwrap();
        assert!((g.loss - example_loss(&params, &ex).unwrap()).abs() < 1e-12);
        let grads = g.params.tensors();
        let mut worst: f64 = 0.0;
        for (ti, (_, t)) in params.tensors().iter().enumerate() {
            for k in 0..t.len() {
                let orig = *t.iter().nth(k).unwrap();
                let n = central(orig, |v| {
                    let mut p = params.clone();
                    *p.tensors_mut()[ti].1.iter_mut().nth(k).unwrap() = v;
                    example_loss(&p, &ex).unwrap()
                });
                worst = worst.max(rel_err(*grads[ti].1.iter().nth(k).unwrap(), n));
            }
        }
        if let (Some(pg), Some(base)) = (&g.prefix, &ex.prefix) {
            for i in 0..base.len() {
                let n = central(base[i], |v| {
                    let mut e = ex.clone();
                    e.prefix.as_mut().unwrap()[i] = v;
                    example_loss(&params, &e).unwrap()
                });
                worst = worst.max(rel_err(pg[i], n));
            }
        }
        worst
    }
}

pub mod fixture {
    use kgalign::infusion::{tokenizer_corpus, Infusion, DEFAULT_SYSTEM};
    use kgalign::kg::{EmbeddingTable, KnowledgeGraph};
    use kgalign::kge::{train_transe, TranseConfig};
    use kgalign::lm::{LmConfig, LmParams, Tokenizer};
    use kgalign::projection::{ProjectionSpec, Variant};
    use kgalign::qa::{co_templates, generate_qa, synth_co_graph, Mode, QaConfig, QaExample, SynthCoConfig};

    /// A two-component CO graph with its open-mode QA, a tiny model and
    /// a TransE table.
    pub struct Fixture {
        pub kg: KnowledgeGraph,
        pub examples: Vec<QaExample>,
        pub tokenizer: Tokenizer,
        pub lm: LmParams,
        pub table: EmbeddingTable,
        pub spec: ProjectionSpec,
    }

    impl Fixture {
        pub fn new() -> Self {
            let g = synth_co_graph(&SynthCoConfig { n_components: 2, collision_pairs: 1, seed: 3, ..Default::default() });
            let templates: Vec<_> = co_templates().into_iter().filter(|t| t.mode == Mode::Open).collect();
            let cfg = QaConfig { max_answers: 3, templates_per_fact: Some(1), ..Default::default() };
            let (examples, _) = generate_qa(&g.kg, &templates, &cfg).unwrap();
            let labels = g.kg.entities().labels().to_vec();
            let tokenizer = Tokenizer::build(tokenizer_corpus(DEFAULT_SYSTEM, &examples, &labels));
            let lm = LmParams::init(&LmConfig {
                vocab_size: tokenizer.vocab_size(),
                model_dim: 8,
                layers: 1,
                heads: 2,
                context_len: 40,
                seed: 0,
            })
            .unwrap();
            let table = train_transe(&g.kg, &TranseConfig { dim: 6, epochs: 20, ..Default::default() }).unwrap();
            Self { kg: g.kg, examples, tokenizer, lm, table, spec: ProjectionSpec::new(Variant::Linear, 6, 8) }
        }

        pub fn ctx(&self) -> Infusion<'_> {
            Infusion { tokenizer: &self.tokenizer, system: DEFAULT_SYSTEM, table: &self.table, spec: &self.spec }
        }

        pub fn labels(&self) -> Vec<String> {
            self.kg.entities().labels().to_vec()
        }
    }
}

/// sha256 of every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &std::path::Path) -> std::collections::BTreeMap<String, String> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let key = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(key, kgalign::infusion::digest_bytes(&std::fs::read(&p).unwrap()));
            }
        }
    }
    out
}

pub fn config(name: &str) -> kgalign::experiment::ExperimentConfig {
    let path = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    kgalign::experiment::ExperimentConfig::load(path).unwrap()
}
