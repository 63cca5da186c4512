//! Independent reference implementations shared by the module suites and
//! the acceptance target.

use std::collections::BTreeSet;

use metatrain::finetune::Tag;
use metatrain::smlmt::Episode;
use rand::Rng;

/// Sentences of the four-city example episode with their class word; the
/// last one is the query.
pub const CITY_TABLE: [(&str, &str); 9] = [
    ("I visited Tokyo last summer.", "Tokyo"),
    ("The sushi festival in Tokyo was unforgettable.", "Tokyo"),
    ("The Big Ben is in London.", "London"),
    ("I caught the tube at London yesterday.", "London"),
    ("The Seine runs through Paris.", "Paris"),
    ("She admired the art at the Louvre in Paris.", "Paris"),
    ("The Forbidden City is in Beijing.", "Beijing"),
    ("I sampled Peking duck in Beijing.", "Beijing"),
    (
        "I plan to travel to Tokyo to see the cherry blossoms.",
        "Tokyo",
    ),
];

/// True when any class word survives unmasked in a support or query item.
pub fn leaks(ep: &Episode) -> bool {
    ep.support
        .iter()
        .chain(&ep.query)
        .any(|i| i.tokens.iter().any(|t| ep.class_words.contains(t)))
}

/// Span decoder written independently of the library: a span starts at every
/// B-X and at every I-X not preceded by a tag of class X, and extends over
/// the following I-X tags.
pub fn oracle_spans(t: &[Tag]) -> BTreeSet<(String, usize, usize)> {
    let class = |i: usize| t[i].class().map(str::to_string);
    let mut out = BTreeSet::new();
    for i in 0..t.len() {
        let starts = match &t[i] {
            Tag::B(_) => true,
            Tag::I(c) => i == 0 || class(i - 1).as_deref() != Some(c.as_str()),
            Tag::O => false,
        };
        if starts {
            let c = class(i).unwrap();
            let mut j = i + 1;
            while j < t.len() && t[j] == Tag::I(c.clone()) {
                j += 1;
            }
            out.insert((c, i, j));
        }
    }
    out
}

/// Micro-F1 by set intersection over all sequences.
pub fn oracle_f1(gold: &[Vec<Tag>], pred: &[Vec<Tag>]) -> f64 {
    let (mut g, mut p, mut k) = (0usize, 0usize, 0usize);
    for (a, b) in gold.iter().zip(pred) {
        let (sa, sb) = (oracle_spans(a), oracle_spans(b));
        g += sa.len();
        p += sb.len();
        k += sa.intersection(&sb).count();
    }
    match (g, p) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ if k == 0 => 0.0,
        _ => {
            let (pr, rc) = (k as f64 / p as f64, k as f64 / g as f64);
            2.0 * pr * rc / (pr + rc)
        }
    }
}

pub fn random_tags(rng: &mut impl Rng, len: usize) -> Vec<Tag> {
    (0..len)
        .map(|_| {
            let c = ["PER", "LOC"][rng.random_range(0..2)].to_string();
            match rng.random_range(0..3) {
                0 => Tag::O,
                1 => Tag::B(c),
                _ => Tag::I(c),
            }
        })
        .collect()
}

/// Entropy-based effective rank straight from its definition, computed as
/// `ln S - (sum s ln s) / S` rather than from normalised probabilities.
pub fn oracle_effective_rank(sigma: &[f64]) -> f64 {
    let s: f64 = sigma.iter().sum();
    let t: f64 = sigma
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum();
    (s.ln() - t / s).exp()
}
