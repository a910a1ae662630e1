//! Brute-force reference implementations of the evaluation metrics and a
//! seeded generator of small random prediction sets.
//!
//! Everything here works on plain tuples and nested loops so it shares no
//! code path with `natpred_core::evaluation`.

#![allow(dead_code)]

use std::collections::BTreeMap;

use natpred_core::evaluation::{
    accuracy, confusion_pairs, cross_model_cases, macro_f1, precision_at_k, region_lift,
    strata_report, unknown_rate, Prediction, PredictionFlags,
};
use natpred_core::rng::SplitMix64;
use natpred_core::taxonomy::{
    assign_frequency_bins, FrequencyBin, Granularity, LabelSpace, Taxonomy,
};

pub const TOLERANCE: f64 = 1e-12;

/// One random evaluation problem.
pub struct Instance {
    pub classes: Vec<String>,
    pub predictions: Vec<Prediction>,
    pub other: Vec<Prediction>,
    pub train_counts: BTreeMap<String, usize>,
}

fn pick<'a>(rng: &mut SplitMix64, xs: &'a [String]) -> &'a String {
    &xs[rng.below(xs.len() as u64) as usize]
}

fn random_ranked(rng: &mut SplitMix64, classes: &[String]) -> Vec<String> {
    let len = rng.below(6) as usize;
    let mut pool = classes.to_vec();
    rng.shuffle(&mut pool);
    pool.truncate(len);
    pool
}

fn random_prediction(
    rng: &mut SplitMix64,
    name: String,
    truth: &str,
    classes: &[String],
) -> Prediction {
    let mut ranked = random_ranked(rng, classes);
    // push some mass onto the correct answer so accuracy is not always tiny
    if !ranked.is_empty() && rng.below(3) == 0 {
        ranked.retain(|l| l != truth);
        ranked.insert(0, truth.to_string());
    }
    let flagged = !ranked.is_empty() && rng.below(20) == 0;
    Prediction {
        name,
        true_label: truth.to_string(),
        predicted: ranked.clone(),
        scores: None,
        strategy: "random".into(),
        flags: PredictionFlags {
            unknown: ranked.is_empty() || flagged,
            parse_error: false,
            retries_used: 0,
        },
    }
}

/// At most 200 predictions over at most 10 classes, drawn mostly from a
/// few regions so same-region confusions are common.
pub fn random_instance(tax: &Taxonomy, seed: u64) -> Instance {
    let mut rng = SplitMix64::new(seed);
    let regions = tax.label_space(Granularity::Region).labels().to_vec();
    let mut pool: Vec<String> = Vec::new();
    for _ in 0..1 + rng.below(3) {
        let region = pick(&mut rng, &regions).clone();
        pool.extend(tax.nationalities_of(&region).iter().map(|s| s.to_string()));
    }
    let all = tax.label_space(Granularity::Nationality).labels().to_vec();
    let n_classes = 2 + rng.below(9) as usize;
    while pool.len() < n_classes {
        pool.push(pick(&mut rng, &all).clone());
    }
    pool.sort();
    pool.dedup();
    rng.shuffle(&mut pool);
    let mut classes: Vec<String> = pool.into_iter().take(n_classes).collect();
    classes.sort();

    let n = 1 + rng.below(200) as usize;
    let weights: Vec<u64> = classes.iter().map(|_| 1 + rng.below(10)).collect();
    let total: u64 = weights.iter().sum();
    let mut predictions = Vec::with_capacity(n);
    let mut other = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng.below(total);
        let mut t = 0;
        while r >= weights[t] {
            r -= weights[t];
            t += 1;
        }
        let name = format!("name{}", rng.below(n as u64 / 2 + 1));
        predictions.push(random_prediction(
            &mut rng,
            name.clone(),
            &classes[t],
            &classes,
        ));
        other.push((i, random_prediction(&mut rng, name, &classes[t], &classes)));
    }
    // second source in a shuffled order: alignment must not depend on position
    rng.shuffle(&mut other);
    let other = other.into_iter().map(|(_, p)| p).collect();
    let train_counts = classes
        .iter()
        .map(|c| (c.clone(), 1 + rng.below(6) as usize))
        .collect();
    Instance {
        classes,
        predictions,
        other,
        train_counts,
    }
}

fn is_unknown(p: &Prediction) -> bool {
    p.flags.unknown || p.predicted.is_empty()
}

fn top1(p: &Prediction) -> Option<&str> {
    if is_unknown(p) {
        None
    } else {
        Some(p.predicted[0].as_str())
    }
}

pub fn oracle_accuracy(ps: &[Prediction]) -> f64 {
    let mut hits = 0;
    for p in ps {
        if top1(p) == Some(p.true_label.as_str()) {
            hits += 1;
        }
    }
    hits as f64 / ps.len() as f64
}

pub fn oracle_precision_at(ps: &[Prediction], k: usize) -> f64 {
    let mut sum = 0.0;
    for p in ps {
        let mut indicator = 0.0;
        if !is_unknown(p) {
            for (i, l) in p.predicted.iter().enumerate() {
                if i < k && *l == p.true_label {
                    indicator = 1.0;
                }
            }
        }
        sum += indicator;
    }
    sum / ps.len() as f64
}

pub fn oracle_class_f1(ps: &[Prediction], class: &str) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for p in ps {
        let truth = p.true_label == class;
        let said = top1(p) == Some(class);
        if truth && said {
            tp += 1.0;
        } else if said {
            fp += 1.0;
        } else if truth {
            fn_ += 1.0;
        }
    }
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn oracle_macro_f1(ps: &[Prediction], classes: &[String]) -> f64 {
    classes.iter().map(|c| oracle_class_f1(ps, c)).sum::<f64>() / classes.len() as f64
}

/// Bin by counting how many labels outrank each one.
pub fn oracle_bin(counts: &BTreeMap<String, usize>, label: &str) -> usize {
    let mine = counts[label];
    let rank = counts
        .iter()
        .filter(|(l, c)| **c > mine || (**c == mine && l.as_str() < label))
        .count();
    (3 * rank / counts.len()).min(2)
}

pub fn oracle_region_lift(ps: &[Prediction], tax: &Taxonomy) -> (usize, usize, usize) {
    let (mut a, mut b, mut c) = (0, 0, 0);
    for p in ps {
        match top1(p) {
            Some(t) if t == p.true_label => a += 1,
            Some(t) if tax.region_of(t) == tax.region_of(&p.true_label) => b += 1,
            _ => c += 1,
        }
    }
    (a, b, c)
}

pub fn oracle_confusion_pairs(
    ps: &[Prediction],
    tax: &Taxonomy,
    top_n: usize,
) -> Vec<(String, String, usize, bool)> {
    let mut tally: Vec<(String, String, usize)> = Vec::new();
    for p in ps {
        let Some(t) = top1(p) else { continue };
        if t == p.true_label {
            continue;
        }
        match tally
            .iter_mut()
            .find(|(a, b, _)| *a == p.true_label && b == t)
        {
            Some(entry) => entry.2 += 1,
            None => tally.push((p.true_label.clone(), t.to_string(), 1)),
        }
    }
    // selection sort on (count desc, true asc, pred asc)
    let mut out = Vec::new();
    while !tally.is_empty() && out.len() < top_n {
        let mut best = 0;
        for i in 1..tally.len() {
            let (x, y) = (&tally[i], &tally[best]);
            if x.2 > y.2 || (x.2 == y.2 && (x.0 < y.0 || (x.0 == y.0 && x.1 < y.1))) {
                best = i;
            }
        }
        let (a, b, n) = tally.remove(best);
        let same = tax.region_of(&a) == tax.region_of(&b);
        out.push((a, b, n, same));
    }
    out
}

fn close(what: &str, got: f64, want: f64, errors: &mut Vec<String>) {
    if (got - want).abs() > TOLERANCE {
        errors.push(format!("{what}: library {got} vs oracle {want}"));
    }
}

/// Runs every metric against its oracle; returns a description of each
/// disagreement.
pub fn check_instance(tax: &Taxonomy, inst: &Instance) -> Vec<String> {
    let ps = &inst.predictions;
    let space = LabelSpace::new(inst.classes.iter().cloned(), Granularity::Nationality);
    let mut errors = Vec::new();

    close(
        "accuracy",
        accuracy(ps).unwrap(),
        oracle_accuracy(ps),
        &mut errors,
    );
    for k in 1..=6 {
        close(
            &format!("P@{k}"),
            precision_at_k(ps, k).unwrap(),
            oracle_precision_at(ps, k),
            &mut errors,
        );
    }
    let unknown = ps.iter().filter(|p| is_unknown(p)).count() as f64 / ps.len() as f64;
    close(
        "unknown rate",
        unknown_rate(ps).unwrap(),
        unknown,
        &mut errors,
    );
    close(
        "macro-F1",
        macro_f1(ps, &space).unwrap(),
        oracle_macro_f1(ps, &inst.classes),
        &mut errors,
    );

    let bins = assign_frequency_bins(&inst.train_counts, &space).unwrap();
    for c in &inst.classes {
        if FrequencyBin::ALL[oracle_bin(&inst.train_counts, c)] != bins.get(c).unwrap() {
            errors.push(format!("bin of {c}"));
        }
    }
    let strata = strata_report(ps, &space, &bins).unwrap();
    let mut bin_acc = [None; 3];
    for b in 0..3 {
        let members: Vec<&String> = inst
            .classes
            .iter()
            .filter(|c| oracle_bin(&inst.train_counts, c) == b)
            .collect();
        let subset: Vec<Prediction> = ps
            .iter()
            .filter(|p| oracle_bin(&inst.train_counts, &p.true_label) == b)
            .cloned()
            .collect();
        let got = &strata.bins[b];
        if got.n != subset.len() {
            errors.push(format!("bin {b} size"));
        }
        if subset.is_empty() {
            if got.accuracy.is_some() || got.macro_f1.is_some() {
                errors.push(format!("bin {b} should be empty"));
            }
            continue;
        }
        let acc = oracle_accuracy(&subset);
        bin_acc[b] = Some(acc);
        close(
            &format!("bin {b} accuracy"),
            got.accuracy.unwrap_or(f64::NAN),
            acc,
            &mut errors,
        );
        let f1 = members.iter().map(|m| oracle_class_f1(ps, m)).sum::<f64>() / members.len() as f64;
        close(
            &format!("bin {b} macro-F1"),
            got.macro_f1.unwrap_or(f64::NAN),
            f1,
            &mut errors,
        );
    }
    match (
        bin_acc[0],
        bin_acc[2],
        strata.delta_head_tail,
        strata.drop_percent,
    ) {
        (Some(h), Some(t), Some(d), Some(drop)) => {
            close("delta", d, h - t, &mut errors);
            close(
                "drop",
                drop,
                if h == 0.0 { 0.0 } else { 100.0 * (h - t) / h },
                &mut errors,
            );
        }
        (None, _, None, None) | (_, None, None, None) => {}
        _ => errors.push("delta presence".into()),
    }

    let lift = region_lift(ps, tax).unwrap();
    let (a, b, c) = oracle_region_lift(ps, tax);
    if (lift.nationality_correct, lift.region_only, lift.both_wrong) != (a, b, c) {
        errors.push(format!(
            "region lift counts {:?} vs {:?}",
            (lift.nationality_correct, lift.region_only, lift.both_wrong),
            (a, b, c)
        ));
    }
    let n = ps.len() as f64;
    close(
        "region-only rate",
        lift.region_only_rate,
        b as f64 / n,
        &mut errors,
    );
    close(
        "both-wrong rate",
        lift.both_wrong_rate,
        c as f64 / n,
        &mut errors,
    );
    close(
        "region accuracy",
        lift.region_accuracy,
        (a + b) as f64 / n,
        &mut errors,
    );
    close(
        "lift partition",
        lift.nationality_correct_rate + lift.region_only_rate + lift.both_wrong_rate,
        1.0,
        &mut errors,
    );

    let pairs = confusion_pairs(ps, tax, 10).unwrap();
    let want = oracle_confusion_pairs(ps, tax, 10);
    let got: Vec<(String, String, usize, bool)> = pairs
        .pairs
        .iter()
        .map(|p| {
            (
                p.true_label.clone(),
                p.predicted.clone(),
                p.count,
                p.same_region,
            )
        })
        .collect();
    if got != want {
        errors.push(format!("confusion pairs {got:?} vs {want:?}"));
    }
    match pairs.region_agreement {
        Some(r) => close(
            "region agreement",
            r,
            want.iter().filter(|p| p.3).count() as f64 / want.len() as f64,
            &mut errors,
        ),
        None if !want.is_empty() => errors.push("region agreement missing".into()),
        None => {}
    }

    let cases = cross_model_cases(ps, &inst.other, tax).unwrap();
    if cases.total() != ps.len() {
        errors.push("cross-model buckets do not cover the set".into());
    }
    let correct_b: usize = {
        // a name+label key may repeat; compare multisets of correctness per key
        let mut by_key: BTreeMap<(&str, &str), (usize, usize)> = BTreeMap::new();
        for p in &inst.other {
            let e = by_key.entry((&p.name, &p.true_label)).or_default();
            e.0 += 1;
            e.1 += usize::from(top1(p) == Some(p.true_label.as_str()));
        }
        by_key.values().map(|v| v.1).sum()
    };
    if cases.both_correct.len() + cases.a_wrong_b_correct.len() != correct_b {
        errors.push("cross-model B-correct count".into());
    }
    let correct_a = ps
        .iter()
        .filter(|p| top1(p) == Some(p.true_label.as_str()))
        .count();
    if cases.both_correct.len() + cases.a_correct_b_wrong.len() != correct_a {
        errors.push("cross-model A-correct count".into());
    }
    errors
}
