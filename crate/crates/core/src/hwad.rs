//! Hybrid weight adjustment over size-comparison rules.
//!
//! Each rule is checked per image by comparing the mean box area of its
//! subject class with the mean box area of its object class. The dataset
//! counts feed a Bayes update whose posterior is blended with the rule's
//! original LLM weight. Per-detection logits are then nudged up or down in
//! proportion to the current rule weights.
//!
//! The likelihoods are `P(E|T) = sat / n` and `P(E|¬T) = not_sat / n`, so
//! they always sum to one. That is not a conventional likelihood model, but
//! it is the update this layer is defined by.

use serde::Serialize;

use crate::detection::{ClassId, DetectionSet, Vocabulary};
use crate::error::{Error, Result};
use crate::geometry::area;
use crate::knowledge::{BoundRule, KnowledgeGraph};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleOutcome {
    Satisfied,
    Violated,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RuleStats {
    /// Images containing the subject class.
    pub c_obj: usize,
    pub c_sat: usize,
    pub c_not_sat: usize,
}

impl RuleStats {
    pub fn evidence(&self) -> usize {
        self.c_sat + self.c_not_sat
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PosteriorUpdate<T> {
    pub likelihood_sat: T,
    pub likelihood_not: T,
    pub evidence: T,
    pub posterior: T,
}

fn mean_area<T: Scalar>(ds: &DetectionSet<T>, class: ClassId) -> Option<T> {
    let (sum, n) = ds
        .detections
        .iter()
        .filter(|d| d.label == class)
        .fold((T::zero(), 0usize), |(s, n), d| (s + area(&d.bbox), n + 1));
    (n > 0).then(|| sum / T::from_count(n))
}

pub fn evaluate_rule_on_image<T: Scalar>(rule: &BoundRule<T>, ds: &DetectionSet<T>) -> RuleOutcome {
    match (mean_area(ds, rule.subject), mean_area(ds, rule.object)) {
        (Some(s), Some(o)) if rule.relation.holds(s, o) => RuleOutcome::Satisfied,
        (Some(_), Some(_)) => RuleOutcome::Violated,
        _ => RuleOutcome::NotApplicable,
    }
}

/// Counts over the dataset. Images with the subject but no object add to
/// `c_obj` only.
pub fn accumulate_rule_stats<T: Scalar>(rule: &BoundRule<T>, dataset: &[DetectionSet<T>]) -> RuleStats {
    let mut stats = RuleStats::default();
    for ds in dataset {
        if !ds.has_class(rule.subject) {
            continue;
        }
        stats.c_obj += 1;
        match evaluate_rule_on_image(rule, ds) {
            RuleOutcome::Satisfied => stats.c_sat += 1,
            RuleOutcome::Violated => stats.c_not_sat += 1,
            RuleOutcome::NotApplicable => {}
        }
    }
    stats
}

pub fn posterior_update<T: Scalar>(stats: RuleStats, prior: T) -> Result<PosteriorUpdate<T>> {
    if !prior.in_unit_interval() {
        return Err(Error::WeightOutOfRange {
            context: "prior".into(),
            value: prior.as_f64(),
        });
    }
    let n = stats.evidence();
    if n == 0 {
        return Err(Error::NoEvidence);
    }
    let n = T::from_count(n);
    let likelihood_sat = T::from_count(stats.c_sat) / n;
    let likelihood_not = T::from_count(stats.c_not_sat) / n;
    let evidence = likelihood_sat * prior + likelihood_not * (T::one() - prior);
    if evidence <= T::zero() {
        return Err(Error::DegenerateEvidence);
    }
    let posterior = (likelihood_sat * prior / evidence).clamp_unit();
    Ok(PosteriorUpdate {
        likelihood_sat,
        likelihood_not,
        evidence,
        posterior,
    })
}

/// `(1 - alpha) * initial + alpha * posterior`.
pub fn blend_weight<T: Scalar>(initial_llm_weight: T, posterior: T, alpha: T) -> T {
    ((T::one() - alpha) * initial_llm_weight + alpha * posterior).clamp_unit()
}

/// Record of one rule's update, kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleUpdate<T> {
    pub rule_index: usize,
    pub stats: RuleStats,
    pub prior: T,
    pub posterior: Option<T>,
    pub weight: T,
}

/// One pass of the dataset-level update. Rules without evidence keep their
/// weight; the input graph is left untouched.
pub fn run_hwad_update_cycle<T: Scalar>(
    kg: &KnowledgeGraph<T>,
    vocab: &Vocabulary,
    dataset: &[DetectionSet<T>],
    alpha: T,
) -> Result<(KnowledgeGraph<T>, Vec<RuleUpdate<T>>)> {
    if !alpha.in_unit_interval() {
        return Err(Error::Config(format!("update factor {alpha} outside [0, 1]")));
    }
    let mut next = kg.clone();
    let mut log = Vec::with_capacity(kg.rules().len());
    for rule in kg.bind(vocab)? {
        let stats = accumulate_rule_stats(&rule, dataset);
        let prior = rule.weight;
        let (posterior, weight) = match posterior_update(stats, prior) {
            Ok(u) => {
                let initial = kg.rules()[rule.rule_index].initial_llm_weight;
                (Some(u.posterior), blend_weight(initial, u.posterior, alpha))
            }
            Err(Error::NoEvidence) => (None, prior),
            Err(e) => return Err(e),
        };
        *next.weight_mut(rule.rule_index) = weight;
        log.push(RuleUpdate {
            rule_index: rule.rule_index,
            stats,
            prior,
            posterior,
            weight,
        });
    }
    Ok((next, log))
}

/// Adjusts each detection's own-class logit by every applicable rule whose
/// subject is the detection's class: `1 + weight * gamma` on agreement,
/// `1 - weight * gamma` on violation. The detection's own area is compared
/// against the mean area of the object class in the same image.
pub fn apply_hwad<T: Scalar>(
    ds: &DetectionSet<T>,
    kg: &KnowledgeGraph<T>,
    vocab: &Vocabulary,
    gamma: T,
) -> Result<DetectionSet<T>> {
    if !(gamma >= T::zero()) {
        return Err(Error::Config(format!("hwad gamma {gamma} is negative")));
    }
    let rules = kg.bind(vocab)?;
    apply_bound_rules(ds, &rules, gamma)
}

pub fn apply_bound_rules<T: Scalar>(
    ds: &DetectionSet<T>,
    rules: &[BoundRule<T>],
    gamma: T,
) -> Result<DetectionSet<T>> {
    if gamma == T::zero() {
        return Ok(ds.clone());
    }
    // Means come from the input set so the result is independent of
    // detection order.
    let object_means: Vec<Option<T>> = rules.iter().map(|r| mean_area(ds, r.object)).collect();
    let mut out = ds.clone();
    for d in &mut out.detections {
        let size = area(&d.bbox);
        let mut factor = T::one();
        for (rule, mean) in rules.iter().zip(&object_means) {
            let Some(mean) = *mean else { continue };
            if rule.subject != d.label {
                continue;
            }
            let step = rule.weight * gamma;
            factor = factor
                * if rule.relation.holds(size, mean) {
                    T::one() + step
                } else {
                    T::one() - step
                };
        }
        if factor != T::one() {
            d.scale_own_logit(factor)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::Detection;
    use crate::geometry::BBox;
    use crate::knowledge::{parse_knowledge_graph, Relation};
    use approx::assert_abs_diff_eq;

    const CAR: ClassId = ClassId(2);
    const BUS: ClassId = ClassId(3);

    fn rule(weight: f64) -> BoundRule<f64> {
        BoundRule {
            rule_index: 0,
            subject: CAR,
            relation: Relation::IsSmallerThan,
            object: BUS,
            weight,
        }
    }

    fn image(items: &[(ClassId, [f64; 4])]) -> DetectionSet<f64> {
        DetectionSet::new(
            "img",
            items
                .iter()
                .enumerate()
                .map(|(i, &(c, b))| {
                    let mut logits = vec![-2.0; 6];
                    logits[c.0] = 1.5;
                    Detection::new(i as u64, BBox::from_array(b), c, 1.5f64.sigmoid()).with_logits(logits)
                })
                .collect(),
        )
    }

    fn car12_bus200() -> DetectionSet<f64> {
        image(&[(CAR, [0., 0., 4., 3.]), (BUS, [10., 10., 30., 20.])])
    }

    #[test]
    fn evaluate_examples() {
        assert_eq!(evaluate_rule_on_image(&rule(0.9), &car12_bus200()), RuleOutcome::Satisfied);
        let big_car = image(&[(CAR, [0., 0., 20., 15.]), (BUS, [30., 30., 50., 40.])]);
        assert_eq!(evaluate_rule_on_image(&rule(0.9), &big_car), RuleOutcome::Violated);
        let no_bus = image(&[(CAR, [0., 0., 4., 3.])]);
        assert_eq!(evaluate_rule_on_image(&rule(0.9), &no_bus), RuleOutcome::NotApplicable);
    }

    #[test]
    fn equal_means_violate_strict_relation() {
        let same = image(&[(CAR, [0., 0., 10., 10.]), (BUS, [20., 20., 30., 30.])]);
        assert_eq!(evaluate_rule_on_image(&rule(0.9), &same), RuleOutcome::Violated);
    }

    #[test]
    fn accumulate_examples() {
        assert_eq!(accumulate_rule_stats::<f64>(&rule(0.9), &[]), RuleStats::default());

        let sat = car12_bus200();
        let viol = image(&[(CAR, [0., 0., 20., 15.]), (BUS, [30., 30., 50., 40.])]);
        let lonely = image(&[(CAR, [0., 0., 4., 3.])]);
        let data = vec![sat.clone(), sat.clone(), viol, sat, lonely];
        let stats = accumulate_rule_stats(&rule(0.9), &data);
        assert_eq!(stats, RuleStats { c_obj: 5, c_sat: 3, c_not_sat: 1 });

        let buses_only = vec![image(&[(BUS, [0., 0., 10., 10.])])];
        assert_eq!(accumulate_rule_stats(&rule(0.9), &buses_only), RuleStats::default());
    }

    #[test]
    fn posterior_hand_computation() {
        let u = posterior_update(RuleStats { c_obj: 4, c_sat: 3, c_not_sat: 1 }, 0.8f64).unwrap();
        assert_eq!(u.likelihood_sat, 0.75);
        assert_eq!(u.likelihood_not, 0.25);
        assert_abs_diff_eq!(u.evidence, 0.65, epsilon = 1e-15);
        assert_abs_diff_eq!(u.posterior, 0.6 / 0.65, epsilon = 1e-15);
        assert_abs_diff_eq!(u.posterior, 0.923077, epsilon = 1e-6);
    }

    #[test]
    fn posterior_edge_cases() {
        let zero = posterior_update(RuleStats { c_obj: 5, c_sat: 0, c_not_sat: 5 }, 0.5f64).unwrap();
        assert_eq!(zero.likelihood_sat, 0.0);
        assert_eq!(zero.posterior, 0.0);

        let even = posterior_update(RuleStats { c_obj: 4, c_sat: 2, c_not_sat: 2 }, 0.5f64).unwrap();
        assert_eq!(even.posterior, 0.5);

        assert!(matches!(posterior_update(RuleStats::default(), 0.5f64), Err(Error::NoEvidence)));
        assert!(matches!(
            posterior_update(RuleStats { c_obj: 2, c_sat: 0, c_not_sat: 2 }, 1.0f64),
            Err(Error::DegenerateEvidence)
        ));
    }

    #[test]
    fn blend_examples() {
        assert_abs_diff_eq!(blend_weight(0.8, 0.6 / 0.65, 0.5f64), 0.861538, epsilon = 1e-6);
        assert_eq!(blend_weight(0.8, 0.3, 0.0f64), 0.8);
        assert_eq!(blend_weight(0.8, 0.3, 1.0f64), 0.3);
    }

    #[test]
    fn hwad_logit_adjustment() {
        let out = apply_bound_rules(&car12_bus200(), &[rule(0.9)], 0.1).unwrap();
        assert_abs_diff_eq!(out.detections[0].own_logit().unwrap(), 1.5 * 1.09, epsilon = 1e-12);
        assert_eq!(out.detections[1], car12_bus200().detections[1]);
    }

    #[test]
    fn hwad_gamma_zero_is_identity() {
        let ds = car12_bus200();
        assert_eq!(apply_bound_rules(&ds, &[rule(0.9)], 0.0).unwrap(), ds);
    }

    #[test]
    fn hwad_not_applicable_leaves_input() {
        let cars = image(&[(CAR, [0., 0., 4., 3.]), (CAR, [10., 10., 14., 13.])]);
        assert_eq!(apply_bound_rules(&cars, &[rule(0.9)], 0.1).unwrap(), cars);
    }

    #[test]
    fn update_cycle_on_single_rule() {
        let doc = r#"{"classes":["car","bus"],"rules":[
            {"subject":"car","relation":"isSmallerThan","object":"bus","weight":0.8}]}"#;
        let kg: KnowledgeGraph<f64> = parse_knowledge_graph(doc).unwrap();
        let sat = car12_bus200();
        let viol = image(&[(CAR, [0., 0., 20., 15.]), (BUS, [30., 30., 50., 40.])]);
        let data = vec![sat.clone(), viol, sat.clone(), sat];
        let vocab = Vocabulary::default_vehicles();
        let (next, log) = run_hwad_update_cycle(&kg, &vocab, &data, 0.5).unwrap();
        assert_abs_diff_eq!(next.rules()[0].weight, 0.861538, epsilon = 1e-6);
        assert_eq!(next.rules()[0].initial_llm_weight, 0.8);
        assert_eq!(kg.rules()[0].weight, 0.8);
        assert_eq!(log[0].stats, RuleStats { c_obj: 4, c_sat: 3, c_not_sat: 1 });

        let (same, _) = run_hwad_update_cycle(&kg, &vocab, &[image(&[(BUS, [0., 0., 5., 5.])])], 0.5).unwrap();
        assert_eq!(same, kg);
    }
}
