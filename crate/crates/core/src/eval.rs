//! P@K, precision–throughput curves, aggregation over repeated runs, and a
//! pattern-overlap baseline expander.
//!
//! Seeds never count towards precision: only generated expansions do.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::generator::{expand_top_n, ExpansionState};
use crate::{CategoryId, EntityId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAtK {
    pub k: usize,
    /// `None` where the category expanded nothing through `k`.
    pub per_category: Vec<Option<f64>>,
    /// Pooled over every category's expansions.
    pub micro: Option<f64>,
    /// Fewer than `k` iterations, or a pool ran dry before `k`.
    pub partial: bool,
}

fn is_correct(gold: &BTreeMap<EntityId, CategoryId>, e: EntityId, c: CategoryId) -> Result<bool> {
    gold.get(&e)
        .map(|&g| g == c)
        .ok_or_else(|| Error::Validation(format!("entity {e} has no gold label")))
}

pub fn precision_at_k(state: &ExpansionState, gold: &BTreeMap<EntityId, CategoryId>, k: usize) -> Result<PrecisionAtK> {
    let mut per_category = Vec::with_capacity(state.category_count());
    let (mut hits, mut total) = (0usize, 0usize);
    for c in 0..state.category_count() {
        let expanded = state.expanded_through(c, k);
        let mut ok = 0;
        for &e in &expanded {
            ok += is_correct(gold, e, c)? as usize;
        }
        hits += ok;
        total += expanded.len();
        per_category.push((!expanded.is_empty()).then(|| ok as f64 / expanded.len() as f64));
    }
    let partial = state.iterations() < k || (1..=k.min(state.iterations())).any(|i| state.is_partial(i));
    Ok(PrecisionAtK {
        k,
        per_category,
        micro: (total > 0).then(|| hits as f64 / total as f64),
        partial,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    /// Entities expanded through this iteration.
    pub throughput: usize,
    /// Cumulative precision; `None` while nothing has been expanded.
    pub precision: Option<f64>,
}

/// Micro-averaged cumulative curve, one point per committed iteration.
pub fn precision_throughput_curve(state: &ExpansionState, gold: &BTreeMap<EntityId, CategoryId>) -> Result<Vec<CurvePoint>> {
    curve_over(state, gold, &(0..state.category_count()).collect::<Vec<_>>())
}

/// Curve for a single category.
pub fn category_curve(state: &ExpansionState, gold: &BTreeMap<EntityId, CategoryId>, category: CategoryId) -> Result<Vec<CurvePoint>> {
    curve_over(state, gold, &[category])
}

fn curve_over(state: &ExpansionState, gold: &BTreeMap<EntityId, CategoryId>, categories: &[CategoryId]) -> Result<Vec<CurvePoint>> {
    let (mut hits, mut total) = (0usize, 0usize);
    let mut out = Vec::with_capacity(state.iterations());
    for k in 1..=state.iterations() {
        for &c in categories {
            for &e in state.expanded(k, c) {
                hits += is_correct(gold, e, c)? as usize;
                total += 1;
            }
        }
        out.push(CurvePoint {
            iteration: k,
            throughput: total,
            precision: (total > 0).then(|| hits as f64 / total as f64),
        });
    }
    Ok(out)
}

/// Metrics of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub p_at_k: Vec<PrecisionAtK>,
    pub curve: Vec<CurvePoint>,
    pub category_curves: Vec<Vec<CurvePoint>>,
}

/// Mean and population standard deviation over the runs where a value is
/// defined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Option<Stat> {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        if v.is_empty() {
            return None;
        }
        if v.iter().all(|&x| x == v[0]) {
            return Some(Stat {
                mean: v[0],
                std: 0.0,
                n: v.len(),
            });
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Stat {
            mean,
            std: var.sqrt(),
            n: v.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub k: usize,
    pub micro: Option<Stat>,
    pub per_category: Vec<Option<Stat>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub config_hash: String,
    pub categories: Vec<String>,
    pub k_values: Vec<usize>,
    pub runs: Vec<RunMetrics>,
    pub summary: Vec<MetricSummary>,
}

impl EvalReport {
    /// Report for a single run.
    pub fn evaluate(
        method: &str,
        config_hash: &str,
        categories: &[String],
        state: &ExpansionState,
        gold: &BTreeMap<EntityId, CategoryId>,
        k_values: &[usize],
    ) -> Result<Self> {
        if categories.len() != state.category_count() {
            return Err(Error::argument(format!(
                "{} category names for {} categories",
                categories.len(),
                state.category_count()
            )));
        }
        let p_at_k = k_values
            .iter()
            .map(|&k| precision_at_k(state, gold, k))
            .collect::<Result<Vec<_>>>()?;
        let category_curves = (0..state.category_count())
            .map(|c| category_curve(state, gold, c))
            .collect::<Result<Vec<_>>>()?;
        let run = RunMetrics {
            p_at_k,
            curve: precision_throughput_curve(state, gold)?,
            category_curves,
        };
        let mut report = EvalReport {
            method: method.to_string(),
            config_hash: config_hash.to_string(),
            categories: categories.to_vec(),
            k_values: k_values.to_vec(),
            runs: vec![run],
            summary: Vec::new(),
        };
        report.summarise();
        Ok(report)
    }

    fn summarise(&mut self) {
        self.summary = self
            .k_values
            .iter()
            .enumerate()
            .map(|(i, &k)| MetricSummary {
                k,
                micro: Stat::of(self.runs.iter().map(|r| r.p_at_k[i].micro)),
                per_category: (0..self.categories.len())
                    .map(|c| Stat::of(self.runs.iter().map(|r| r.p_at_k[i].per_category[c])))
                    .collect(),
            })
            .collect();
    }

    pub fn summary_at(&self, k: usize) -> Option<&MetricSummary> {
        self.summary.iter().find(|s| s.k == k)
    }

    /// Mean micro P@K across runs.
    pub fn micro_mean(&self, k: usize) -> Option<f64> {
        self.summary_at(k)?.micro.map(|s| s.mean)
    }

    pub fn write_table(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "method: {}  runs: {}  config: {}", self.method, self.runs.len(), short(&self.config_hash))?;
        write!(w, "{:>4}  {:>15}", "K", "micro")?;
        for c in &self.categories {
            write!(w, "  {:>15}", clip(c, 15))?;
        }
        writeln!(w)?;
        for s in &self.summary {
            write!(w, "{:>4}  {:>15}", s.k, fmt_stat(s.micro))?;
            for c in &s.per_category {
                write!(w, "  {:>15}", fmt_stat(*c))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Columns: method, k, category, mean, std, runs (`micro` is the pooled row).
    pub fn write_csv(&self, mut w: impl Write, header: bool) -> Result<()> {
        if header {
            writeln!(w, "method,k,category,mean,std,runs")?;
        }
        for s in &self.summary {
            let rows = std::iter::once(("micro", s.micro))
                .chain(self.categories.iter().map(String::as_str).zip(s.per_category.iter().copied()));
            for (name, stat) in rows {
                match stat {
                    Some(st) => writeln!(w, "{},{},{},{},{},{}", csv_field(&self.method), s.k, csv_field(name), st.mean, st.std, st.n)?,
                    None => writeln!(w, "{},{},{},,,0", csv_field(&self.method), s.k, csv_field(name))?,
                }
            }
        }
        Ok(())
    }

    /// Columns: iteration, throughput, precision, category.
    pub fn write_curve_csv(&self, mut w: impl Write, run: usize) -> Result<()> {
        let r = self
            .runs
            .get(run)
            .ok_or_else(|| Error::argument(format!("report has {} runs, asked for {run}", self.runs.len())))?;
        writeln!(w, "iteration,throughput,precision,category")?;
        let curves = std::iter::once(("micro", &r.curve))
            .chain(self.categories.iter().map(String::as_str).zip(r.category_curves.iter()));
        for (name, curve) in curves {
            for p in curve {
                let prec = p.precision.map(|v| v.to_string()).unwrap_or_default();
                writeln!(w, "{},{},{},{}", p.iteration, p.throughput, prec, csv_field(name))?;
            }
        }
        Ok(())
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

fn clip(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

fn fmt_stat(s: Option<Stat>) -> String {
    match s {
        Some(s) => format!("{:.4} ± {:.4}", s.mean, s.std),
        None => "undefined".into(),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Merges single- or multi-run reports of one configuration.
pub fn aggregate_runs(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports.first().ok_or_else(|| Error::argument("no reports to aggregate"))?;
    for r in &reports[1..] {
        if r.config_hash != first.config_hash {
            return Err(Error::argument(format!(
                "cannot aggregate config {} with {}",
                short(&r.config_hash),
                short(&first.config_hash)
            )));
        }
        if r.method != first.method || r.k_values != first.k_values || r.categories != first.categories {
            return Err(Error::argument("reports disagree on method, K values or categories"));
        }
    }
    let mut out = first.clone();
    out.runs = reports.iter().flat_map(|r| r.runs.iter().cloned()).collect();
    out.summarise();
    Ok(out)
}

/// Iterative pattern-overlap expansion. A candidate's score for category `c`
/// is `sum ln(1 + count)` over its patterns that some current positive of `c`
/// also has; each iteration takes the top-N under the same conflict rule as
/// the generator.
pub fn baseline_expand(dataset: &Dataset, n: usize, k: usize) -> Result<ExpansionState> {
    let graph = dataset.graph();
    let mut state = ExpansionState::new(graph.entity_count(), dataset.seeds().to_vec())?;
    for it in 1..=k {
        let pool = state.pool_before(it);
        let dists: Vec<Vec<(EntityId, f64)>> = (0..state.category_count())
            .map(|c| {
                let support: BTreeSet<usize> = state
                    .positives_before(c, it)
                    .iter()
                    .flat_map(|&e| graph.entity_patterns(e).iter().map(|&(p, _)| p))
                    .collect();
                pool.iter()
                    .map(|&e| {
                        let score = graph
                            .entity_patterns(e)
                            .iter()
                            .filter(|(p, _)| support.contains(p))
                            .map(|&(_, cnt)| (1.0 + cnt as f64).ln())
                            .sum();
                        (e, score)
                    })
                    .collect()
            })
            .collect();
        expand_top_n(&dists, n, &mut state)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize_dataset, SyntheticSpec};
    use proptest::prelude::*;

    fn gold_of(pairs: &[(EntityId, CategoryId)]) -> BTreeMap<EntityId, CategoryId> {
        pairs.iter().copied().collect()
    }

    /// 2 categories, seeds {0} and {1}; iteration 1: A = [2, 3], B = [4, 5].
    fn two_category_trace() -> (ExpansionState, BTreeMap<EntityId, CategoryId>) {
        let mut s = ExpansionState::new(10, vec![vec![0], vec![1]]).unwrap();
        s.commit(vec![vec![2, 3], vec![4, 5]], false).unwrap();
        let gold = gold_of(&[(0, 0), (1, 1), (2, 0), (3, 0), (4, 1), (5, 0), (6, 0), (7, 1), (8, 1), (9, 0)]);
        (s, gold)
    }

    #[test]
    fn hand_counted_precision() {
        let (s, gold) = two_category_trace();
        let p = precision_at_k(&s, &gold, 1).unwrap();
        assert_eq!(p.micro, Some(0.75));
        assert_eq!(p.per_category, vec![Some(1.0), Some(0.5)]);
        assert!(!p.partial);
        assert!(precision_at_k(&s, &gold, 2).unwrap().partial);
    }

    #[test]
    fn all_correct_is_one_and_seeds_do_not_count() {
        let mut s = ExpansionState::new(6, vec![vec![0], vec![1]]).unwrap();
        s.commit(vec![vec![2], vec![3]], false).unwrap();
        // seeds carry no gold label here and are never looked up
        let gold = gold_of(&[(2, 0), (3, 1)]);
        assert_eq!(precision_at_k(&s, &gold, 1).unwrap().micro, Some(1.0));
    }

    #[test]
    fn missing_gold_names_entity() {
        let (s, mut gold) = two_category_trace();
        gold.remove(&5);
        let err = precision_at_k(&s, &gold, 1).unwrap_err().to_string();
        assert!(err.contains("entity 5"), "{err}");
    }

    #[test]
    fn empty_expansion_is_undefined() {
        let mut s = ExpansionState::new(6, vec![vec![0], vec![1]]).unwrap();
        s.commit(vec![vec![2], vec![]], true).unwrap();
        let gold = gold_of(&[(2, 0)]);
        let p = precision_at_k(&s, &gold, 1).unwrap();
        assert_eq!(p.per_category, vec![Some(1.0), None]);
        assert_eq!(p.micro, Some(1.0));
        assert!(p.partial);
        let none = ExpansionState::new(6, vec![vec![0], vec![1]]).unwrap();
        assert_eq!(precision_at_k(&none, &gold, 1).unwrap().micro, None);
    }

    #[test]
    fn curves() {
        let (mut s, gold) = two_category_trace();
        s.commit(vec![vec![6, 7], vec![8, 9]], false).unwrap();
        let curve = precision_throughput_curve(&s, &gold).unwrap();
        // iteration 2: A gets 6 (ok) 7 (wrong), B gets 8 (ok) 9 (wrong)
        assert_eq!(curve[0], CurvePoint { iteration: 1, throughput: 4, precision: Some(0.75) });
        assert_eq!(curve[1], CurvePoint { iteration: 2, throughput: 8, precision: Some(5.0 / 8.0) });
        let b = category_curve(&s, &gold, 1).unwrap();
        assert_eq!(b[1].precision, Some(0.5));
        let empty = ExpansionState::new(3, vec![vec![0]]).unwrap();
        assert!(precision_throughput_curve(&empty, &gold).unwrap().is_empty());
    }

    #[test]
    fn perfect_expander_curve() {
        let mut s = ExpansionState::new(100, (0..4).map(|c| vec![c]).collect()).unwrap();
        let mut gold = BTreeMap::new();
        let mut next = 4;
        for _ in 0..2 {
            let lists: Vec<Vec<EntityId>> = (0..4)
                .map(|c| {
                    let l: Vec<EntityId> = (next..next + 10).collect();
                    next += 10;
                    for &e in &l {
                        gold.insert(e, c);
                    }
                    l
                })
                .collect();
            s.commit(lists, false).unwrap();
        }
        let curve = precision_throughput_curve(&s, &gold).unwrap();
        assert_eq!(
            curve.iter().map(|p| (p.throughput, p.precision)).collect::<Vec<_>>(),
            vec![(40, Some(1.0)), (80, Some(1.0))]
        );
    }

    fn report_with(hash: &str, p5: f64) -> EvalReport {
        EvalReport {
            method: "m".into(),
            config_hash: hash.into(),
            categories: vec!["a".into()],
            k_values: vec![5],
            runs: vec![RunMetrics {
                p_at_k: vec![PrecisionAtK {
                    k: 5,
                    per_category: vec![Some(p5)],
                    micro: Some(p5),
                    partial: false,
                }],
                curve: vec![],
                category_curves: vec![vec![]],
            }],
            summary: vec![],
        }
    }

    #[test]
    fn aggregation_mean_and_population_std() {
        let agg = aggregate_runs(&[report_with("h", 0.9), report_with("h", 1.0)]).unwrap();
        let s = agg.summary_at(5).unwrap().micro.unwrap();
        assert!((s.mean - 0.95).abs() < 1e-12);
        assert!((s.std - 0.05).abs() < 1e-12);
        let single = aggregate_runs(&[report_with("h", 0.7)]).unwrap();
        assert_eq!(single.summary_at(5).unwrap().micro.unwrap().std, 0.0);
        let same = aggregate_runs(&[report_with("h", 0.8), report_with("h", 0.8), report_with("h", 0.8)]).unwrap();
        assert_eq!(same.summary_at(5).unwrap().micro.unwrap().std, 0.0);
        assert!(matches!(aggregate_runs(&[report_with("h", 0.9), report_with("g", 1.0)]), Err(Error::Argument(_))));
        assert!(aggregate_runs(&[]).is_err());
    }

    #[test]
    fn report_outputs() {
        let (s, gold) = two_category_trace();
        let r = EvalReport::evaluate("bootgan", "abc", &["A".into(), "B".into()], &s, &gold, &[1]).unwrap();
        let mut table = Vec::new();
        r.write_table(&mut table).unwrap();
        let table = String::from_utf8(table).unwrap();
        assert!(table.contains("0.7500 ± 0.0000"), "{table}");
        let mut csv = Vec::new();
        r.write_csv(&mut csv, true).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "method,k,category,mean,std,runs\nbootgan,1,micro,0.75,0,1\nbootgan,1,A,1,0,1\nbootgan,1,B,0.5,0,1\n"
        );
        let mut curve = Vec::new();
        r.write_curve_csv(&mut curve, 0).unwrap();
        assert_eq!(
            String::from_utf8(curve).unwrap(),
            "iteration,throughput,precision,category\n1,4,0.75,micro\n1,2,1,A\n1,2,0.5,B\n"
        );
    }

    #[test]
    fn baseline_is_perfect_without_noise() {
        let d = synthesize_dataset(&SyntheticSpec {
            noise: 0.0,
            ..Default::default()
        })
        .unwrap();
        let s = baseline_expand(&d, 10, 5).unwrap();
        for k in 1..=5 {
            assert_eq!(precision_at_k(&s, d.gold(), k).unwrap().micro, Some(1.0));
        }
    }

    #[test]
    fn baseline_scoring_and_ties() {
        // patterns: 0 shared with seed 0; 1 private
        let d = Dataset::new(
            (0..4).map(|i| format!("e{i}")).collect(),
            vec!["p0".into(), "p1".into()],
            &[(0, 0, 1), (1, 1, 5), (2, 0, 1), (3, 0, 1)],
            vec!["a".into()],
            vec![vec![0]],
            BTreeMap::new(),
        )
        .unwrap();
        let s = baseline_expand(&d, 3, 1).unwrap();
        // 2 and 3 tie on ln 2 and go by id; 1 shares nothing and comes last
        assert_eq!(s.expanded(1, 0), [2, 3, 1]);
    }

    fn arb_trace() -> impl Strategy<Value = (ExpansionState, BTreeMap<EntityId, CategoryId>)> {
        (2usize..4, 1usize..4, any::<u64>()).prop_map(|(c_n, iters, seed)| {
            use rand::seq::SliceRandom;
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let e_n = 40;
            let mut ids: Vec<EntityId> = (0..e_n).collect();
            ids.shuffle(&mut rng);
            let seeds: Vec<Vec<EntityId>> = (0..c_n).map(|c| vec![ids[c]]).collect();
            let mut s = ExpansionState::new(e_n, seeds).unwrap();
            let mut next = c_n;
            for _ in 0..iters {
                let lists = (0..c_n)
                    .map(|_| {
                        let m = rng.gen_range(0..4);
                        let l = ids[next..next + m].to_vec();
                        next += m;
                        l
                    })
                    .collect();
                s.commit(lists, false).unwrap();
            }
            let gold = (0..e_n).map(|e| (e, rng.gen_range(0..c_n))).collect();
            (s, gold)
        })
    }

    proptest! {
        #[test]
        fn precision_matches_recount((s, gold) in arb_trace(), k in 1usize..4) {
            let p = precision_at_k(&s, &gold, k).unwrap();
            let mut hits = 0;
            let mut total = 0;
            for it in 1..=k.min(s.iterations()) {
                for c in 0..s.category_count() {
                    for &e in s.expanded(it, c) {
                        total += 1;
                        if gold[&e] == c { hits += 1; }
                    }
                }
            }
            prop_assert_eq!(p.micro, (total > 0).then(|| hits as f64 / total as f64));
            let curve = precision_throughput_curve(&s, &gold).unwrap();
            if k <= s.iterations() {
                prop_assert_eq!(curve[k - 1].precision, p.micro);
                prop_assert_eq!(curve[k - 1].throughput, total);
            }
        }

        #[test]
        fn aggregation_is_permutation_invariant(values in prop::collection::vec(0.0f64..1.0, 1..6), rot in 0usize..6) {
            let reports: Vec<EvalReport> = values.iter().map(|&v| report_with("h", v)).collect();
            let mut rotated = reports.clone();
            rotated.rotate_left(rot % reports.len());
            let a = aggregate_runs(&reports).unwrap().summary_at(5).unwrap().micro.unwrap();
            let b = aggregate_runs(&rotated).unwrap().summary_at(5).unwrap().micro.unwrap();
            prop_assert!((a.mean - b.mean).abs() < 1e-12);
            prop_assert!((a.std - b.std).abs() < 1e-12);
        }
    }
}
