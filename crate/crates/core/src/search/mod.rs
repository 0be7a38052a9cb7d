//! Typed GP search: initialization, tournament selection, subtree variation,
//! gate micro-mutation, CV-proxy scoring and Pareto pooling.

mod fitness;
mod pareto;
mod variation;

pub use fitness::{cv_proxy_loss, engine_rmse, CvProxy, Phase};
pub use pareto::{dominates, non_dominated, objective_order, ParetoEntry, ParetoPool, DEFAULT_ARCHIVE};
pub use variation::{
    crossover, micro_mutate_gates, mutate, tournament_select, Scored, CROSSOVER_ATTEMPTS, MICRO_SIGMA_A,
    MICRO_SIGMA_B, MUTATION_DEPTH,
};

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::ConfigError;
use crate::expr::{print_expr, Expression, OperatorSet, PrimitiveRegistry, TreeGenerator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub enabled: bool,
    pub weight: f64,
    pub folds: usize,
    pub subsample: f64,
    pub warmup: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            enabled: true,
            weight: 0.0,
            folds: 2,
            subsample: 0.30,
            warmup: 0.80,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub pop: usize,
    pub gen: usize,
    pub tourn: usize,
    pub p_cx: f64,
    pub p_mut: f64,
    pub micro_mut_prob: f64,
    pub cv: CvConfig,
    pub max_depth: usize,
    /// Depth range of the ramped half-and-half initialization.
    pub init_depth: (usize, usize),
    pub operator_set: OperatorSet,
    pub seed: u64,
    /// Size of the top-k archive kept alongside the Pareto front.
    pub archive: usize,
    /// Worker threads for fitness evaluation; `None` uses the ambient pool.
    #[serde(skip)]
    pub workers: Option<usize>,
    /// Keep every evaluated `(key, loss, complexity)` for inspection.
    #[serde(skip)]
    pub record_candidates: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            pop: 800,
            gen: 100,
            tourn: 7,
            p_cx: 0.8,
            p_mut: 0.2,
            micro_mut_prob: 0.10,
            cv: CvConfig::default(),
            max_depth: 10,
            init_depth: (1, 4),
            operator_set: OperatorSet::Hard,
            seed: 1,
            archive: DEFAULT_ARCHIVE,
            workers: None,
            record_candidates: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("{name} must be a probability, got {p}")))
            }
        };
        prob("p_cx", self.p_cx)?;
        prob("p_mut", self.p_mut)?;
        prob("micro_mut_prob", self.micro_mut_prob)?;
        prob("cv.weight", self.cv.weight)?;
        prob("cv.warmup", self.cv.warmup)?;
        if self.pop == 0 || self.tourn == 0 {
            return Err(ConfigError::Invalid("pop and tourn must be positive".into()));
        }
        if !(self.cv.subsample > 0.0 && self.cv.subsample <= 1.0) || self.cv.folds == 0 {
            return Err(ConfigError::Invalid("cv.subsample must lie in (0, 1] and folds ≥ 1".into()));
        }
        if self.init_depth.0 > self.init_depth.1 || self.init_depth.1 > self.max_depth {
            return Err(ConfigError::Invalid("init depth range must fit under max_depth".into()));
        }
        Ok(())
    }
}

/// A population member with its cached objective.
#[derive(Debug, Clone)]
pub struct Individual {
    pub expression: Expression,
    pub key: String,
    pub fitness: f64,
}

impl Scored for Individual {
    fn objective(&self) -> f64 {
        self.fitness
    }
    fn complexity(&self) -> usize {
        self.expression.complexity()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationLog {
    pub generation: usize,
    pub best_cv_loss: f64,
    pub median_complexity: f64,
    pub gate_count_best: usize,
}

#[derive(Debug, Clone)]
pub struct EvolveResult {
    pub best: ParetoEntry,
    pub pool: ParetoPool,
    pub logs: Vec<GenerationLog>,
    /// Every distinct evaluated candidate, when recording was requested.
    pub candidates: Vec<(String, f64, usize)>,
    /// Every generation's population, when recording was requested.
    pub populations: Vec<Vec<Expression>>,
    pub evaluations: usize,
}

pub fn init_population<R: Rng + ?Sized>(
    config: &SearchConfig,
    registry: &PrimitiveRegistry,
    n_features: usize,
    rng: &mut R,
) -> Vec<Expression> {
    let gen = TreeGenerator::new(registry, n_features);
    gen.ramped(rng, config.pop, config.init_depth.0, config.init_depth.1)
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

struct Evaluator<'a> {
    proxy: &'a CvProxy,
    names: &'a [String],
    cache: HashMap<(String, Phase), f64>,
    evaluations: usize,
}

impl Evaluator<'_> {
    /// Scores a population; cache misses are evaluated in parallel and
    /// merged back in population order.
    fn score(&mut self, exprs: Vec<Expression>, phase: Phase) -> Vec<Individual> {
        let keys: Vec<String> = exprs.iter().map(|e| print_expr(e, self.names)).collect();
        let mut todo: Vec<usize> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, k) in keys.iter().enumerate() {
            if !self.cache.contains_key(&(k.clone(), phase)) && seen.insert(k.clone()) {
                todo.push(i);
            }
        }
        let proxy = self.proxy;
        let fresh: Vec<f64> = todo.par_iter().map(|&i| proxy.loss(&exprs[i], phase)).collect();
        self.evaluations += todo.len();
        for (&i, loss) in todo.iter().zip(fresh) {
            self.cache.insert((keys[i].clone(), phase), loss);
        }
        exprs
            .into_iter()
            .zip(keys)
            .map(|(expression, key)| {
                let fitness = self.cache[&(key.clone(), phase)];
                Individual {
                    expression,
                    key,
                    fitness,
                }
            })
            .collect()
    }
}

fn best_index(pop: &[Individual]) -> usize {
    let mut best = 0;
    for i in 1..pop.len() {
        let (a, b) = (&pop[i], &pop[best]);
        let fa = if a.fitness.is_nan() { f64::INFINITY } else { a.fitness };
        let fb = if b.fitness.is_nan() { f64::INFINITY } else { b.fitness };
        if fa < fb || (fa == fb && a.complexity() < b.complexity()) {
            best = i;
        }
    }
    best
}

/// Runs the generational loop on standardized training data.
pub fn evolve(config: &SearchConfig, z_train: &Dataset) -> Result<EvolveResult, ConfigError> {
    config.validate()?;
    match config.workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            pool.install(|| evolve_inner(config, z_train))
        }
        None => evolve_inner(config, z_train),
    }
}

fn evolve_inner(config: &SearchConfig, z_train: &Dataset) -> Result<EvolveResult, ConfigError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let registry = PrimitiveRegistry::new(config.operator_set);
    let generator = TreeGenerator::new(&registry, z_train.n_features());
    let proxy = CvProxy::new(z_train, &config.cv, &mut rng);
    let names = &z_train.feature_names;
    let mut eval = Evaluator {
        proxy: &proxy,
        names,
        cache: HashMap::new(),
        evaluations: 0,
    };
    let mut pool = ParetoPool::new(config.archive);
    let mut logs = Vec::with_capacity(config.gen + 1);
    let mut candidates: Vec<(String, f64, usize)> = Vec::new();
    let mut recorded = std::collections::HashSet::new();
    let mut populations = Vec::new();

    let initial = init_population(config, &registry, z_train.n_features(), &mut rng);
    let mut population = eval.score(initial, proxy.phase(0, config.gen));

    let mut absorb = |population: &[Individual], generation: usize, pool: &mut ParetoPool| {
        for ind in population {
            let complexity = ind.expression.complexity();
            if config.record_candidates && recorded.insert(ind.key.clone()) {
                candidates.push((ind.key.clone(), ind.fitness, complexity));
            }
            if pool.wants(ind.fitness, complexity, &ind.key) {
                pool.insert(ParetoEntry {
                    expression: ind.expression.clone(),
                    key: ind.key.clone(),
                    cv_loss: ind.fitness,
                    complexity,
                    train_loss: proxy.full_train_loss(&ind.expression),
                    seed: config.seed,
                    generation,
                });
            }
        }
    };

    let log_of = |population: &[Individual], generation: usize| {
        let b = &population[best_index(population)];
        let mut cx: Vec<f64> = population.iter().map(|i| i.complexity() as f64).collect();
        GenerationLog {
            generation,
            best_cv_loss: b.fitness,
            median_complexity: median(&mut cx),
            gate_count_best: b.expression.gate_count(),
        }
    };

    absorb(&population, 0, &mut pool);
    logs.push(log_of(&population, 0));
    if config.record_candidates {
        populations.push(population.iter().map(|i| i.expression.clone()).collect());
    }

    for generation in 1..=config.gen {
        let phase = proxy.phase(generation, config.gen);
        let elite = population[best_index(&population)].expression.clone();
        let mut offspring: Vec<Expression> = Vec::with_capacity(config.pop);
        offspring.push(elite);
        while offspring.len() < config.pop {
            let a = tournament_select(&population, config.tourn, &mut rng);
            let mut children = if rng.random_bool(config.p_cx) {
                let b = tournament_select(&population, config.tourn, &mut rng);
                let (c1, c2) = crossover(
                    &population[a].expression,
                    &population[b].expression,
                    config.max_depth,
                    &mut rng,
                );
                vec![c1, c2]
            } else {
                vec![population[a].expression.clone()]
            };
            for child in children.iter_mut() {
                if rng.random_bool(config.p_mut) {
                    *child = mutate(child, &generator, config.max_depth, &mut rng).0;
                }
                micro_mutate_gates(child, config.micro_mut_prob, &mut rng);
            }
            for child in children {
                if offspring.len() < config.pop {
                    offspring.push(child);
                }
            }
        }
        population = eval.score(offspring, phase);
        absorb(&population, generation, &mut pool);
        logs.push(log_of(&population, generation));
        if config.record_candidates {
            populations.push(population.iter().map(|i| i.expression.clone()).collect());
        }
    }

    let best = pool
        .best()
        .cloned()
        .unwrap_or_else(|| {
            // every candidate had a non-finite loss; fall back to the final elite
            let b = &population[best_index(&population)];
            ParetoEntry {
                expression: b.expression.clone(),
                key: b.key.clone(),
                cv_loss: b.fitness,
                complexity: b.expression.complexity(),
                train_loss: f64::INFINITY,
                seed: config.seed,
                generation: config.gen,
            }
        });
    Ok(EvolveResult {
        best,
        pool,
        logs,
        candidates,
        populations,
        evaluations: eval.evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Task;

    fn step_data() -> Dataset {
        let x: Vec<f64> = (0..200).map(|i| f64::from(i) / 100.0 - 1.0).collect();
        let y: Vec<f64> = x.iter().map(|v| f64::from(*v > 0.3)).collect();
        let x2: Vec<f64> = (0..200).map(|i| f64::from((i * 37) % 200) / 100.0 - 1.0).collect();
        Dataset::new(vec!["x1".into(), "x2".into()], vec![x, x2], y, Task::Regression).unwrap()
    }

    fn small(seed: u64) -> SearchConfig {
        SearchConfig {
            pop: 60,
            gen: 8,
            seed,
            record_candidates: true,
            ..SearchConfig::default()
        }
    }

    #[test]
    fn defaults_match_budget_table() {
        let c = SearchConfig::default();
        assert_eq!((c.pop, c.gen, c.tourn), (800, 100, 7));
        assert_eq!((c.p_cx, c.p_mut, c.micro_mut_prob), (0.8, 0.2, 0.10));
        assert_eq!((c.cv.folds, c.cv.subsample, c.cv.warmup, c.cv.weight), (2, 0.30, 0.80, 0.0));
    }

    #[test]
    fn generation_zero_uses_initial_population() {
        let ds = step_data();
        let cfg = SearchConfig { gen: 0, ..small(3) };
        let r = evolve(&cfg, &ds).unwrap();
        assert_eq!(r.logs.len(), 1);
        assert!(r.pool.entries().iter().all(|e| e.generation == 0));
    }

    #[test]
    fn elitism_and_determinism() {
        let ds = step_data();
        let a = evolve(&small(5), &ds).unwrap();
        let b = evolve(&small(5), &ds).unwrap();
        assert_eq!(a.best.key, b.best.key);
        assert_eq!(a.logs, b.logs);
        for w in a.logs.windows(2) {
            assert!(w[1].best_cv_loss <= w[0].best_cv_loss);
        }
    }

    #[test]
    fn worker_count_does_not_change_result() {
        let ds = step_data();
        let one = evolve(&SearchConfig { workers: Some(1), ..small(8) }, &ds).unwrap();
        let four = evolve(&SearchConfig { workers: Some(4), ..small(8) }, &ds).unwrap();
        assert_eq!(one.best.key, four.best.key);
        assert_eq!(one.logs, four.logs);
    }

    #[test]
    fn pool_front_equals_brute_force_filter() {
        let ds = step_data();
        let r = evolve(&small(13), &ds).unwrap();
        let finite: Vec<&(String, f64, usize)> = r.candidates.iter().filter(|c| c.1.is_finite()).collect();
        let pts: Vec<(f64, usize)> = finite.iter().map(|c| (c.1, c.2)).collect();
        let mut brute: Vec<&str> = non_dominated(&pts).into_iter().map(|i| finite[i].0.as_str()).collect();
        let mut front: Vec<&str> = r.pool.front().iter().map(|e| e.key.as_str()).collect();
        brute.sort_unstable();
        front.sort_unstable();
        assert_eq!(front, brute);
    }

    #[test]
    fn populations_stay_typed() {
        let ds = step_data();
        for set in [OperatorSet::Base, OperatorSet::Soft, OperatorSet::Hard] {
            let cfg = SearchConfig {
                operator_set: set,
                ..small(21)
            };
            let reg = PrimitiveRegistry::new(set);
            let r = evolve(&cfg, &ds).unwrap();
            for pop in &r.populations {
                for e in pop {
                    e.type_check(&reg, 2).unwrap();
                    assert!(e.depth() <= cfg.max_depth);
                }
            }
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let ds = step_data();
        let cfg = SearchConfig {
            p_cx: 1.5,
            ..SearchConfig::default()
        };
        assert!(evolve(&cfg, &ds).is_err());
    }
}
