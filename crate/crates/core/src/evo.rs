//! Failure-free genetic optimization of the neural controller.
//!
//! Every training episode runs the neural controller alone from a random
//! state near the regulation point. The episode ends the moment the true
//! state leaves the safe region; the remaining time is charged at the worst
//! integrand the safe region allows, so any genome that survives scores better
//! than any genome that does not.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{run_repeated, ControllerSpec, Scenario};
use crate::lqg::Estimator;
use crate::neural::{decode_genome, MlpGenome, NeuralRuntime, GENOME_DIM, WEIGHT_LIMIT};
use crate::plant::PlantState;
use crate::rng::{derive_seed, purpose, RngStream};
use crate::sim::{simulate, RunEnd, SimSetup};
use crate::switch::Hypercube;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitnessConfig {
    /// Position weight `P_w`, metres.
    pub position_weight: f64,
    /// Angle weight `A_w`, degrees.
    pub angle_weight: f64,
    /// Episode length `T`, s.
    pub episode_length: f64,
    pub episodes: usize,
    /// Per-dimension fraction of the safe region that episode initial states
    /// are drawn from, scaled about its centre.
    pub initial_fraction: [f64; 4],
}

impl Default for FitnessConfig {
    fn default() -> Self {
        Self {
            position_weight: 0.005,
            angle_weight: 0.5,
            episode_length: 30.0,
            episodes: 3,
            initial_fraction: [0.5, 0.0, 0.5, 0.0],
        }
    }
}

impl FitnessConfig {
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        for (name, v) in [
            ("position_weight", self.position_weight),
            ("angle_weight", self.angle_weight),
            ("episode_length", self.episode_length),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err((name, format!("must be finite and > 0, got {v}")));
            }
        }
        if self.episodes == 0 {
            return Err(("episodes", "must be >= 1".into()));
        }
        if self
            .initial_fraction
            .iter()
            .any(|f| !(0.0..1.0).contains(f))
        {
            return Err(("initial_fraction", "entries must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    pub crossover_rate: f64,
    /// Blend crossover extension `alpha`.
    pub blend_alpha: f64,
    pub mutation_rate: f64,
    pub mutation_sigma: f64,
    pub elites: usize,
    /// Initial genes are uniform in `[-init_range, init_range]`.
    pub init_range: f64,
    /// Set from the master seed; not part of the config file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 40,
            generations: 60,
            tournament: 3,
            crossover_rate: 0.9,
            blend_alpha: 0.5,
            mutation_rate: 0.05,
            mutation_sigma: 3.0,
            elites: 2,
            init_range: 10.0,
            seed: 1,
        }
    }
}

impl GaConfig {
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.population < 2 {
            return Err(("population", "must be >= 2".into()));
        }
        if self.elites >= self.population {
            return Err(("elites", "must be smaller than the population".into()));
        }
        if self.tournament == 0 {
            return Err(("tournament", "must be >= 1".into()));
        }
        for (name, v) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err((name, format!("must lie in [0, 1], got {v}")));
            }
        }
        for (name, v) in [
            ("blend_alpha", self.blend_alpha),
            ("mutation_sigma", self.mutation_sigma),
            ("init_range", self.init_range),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err((name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Region the neural controller is trained in, relative to the regulation
/// point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafeRegion(pub Hypercube);

impl Default for SafeRegion {
    fn default() -> Self {
        Self(Hypercube {
            lo: [-0.25, -2.0, -0.25, -2.0],
            hi: [0.25, 2.0, 0.25, 2.0],
        })
    }
}

impl SafeRegion {
    /// Largest `|p|` and `|theta|` (degrees) inside the region.
    pub fn worst_position_angle(&self) -> (f64, f64) {
        let h = &self.0;
        (
            h.lo[0].abs().max(h.hi[0].abs()),
            h.lo[2].abs().max(h.hi[2].abs()).to_degrees(),
        )
    }

    /// The region shrunk about its centre by `fraction` per dimension.
    pub fn shrunk(&self, fraction: [f64; 4]) -> Hypercube {
        let h = &self.0;
        let mut lo = [0.0; 4];
        let mut hi = [0.0; 4];
        for i in 0..4 {
            let c = 0.5 * (h.lo[i] + h.hi[i]);
            let r = 0.5 * (h.hi[i] - h.lo[i]) * fraction[i];
            lo[i] = c - r;
            hi[i] = c + r;
        }
        Hypercube { lo, hi }
    }

    pub fn check_within(&self, rail_half_length: f64, angle_limit: f64) -> Result<()> {
        let h = &self.0;
        if h.lo[0] <= -rail_half_length || h.hi[0] >= rail_half_length {
            return Err(Error::Region(
                "safe region reaches the rail end-stops".into(),
            ));
        }
        if h.lo[2] <= -angle_limit || h.hi[2] >= angle_limit {
            return Err(Error::Region("safe region reaches the angle limit".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitnessRecord {
    pub id: usize,
    /// Weighted squared-error integral, averaged over episodes.
    pub f: f64,
    /// Every episode ran to the end inside the safe region.
    pub survived: bool,
    /// Earliest episode end, s.
    pub exit_time: f64,
    /// Cart position RMS over all episode samples, m.
    pub pos_rms: f64,
    /// Rod angle RMS over all episode samples, degrees.
    pub angle_rms: f64,
}

/// Rectangle-rule integral of `(P / P_w)^2 + (A / A_w)^2`, `P` in metres and
/// `A` in degrees.
pub fn fitness_integral<I>(samples: I, ts: f64, position_weight: f64, angle_weight: f64) -> f64
where
    I: IntoIterator<Item = (f64, f64)>,
{
    samples
        .into_iter()
        .map(|(p, a)| (p / position_weight).powi(2) + (a / angle_weight).powi(2))
        .sum::<f64>()
        * ts
}

/// Integrand at the worst corner of the safe region.
pub fn worst_integrand(fc: &FitnessConfig, safe: &SafeRegion) -> f64 {
    let (p, a) = safe.worst_position_angle();
    (p / fc.position_weight).powi(2) + (a / fc.angle_weight).powi(2)
}

/// Initial state for a training episode, uniform in the safe region shrunk
/// by `fraction`.
pub fn episode_initial_state(
    safe: &SafeRegion,
    fraction: [f64; 4],
    rng: &mut RngStream,
) -> PlantState {
    let inner = safe.shrunk(fraction);
    let mut x = [0.0; 4];
    for (i, v) in x.iter_mut().enumerate() {
        *v = rng.uniform(inner.lo[i], inner.hi[i]);
    }
    PlantState::new(x[0], x[1], x[2], x[3])
}

struct EpisodeOutcome {
    f: f64,
    survived: bool,
    exit_time: f64,
    sum_p2: f64,
    sum_a2: f64,
    samples: usize,
}

fn run_episode(
    genome: &MlpGenome,
    setup: &SimSetup,
    fc: &FitnessConfig,
    safe: &SafeRegion,
    seed: u64,
    episode: u64,
) -> EpisodeOutcome {
    let ts = setup.ts();
    let worst = worst_integrand(fc, safe);
    let mut ic_rng = RngStream::new(seed, purpose::EPISODE_IC, &[episode]);
    let mut noise = RngStream::new(seed, purpose::SENSOR_NOISE, &[episode]);
    let initial = episode_initial_state(safe, fc.initial_fraction, &mut ic_rng);
    let weights = decode_genome(genome);
    let traj = simulate(
        setup,
        |m| NeuralRuntime::new(weights, setup.design, Estimator::from_measurement(m)),
        initial,
        &|_| 0.0,
        fc.episode_length,
        &mut noise,
        |s, r| !safe.0.contains(&s.vector(), r),
    );

    let pa = traj
        .samples
        .iter()
        .map(|s| (s.state.p - s.r, s.state.theta.to_degrees()));
    let mut f = fitness_integral(pa.clone(), ts, fc.position_weight, fc.angle_weight);
    let (sum_p2, sum_a2) = pa.fold((0.0, 0.0), |(sp, sa), (p, a)| (sp + p * p, sa + a * a));
    let (survived, exit_time) = match traj.end {
        RunEnd::Completed => (true, fc.episode_length),
        RunEnd::Stopped { t } => {
            f += worst * (fc.episode_length - t).max(0.0);
            (false, t)
        }
        RunEnd::Failed { t, .. } => {
            // blow-ups and faults take the maximal charge
            f = worst * fc.episode_length;
            (false, t)
        }
    };
    if !f.is_finite() {
        f = worst * fc.episode_length;
    }
    EpisodeOutcome {
        f,
        survived,
        exit_time,
        sum_p2,
        sum_a2,
        samples: traj.samples.len(),
    }
}

/// Scores one genome over `fc.episodes` seeded episodes. Never fails: a
/// genome that breaks the simulation simply receives the maximal charge.
pub fn evaluate_fitness(
    genome: &MlpGenome,
    setup: &SimSetup,
    fc: &FitnessConfig,
    safe: &SafeRegion,
    seed: u64,
) -> FitnessRecord {
    let outcomes: Vec<EpisodeOutcome> = (0..fc.episodes as u64)
        .map(|e| run_episode(genome, setup, fc, safe, seed, e))
        .collect();
    let n = outcomes.len() as f64;
    let samples: usize = outcomes.iter().map(|o| o.samples).sum();
    let denom = samples.max(1) as f64;
    FitnessRecord {
        id: 0,
        f: outcomes.iter().map(|o| o.f).sum::<f64>() / n,
        survived: outcomes.iter().all(|o| o.survived),
        exit_time: outcomes
            .iter()
            .map(|o| o.exit_time)
            .fold(f64::INFINITY, f64::min),
        pos_rms: (outcomes.iter().map(|o| o.sum_p2).sum::<f64>() / denom).sqrt(),
        angle_rms: (outcomes.iter().map(|o| o.sum_a2).sum::<f64>() / denom).sqrt(),
    }
}

/// Gaussian perturbation of each gene with probability `rate`. One uniform
/// draw per gene decides, followed by one normal draw for perturbed genes.
pub fn mutate(genome: &MlpGenome, rate: f64, sigma: f64, rng: &mut RngStream) -> MlpGenome {
    let genes = genome
        .genes()
        .iter()
        .map(|g| {
            if rng.bernoulli(rate) {
                (g + rng.gaussian(0.0, sigma)).clamp(-WEIGHT_LIMIT, WEIGHT_LIMIT)
            } else {
                *g
            }
        })
        .collect();
    MlpGenome::new(genes).expect("mutation preserves length and finiteness")
}

/// Blend crossover: each child gene is uniform on the parents' interval
/// extended by `alpha` times its width on both sides.
pub fn crossover(
    a: &MlpGenome,
    b: &MlpGenome,
    alpha: f64,
    rng: &mut RngStream,
) -> (MlpGenome, MlpGenome) {
    let mut ca = Vec::with_capacity(GENOME_DIM);
    let mut cb = Vec::with_capacity(GENOME_DIM);
    for (x, y) in a.genes().iter().zip(b.genes()) {
        let lo = x.min(*y);
        let hi = x.max(*y);
        let ext = alpha * (hi - lo);
        ca.push(
            rng.uniform(lo - ext, hi + ext)
                .clamp(-WEIGHT_LIMIT, WEIGHT_LIMIT),
        );
        cb.push(
            rng.uniform(lo - ext, hi + ext)
                .clamp(-WEIGHT_LIMIT, WEIGHT_LIMIT),
        );
    }
    (
        MlpGenome::new(ca).expect("crossover preserves length"),
        MlpGenome::new(cb).expect("crossover preserves length"),
    )
}

fn tournament(fitness: &[f64], size: usize, rng: &mut RngStream) -> usize {
    let mut best = rng.index(fitness.len());
    for _ in 1..size {
        let c = rng.index(fitness.len());
        if fitness[c] < fitness[best] || (fitness[c] == fitness[best] && c < best) {
            best = c;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_f: f64,
    pub mean_f: f64,
    /// Fraction of the population that survived every episode.
    pub survival_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingResult {
    pub best: MlpGenome,
    pub best_record: FitnessRecord,
    pub history: Vec<GenerationStats>,
    /// `F` of every individual, per generation.
    pub fitness_log: Vec<Vec<f64>>,
}

impl TrainingResult {
    pub fn initial_best_f(&self) -> f64 {
        self.history[0].best_f
    }

    /// Per-generation CSV: generation, best F, mean F, survival rate.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("generation,best_f,mean_f,survival_rate\n");
        for h in &self.history {
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{:.6}\n",
                h.generation, h.best_f, h.mean_f, h.survival_rate
            ));
        }
        out
    }
}

fn evaluate_population(
    pop: &[MlpGenome],
    skip: usize,
    generation: usize,
    setup: &SimSetup,
    fc: &FitnessConfig,
    safe: &SafeRegion,
    master: u64,
) -> Vec<FitnessRecord> {
    pop.par_iter()
        .enumerate()
        .skip(skip)
        .map(|(i, g)| {
            let seed = derive_seed(master, purpose::FITNESS, &[generation as u64, i as u64]);
            FitnessRecord {
                id: i,
                ..evaluate_fitness(g, setup, fc, safe, seed)
            }
        })
        .collect()
}

fn stats(generation: usize, records: &[FitnessRecord]) -> GenerationStats {
    let n = records.len() as f64;
    GenerationStats {
        generation,
        best_f: records.iter().map(|r| r.f).fold(f64::INFINITY, f64::min),
        mean_f: records.iter().map(|r| r.f).sum::<f64>() / n,
        survival_rate: records.iter().filter(|r| r.survived).count() as f64 / n,
    }
}

/// Generational GA with tournament selection, blend crossover, Gaussian
/// mutation and elitism. Elites keep their recorded fitness, so the best
/// fitness per generation never increases. Results depend only on the
/// configs and `ga.seed`.
pub fn evolve(
    ga: &GaConfig,
    fc: &FitnessConfig,
    safe: &SafeRegion,
    setup: &SimSetup,
) -> Result<TrainingResult> {
    ga.check()
        .map_err(|(f, m)| Error::InvalidInput(format!("ga.{f}: {m}")))?;
    fc.check()
        .map_err(|(f, m)| Error::InvalidInput(format!("fitness.{f}: {m}")))?;
    safe.check_within(setup.plant.rail_half_length, setup.plant.angle_limit)?;

    let mut init = RngStream::new(ga.seed, purpose::GA_INIT, &[]);
    let mut pop: Vec<MlpGenome> = (0..ga.population)
        .map(|_| {
            MlpGenome::new(
                (0..GENOME_DIM)
                    .map(|_| init.uniform(-ga.init_range, ga.init_range))
                    .collect(),
            )
            .expect("initial genes are finite")
        })
        .collect();
    let mut records = evaluate_population(&pop, 0, 0, setup, fc, safe, ga.seed);
    let mut history = vec![stats(0, &records)];
    let mut fitness_log = vec![records.iter().map(|r| r.f).collect::<Vec<_>>()];

    for generation in 1..=ga.generations {
        let mut rng = RngStream::new(ga.seed, purpose::GA_BREED, &[generation as u64]);
        let fitness: Vec<f64> = records.iter().map(|r| r.f).collect();
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|a, b| fitness[*a].total_cmp(&fitness[*b]).then(a.cmp(b)));

        let mut next: Vec<MlpGenome> = order[..ga.elites].iter().map(|i| pop[*i].clone()).collect();
        let mut carried: Vec<FitnessRecord> = order[..ga.elites]
            .iter()
            .enumerate()
            .map(|(slot, i)| FitnessRecord {
                id: slot,
                ..records[*i]
            })
            .collect();
        while next.len() < ga.population {
            let a = &pop[tournament(&fitness, ga.tournament, &mut rng)];
            let b = &pop[tournament(&fitness, ga.tournament, &mut rng)];
            let (ca, cb) = if rng.bernoulli(ga.crossover_rate) {
                crossover(a, b, ga.blend_alpha, &mut rng)
            } else {
                (a.clone(), b.clone())
            };
            next.push(mutate(&ca, ga.mutation_rate, ga.mutation_sigma, &mut rng));
            if next.len() < ga.population {
                next.push(mutate(&cb, ga.mutation_rate, ga.mutation_sigma, &mut rng));
            }
        }
        let fresh = evaluate_population(&next, ga.elites, generation, setup, fc, safe, ga.seed);
        carried.extend(fresh);
        pop = next;
        records = carried;
        history.push(stats(generation, &records));
        fitness_log.push(records.iter().map(|r| r.f).collect());
    }

    let best_idx = (0..pop.len())
        .min_by(|a, b| records[*a].f.total_cmp(&records[*b].f).then(a.cmp(b)))
        .expect("population is non-empty");
    Ok(TrainingResult {
        best: pop[best_idx].clone(),
        best_record: records[best_idx],
        history,
        fitness_log,
    })
}

/// One row of the weight sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub position_weight: f64,
    pub angle_weight: f64,
    pub best_f: f64,
    pub neural_pos_rms: f64,
    pub neural_angle_rms: f64,
    pub lqg_pos_rms: f64,
    pub lqg_angle_rms: f64,
    pub neural_failures: usize,
    pub genome: MlpGenome,
}

impl SweepRow {
    /// Percent reduction relative to LQG (negative when the network is worse).
    pub fn position_reduction(&self) -> f64 {
        100.0 * (self.lqg_pos_rms - self.neural_pos_rms) / self.lqg_pos_rms
    }

    pub fn angle_reduction(&self) -> f64 {
        100.0 * (self.lqg_angle_rms - self.neural_angle_rms) / self.lqg_angle_rms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// Weight sweep grid with weights and RMS in centimetres and degrees.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:>3}  {:>10}  {:>9}  {:>16}  {:>14}  {:>15}  {:>15}\n",
            "#",
            "P_w, cm",
            "A_w, deg",
            "Cart pos RMS, cm",
            "Angle RMS, deg",
            "Pos reduction %",
            "Angle reduction %"
        );
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "{:>3}  {:>10.3}  {:>9.3}  {:>16.4}  {:>14.4}  {:>15.2}  {:>15.2}\n",
                i + 1,
                r.position_weight * 100.0,
                r.angle_weight,
                r.neural_pos_rms * 100.0,
                r.neural_angle_rms,
                r.position_reduction(),
                r.angle_reduction()
            ));
        }
        if let Some(r) = self.rows.first() {
            out.push_str(&format!(
                "LQG reference: cart pos RMS {:.4} cm, angle RMS {:.4} deg\n",
                r.lqg_pos_rms * 100.0,
                r.lqg_angle_rms
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "position_weight_cm,angle_weight_deg,best_f,neural_pos_rms_cm,neural_angle_rms_deg,lqg_pos_rms_cm,lqg_angle_rms_deg,pos_reduction_pct,angle_reduction_pct,neural_failures\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.6},{:.6},{}\n",
                r.position_weight * 100.0,
                r.angle_weight,
                r.best_f,
                r.neural_pos_rms * 100.0,
                r.neural_angle_rms,
                r.lqg_pos_rms * 100.0,
                r.lqg_angle_rms,
                r.position_reduction(),
                r.angle_reduction(),
                r.neural_failures
            ));
        }
        out
    }
}

/// Trains one controller per `(P_w, A_w)` pair (metres, degrees) and
/// measures its balancing RMS against the LQG controller on identical
/// seeded balancing runs.
pub fn sweep_table1(
    pairs: &[(f64, f64)],
    ga: &GaConfig,
    fc: &FitnessConfig,
    safe: &SafeRegion,
    setup: &SimSetup,
    balance: &Scenario,
    repeats: usize,
) -> Result<SweepReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput(
            "sweep needs at least one weight pair".into(),
        ));
    }
    let lqg = run_repeated(balance, &ControllerSpec::Lqg, setup, repeats)?;
    let mut rows = Vec::with_capacity(pairs.len());
    for (pw, aw) in pairs {
        let fcp = FitnessConfig {
            position_weight: *pw,
            angle_weight: *aw,
            ..*fc
        };
        let trained = evolve(ga, &fcp, safe, setup)?;
        let nn = run_repeated(
            balance,
            &ControllerSpec::Neural(decode_genome(&trained.best)),
            setup,
            repeats,
        )?;
        rows.push(SweepRow {
            position_weight: *pw,
            angle_weight: *aw,
            best_f: trained.best_record.f,
            neural_pos_rms: nn.mean_pos_rms,
            neural_angle_rms: nn.mean_angle_rms,
            lqg_pos_rms: lqg.mean_pos_rms,
            lqg_angle_rms: lqg.mean_angle_rms,
            neural_failures: nn.failures,
            genome: trained.best,
        });
    }
    Ok(SweepReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqg::{synthesize, LqgWeights};
    use crate::plant::{PlantParams, SensorModel};

    fn setup() -> SimSetup {
        let plant = PlantParams::default();
        let sensors = SensorModel::rig();
        SimSetup {
            plant,
            sensors,
            design: synthesize(&plant, &sensors, &LqgWeights::default()).unwrap(),
            substeps: 10,
        }
    }

    #[test]
    fn integral_examples() {
        assert_eq!(
            fitness_integral(vec![(0.0, 0.0); 1000], 0.01, 0.005, 0.5),
            0.0
        );
        let f = fitness_integral(vec![(0.005, 0.0); 1000], 0.01, 0.005, 0.5);
        assert!((f - 10.0).abs() < 1e-9);
    }

    #[test]
    fn integral_is_additive() {
        let xs: Vec<(f64, f64)> = (0..3000)
            .map(|k| ((k as f64 * 0.013).sin() * 0.02, (k as f64 * 0.007).cos()))
            .collect();
        let whole = fitness_integral(xs.iter().copied(), 0.01, 0.005, 0.5);
        let a = fitness_integral(xs[..1234].iter().copied(), 0.01, 0.005, 0.5);
        let b = fitness_integral(xs[1234..].iter().copied(), 0.01, 0.005, 0.5);
        assert!((whole - (a + b)).abs() < 1e-9 * whole.max(1.0));
    }

    #[test]
    fn inner_half_initial_states() {
        let safe = SafeRegion::default();
        let mut rng = RngStream::new(4, purpose::EPISODE_IC, &[0]);
        for _ in 0..200 {
            let s = episode_initial_state(&safe, [0.5; 4], &mut rng);
            assert!(s.p.abs() <= 0.125 && s.p_dot.abs() <= 1.0);
            assert!(s.theta.abs() <= 0.125 && s.theta_dot.abs() <= 1.0);
        }
    }

    #[test]
    fn saturating_genome_takes_near_maximal_charge() {
        let s = setup();
        let fc = FitnessConfig {
            episode_length: 5.0,
            ..FitnessConfig::default()
        };
        let safe = SafeRegion::default();
        // output bias +30: full positive drive regardless of state
        let mut genes = vec![0.0; GENOME_DIM];
        genes[32] = 30.0;
        let rec = evaluate_fitness(&MlpGenome::new(genes).unwrap(), &s, &fc, &safe, 9);
        assert!(!rec.survived);
        assert!(rec.exit_time < 1.0);
        let worst = worst_integrand(&fc, &safe) * fc.episode_length;
        assert!(rec.f > 0.8 * worst && rec.f <= worst);
    }

    #[test]
    fn mutation_identities() {
        let g = MlpGenome::new((0..33).map(|i| i as f64 * 0.1 - 1.0).collect()).unwrap();
        let mut rng = RngStream::new(1, purpose::GA_BREED, &[0]);
        assert_eq!(mutate(&g, 0.0, 1.0, &mut rng), g);
        assert_eq!(mutate(&g, 1.0, 0.0, &mut rng), g);
    }

    #[test]
    fn mutation_follows_reference_stream() {
        let g = MlpGenome::new((0..33).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let mut rng = RngStream::new(11, purpose::GA_BREED, &[5]);
        let out = mutate(&g, 1.0, 1.0, &mut rng);
        let mut reference = RngStream::new(11, purpose::GA_BREED, &[5]);
        for (o, x) in out.genes().iter().zip(g.genes()) {
            let _decision = reference.unit();
            let want = (x + reference.gaussian(0.0, 1.0)).clamp(-30.0, 30.0);
            assert_eq!(o.to_bits(), want.to_bits());
        }
    }

    #[test]
    fn crossover_examples() {
        let mut rng = RngStream::new(2, purpose::GA_BREED, &[1]);
        let p = MlpGenome::new((0..33).map(|i| i as f64 * 0.2 - 3.0).collect()).unwrap();
        let (a, b) = crossover(&p, &p, 0.0, &mut rng);
        assert_eq!(a, p);
        assert_eq!(b, p);

        let zero = MlpGenome::zeros();
        let one = MlpGenome::new(vec![1.0; 33]).unwrap();
        let (a, b) = crossover(&zero, &one, 0.0, &mut rng);
        assert!(a
            .genes()
            .iter()
            .chain(b.genes())
            .all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn blend_crossover_monte_carlo() {
        let mut rng = RngStream::new(3, purpose::GA_BREED, &[2]);
        let zero = MlpGenome::zeros();
        let one = MlpGenome::new(vec![1.0; 33]).unwrap();
        let mut sum = 0.0;
        let mut n = 0usize;
        while n < 100_000 {
            let (a, b) = crossover(&zero, &one, 0.5, &mut rng);
            for v in a.genes().iter().chain(b.genes()) {
                assert!((-0.5..=1.5).contains(v));
                sum += v;
                n += 1;
            }
        }
        assert!((sum / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn config_checks() {
        assert!(GaConfig::default().check().is_ok());
        assert_eq!(
            GaConfig {
                population: 1,
                ..GaConfig::default()
            }
            .check()
            .unwrap_err()
            .0,
            "population"
        );
        assert_eq!(
            GaConfig {
                elites: 40,
                ..GaConfig::default()
            }
            .check()
            .unwrap_err()
            .0,
            "elites"
        );
        assert_eq!(
            GaConfig {
                mutation_rate: 1.5,
                ..GaConfig::default()
            }
            .check()
            .unwrap_err()
            .0,
            "mutation_rate"
        );
        assert_eq!(
            FitnessConfig {
                angle_weight: 0.0,
                ..FitnessConfig::default()
            }
            .check()
            .unwrap_err()
            .0,
            "angle_weight"
        );
    }

    #[test]
    fn zero_generations_returns_best_initial() {
        let s = setup();
        let ga = GaConfig {
            population: 6,
            generations: 0,
            ..GaConfig::default()
        };
        let fc = FitnessConfig {
            episode_length: 2.0,
            episodes: 1,
            ..FitnessConfig::default()
        };
        let r = evolve(&ga, &fc, &SafeRegion::default(), &s).unwrap();
        assert_eq!(r.history.len(), 1);
        assert_eq!(r.fitness_log[0].len(), 6);
        let min = r.fitness_log[0]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(r.best_record.f, min);
    }

    #[test]
    fn evolution_is_deterministic_and_elitist() {
        let s = setup();
        let ga = GaConfig {
            population: 8,
            generations: 4,
            ..GaConfig::default()
        };
        let fc = FitnessConfig {
            episode_length: 2.0,
            episodes: 1,
            ..FitnessConfig::default()
        };
        let a = evolve(&ga, &fc, &SafeRegion::default(), &s).unwrap();
        let b = evolve(&ga, &fc, &SafeRegion::default(), &s).unwrap();
        assert_eq!(a, b);
        for w in a.history.windows(2) {
            assert!(w[1].best_f <= w[0].best_f);
        }
        assert!(a
            .fitness_log
            .iter()
            .flatten()
            .all(|f| f.is_finite() && *f >= 0.0));
    }
}
